//! Command-line front end.
//!
//! Reports are CSV with a `#`-prefixed provenance header. A `--config` file of
//! `key = value` lines supplies flag defaults; flags on the command line win.
//! `VSIV_THREADS` caps the worker threads.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::dataset::{ingest_csv, CsvSchema, Dataset, Orientation, PairId, PairSet, TreatmentOrder};
use crate::error::{Result, VsivError};
use crate::estimate::{beta_vector, GFunction, LateEstimate};
use crate::falsify_km::DEFAULT_TUPLE_CAP;
use crate::falsify_kms::{EndpointPolicy, HFunction, StatConfig, TreatmentMode, Variant, DEFAULT_XI0};
use crate::infer::{wald_test, Hypothesis};
use crate::simulate::{mc_selection_table, DgpSpec};
use crate::unordered_id::{mte_unordered, ResponseMatrix};
use crate::validity_set::{default_universe, estimate_z0, tune_tau, ScreenConfig, ValiditySetEstimate, DEFAULT_FLOOR};

pub const THREADS_ENV: &str = "VSIV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "vsiv", version, about = "Validity-set IV estimation", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Falsification statistics for every instrument-value pair.
    Falsify(FalsifyArgs),
    /// Simulate calibrated designs and recommend a threshold.
    TuneTau(TuneArgs),
    /// Select valid pairs and estimate pairwise effects.
    Estimate(EstimateArgs),
    /// Two-part Wald test of a restriction on selected effects.
    Test(TestArgs),
    /// Monte Carlo selection tables for the built-in designs.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum ModeArg {
    Binary,
    Ordered,
    Unordered,
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
enum VariantArg {
    Abs,
    Pos,
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value = "d")]
    d_col: String,
    #[arg(long, default_value = "z")]
    z_col: String,
    /// Treatment mode; defaults to binary for two treatment values, ordered otherwise.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Debug, Args)]
struct StatArgs {
    #[arg(long, default_value_t = DEFAULT_XI0)]
    xi0: f64,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// `all` or the number of rows whose outcomes serve as interval endpoints.
    #[arg(long)]
    endpoints: Option<String>,
    /// Seed for the endpoint subsample.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold for the partition inequalities (multivalued); defaults to tau.
    #[arg(long)]
    t_n: Option<f64>,
    /// Work cap for the partition inequalities.
    #[arg(long, default_value_t = DEFAULT_TUPLE_CAP)]
    tuple_cap: usize,
}

#[derive(Debug, Args)]
struct FalsifyArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value = "1.5:5:0.5")]
    tau_grid: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_FLOOR)]
    floor: f64,
    #[arg(long, default_value_t = DEFAULT_XI0)]
    xi0: f64,
    #[arg(long, value_enum, default_value = "pos")]
    variant: VariantArg,
    #[arg(long, default_value = "200")]
    endpoints: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    /// CSV of presumed-valid pairs, one `label,label` per line.
    #[arg(long)]
    presumed: Option<PathBuf>,
    /// `index` or a CSV of `label,value` lines.
    #[arg(long, default_value = "index")]
    g: String,
    /// Response matrix CSV (unordered mode): one row per instrument value.
    #[arg(long)]
    response_matrix: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    stat: StatArgs,
    #[arg(long, default_value_t = 4.0)]
    tau: f64,
    #[arg(long)]
    presumed: Option<PathBuf>,
    #[arg(long, default_value = "index")]
    g: String,
    /// Hypothesis file with `pairs`, `A` and `b` blocks.
    #[arg(long)]
    hypothesis: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// `section5:<1-4>`, `qob:<1-4>` or `custom` (with --custom).
    #[arg(long)]
    family: String,
    /// key=value file describing a custom design.
    #[arg(long)]
    custom: Option<PathBuf>,
    #[arg(long, default_value_t = 1500)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value = "2:6.5:0.5")]
    tau_grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_XI0)]
    xi0: f64,
    /// Defaults to `abs`, or `pos` for the qob designs.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Defaults to `all`, or `200` for the qob designs.
    #[arg(long)]
    endpoints: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

/// Parse `start:stop:step` or a comma list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| VsivError::Argument(format!("'{v}' is not a number")));
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [a, b, c] => {
            let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || stop < start {
                return Err(VsivError::Argument(format!("grid '{s}' needs start <= stop and a positive step")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
        }
        [_] => s.split(',').map(num).collect::<Result<Vec<_>>>()?,
        _ => return Err(VsivError::Argument(format!("cannot parse grid '{s}'"))),
    };
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0)) {
        return Err(VsivError::Argument("tau values must be positive".into()));
    }
    Ok(grid)
}

/// `key = value` lines; `#` starts a comment.
pub fn read_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| VsivError::Row { line: i + 1, msg: format!("expected key = value, got '{line}'") })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Insert config-file flags ahead of the command-line ones.
fn expand_config(argv: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        } else if a == "--config" {
            path = argv.get(i + 1).cloned();
        }
    }
    let Some(path) = path else { return Ok(argv) };
    if argv.len() < 2 {
        return Ok(argv);
    }
    let cfg = read_config(Path::new(&path))?;
    let mut out = argv[..2].to_vec();
    for (k, v) in cfg {
        out.push(format!("--{}", k.replace('_', "-")));
        out.push(v);
    }
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}

fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Run the command line; returns the process exit status.
pub fn run(argv: Vec<String>) -> i32 {
    match try_run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("vsiv: {e}");
            2
        }
    }
}

fn try_run(argv: Vec<String>) -> Result<()> {
    let line = argv.join(" ");
    let argv = expand_config(argv)?;
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(VsivError::Argument(e.to_string().lines().next().unwrap_or("").to_string())),
    };
    init_threads();
    match cli.command {
        Command::Falsify(a) => falsify(a, &line),
        Command::TuneTau(a) => tune(a, &line),
        Command::Estimate(a) => estimate(a, &line),
        Command::Test(a) => test(a, &line),
        Command::Simulate(a) => simulate(a, &line),
    }
}

fn header(line: &str, fields: &[(&str, String)]) -> String {
    let mut h = format!("# vsiv {}\n# command: {line}\n", env!("CARGO_PKG_VERSION"));
    for (k, v) in fields {
        let _ = writeln!(h, "# {k}: {v}");
    }
    h
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load(input: &InputArgs) -> Result<(Dataset, TreatmentMode)> {
    let order = if input.mode == Some(ModeArg::Unordered) { TreatmentOrder::Unordered } else { TreatmentOrder::Ordered };
    let schema = CsvSchema {
        y: input.y_col.clone(),
        d: input.d_col.clone(),
        z: input.z_col.clone(),
        treatment_support: None,
        instrument_support: None,
        order,
    };
    let ds = ingest_csv(&input.input, &schema)
        .map_err(|e| VsivError::Argument(format!("{}: {e}", input.input.display())))?;
    let mode = match input.mode {
        Some(ModeArg::Binary) => TreatmentMode::Binary,
        Some(ModeArg::Ordered) => TreatmentMode::Ordered,
        Some(ModeArg::Unordered) => TreatmentMode::Unordered,
        None if ds.j() == 2 => TreatmentMode::Binary,
        None => TreatmentMode::Ordered,
    };
    Ok((ds, mode))
}

fn endpoint_policy(spec: Option<&str>, seed: u64) -> Result<EndpointPolicy> {
    match spec.map(str::trim) {
        None | Some("all") => Ok(EndpointPolicy::All),
        Some(m) => {
            let m = m.parse().map_err(|_| VsivError::Argument(format!("--endpoints expects 'all' or a count, got '{m}'")))?;
            Ok(EndpointPolicy::Subsample { m, seed })
        }
    }
}

fn variant(v: Option<VariantArg>, default: Variant) -> Variant {
    match v {
        Some(VariantArg::Abs) => Variant::AbsSup,
        Some(VariantArg::Pos) => Variant::PosPart,
        None => default,
    }
}

fn screen_config(stat: &StatArgs, mode: TreatmentMode) -> Result<ScreenConfig> {
    Ok(ScreenConfig {
        stat: StatConfig {
            xi0: stat.xi0,
            variant: variant(stat.variant, Variant::AbsSup),
            endpoints: endpoint_policy(stat.endpoints.as_deref(), stat.seed)?,
            mode,
        },
        universe: None,
        partitions: None,
        t_n: stat.t_n,
        tuple_cap: stat.tuple_cap,
    })
}

fn pair_label(ds: &Dataset, p: PairId) -> String {
    format!("\"({}, {})\"", ds.instrument().label(p.k), ds.instrument().label(p.kprime))
}

fn witness_text(ds: &Dataset, h: &HFunction) -> String {
    match *h {
        HFunction::SignedInterval { d, a, b, sign } => {
            format!("{}1{{{a}<=Y<={b} D={}}}", if sign < 0.0 { "-" } else { "" }, ds.treatment().label(d))
        }
        HFunction::FosdThreshold { c } => format!("1{{D<={}}}", ds.treatment().label(c)),
    }
}

fn falsify(a: FalsifyArgs, line: &str) -> Result<()> {
    let (ds, mode) = load(&a.input)?;
    let cfg = screen_config(&a.stat, mode)?;
    let est = estimate_z0(&ds, a.tau, &cfg)?;
    let mut text = header(line, &[("n", ds.n().to_string()), ("tau", a.tau.to_string()), ("seed", a.stat.seed.to_string())]);
    text.push_str("pair,statistic,raw_sup,witness,psi_comparand,degenerate,included\n");
    for o in &est.per_pair {
        let _ = writeln!(
            text,
            "{},{},{},\"{}\",{},{},{}",
            pair_label(&ds, o.pair),
            o.statistic.value,
            o.statistic.raw_sup,
            witness_text(&ds, &o.statistic.witness),
            o.psi.map_or(String::new(), |r| r.comparand.to_string()),
            o.degenerate,
            o.included
        );
    }
    emit(&a.out, &text)
}

fn tune(a: TuneArgs, line: &str) -> Result<()> {
    let (ds, _) = load(&a.input)?;
    let grid = parse_grid(&a.tau_grid)?;
    let stat = StatConfig {
        xi0: a.xi0,
        variant: variant(Some(a.variant), Variant::PosPart),
        endpoints: endpoint_policy(Some(&a.endpoints), a.seed)?,
        mode: TreatmentMode::Binary,
    };
    let rep = tune_tau(&ds, &grid, a.reps, a.seed, a.floor, stat)?;
    let rec = rep.recommended.map_or("none".to_string(), |t| t.to_string());
    let mut text = header(
        line,
        &[
            ("n", ds.n().to_string()),
            ("reps", a.reps.to_string()),
            ("seed", a.seed.to_string()),
            ("floor", a.floor.to_string()),
            ("recommended_tau", rec),
        ],
    );
    let labels: Vec<String> = rep.reports[0].pairs.iter().map(|&p| pair_label(&ds, p)).collect();
    let _ = writeln!(text, "design,tau,{}", labels.join(","));
    for r in &rep.reports {
        for (t, tau) in r.taus.iter().enumerate() {
            let rates: Vec<String> = r.rates(t).iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(text, "{},{tau},{}", r.family, rates.join(","));
        }
    }
    emit(&a.out, &text)
}

fn read_presumed(ds: &Dataset, path: &Path, orientation: Orientation) -> Result<PairSet> {
    let text = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| VsivError::Row { line: i + 1, msg: format!("expected 'label,label', got '{line}'") })?;
        let find = |l: &str| {
            ds.instrument()
                .index_of(l.trim())
                .ok_or_else(|| VsivError::Row { line: i + 1, msg: format!("unknown instrument value '{}'", l.trim()) })
        };
        pairs.push(PairId::new(find(a)?, find(b)?)?);
    }
    let orientation = if orientation == Orientation::Upper && pairs.iter().any(|p| p.k > p.kprime) {
        Orientation::Both
    } else {
        orientation
    };
    PairSet::new(pairs, orientation)
}

fn read_g(ds: &Dataset, spec: &str) -> Result<GFunction> {
    if spec == "index" {
        return Ok(GFunction::index(ds.k()));
    }
    let text = std::fs::read_to_string(spec)?;
    let mut values = vec![None; ds.k()];
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (l, v) = line
            .split_once(',')
            .ok_or_else(|| VsivError::Row { line: i + 1, msg: "expected 'label,value'".into() })?;
        let z = ds
            .instrument()
            .index_of(l.trim())
            .ok_or_else(|| VsivError::Row { line: i + 1, msg: format!("unknown instrument value '{}'", l.trim()) })?;
        values[z] = Some(v.trim().parse::<f64>().map_err(|_| VsivError::Row { line: i + 1, msg: format!("bad value '{v}'") })?);
    }
    let values: Vec<f64> = values
        .into_iter()
        .enumerate()
        .map(|(z, v)| v.ok_or_else(|| VsivError::Argument(format!("g has no value for '{}'", ds.instrument().label(z)))))
        .collect::<Result<_>>()?;
    GFunction::new(values)
}

/// Screen, intersect with the presumed pairs and estimate.
fn select_and_estimate(
    ds: &Dataset,
    mode: TreatmentMode,
    stat: &StatArgs,
    tau: f64,
    presumed: Option<&Path>,
    g: &str,
) -> Result<(ValiditySetEstimate, PairSet, LateEstimate)> {
    let mut cfg = screen_config(stat, mode)?;
    let presumed = match presumed {
        Some(p) => Some(read_presumed(ds, p, default_universe(ds.k(), mode).orientation())?),
        None => None,
    };
    if let Some(p) = &presumed {
        cfg.universe = Some(p.clone());
    }
    let est = estimate_z0(ds, tau, &cfg)?;
    let selected = match &presumed {
        Some(p) => crate::validity_set::intersect_presumed(&est, p),
        None => est.selected.clone(),
    };
    let selected_both = PairSet::new(selected.pairs().to_vec(), Orientation::Both)?;
    let late = beta_vector(ds, &selected_both, &read_g(ds, g)?)?;
    Ok((est, selected, late))
}

fn read_response_matrix(ds: &Dataset, path: &Path) -> Result<ResponseMatrix> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<usize>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(i, l)| {
            l.split(',')
                .map(|v| {
                    ds.treatment().index_of(v.trim()).ok_or_else(|| VsivError::Row {
                        line: i + 1,
                        msg: format!("unknown treatment value '{}'", v.trim()),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.len() != ds.k() || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(VsivError::Structural(format!(
            "response matrix needs {} rows of equal length, one per instrument value",
            ds.k()
        )));
    }
    let columns = (0..rows[0].len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    ResponseMatrix::new(columns, ds.k(), ds.j())
}

fn estimate(a: EstimateArgs, line: &str) -> Result<()> {
    let (ds, mode) = load(&a.input)?;
    if (mode == TreatmentMode::Unordered) != a.response_matrix.is_some() {
        return Err(VsivError::Argument("--response-matrix is required with --mode unordered and only then".into()));
    }
    let fields = [("n", ds.n().to_string()), ("tau", a.tau.to_string()), ("seed", a.stat.seed.to_string())];
    let mut text = header(line, &fields);
    if let Some(rm) = &a.response_matrix {
        let r = read_response_matrix(&ds, rm)?;
        let (_, selected, _) = select_and_estimate(&ds, mode, &a.stat, a.tau, a.presumed.as_deref(), &a.g)?;
        let j = ds.j();
        let contrasts: Vec<(usize, usize)> = (0..j).flat_map(|d| (0..j).filter(move |&e| e != d).map(move |e| (d, e))).collect();
        let entries = mte_unordered(&ds, &selected, &r, &contrasts)?;
        text.push_str("pair,d,d_alt,t,t_alt,effect,identified\n");
        for e in entries {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{}",
                pair_label(&ds, e.pair),
                ds.treatment().label(e.d),
                ds.treatment().label(e.d_alt),
                e.t,
                e.t_alt,
                e.value,
                e.identified
            );
        }
        return emit(&a.out, &text);
    }
    let (est, selected, late) = select_and_estimate(&ds, mode, &a.stat, a.tau, a.presumed.as_deref(), &a.g)?;
    text.push_str("pair,beta,se,selected,statistic,first_stage,subsample,degenerate\n");
    let mut summary = String::new();
    for o in &est.per_pair {
        let p = o.pair;
        let i = late.index_of(p).expect("pair in layout");
        let diag = &late.diagnostics[i];
        let sel = selected.contains(p);
        let se = if sel { late.se(p).unwrap_or(0.0) } else { 0.0 };
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            pair_label(&ds, p),
            late.beta[i],
            se,
            sel,
            o.statistic.value,
            diag.first_stage,
            diag.subsample,
            diag.degenerate
        );
        let _ = writeln!(summary, "{:<16} {:>10.4} {:>10.4} {}", pair_label(&ds, p).trim_matches('"'), late.beta[i], se, if sel { "selected" } else { "" });
    }
    if a.out.is_some() {
        print!("{:<16} {:>10} {:>10}\n{summary}", "pair", "beta", "se");
    }
    emit(&a.out, &text)
}

fn read_hypothesis(ds: &Dataset, path: &Path) -> Result<Hypothesis> {
    let text = std::fs::read_to_string(path)?;
    let mut section = "";
    let mut pairs = Vec::new();
    let mut a_rows: Vec<Vec<f64>> = Vec::new();
    let mut b = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "pairs" | "A" | "b" => {
                section = if line == "pairs" { "pairs" } else if line == "A" { "A" } else { "b" };
                continue;
            }
            _ => {}
        }
        let err = |msg: String| VsivError::Row { line: i + 1, msg };
        let nums = || -> Result<Vec<f64>> {
            line.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| err(format!("bad number '{v}'")))).collect()
        };
        match section {
            "pairs" => {
                let (x, y) = line.split_once(',').ok_or_else(|| err("expected 'label,label'".into()))?;
                let idx = |l: &str| ds.instrument().index_of(l.trim()).ok_or_else(|| err(format!("unknown instrument value '{}'", l.trim())));
                pairs.push(PairId::new(idx(x)?, idx(y)?)?);
            }
            "A" => a_rows.push(nums()?),
            "b" => b.extend(nums()?),
            _ => return Err(err("content before a 'pairs', 'A' or 'b' header".into())),
        }
    }
    let r = a_rows.len();
    let s = pairs.len();
    if a_rows.iter().any(|row| row.len() != s) {
        return Err(VsivError::Argument(format!("each row of A needs {s} entries")));
    }
    let a = DMatrix::from_row_iterator(r, s, a_rows.into_iter().flatten());
    Hypothesis::affine(pairs, a, DVector::from_vec(b))
}

fn test(a: TestArgs, line: &str) -> Result<()> {
    let (ds, mode) = load(&a.input)?;
    let hyp = read_hypothesis(&ds, &a.hypothesis)?;
    let (_, _, late) = select_and_estimate(&ds, mode, &a.stat, a.tau, a.presumed.as_deref(), &a.g)?;
    let res = wald_test(&late, &hyp, a.alpha)?;
    let mut text = header(line, &[("n", ds.n().to_string()), ("tau", a.tau.to_string()), ("alpha", a.alpha.to_string())]);
    text.push_str("ts1,ts2,critical,df,alpha,reject\n");
    let _ = writeln!(text, "{},{},{},{},{},{}", res.ts1, res.ts2, res.critical, res.df, res.alpha, res.reject);
    emit(&a.out, &text)
}

fn simulate(a: SimulateArgs, line: &str) -> Result<()> {
    let spec = if a.family == "custom" {
        let path = a.custom.as_ref().ok_or_else(|| VsivError::Argument("--family custom needs --custom <file>".into()))?;
        DgpSpec::custom(&read_config(path)?)?
    } else {
        if a.custom.is_some() {
            return Err(VsivError::Argument("--custom is only valid with --family custom".into()));
        }
        DgpSpec::parse(&a.family)?
    };
    let qob = a.family.starts_with("qob");
    let default_ends = if qob { Some("200") } else { None };
    let stat = StatConfig {
        xi0: a.xi0,
        variant: variant(a.variant, if qob { Variant::PosPart } else { Variant::AbsSup }),
        endpoints: endpoint_policy(a.endpoints.as_deref().or(default_ends), a.seed)?,
        mode: if spec.j() == 2 { TreatmentMode::Binary } else { TreatmentMode::Ordered },
    };
    let cfg = ScreenConfig::with_stat(stat);
    let grid = parse_grid(&a.tau_grid)?;
    let rep = mc_selection_table(&spec, a.n, a.reps, &grid, a.seed, &cfg)?;
    let mut text = header(
        line,
        &[
            ("family", rep.family.clone()),
            ("n", a.n.to_string()),
            ("reps", a.reps.to_string()),
            ("seed", a.seed.to_string()),
            ("runtime_secs", format!("{:.2}", rep.runtime_secs)),
        ],
    );
    text.push_str(&rep.to_csv());
    emit(&a.out, &text)
}
