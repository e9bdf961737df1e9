//! Browser bindings: screen a pasted CSV, estimate over the selected pairs,
//! and run a small selection-frequency simulation.
//!
//! Every function returns CSV text; errors come back as a one-line message.

use std::fmt::Write as _;

use vsiv::dataset::{ingest_reader, CsvSchema, Dataset, PairId};
use vsiv::estimate::{beta_vector, GFunction};
use vsiv::falsify_kms::{HFunction, StatConfig, TreatmentMode, Variant};
use vsiv::simulate::{mc_selection_table, DgpSpec};
use vsiv::validity_set::{estimate_z0, ScreenConfig, ValiditySetEstimate};
use wasm_bindgen::prelude::*;

const MAX_SIM_N: usize = 20_000;
const MAX_SIM_REPS: usize = 500;

fn load(csv: &str) -> Result<(Dataset, TreatmentMode), String> {
    let ds = ingest_reader(csv.as_bytes(), &CsvSchema::default()).map_err(|e| e.to_string())?;
    let mode = if ds.j() == 2 { TreatmentMode::Binary } else { TreatmentMode::Ordered };
    Ok((ds, mode))
}

fn screen(ds: &Dataset, mode: TreatmentMode, tau: f64, pos_part: bool) -> Result<ValiditySetEstimate, String> {
    let variant = if pos_part { Variant::PosPart } else { Variant::AbsSup };
    let cfg = ScreenConfig::with_stat(StatConfig { mode, variant, ..StatConfig::default() });
    estimate_z0(ds, tau, &cfg).map_err(|e| e.to_string())
}

fn label(ds: &Dataset, p: PairId) -> String {
    format!("\"({}, {})\"", ds.instrument().label(p.k), ds.instrument().label(p.kprime))
}

fn witness(ds: &Dataset, h: &HFunction) -> String {
    match *h {
        HFunction::SignedInterval { d, a, b, sign } => {
            format!("{}1{{{a}<=Y<={b} D={}}}", if sign < 0.0 { "-" } else { "" }, ds.treatment().label(d))
        }
        HFunction::FosdThreshold { c } => format!("1{{D<={}}}", ds.treatment().label(c)),
    }
}

/// Per-pair falsification statistics for a CSV with columns y, d, z.
#[wasm_bindgen]
pub fn falsify(csv: &str, tau: f64, pos_part: bool) -> Result<String, String> {
    let (ds, mode) = load(csv)?;
    let est = screen(&ds, mode, tau, pos_part)?;
    let mut out = String::from("pair,statistic,witness,included\n");
    for o in &est.per_pair {
        let _ = writeln!(
            out,
            "{},{:.4},\"{}\",{}",
            label(&ds, o.pair),
            o.statistic.value,
            witness(&ds, &o.statistic.witness),
            o.included
        );
    }
    Ok(out)
}

/// Pairwise IV estimates with plug-in standard errors; unselected pairs are zero.
#[wasm_bindgen]
pub fn estimate(csv: &str, tau: f64) -> Result<String, String> {
    let (ds, mode) = load(csv)?;
    let est = screen(&ds, mode, tau, false)?;
    let late = beta_vector(&ds, &est.selected, &GFunction::index(ds.k())).map_err(|e| e.to_string())?;
    let mut out = String::from("pair,beta,se,selected\n");
    for o in &est.per_pair {
        let p = o.pair;
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{}",
            label(&ds, p),
            late.beta_of(p).unwrap_or(0.0),
            late.se(p).unwrap_or(0.0),
            est.selected.contains(p)
        );
    }
    Ok(out)
}

/// Selection frequencies at `tau` for a built-in design such as `section5:1`.
#[wasm_bindgen]
pub fn simulate(family: &str, n: usize, reps: usize, tau: f64, seed: u64) -> Result<String, String> {
    if n > MAX_SIM_N || reps > MAX_SIM_REPS {
        return Err(format!("the demo allows n <= {MAX_SIM_N} and reps <= {MAX_SIM_REPS}"));
    }
    let spec = DgpSpec::parse(family).map_err(|e| e.to_string())?;
    let rep = mc_selection_table(&spec, n, reps, &[tau], seed, &ScreenConfig::default()).map_err(|e| e.to_string())?;
    let mut out = String::from("pair,rate,mean_statistic\n");
    for (i, label) in rep.pair_labels.iter().enumerate() {
        let _ = writeln!(out, "\"{label}\",{:.3},{:.3}", rep.rates(0)[i], rep.mean_statistic[i]);
    }
    Ok(out)
}
