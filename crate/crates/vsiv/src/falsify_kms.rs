//! Sup-type falsification statistics over interval-indexed functions.
//!
//! For a pair (k, k') with group indicators g1 = 1{Z = z_k} and
//! g2 = 1{Z = z_k'}, each candidate function h is scored by
//! phi(h) / max(xi0, sigma(h)) where phi is the difference of conditional
//! masses and sigma its plug-in standard deviation. The statistic is
//! sqrt(T_n) times the supremum over the class.
//!
//! Every score is computed from integer counts through [`PairScale::ratio`], so
//! the fast scan and the brute-force oracle agree bit for bit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

use crate::dataset::{Dataset, GroupTables, PairId};
use crate::error::{Result, VsivError};

pub const DEFAULT_XI0: f64 = 0.001;

/// Rows above which [`brute_force_sup`] refuses to run.
pub const BRUTE_FORCE_MAX_N: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// sqrt(T_n) * |sup|
    AbsSup,
    /// sqrt(T_n) * max(sup, 0)
    PosPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointPolicy {
    /// Every distinct realized outcome.
    All,
    /// Outcomes of `m` rows drawn without replacement.
    Subsample { m: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentMode {
    Binary,
    Ordered,
    Unordered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatConfig {
    pub xi0: f64,
    pub variant: Variant,
    pub endpoints: EndpointPolicy,
    pub mode: TreatmentMode,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self {
            xi0: DEFAULT_XI0,
            variant: Variant::AbsSup,
            endpoints: EndpointPolicy::All,
            mode: TreatmentMode::Binary,
        }
    }
}

/// A member of the function class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HFunction {
    /// sign * 1{a <= Y <= b, D = d}
    SignedInterval { d: usize, a: f64, b: f64, sign: f64 },
    /// 1{D <= d_c}, the first-order dominance threshold at treatment index c.
    FosdThreshold { c: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupStatistic {
    pub pair: PairId,
    /// Thresholded comparand, always >= 0.
    pub value: f64,
    /// Supremum of phi / max(xi0, sigma) before scaling.
    pub raw_sup: f64,
    pub witness: HFunction,
    pub variant: Variant,
    pub t_n: f64,
    /// One of the two instrument groups is empty.
    pub degenerate: bool,
}

/// Sorted interval endpoints shared by every pair of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    values: Vec<f64>,
    complete: bool,
}

impl Endpoints {
    pub fn build(ds: &Dataset, policy: EndpointPolicy) -> Result<Self> {
        match policy {
            EndpointPolicy::All => {
                let mut values = ds.y().to_vec();
                values.sort_by(f64::total_cmp);
                values.dedup();
                Ok(Self { values, complete: true })
            }
            EndpointPolicy::Subsample { m, seed } => {
                if m == 0 {
                    return Err(VsivError::Argument("endpoint subsample size must be positive".into()));
                }
                if m >= ds.n() {
                    return Self::build(ds, EndpointPolicy::All);
                }
                let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
                let mut values: Vec<f64> = sample(&mut rng, ds.n(), m).into_iter().map(|i| ds.y()[i]).collect();
                values.sort_by(f64::total_cmp);
                values.dedup();
                Ok(Self { values, complete: false })
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when every realized outcome is an endpoint.
    pub fn is_complete(&self) -> bool {
        self.complete
    }
}

/// Group sizes and constants of one pair.
#[derive(Debug, Clone, Copy)]
pub struct PairScale {
    n1: f64,
    n2: f64,
    t_n: f64,
    xi0: f64,
}

impl PairScale {
    pub fn new(tables: &GroupTables, pair: PairId, xi0: f64) -> Self {
        Self {
            n1: tables.z_count(pair.k) as f64,
            n2: tables.z_count(pair.kprime) as f64,
            t_n: tables.t_n(),
            xi0,
        }
    }

    pub fn degenerate(&self) -> bool {
        self.n1 == 0.0 || self.n2 == 0.0
    }

    fn share(c: usize, n: f64) -> f64 {
        if n > 0.0 {
            c as f64 / n
        } else {
            0.0
        }
    }

    fn var_term(c: usize, n: f64) -> f64 {
        if n > 0.0 {
            let p = c as f64 / n;
            p * (1.0 - p) / n
        } else {
            0.0
        }
    }

    /// Unsigned difference of conditional masses, c2/N2 - c1/N1.
    pub fn phi(&self, c1: usize, c2: usize) -> f64 {
        Self::share(c2, self.n2) - Self::share(c1, self.n1)
    }

    /// Plug-in variance for an indicator with counts (c1, c2).
    pub fn sigma_sq(&self, c1: usize, c2: usize) -> f64 {
        self.t_n * (Self::var_term(c2, self.n2) + Self::var_term(c1, self.n1))
    }

    /// phi / max(xi0, sigma) for the unsigned indicator.
    #[inline]
    pub fn ratio(&self, c1: usize, c2: usize) -> f64 {
        let sd = self.sigma_sq(c1, c2).sqrt();
        let den = if sd > self.xi0 { sd } else { self.xi0 };
        self.phi(c1, c2) / den + 0.0
    }
}

/// Counts of an h function in the two groups of a pair: (c1, c2).
fn h_counts(tables: &GroupTables, h: &HFunction, pair: PairId) -> (usize, usize) {
    match *h {
        HFunction::SignedInterval { d, a, b, .. } => {
            (tables.count_closed(d, pair.k, a, b), tables.count_closed(d, pair.kprime, a, b))
        }
        HFunction::FosdThreshold { c } => {
            let sum = |z| (0..=c).map(|d| tables.cell_count(d, z)).sum::<usize>();
            (sum(pair.k), sum(pair.kprime))
        }
    }
}

fn h_sign(h: &HFunction) -> f64 {
    match *h {
        HFunction::SignedInterval { sign, .. } => sign,
        HFunction::FosdThreshold { .. } => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiValue {
    pub value: f64,
    pub degenerate: bool,
}

/// P(h | z_k') - P(h | z_k), with empty groups contributing 0.
pub fn phi_hat(tables: &GroupTables, h: &HFunction, pair: PairId) -> PhiValue {
    let scale = PairScale::new(tables, pair, DEFAULT_XI0);
    let (c1, c2) = h_counts(tables, h, pair);
    PhiValue { value: h_sign(h) * scale.phi(c1, c2) + 0.0, degenerate: scale.degenerate() }
}

/// Plug-in variance of phi_hat scaled by T_n.
pub fn sigma_hat_sq(tables: &GroupTables, h: &HFunction, pair: PairId) -> f64 {
    let scale = PairScale::new(tables, pair, DEFAULT_XI0);
    let (c1, c2) = h_counts(tables, h, pair);
    scale.sigma_sq(c1, c2)
}

/// Signed score of `h`, the quantity whose supremum defines the statistic.
pub fn score(tables: &GroupTables, h: &HFunction, pair: PairId, xi0: f64) -> f64 {
    let scale = PairScale::new(tables, pair, xi0);
    let (c1, c2) = h_counts(tables, h, pair);
    h_sign(h) * scale.ratio(c1, c2)
}

/// Largest and smallest unsigned ratio over the intervals of one arm.
#[derive(Debug, Clone, Copy)]
struct ArmExtremes {
    max: (f64, f64, f64),
    min: (f64, f64, f64),
}

impl ArmExtremes {
    fn offer(slot: &mut Option<Self>, r: f64, a: f64, b: f64) {
        match slot {
            None => *slot = Some(Self { max: (r, a, b), min: (r, a, b) }),
            Some(s) => {
                if r > s.max.0 {
                    s.max = (r, a, b);
                }
                if r < s.min.0 {
                    s.min = (r, a, b);
                }
            }
        }
    }
}

/// Scan all intervals of arm `d` for the pair.
fn arm_extremes(tables: &GroupTables, ends: &Endpoints, scale: &PairScale, pair: PairId, d: usize) -> ArmExtremes {
    let g1 = tables.cell(d, pair.k);
    let g2 = tables.cell(d, pair.kprime);
    let grid = ends.values();
    let mut best: Option<ArmExtremes> = None;

    if ends.is_complete() {
        // Only runs of outcomes realized in this arm and pair change the
        // counts; every other interval has the counts of a run or of nothing.
        let mut vals = Vec::with_capacity(g1.len() + g2.len());
        let mut pre1 = vec![0usize];
        let mut pre2 = vec![0usize];
        let (mut i1, mut i2) = (0, 0);
        while i1 < g1.len() || i2 < g2.len() {
            let v = match (g1.get(i1), g2.get(i2)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => unreachable!(),
            };
            let s1 = i1;
            while i1 < g1.len() && g1[i1] == v {
                i1 += 1;
            }
            let s2 = i2;
            while i2 < g2.len() && g2[i2] == v {
                i2 += 1;
            }
            vals.push(v);
            pre1.push(pre1.last().unwrap() + (i1 - s1));
            pre2.push(pre2.last().unwrap() + (i2 - s2));
        }
        if vals.len() < grid.len() {
            let empty_at = grid
                .iter()
                .zip(vals.iter().chain(std::iter::repeat(&f64::NAN)))
                .find(|(g, v)| g != v)
                .map(|(g, _)| *g)
                .unwrap_or(grid[0]);
            ArmExtremes::offer(&mut best, scale.ratio(0, 0), empty_at, empty_at);
        }
        for i in 0..vals.len() {
            for j in i..vals.len() {
                let r = scale.ratio(pre1[j + 1] - pre1[i], pre2[j + 1] - pre2[i]);
                ArmExtremes::offer(&mut best, r, vals[i], vals[j]);
            }
        }
    } else {
        let below = |cell: &[f64]| -> Vec<usize> { grid.iter().map(|&g| cell.partition_point(|&v| v < g)).collect() };
        let upto = |cell: &[f64]| -> Vec<usize> { grid.iter().map(|&g| cell.partition_point(|&v| v <= g)).collect() };
        let (lo1, hi1, lo2, hi2) = (below(g1), upto(g1), below(g2), upto(g2));
        for i in 0..grid.len() {
            for j in i..grid.len() {
                let r = scale.ratio(hi1[j] - lo1[i], hi2[j] - lo2[i]);
                ArmExtremes::offer(&mut best, r, grid[i], grid[j]);
            }
        }
    }
    best.unwrap_or(ArmExtremes { max: (0.0, f64::NAN, f64::NAN), min: (0.0, f64::NAN, f64::NAN) })
}

/// Candidate (score, witness) list in scan order, reduced to the supremum.
fn first_max(cands: impl IntoIterator<Item = (f64, HFunction)>) -> (f64, HFunction) {
    let mut best: Option<(f64, HFunction)> = None;
    for (s, h) in cands {
        if best.map_or(true, |(b, _)| s > b) {
            best = Some((s, h));
        }
    }
    best.expect("non-empty candidate list")
}

fn check_pair(tables: &GroupTables, pair: PairId) -> Result<()> {
    if tables.k() < 2 {
        return Err(VsivError::Structural("instrument needs at least 2 values".into()));
    }
    if pair.k >= tables.k() || pair.kprime >= tables.k() || pair.k == pair.kprime {
        return Err(VsivError::Argument(format!("pair ({}, {}) is not valid for K = {}", pair.k, pair.kprime, tables.k())));
    }
    Ok(())
}

fn check_mode(j: usize, mode: TreatmentMode) -> Result<()> {
    match mode {
        TreatmentMode::Binary if j != 2 => {
            Err(VsivError::UnsupportedMode(format!("binary mode needs 2 treatment values, found {j}")))
        }
        TreatmentMode::Unordered if j > 16 => {
            Err(VsivError::Guard(format!("{j} treatment values give too many sign patterns")))
        }
        _ => Ok(()),
    }
}

/// Combine per-arm extremes into the class supremum for the mode.
///
/// `ext[d]` holds (max, witness, min, witness) of the unsigned ratio on arm d,
/// `fosd` the threshold scores in index order.
fn combine(
    mode: TreatmentMode,
    ext: &[((f64, f64, f64), (f64, f64, f64))],
    fosd: &[(f64, HFunction)],
) -> (f64, HFunction) {
    let j = ext.len();
    let plus = |d: usize| {
        let (r, a, b) = ext[d].0;
        (r, HFunction::SignedInterval { d, a, b, sign: 1.0 })
    };
    let minus = |d: usize| {
        let (r, a, b) = ext[d].1;
        (-r + 0.0, HFunction::SignedInterval { d, a, b, sign: -1.0 })
    };
    match mode {
        TreatmentMode::Binary => first_max([plus(0), minus(1)]),
        TreatmentMode::Ordered => first_max([plus(0), minus(j - 1)].into_iter().chain(fosd.iter().copied())),
        TreatmentMode::Unordered => {
            let mut best: Option<(f64, HFunction)> = None;
            for q in 0..(1usize << j) {
                let pattern = first_max((0..j).map(|d| if q >> d & 1 == 0 { plus(d) } else { minus(d) }));
                if best.map_or(true, |(b, _)| pattern.0 < b) {
                    best = Some(pattern);
                }
            }
            best.expect("at least one pattern")
        }
    }
}

fn finish(pair: PairId, raw: f64, witness: HFunction, scale: &PairScale, variant: Variant) -> SupStatistic {
    let root = scale.t_n.sqrt();
    let value = match variant {
        Variant::AbsSup => root * raw.abs(),
        Variant::PosPart => root * raw.max(0.0),
    };
    SupStatistic { pair, value: value + 0.0, raw_sup: raw, witness, variant, t_n: scale.t_n, degenerate: scale.degenerate() }
}

/// Falsification statistic of one pair.
pub fn sup_stat_pair(tables: &GroupTables, ends: &Endpoints, pair: PairId, cfg: &StatConfig) -> Result<SupStatistic> {
    check_pair(tables, pair)?;
    check_mode(tables.j(), cfg.mode)?;
    let scale = PairScale::new(tables, pair, cfg.xi0);
    let j = tables.j();
    let arms: Vec<usize> = match cfg.mode {
        TreatmentMode::Binary => vec![0, 1],
        TreatmentMode::Ordered => vec![0, j - 1],
        TreatmentMode::Unordered => (0..j).collect(),
    };
    let mut ext = vec![((0.0, f64::NAN, f64::NAN), (0.0, f64::NAN, f64::NAN)); j];
    for &d in &arms {
        let e = arm_extremes(tables, ends, &scale, pair, d);
        ext[d] = (e.max, e.min);
    }
    let fosd = fosd_scores(&scale, j, cfg.mode, |c| h_counts(tables, &HFunction::FosdThreshold { c }, pair));
    let (raw, witness) = combine(cfg.mode, &ext, &fosd);
    Ok(finish(pair, raw, witness, &scale, cfg.variant))
}

fn fosd_scores(
    scale: &PairScale,
    j: usize,
    mode: TreatmentMode,
    counts: impl Fn(usize) -> (usize, usize),
) -> Vec<(f64, HFunction)> {
    if mode != TreatmentMode::Ordered {
        return Vec::new();
    }
    (0..j - 1)
        .map(|c| {
            let (c1, c2) = counts(c);
            (scale.ratio(c1, c2), HFunction::FosdThreshold { c })
        })
        .collect()
}

/// Statistics for several pairs, in the order given.
pub fn sup_stat_pairs(
    tables: &GroupTables,
    ends: &Endpoints,
    pairs: &[PairId],
    cfg: &StatConfig,
) -> Result<Vec<SupStatistic>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(|&p| sup_stat_pair(tables, ends, p, cfg)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(|&p| sup_stat_pair(tables, ends, p, cfg)).collect()
    }
}

/// Oracle: enumerate every endpoint interval and count rows directly.
pub fn brute_force_sup(ds: &Dataset, ends: &Endpoints, pair: PairId, cfg: &StatConfig) -> Result<SupStatistic> {
    if ds.n() > BRUTE_FORCE_MAX_N {
        return Err(VsivError::Guard(format!("brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {}", ds.n())));
    }
    let (y, d, z) = (ds.y(), ds.d(), ds.z());
    let j = ds.j();
    if pair.k >= ds.k() || pair.kprime >= ds.k() || pair.k == pair.kprime {
        return Err(VsivError::Argument(format!("pair ({}, {}) is not valid", pair.k, pair.kprime)));
    }
    check_mode(j, cfg.mode)?;
    let n1 = z.iter().filter(|&&v| v == pair.k).count();
    let n2 = z.iter().filter(|&&v| v == pair.kprime).count();
    let n = ds.n() as f64;
    let t_n = (0..ds.k()).fold(n, |acc, kk| acc * (z.iter().filter(|&&v| v == kk).count() as f64 / n));
    let scale = PairScale { n1: n1 as f64, n2: n2 as f64, t_n, xi0: cfg.xi0 };

    let count = |arm: usize, a: f64, b: f64| {
        let mut c = (0usize, 0usize);
        for i in 0..ds.n() {
            if d[i] == arm && a <= y[i] && y[i] <= b {
                if z[i] == pair.k {
                    c.0 += 1;
                } else if z[i] == pair.kprime {
                    c.1 += 1;
                }
            }
        }
        c
    };
    let grid = ends.values();
    let mut ext = vec![((0.0, f64::NAN, f64::NAN), (0.0, f64::NAN, f64::NAN)); j];
    for arm in 0..j {
        let mut best: Option<ArmExtremes> = None;
        for (i, &a) in grid.iter().enumerate() {
            for &b in &grid[i..] {
                let (c1, c2) = count(arm, a, b);
                ArmExtremes::offer(&mut best, scale.ratio(c1, c2), a, b);
            }
        }
        if let Some(e) = best {
            ext[arm] = (e.max, e.min);
        }
    }
    let fosd = fosd_scores(&scale, j, cfg.mode, |c| {
        let mut cc = (0usize, 0usize);
        for i in 0..ds.n() {
            if d[i] <= c {
                if z[i] == pair.k {
                    cc.0 += 1;
                } else if z[i] == pair.kprime {
                    cc.1 += 1;
                }
            }
        }
        cc
    });
    let (raw, witness) = combine(cfg.mode, &ext, &fosd);
    Ok(finish(pair, raw, witness, &scale, cfg.variant))
}
