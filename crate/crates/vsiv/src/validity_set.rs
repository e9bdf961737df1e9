//! Estimated validity pair set: threshold the falsification statistics,
//! intersect with presumed pairs, enumerate subinstruments and tune tau.

use crate::dataset::{Dataset, Orientation, PairId, PairSet, Support};
use crate::error::{Result, VsivError};
use crate::falsify_km::{psi_bounds, PartitionCollection, PsiReport, DEFAULT_TUPLE_CAP};
use crate::falsify_kms::{sup_stat_pairs, Endpoints, StatConfig, SupStatistic, TreatmentMode};
use crate::simulate::{mc_selection_table, DgpSpec, SimulationReport, ThresholdDgp};

pub const DEFAULT_TAU: f64 = 4.0;
pub const DEFAULT_MAX_COMPONENTS: usize = 8;
pub const DEFAULT_FLOOR: f64 = 0.98;

#[derive(Debug, Clone)]
pub struct ScreenConfig {
    pub stat: StatConfig,
    /// Pairs to screen; defaults to every pair of the mode's orientation.
    pub universe: Option<PairSet>,
    /// Partitions for the multivalued inequalities; defaults to quantile cells.
    pub partitions: Option<PartitionCollection>,
    /// Threshold for the multivalued inequalities; defaults to tau.
    pub t_n: Option<f64>,
    pub tuple_cap: usize,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self { stat: StatConfig::default(), universe: None, partitions: None, t_n: None, tuple_cap: DEFAULT_TUPLE_CAP }
    }
}

impl ScreenConfig {
    pub fn with_stat(stat: StatConfig) -> Self {
        Self { stat, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Sup statistic only (binary treatment).
    KmsOnly,
    /// Sup statistic and the partition inequalities (multivalued treatment).
    KmsAndKm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub pair: PairId,
    pub statistic: SupStatistic,
    pub psi: Option<PsiReport>,
    pub included: bool,
    /// An instrument value of the pair has no observations.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValiditySetEstimate {
    pub selected: PairSet,
    pub universe: PairSet,
    pub per_pair: Vec<PairOutcome>,
    pub tau: f64,
    pub xi0: f64,
    pub mode: TreatmentMode,
    pub source: Source,
}

/// Statistics of every pair in the universe, reusable across thresholds.
#[derive(Debug, Clone)]
pub struct Screen {
    universe: PairSet,
    stats: Vec<SupStatistic>,
    psi: Vec<Option<PsiReport>>,
    mode: TreatmentMode,
    xi0: f64,
    source: Source,
}

pub fn default_universe(k: usize, mode: TreatmentMode) -> PairSet {
    match mode {
        TreatmentMode::Unordered => PairSet::all(k, Orientation::Upper),
        _ => PairSet::all(k, Orientation::Both),
    }
}

pub fn screen(ds: &Dataset, cfg: &ScreenConfig) -> Result<Screen> {
    let tables = ds.tables();
    let ends = Endpoints::build(ds, cfg.stat.endpoints)?;
    let universe = cfg.universe.clone().unwrap_or_else(|| default_universe(ds.k(), cfg.stat.mode));
    if let Some(p) = universe.iter().find(|p| p.k >= ds.k() || p.kprime >= ds.k()) {
        return Err(VsivError::Argument(format!("pair ({}, {}) outside the instrument support", p.k, p.kprime)));
    }
    let stats = sup_stat_pairs(&tables, &ends, universe.pairs(), &cfg.stat)?;
    let source = if cfg.stat.mode == TreatmentMode::Binary || ds.j() == 2 { Source::KmsOnly } else { Source::KmsAndKm };
    let psi = match source {
        Source::KmsOnly => vec![None; universe.len()],
        Source::KmsAndKm => {
            let parts = match &cfg.partitions {
                Some(p) => p.clone(),
                None => PartitionCollection::default_for(ds.y())?,
            };
            let mut cache: Vec<(PairId, PsiReport)> = Vec::new();
            let mut out = Vec::with_capacity(universe.len());
            for p in universe.iter() {
                let hit = cache.iter().find(|(q, _)| q.same_values(p)).map(|(_, r)| PsiReport { pair: p, ..*r });
                let r = match hit {
                    Some(r) => r,
                    None => {
                        let r = psi_bounds(&tables, p, &parts, cfg.tuple_cap)?;
                        cache.push((p, r));
                        r
                    }
                };
                out.push(Some(r));
            }
            out
        }
    };
    Ok(Screen { universe, stats, psi, mode: cfg.stat.mode, xi0: cfg.stat.xi0, source })
}

impl Screen {
    pub fn universe(&self) -> &PairSet {
        &self.universe
    }

    pub fn statistics(&self) -> &[SupStatistic] {
        &self.stats
    }

    /// Whether the `i`-th pair of the universe passes at `tau`.
    pub fn included(&self, i: usize, tau: f64, t_n: Option<f64>) -> bool {
        let s = &self.stats[i];
        !s.degenerate && s.value <= tau && self.psi[i].map_or(true, |r| r.passes(t_n.unwrap_or(tau)))
    }

    /// Selection at threshold `tau`; the inequality threshold defaults to `tau`.
    pub fn select(&self, tau: f64, t_n: Option<f64>) -> ValiditySetEstimate {
        let t_n = t_n.unwrap_or(tau);
        let per_pair: Vec<PairOutcome> = self
            .universe
            .iter()
            .zip(self.stats.iter().zip(&self.psi))
            .enumerate()
            .map(|(i, (pair, (s, psi)))| {
                let included = self.included(i, tau, Some(t_n));
                PairOutcome { pair, statistic: *s, psi: *psi, included, degenerate: s.degenerate }
            })
            .collect();
        let selected = PairSet::new(
            per_pair.iter().filter(|o| o.included).map(|o| o.pair).collect(),
            self.universe.orientation(),
        )
        .expect("subset of a valid pair set");
        ValiditySetEstimate {
            selected,
            universe: self.universe.clone(),
            per_pair,
            tau,
            xi0: self.xi0,
            mode: self.mode,
            source: self.source,
        }
    }
}

pub fn estimate_z0(ds: &Dataset, tau: f64, cfg: &ScreenConfig) -> Result<ValiditySetEstimate> {
    if !(tau > 0.0) {
        return Err(VsivError::Argument(format!("tau must be positive, got {tau}")));
    }
    Ok(screen(ds, cfg)?.select(tau, cfg.t_n))
}

/// Selected pairs that are also presumed valid.
pub fn intersect_presumed(est: &ValiditySetEstimate, presumed: &PairSet) -> PairSet {
    est.selected.intersect(presumed)
}

#[derive(Debug, Clone)]
pub struct Subinstrument {
    /// Indices of the components combined into this subinstrument.
    pub components: Vec<usize>,
    pub support: Support,
    pub estimate: ValiditySetEstimate,
}

/// Screen every non-empty combination of instrument components.
///
/// Each combination's value is the tuple of its component labels; the
/// combinations are visited in increasing bitmask order.
pub fn enumerate_subinstruments(
    ds: &Dataset,
    components: &[Vec<String>],
    tau: f64,
    cfg: &ScreenConfig,
    max_components: usize,
) -> Result<Vec<Subinstrument>> {
    let l = components.len();
    if l == 0 {
        return Err(VsivError::Argument("no instrument components".into()));
    }
    if l > max_components {
        return Err(VsivError::Guard(format!("{l} components exceed the limit of {max_components}")));
    }
    if let Some(c) = components.iter().find(|c| c.len() != ds.n()) {
        return Err(VsivError::Schema(format!("component has {} rows, dataset has {}", c.len(), ds.n())));
    }
    let mut out = Vec::new();
    for mask in 1usize..(1 << l) {
        let chosen: Vec<usize> = (0..l).filter(|&c| mask >> c & 1 == 1).collect();
        let labels: Vec<String> = (0..ds.n())
            .map(|i| chosen.iter().map(|&c| components[c][i].as_str()).collect::<Vec<_>>().join("|"))
            .collect();
        let support = if chosen.len() == 1 {
            Support::infer(labels.iter().map(String::as_str))?
        } else {
            let mut distinct = labels.clone();
            distinct.sort();
            distinct.dedup();
            Support::new(distinct)?
        };
        let z: Vec<usize> = labels.iter().map(|v| support.index_of(v).expect("label in support")).collect();
        if support.len() < 2 {
            return Err(VsivError::Structural(format!("subinstrument {chosen:?} takes a single value")));
        }
        let sub = ds.with_instrument(z, support.clone())?;
        let mut sub_cfg = cfg.clone();
        sub_cfg.universe = None;
        let estimate = estimate_z0(&sub, tau, &sub_cfg)?;
        out.push(Subinstrument { components: chosen, support, estimate });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TuneReport {
    /// One report per calibrated design, in design order 1..4.
    pub reports: Vec<SimulationReport>,
    /// Pairs that are valid in every calibrated design.
    pub valid_pairs: Vec<PairId>,
    pub floor: f64,
    /// Smallest grid value whose valid-pair selection rates all reach the floor.
    pub recommended: Option<f64>,
}

/// Calibrate the four perturbed designs to the dataset's instrument shares and
/// treatment rates, simulate selection rates over the grid and recommend tau.
///
/// The perturbed cell is treated arm at the second instrument value.
pub fn tune_tau(
    ds: &Dataset,
    tau_grid: &[f64],
    reps: usize,
    seed: u64,
    floor: f64,
    stat: StatConfig,
) -> Result<TuneReport> {
    if ds.j() != 2 {
        return Err(VsivError::UnsupportedMode(format!("tau tuning needs a binary treatment, found {} values", ds.j())));
    }
    if tau_grid.is_empty() {
        return Err(VsivError::Argument("empty tau grid".into()));
    }
    let tables = ds.tables();
    let k = ds.k();
    let n = ds.n();
    let z_probs: Vec<f64> = (0..k).map(|z| tables.z_count(z) as f64 / n as f64).collect();
    let d_probs: Vec<f64> = (0..k)
        .map(|z| {
            let nz = tables.z_count(z);
            if nz == 0 {
                0.0
            } else {
                tables.cell_count(1, z) as f64 / nz as f64
            }
        })
        .collect();
    let perturbed = 1;
    let universe = PairSet::all(k, Orientation::Upper);
    let valid_pairs: Vec<PairId> = universe
        .iter()
        .filter(|p| !p.contains(perturbed) && d_probs[p.k] <= d_probs[p.kprime])
        .collect();
    let mut reports = Vec::new();
    for design in 1..=4u8 {
        let spec = DgpSpec::Threshold(ThresholdDgp::calibrated(z_probs.clone(), d_probs.clone(), perturbed, design)?);
        let cfg = ScreenConfig { stat, universe: Some(universe.clone()), ..ScreenConfig::default() };
        reports.push(mc_selection_table(&spec, n, reps, tau_grid, seed.wrapping_add(design as u64), &cfg)?);
    }
    let recommended = tau_grid.iter().copied().find(|&tau| {
        reports.iter().all(|r| {
            valid_pairs.iter().all(|p| r.rate(tau, *p).is_some_and(|v| v >= floor))
        })
    });
    Ok(TuneReport { reports, valid_pairs, floor, recommended })
}
