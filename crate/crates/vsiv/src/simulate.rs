//! Data-generating processes, latent-truth oracles and Monte Carlo selection
//! tables.
//!
//! Every row consumes the same five open-interval uniforms (U, V, W, e1, e2)
//! whether or not latent potential outcomes are kept, so observed data is
//! identical across [`DgpSpec::draw`] and [`DgpSpec::draw_observed`]. Normal
//! variates come from the inverse CDF.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use statrs::function::erf::erfc_inv;

use crate::dataset::{Dataset, Orientation, PairId, PairSet, Support, TreatmentOrder};
use crate::error::{Result, VsivError};
use crate::falsify_kms::EndpointPolicy;
use crate::validity_set::{screen, ScreenConfig};

const PROB_TOL: f64 = 1e-9;

/// Outcome law of a perturbed cell: a normal mixture selected by W.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// Component means, one more than `cuts`.
    pub means: Vec<f64>,
    /// Increasing cut points on W in (0, 1).
    pub cuts: Vec<f64>,
    pub sd: f64,
}

impl Perturbation {
    pub fn normal(mean: f64, sd: f64) -> Self {
        Self { means: vec![mean], cuts: Vec::new(), sd }
    }

    fn validate(&self) -> Result<()> {
        if self.means.len() != self.cuts.len() + 1 {
            return Err(VsivError::Argument("mixture needs one more mean than cut points".into()));
        }
        if !(self.sd > 0.0) || self.means.iter().any(|m| !m.is_finite()) {
            return Err(VsivError::Argument("mixture components must have finite means and positive sd".into()));
        }
        check_cuts(&self.cuts, "mixture cut points")
    }

    fn sample(&self, w: f64, e: f64) -> f64 {
        let c = self.cuts.partition_point(|&cut| cut < w);
        self.means[c] + self.sd * e
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for (i, m) in self.means.iter().enumerate() {
            let upper = self.cuts.get(i).copied().unwrap_or(1.0);
            total += (upper - prev) * m;
            prev = upper;
        }
        total
    }
}

fn check_cuts(cuts: &[f64], what: &str) -> Result<()> {
    if cuts.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(VsivError::Argument(format!("{what} must lie in [0, 1]")));
    }
    if cuts.windows(2).any(|w| w[0] > w[1]) {
        return Err(VsivError::Argument(format!("{what} must be sorted")));
    }
    Ok(())
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(VsivError::Argument(format!("{what} must lie in [0, 1]")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(VsivError::Argument(format!("{what} sum to {s}, not 1")));
    }
    Ok(())
}

/// Threshold-crossing design.
///
/// Z is drawn from U by walking `draw_order` through cumulative `z_probs`.
/// D_z counts the cut points of z at or above V. Potential outcomes are
/// `noise_sd * e1 + d * (effect_base + effect_slope * V) + shift[d][z]`, except
/// in the perturbed cell, which draws from its mixture with e2.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdDgp {
    pub name: String,
    pub instrument_labels: Vec<String>,
    pub z_probs: Vec<f64>,
    pub draw_order: Vec<usize>,
    /// Per instrument value, increasing cut points on V; all of equal length.
    pub d_cuts: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub effect_base: f64,
    pub effect_slope: f64,
    /// Outcome shifts indexed `d * k + z`; empty for none.
    pub shifts: Vec<f64>,
    pub perturbed: Option<(usize, usize, Perturbation)>,
}

/// Unordered design with explicit response types.
///
/// V picks a response type; each type fixes the treatment at every instrument
/// value. Y_d = means[type][d] + noise_sd * e1 regardless of z.
#[derive(Debug, Clone, PartialEq)]
pub struct UnorderedDgp {
    pub name: String,
    pub z_probs: Vec<f64>,
    /// types[t][z] is the treatment of type t at instrument value z.
    pub types: Vec<Vec<usize>>,
    pub type_probs: Vec<f64>,
    /// means[t][d]
    pub means: Vec<Vec<f64>>,
    pub noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DgpSpec {
    Threshold(ThresholdDgp),
    Unordered(UnorderedDgp),
}

/// One row with every potential treatment and outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentDraw {
    pub y: f64,
    pub d: usize,
    pub z: usize,
    /// Potential treatment at each instrument value.
    pub d_pot: Vec<usize>,
    /// Potential outcomes indexed `d * k + z`.
    pub y_pot: Vec<f64>,
}

impl LatentDraw {
    pub fn y_pot(&self, d: usize, z: usize) -> f64 {
        self.y_pot[d * self.d_pot.len() + z]
    }
}

fn open_uniform(rng: &mut Xoshiro256StarStar) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn std_normal(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replication `rep` under `master`.
pub fn rep_seed(master: u64, rep: u64) -> u64 {
    splitmix(splitmix(master) ^ rep.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Seed of the endpoint subsample within a replication.
pub fn endpoint_seed(rep_seed: u64) -> u64 {
    splitmix(rep_seed ^ 0xA076_1D64_78BD_642F)
}

fn section5_perturbation(design: u8) -> Result<Perturbation> {
    Ok(match design {
        1 => Perturbation::normal(-0.7, 1.0),
        2 => Perturbation::normal(0.0, 1.675),
        3 => Perturbation::normal(0.0, 0.515),
        4 => Perturbation {
            means: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            cuts: vec![0.15, 0.35, 0.65, 0.85],
            sd: 0.125,
        },
        _ => return Err(VsivError::Argument(format!("design must be 1..4, got {design}"))),
    })
}

fn qob_perturbation(design: u8) -> Result<Perturbation> {
    Ok(match design {
        1 => Perturbation::normal(-0.07, 1.0),
        2 => Perturbation::normal(0.0, 1.0675),
        3 => Perturbation::normal(0.0, 0.9325),
        4 => Perturbation {
            means: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
            cuts: vec![0.15, 0.35, 0.65, 0.85],
            sd: 0.925,
        },
        _ => return Err(VsivError::Argument(format!("design must be 1..4, got {design}"))),
    })
}

/// Instrument shares of the quarter-of-birth designs.
pub const QOB_Z_PROBS: [f64; 4] = [0.2418, 0.2356, 0.2666, 0.2560];
/// Treatment rates given each quarter.
pub const QOB_D_PROBS: [f64; 4] = [0.5104, 0.5187, 0.5203, 0.5295];

impl ThresholdDgp {
    pub fn k(&self) -> usize {
        self.z_probs.len()
    }

    pub fn j(&self) -> usize {
        self.d_cuts.first().map_or(1, Vec::len) + 1
    }

    fn shift(&self, d: usize, z: usize) -> f64 {
        if self.shifts.is_empty() {
            0.0
        } else {
            self.shifts[d * self.k() + z]
        }
    }

    fn is_perturbed(&self, d: usize, z: usize) -> Option<&Perturbation> {
        match &self.perturbed {
            Some((pd, pz, p)) if *pd == d && *pz == z => Some(p),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k < 2 {
            return Err(VsivError::Argument("need at least 2 instrument values".into()));
        }
        check_probs(&self.z_probs, "instrument probabilities")?;
        let mut order = self.draw_order.clone();
        order.sort_unstable();
        if order != (0..k).collect::<Vec<_>>() {
            return Err(VsivError::Argument("draw order must be a permutation of the instrument values".into()));
        }
        if self.instrument_labels.len() != k {
            return Err(VsivError::Argument("one label per instrument value required".into()));
        }
        if self.d_cuts.len() != k {
            return Err(VsivError::Argument("one set of treatment cut points per instrument value required".into()));
        }
        let l = self.d_cuts[0].len();
        if l == 0 || self.d_cuts.iter().any(|c| c.len() != l) {
            return Err(VsivError::Argument("treatment cut points must be non-empty and of equal length".into()));
        }
        for c in &self.d_cuts {
            check_cuts(c, "treatment cut points")?;
        }
        if !(self.noise_sd > 0.0) || !self.effect_base.is_finite() || !self.effect_slope.is_finite() {
            return Err(VsivError::Argument("noise sd must be positive and effects finite".into()));
        }
        if !self.shifts.is_empty() && self.shifts.len() != self.j() * k {
            return Err(VsivError::Argument("shifts must have one entry per (d, z) cell".into()));
        }
        if let Some((d, z, p)) = &self.perturbed {
            if *d >= self.j() || *z >= k {
                return Err(VsivError::Argument("perturbed cell outside the support".into()));
            }
            p.validate()?;
        }
        Ok(())
    }

    /// The design of the three-valued instrument study, designs 1..4.
    pub fn section5(design: u8) -> Result<Self> {
        Ok(Self {
            name: format!("section5:{design}"),
            instrument_labels: vec!["0".into(), "1".into(), "2".into()],
            z_probs: vec![0.35, 0.35, 0.3],
            draw_order: vec![2, 1, 0],
            d_cuts: vec![vec![0.5]; 3],
            noise_sd: 1.0,
            effect_base: 0.0,
            effect_slope: 0.0,
            shifts: Vec::new(),
            perturbed: Some((1, 0, section5_perturbation(design)?)),
        })
    }

    /// The quarter-of-birth calibrated design, designs 1..4.
    pub fn qob(design: u8) -> Result<Self> {
        let mut dgp = Self::calibrated(QOB_Z_PROBS.to_vec(), QOB_D_PROBS.to_vec(), 1, design)?;
        dgp.name = format!("qob:{design}");
        dgp.instrument_labels = (1..=4).map(|q| q.to_string()).collect();
        Ok(dgp)
    }

    /// Binary design matching given instrument shares and treatment rates,
    /// with the quarter-of-birth perturbation in the treated cell of
    /// instrument value `perturbed`.
    pub fn calibrated(z_probs: Vec<f64>, d_probs: Vec<f64>, perturbed: usize, design: u8) -> Result<Self> {
        let k = z_probs.len();
        if d_probs.len() != k {
            return Err(VsivError::Argument("one treatment rate per instrument value required".into()));
        }
        let total: f64 = z_probs.iter().sum();
        let z_probs: Vec<f64> = z_probs.iter().map(|p| p / total).collect();
        let dgp = Self {
            name: format!("calibrated:{design}"),
            instrument_labels: (0..k).map(|z| z.to_string()).collect(),
            z_probs,
            draw_order: (0..k).collect(),
            d_cuts: d_probs.into_iter().map(|p| vec![p]).collect(),
            noise_sd: 1.0,
            effect_base: 0.0,
            effect_slope: 0.0,
            shifts: Vec::new(),
            perturbed: Some((1, perturbed, qob_perturbation(design)?)),
        };
        dgp.validate()?;
        Ok(dgp)
    }

    fn draw_z(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for &z in &self.draw_order {
            acc += self.z_probs[z];
            if u <= acc {
                return z;
            }
        }
        *self.draw_order.last().unwrap()
    }

    fn d_at(&self, z: usize, v: f64) -> usize {
        self.d_cuts[z].iter().filter(|&&c| v <= c).count()
    }

    fn y_at(&self, d: usize, z: usize, v: f64, w: f64, u1: f64, u2: f64) -> f64 {
        match self.is_perturbed(d, z) {
            Some(p) => p.sample(w, std_normal(u2)),
            None => {
                self.noise_sd * std_normal(u1) + d as f64 * (self.effect_base + self.effect_slope * v) + self.shift(d, z)
            }
        }
    }

    /// Interval of V on which D_z = d.
    fn v_interval(&self, z: usize, d: usize) -> (f64, f64) {
        let c = &self.d_cuts[z];
        let l = c.len();
        let lo = if d == l { 0.0 } else { c[l - 1 - d] };
        let hi = if d == 0 { 1.0 } else { c[l - d] };
        (lo, hi.max(lo))
    }

    /// Population (E[Y | Z = z], E[D | Z = z]) in closed form.
    pub fn population_means(&self, z: usize) -> (f64, f64) {
        let mut ey = 0.0;
        let mut ed = 0.0;
        for d in 0..self.j() {
            let (a, b) = self.v_interval(z, d);
            let mass = b - a;
            ed += d as f64 * mass;
            ey += match self.is_perturbed(d, z) {
                Some(p) => mass * p.mean(),
                None => {
                    d as f64 * (self.effect_base * mass + self.effect_slope * (b * b - a * a) / 2.0)
                        + self.shift(d, z) * mass
                }
            };
        }
        (ey, ed)
    }

    /// Population Wald ratio of a pair; `None` without a first stage.
    pub fn population_wald(&self, pair: PairId) -> Option<f64> {
        let (y1, d1) = self.population_means(pair.k);
        let (y2, d2) = self.population_means(pair.kprime);
        let den = d2 - d1;
        (den.abs() > 1e-12).then(|| (y2 - y1) / den)
    }
}

impl UnorderedDgp {
    pub fn k(&self) -> usize {
        self.z_probs.len()
    }

    pub fn j(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        check_probs(&self.z_probs, "instrument probabilities")?;
        check_probs(&self.type_probs, "type probabilities")?;
        let (k, j) = (self.k(), self.j());
        if k < 2 || j < 2 {
            return Err(VsivError::Argument("need at least 2 instrument and 2 treatment values".into()));
        }
        if self.types.len() != self.type_probs.len() || self.means.len() != self.types.len() {
            return Err(VsivError::Argument("types, type probabilities and means differ in length".into()));
        }
        if self.types.iter().any(|t| t.len() != k || t.iter().any(|&d| d >= j)) {
            return Err(VsivError::Argument("each type needs a valid treatment per instrument value".into()));
        }
        if self.means.iter().any(|m| m.len() != j) || !(self.noise_sd > 0.0) {
            return Err(VsivError::Argument("each type needs one mean per treatment; sd must be positive".into()));
        }
        Ok(())
    }

    /// E[Y_d | type in `types`] in closed form; `None` for zero mass.
    pub fn conditional_mean(&self, d: usize, types: &[usize]) -> Option<f64> {
        let mass: f64 = types.iter().map(|&t| self.type_probs[t]).sum();
        (mass > 0.0).then(|| types.iter().map(|&t| self.type_probs[t] * self.means[t][d]).sum::<f64>() / mass)
    }

    /// Response matrix: one column per type, rows are instrument values.
    pub fn response_columns(&self) -> Vec<Vec<usize>> {
        self.types.clone()
    }

    fn pick(probs: &[f64], u: f64) -> usize {
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u <= acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

impl DgpSpec {
    /// Parse `section5:<1-4>` or `qob:<1-4>`.
    pub fn parse(family: &str) -> Result<Self> {
        let (name, design) = family
            .split_once(':')
            .ok_or_else(|| VsivError::Argument(format!("family '{family}' must look like section5:1 or qob:1")))?;
        let design: u8 = design
            .parse()
            .map_err(|_| VsivError::Argument(format!("design '{design}' is not a number")))?;
        match name {
            "section5" => Ok(Self::Threshold(ThresholdDgp::section5(design)?)),
            "qob" | "qob_calibrated" => Ok(Self::Threshold(ThresholdDgp::qob(design)?)),
            _ => Err(VsivError::Argument(format!("unknown family '{name}'"))),
        }
    }

    /// Custom threshold design from key=value settings.
    ///
    /// Keys: `z_probs`, `d_cuts` (groups separated by `;`), `noise_sd`,
    /// `effect_base`, `effect_slope`, `shifts`, `perturbed` (`d,z`),
    /// `perturbation_means`, `perturbation_cuts`, `perturbation_sd`.
    pub fn custom(settings: &BTreeMap<String, String>) -> Result<Self> {
        let list = |key: &str| -> Result<Vec<f64>> {
            match settings.get(key) {
                None => Ok(Vec::new()),
                Some(s) if s.trim().is_empty() => Ok(Vec::new()),
                Some(s) => s
                    .split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| VsivError::Argument(format!("{key}: '{v}' is not a number"))))
                    .collect(),
            }
        };
        let scalar = |key: &str, default: f64| -> Result<f64> {
            match settings.get(key) {
                None => Ok(default),
                Some(s) => s.trim().parse().map_err(|_| VsivError::Argument(format!("{key}: '{s}' is not a number"))),
            }
        };
        for key in settings.keys() {
            if !matches!(
                key.as_str(),
                "z_probs" | "d_cuts" | "noise_sd" | "effect_base" | "effect_slope" | "shifts" | "perturbed"
                    | "perturbation_means" | "perturbation_cuts" | "perturbation_sd"
            ) {
                return Err(VsivError::Argument(format!("unknown custom design key '{key}'")));
            }
        }
        let z_probs = list("z_probs")?;
        let k = z_probs.len();
        let d_cuts: Vec<Vec<f64>> = settings
            .get("d_cuts")
            .ok_or_else(|| VsivError::Argument("custom design needs d_cuts".into()))?
            .split(';')
            .map(|g| {
                g.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| VsivError::Argument(format!("d_cuts: '{v}' is not a number"))))
                    .collect()
            })
            .collect::<Result<_>>()?;
        let perturbed = match settings.get("perturbed") {
            None => None,
            Some(cell) => {
                let parts: Vec<usize> = cell
                    .split(',')
                    .map(|v| v.trim().parse().map_err(|_| VsivError::Argument(format!("perturbed: '{v}' is not an index"))))
                    .collect::<Result<_>>()?;
                if parts.len() != 2 {
                    return Err(VsivError::Argument("perturbed must be 'd,z'".into()));
                }
                let means = list("perturbation_means")?;
                let p = Perturbation {
                    means: if means.is_empty() { vec![0.0] } else { means },
                    cuts: list("perturbation_cuts")?,
                    sd: scalar("perturbation_sd", 1.0)?,
                };
                Some((parts[0], parts[1], p))
            }
        };
        let dgp = ThresholdDgp {
            name: "custom".into(),
            instrument_labels: (0..k).map(|z| z.to_string()).collect(),
            z_probs,
            draw_order: (0..k).collect(),
            d_cuts,
            noise_sd: scalar("noise_sd", 1.0)?,
            effect_base: scalar("effect_base", 0.0)?,
            effect_slope: scalar("effect_slope", 0.0)?,
            shifts: list("shifts")?,
            perturbed,
        };
        dgp.validate()?;
        Ok(Self::Threshold(dgp))
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Threshold(t) => &t.name,
            Self::Unordered(u) => &u.name,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Self::Threshold(t) => t.k(),
            Self::Unordered(u) => u.k(),
        }
    }

    pub fn j(&self) -> usize {
        match self {
            Self::Threshold(t) => t.j(),
            Self::Unordered(u) => u.j(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Threshold(t) => t.validate(),
            Self::Unordered(u) => u.validate(),
        }
    }

    /// Pairs presumed valid in the simulation tables: every pair with k < k'.
    pub fn presumed(&self) -> PairSet {
        PairSet::all(self.k(), Orientation::Upper)
    }

    fn instrument_support(&self) -> Result<Support> {
        match self {
            Self::Threshold(t) => Support::new(t.instrument_labels.clone()),
            Self::Unordered(u) => Ok(Support::indexed(u.k())),
        }
    }

    fn order(&self) -> TreatmentOrder {
        match self {
            Self::Threshold(_) => TreatmentOrder::Ordered,
            Self::Unordered(_) => TreatmentOrder::Unordered,
        }
    }

    fn row(&self, u: [f64; 5], latent: bool) -> (f64, usize, usize, Option<LatentDraw>) {
        let [uu, v, w, e1, e2] = u;
        match self {
            Self::Threshold(t) => {
                let z = t.draw_z(uu);
                let d = t.d_at(z, v);
                let y = t.y_at(d, z, v, w, e1, e2);
                let lat = latent.then(|| {
                    let k = t.k();
                    let d_pot: Vec<usize> = (0..k).map(|zz| t.d_at(zz, v)).collect();
                    let y_pot: Vec<f64> =
                        (0..t.j() * k).map(|c| t.y_at(c / k, c % k, v, w, e1, e2)).collect();
                    LatentDraw { y, d, z, d_pot, y_pot }
                });
                (y, d, z, lat)
            }
            Self::Unordered(m) => {
                let z = UnorderedDgp::pick(&m.z_probs, uu);
                let ty = UnorderedDgp::pick(&m.type_probs, v);
                let noise = m.noise_sd * std_normal(e1);
                let d = m.types[ty][z];
                let y = m.means[ty][d] + noise;
                let lat = latent.then(|| {
                    let k = m.k();
                    let y_pot = (0..m.j() * k).map(|c| m.means[ty][c / k] + noise).collect();
                    LatentDraw { y, d, z, d_pot: m.types[ty].clone(), y_pot }
                });
                (y, d, z, lat)
            }
        }
    }

    fn generate(&self, n: usize, seed: u64, latent: bool) -> Result<(Dataset, Vec<LatentDraw>)> {
        self.validate()?;
        if n == 0 {
            return Err(VsivError::Argument("sample size must be positive".into()));
        }
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let (mut y, mut d, mut z) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut draws = Vec::new();
        for _ in 0..n {
            let u = std::array::from_fn(|_| open_uniform(&mut rng));
            let (yi, di, zi, lat) = self.row(u, latent);
            y.push(yi);
            d.push(di);
            z.push(zi);
            if let Some(l) = lat {
                draws.push(l);
            }
        }
        let ds = Dataset::new(y, d, z, Support::indexed(self.j()), self.instrument_support()?, self.order())?;
        Ok((ds, draws))
    }

    /// Observed data together with every row's potential treatments and outcomes.
    pub fn draw(&self, n: usize, seed: u64) -> Result<(Dataset, Vec<LatentDraw>)> {
        self.generate(n, seed, true)
    }

    pub fn draw_observed(&self, n: usize, seed: u64) -> Result<Dataset> {
        Ok(self.generate(n, seed, false)?.0)
    }
}

/// What an oracle evaluates.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Pair(PairId),
    /// Instrument values with their `g` values, for the set-wide IV ratio.
    ValueSet(Vec<(usize, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleTruth {
    /// Population IV ratio over the draws; `None` without a first stage.
    pub beta: Option<f64>,
    /// Complier weights of the unit treatment steps (pairs only).
    pub omega: Vec<f64>,
    /// Exclusion holds on every draw and potential treatments are monotone
    /// across the pair (pairs only; always false for value sets).
    pub valid: bool,
}

/// Brute-force expectations over latent draws.
///
/// Instrument frequencies come from the realized values; potential means use
/// every draw, so the ratio is the population target up to Monte Carlo error.
pub fn oracle_truth(draws: &[LatentDraw], target: &Target) -> Result<OracleTruth> {
    let first = draws.first().ok_or_else(|| VsivError::EmptyInput("no latent draws".into()))?;
    let k = first.d_pot.len();
    let j = first.y_pot.len() / k;
    let m = draws.len() as f64;
    let mean_y = |z: usize| draws.iter().map(|r| r.y_pot(r.d_pot[z], z)).sum::<f64>() / m;
    let mean_d = |z: usize| draws.iter().map(|r| r.d_pot[z] as f64).sum::<f64>() / m;
    match target {
        Target::Pair(p) => {
            if p.k >= k || p.kprime >= k {
                return Err(VsivError::Argument("pair outside the instrument support".into()));
            }
            let (z1, z2) = (p.k, p.kprime);
            let den = mean_d(z2) - mean_d(z1);
            let beta = (den.abs() > 1e-12).then(|| (mean_y(z2) - mean_y(z1)) / den);
            let steps: Vec<f64> = (1..j)
                .map(|dj| draws.iter().filter(|r| r.d_pot[z2] >= dj && dj > r.d_pot[z1]).count() as f64)
                .collect();
            let total: f64 = steps.iter().sum();
            let omega = if total > 0.0 { steps.iter().map(|s| s / total).collect() } else { vec![0.0; j - 1] };
            let excl = draws.iter().all(|r| (0..j).all(|d| r.y_pot(d, z1) == r.y_pot(d, z2)));
            let up = draws.iter().all(|r| r.d_pot[z2] >= r.d_pot[z1]);
            let down = draws.iter().all(|r| r.d_pot[z2] <= r.d_pot[z1]);
            Ok(OracleTruth { beta, omega, valid: excl && (up || down) })
        }
        Target::ValueSet(values) => {
            if values.len() < 2 || values.iter().any(|&(z, _)| z >= k) {
                return Err(VsivError::Argument("value set needs at least 2 instrument values in range".into()));
            }
            let counts: Vec<f64> = values.iter().map(|&(z, _)| draws.iter().filter(|r| r.z == z).count() as f64).collect();
            let total: f64 = counts.iter().sum();
            if total == 0.0 {
                return Err(VsivError::Argument("value set never realized".into()));
            }
            let w: Vec<f64> = counts.iter().map(|c| c / total).collect();
            let gbar: f64 = values.iter().zip(&w).map(|(&(_, g), w)| g * w).sum();
            let my: Vec<f64> = values.iter().map(|&(z, _)| mean_y(z)).collect();
            let md: Vec<f64> = values.iter().map(|&(z, _)| mean_d(z)).collect();
            let ybar: f64 = my.iter().zip(&w).map(|(a, b)| a * b).sum();
            let dbar: f64 = md.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &(_, g)) in values.iter().enumerate() {
                num += w[i] * (my[i] - ybar) * (g - gbar);
                den += w[i] * (md[i] - dbar) * (g - gbar);
            }
            let beta = (den.abs() > 1e-12).then(|| num / den);
            Ok(OracleTruth { beta, omega: Vec::new(), valid: false })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationReport {
    pub family: String,
    pub n: usize,
    pub reps: usize,
    pub master_seed: u64,
    pub taus: Vec<f64>,
    pub pairs: Vec<PairId>,
    pub pair_labels: Vec<String>,
    /// counts[t][p]: replications selecting pair p at taus[t].
    pub counts: Vec<Vec<u64>>,
    /// Mean statistic per pair across replications.
    pub mean_statistic: Vec<f64>,
    pub runtime_secs: f64,
}

impl SimulationReport {
    pub fn rate(&self, tau: f64, pair: PairId) -> Option<f64> {
        let t = self.taus.iter().position(|&x| x == tau)?;
        let p = self.pairs.iter().position(|&q| q == pair)?;
        Some(self.counts[t][p] as f64 / self.reps as f64)
    }

    /// Rates at `taus[t]`, in pair order.
    pub fn rates(&self, t: usize) -> Vec<f64> {
        self.counts[t].iter().map(|&c| c as f64 / self.reps as f64).collect()
    }

    /// One row per tau, one column per pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau");
        for l in &self.pair_labels {
            out.push_str(&format!(",\"{l}\""));
        }
        out.push('\n');
        for (t, tau) in self.taus.iter().enumerate() {
            out.push_str(&format!("{tau}"));
            for r in self.rates(t) {
                out.push_str(&format!(",{r:.3}"));
            }
            out.push('\n');
        }
        out
    }
}

struct RepOutcome {
    stats: Vec<f64>,
    /// included[t * pairs + p]
    included: Vec<bool>,
}

fn run_rep(spec: &DgpSpec, n: usize, seed: u64, taus: &[f64], cfg: &ScreenConfig) -> Result<RepOutcome> {
    let ds = spec.draw_observed(n, seed)?;
    let mut cfg = cfg.clone();
    if let EndpointPolicy::Subsample { m, .. } = cfg.stat.endpoints {
        cfg.stat.endpoints = EndpointPolicy::Subsample { m, seed: endpoint_seed(seed) };
    }
    let sc = screen(&ds, &cfg)?;
    let p = sc.universe().len();
    let mut included = Vec::with_capacity(taus.len() * p);
    for &tau in taus {
        for i in 0..p {
            included.push(sc.included(i, tau, cfg.t_n));
        }
    }
    Ok(RepOutcome { stats: sc.statistics().iter().map(|s| s.value).collect(), included })
}

fn now() -> Option<std::time::Instant> {
    #[cfg(not(target_arch = "wasm32"))]
    {
        Some(std::time::Instant::now())
    }
    #[cfg(target_arch = "wasm32")]
    {
        None
    }
}

/// Selection frequencies of each screened pair over replications.
///
/// The screened universe defaults to the design's presumed pairs. Results
/// depend only on the master seed and replication count.
pub fn mc_selection_table(
    spec: &DgpSpec,
    n: usize,
    reps: usize,
    taus: &[f64],
    master_seed: u64,
    cfg: &ScreenConfig,
) -> Result<SimulationReport> {
    if reps == 0 {
        return Err(VsivError::Argument("need at least one replication".into()));
    }
    if taus.is_empty() {
        return Err(VsivError::Argument("empty tau grid".into()));
    }
    spec.validate()?;
    let start = now();
    let mut cfg = cfg.clone();
    let universe = cfg.universe.get_or_insert_with(|| spec.presumed()).clone();
    let one = |r: usize| run_rep(spec, n, rep_seed(master_seed, r as u64), taus, &cfg);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<RepOutcome> = {
        use rayon::prelude::*;
        (0..reps).into_par_iter().map(one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<RepOutcome> = (0..reps).map(one).collect::<Result<_>>()?;

    let p = universe.len();
    let mut counts = vec![vec![0u64; p]; taus.len()];
    let mut sums = vec![0.0; p];
    for o in &outcomes {
        for (t, row) in counts.iter_mut().enumerate() {
            for (i, c) in row.iter_mut().enumerate() {
                *c += o.included[t * p + i] as u64;
            }
        }
        for (s, v) in sums.iter_mut().zip(&o.stats) {
            *s += v;
        }
    }
    let support = spec.instrument_support()?;
    let pair_labels = universe
        .iter()
        .map(|q| format!("({}, {})", support.label(q.k), support.label(q.kprime)))
        .collect();
    Ok(SimulationReport {
        family: spec.name().to_string(),
        n,
        reps,
        master_seed,
        taus: taus.to_vec(),
        pairs: universe.pairs().to_vec(),
        pair_labels,
        counts,
        mean_statistic: sums.iter().map(|s| s / reps as f64).collect(),
        runtime_secs: start.map_or(0.0, |s| s.elapsed().as_secs_f64()),
    })
}
