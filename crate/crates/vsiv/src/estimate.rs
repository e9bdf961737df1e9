//! Pairwise VSIV estimates, their plug-in covariance and the
//! partial-validity estimator over a chain of instrument values.

use nalgebra::DMatrix;

use crate::dataset::{Dataset, Orientation, PairId, PairSet};
use crate::error::{Result, VsivError};

/// Cutoff on the centered first-stage cross-moment.
pub const FIRST_STAGE_TOL: f64 = 1e-12;

/// Real value attached to each instrument index.
#[derive(Debug, Clone, PartialEq)]
pub struct GFunction {
    values: Vec<f64>,
}

impl GFunction {
    /// g(z) = dense index of z.
    pub fn index(k: usize) -> Self {
        Self { values: (0..k).map(|z| z as f64).collect() }
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VsivError::Argument("g values must be finite".into()));
        }
        Ok(Self { values })
    }

    pub fn get(&self, z: usize) -> f64 {
        self.values[z]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if self.values.len() != ds.k() {
            return Err(VsivError::Argument(format!(
                "g has {} values, instrument has {}",
                self.values.len(),
                ds.k()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaPair {
    pub pair: PairId,
    /// IV ratio on the pair subsample; 0 when degenerate.
    pub value: f64,
    /// Centered cross-moment of g(Z) and D on the subsample.
    pub first_stage: f64,
    pub subsample: usize,
    /// Empty group, g equal on the pair, or first stage within tolerance of 0.
    pub degenerate: bool,
}

/// IV ratio Cov(Y, g(Z)) / Cov(D, g(Z)) over rows whose instrument is in `member`.
fn iv_ratio(ds: &Dataset, g: &GFunction, member: &[bool]) -> (f64, f64, usize) {
    let (y, z) = (ds.y(), ds.z());
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| member[z[i]]).collect();
    let m = rows.len();
    if m == 0 {
        return (0.0, 0.0, 0);
    }
    let mf = m as f64;
    let mut gb = 0.0;
    let mut yb = 0.0;
    let mut db = 0.0;
    for &i in &rows {
        gb += g.get(z[i]);
        yb += y[i];
        db += ds.d_value(i);
    }
    gb /= mf;
    yb /= mf;
    db /= mf;
    let mut num = 0.0;
    let mut den = 0.0;
    for &i in &rows {
        let gc = g.get(z[i]) - gb;
        num += gc * (y[i] - yb);
        den += gc * (ds.d_value(i) - db);
    }
    (num / mf, den / mf, m)
}

pub fn beta_pair(ds: &Dataset, pair: PairId, g: &GFunction) -> Result<BetaPair> {
    g.check(ds)?;
    if pair.k >= ds.k() || pair.kprime >= ds.k() {
        return Err(VsivError::Argument(format!("pair ({}, {}) outside the instrument support", pair.k, pair.kprime)));
    }
    let mut member = vec![false; ds.k()];
    member[pair.k] = true;
    member[pair.kprime] = true;
    let (num, den, m) = iv_ratio(ds, g, &member);
    let has_both = ds.z().contains(&pair.k) && ds.z().contains(&pair.kprime);
    let degenerate = !has_both || g.get(pair.k) == g.get(pair.kprime) || den.abs() <= FIRST_STAGE_TOL;
    let value = if degenerate { 0.0 } else { num / den };
    Ok(BetaPair { pair, value, first_stage: den, subsample: m, degenerate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LateEstimate {
    /// Every ordered pair, row-major: (1,2), ..., (1,K), (2,1), (2,3), ...
    pub pairs: Vec<PairId>,
    /// Zero for unselected and degenerate pairs.
    pub beta: Vec<f64>,
    /// Covariance of sqrt(n) (beta_hat - beta).
    pub sigma: DMatrix<f64>,
    pub selected: PairSet,
    pub n: usize,
    pub diagnostics: Vec<BetaPair>,
}

impl LateEstimate {
    pub fn index_of(&self, pair: PairId) -> Option<usize> {
        self.pairs.iter().position(|&p| p == pair)
    }

    pub fn beta_of(&self, pair: PairId) -> Option<f64> {
        self.index_of(pair).map(|i| self.beta[i])
    }

    /// Plug-in standard error sqrt(Sigma_pp / n).
    pub fn se(&self, pair: PairId) -> Option<f64> {
        self.index_of(pair).map(|i| (self.sigma[(i, i)].max(0.0) / self.n as f64).sqrt())
    }
}

fn check_selected(ds: &Dataset, selected: &PairSet) -> Result<()> {
    match selected.iter().find(|p| p.k >= ds.k() || p.kprime >= ds.k()) {
        Some(p) => Err(VsivError::Argument(format!("pair ({}, {}) outside the instrument support", p.k, p.kprime))),
        None => Ok(()),
    }
}

pub fn beta_vector(ds: &Dataset, selected: &PairSet, g: &GFunction) -> Result<LateEstimate> {
    g.check(ds)?;
    check_selected(ds, selected)?;
    let pairs = PairSet::all(ds.k(), Orientation::Both).pairs().to_vec();
    let mut beta = vec![0.0; pairs.len()];
    let mut diagnostics = Vec::with_capacity(pairs.len());
    for (i, &p) in pairs.iter().enumerate() {
        let b = beta_pair(ds, p, g)?;
        if selected.contains(p) {
            beta[i] = b.value;
        }
        diagnostics.push(b);
    }
    let active: Vec<bool> = pairs.iter().map(|&p| selected.contains(p)).collect();
    let sigma = covariance(ds, g, &pairs, &active);
    Ok(LateEstimate { pairs, beta, sigma, selected: selected.clone(), n: ds.n(), diagnostics })
}

/// Six moments (gY, Y, g, gD, D, 1) times the membership indicator, averaged over all rows.
fn six_moments(ds: &Dataset, g: &GFunction, member: &[bool]) -> [f64; 6] {
    let mut x = [0.0; 6];
    for i in 0..ds.n() {
        let z = ds.z()[i];
        if member[z] {
            let (gv, y, d) = (g.get(z), ds.y()[i], ds.d_value(i));
            let m = [gv * y, y, gv, gv * d, d, 1.0];
            for (a, b) in x.iter_mut().zip(m) {
                *a += b;
            }
        }
    }
    let n = ds.n() as f64;
    x.map(|v| v / n)
}

/// Gradient of (x1 x6 - x2 x3) / (x4 x6 - x5 x3).
fn ratio_gradient(x: &[f64; 6]) -> Option<[f64; 6]> {
    let num = x[0] * x[5] - x[1] * x[2];
    let den = x[3] * x[5] - x[4] * x[2];
    // first stage on the subsample scale
    if x[5] <= 0.0 || (den / (x[5] * x[5])).abs() <= FIRST_STAGE_TOL {
        return None;
    }
    let d2 = den * den;
    Some([
        x[5] / den,
        -x[2] / den,
        (-x[1] * x[3] * x[5] + x[4] * x[0] * x[5]) / d2,
        -num * x[5] / d2,
        num * x[2] / d2,
        (x[0] * den - num * x[3]) / d2,
    ])
}

/// Delta-method covariance over the listed member sets; inactive or
/// degenerate entries get zero rows and columns.
fn delta_covariance(ds: &Dataset, g: &GFunction, members: &[Vec<bool>], active: &[bool]) -> DMatrix<f64> {
    let p = members.len();
    let grads: Vec<Option<[f64; 6]>> = members
        .iter()
        .zip(active)
        .map(|(m, &a)| if a { ratio_gradient(&six_moments(ds, g, m)) } else { None })
        .collect();
    let by_z: Vec<Vec<usize>> = (0..ds.k())
        .map(|z| (0..p).filter(|&q| grads[q].is_some() && members[q][z]).collect())
        .collect();
    let mut sum = vec![0.0; p];
    let mut cross = DMatrix::<f64>::zeros(p, p);
    let mut s = vec![0.0; p];
    for i in 0..ds.n() {
        let z = ds.z()[i];
        let (gv, y, d) = (g.get(z), ds.y()[i], ds.d_value(i));
        let m = [gv * y, y, gv, gv * d, d, 1.0];
        let list = &by_z[z];
        for &q in list {
            let gr = grads[q].unwrap();
            s[q] = gr.iter().zip(&m).map(|(a, b)| a * b).sum();
            sum[q] += s[q];
        }
        for (ai, &a) in list.iter().enumerate() {
            for &b in &list[ai..] {
                cross[(a, b)] += s[a] * s[b];
            }
        }
    }
    let n = ds.n() as f64;
    let mut sigma = DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            if grads[a].is_none() || grads[b].is_none() {
                continue;
            }
            let v = cross[(a, b)] / n - (sum[a] / n) * (sum[b] / n);
            sigma[(a, b)] = v;
            sigma[(b, a)] = v;
        }
    }
    sigma
}

fn pair_member(k: usize, p: PairId) -> Vec<bool> {
    let mut m = vec![false; k];
    m[p.k] = true;
    m[p.kprime] = true;
    m
}

fn covariance(ds: &Dataset, g: &GFunction, pairs: &[PairId], active: &[bool]) -> DMatrix<f64> {
    let members: Vec<Vec<bool>> = pairs.iter().map(|&p| pair_member(ds.k(), p)).collect();
    delta_covariance(ds, g, &members, active)
}

/// Plug-in covariance of sqrt(n) (beta_hat - beta) in the [`beta_vector`]
/// layout, zero outside the selected pairs.
pub fn sigma_hat(ds: &Dataset, selected: &PairSet, g: &GFunction) -> Result<DMatrix<f64>> {
    g.check(ds)?;
    check_selected(ds, selected)?;
    let pairs = PairSet::all(ds.k(), Orientation::Both).pairs().to_vec();
    let active: Vec<bool> = pairs.iter().map(|&p| selected.contains(p)).collect();
    Ok(covariance(ds, g, &pairs, &active))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialEstimate {
    pub theta: f64,
    /// Asymptotic variance of sqrt(n) (theta_hat - theta).
    pub variance: f64,
    pub value_set: Vec<usize>,
    /// Weight of each adjacent pair of the chain, in chain order.
    pub weights: Vec<f64>,
    /// Wald ratio of each adjacent pair; 0 where the pair has no first stage.
    pub adjacent: Vec<f64>,
    pub degenerate: bool,
}

/// IV ratio over a chain of instrument values with its adjacent-pair decomposition.
pub fn theta_partial(ds: &Dataset, value_set: &[usize], g: &GFunction) -> Result<PartialEstimate> {
    g.check(ds)?;
    let m = value_set.len();
    if m < 2 {
        return Err(VsivError::Argument("value set needs at least 2 instrument values".into()));
    }
    let mut member = vec![false; ds.k()];
    for &z in value_set {
        if z >= ds.k() || member[z] {
            return Err(VsivError::Argument(format!("value {z} is out of range or repeated")));
        }
        member[z] = true;
    }
    let tables = ds.tables();
    let counts: Vec<f64> = value_set.iter().map(|&z| tables.z_count(z) as f64).collect();
    if let Some(i) = counts.iter().position(|&c| c == 0.0) {
        return Err(VsivError::Argument(format!("value {} has no observations", value_set[i])));
    }
    let mut ysum = vec![0.0; ds.k()];
    let mut dsum = vec![0.0; ds.k()];
    for i in 0..ds.n() {
        ysum[ds.z()[i]] += ds.y()[i];
        dsum[ds.z()[i]] += ds.d_value(i);
    }
    let total: f64 = counts.iter().sum();
    let share: Vec<f64> = counts.iter().map(|c| c / total).collect();
    let gv: Vec<f64> = value_set.iter().map(|&z| g.get(z)).collect();
    let ybar: Vec<f64> = value_set.iter().zip(&counts).map(|(&z, c)| ysum[z] / c).collect();
    let pbar: Vec<f64> = value_set.iter().zip(&counts).map(|(&z, c)| dsum[z] / c).collect();
    let gmean: f64 = share.iter().zip(&gv).map(|(s, g)| s * g).sum();
    let den: f64 = (0..m).map(|l| share[l] * pbar[l] * (gv[l] - gmean)).sum();
    let (num, cov_d, _) = iv_ratio(ds, g, &member);
    let degenerate = cov_d.abs() <= FIRST_STAGE_TOL;
    let mut weights = vec![0.0; m - 1];
    let mut adjacent = vec![0.0; m - 1];
    if !degenerate {
        for s in 0..m - 1 {
            let tail: f64 = (s + 1..m).map(|l| share[l] * (gv[l] - gmean)).sum();
            weights[s] = (pbar[s + 1] - pbar[s]) * tail / den;
            let step = pbar[s + 1] - pbar[s];
            if step.abs() > FIRST_STAGE_TOL {
                adjacent[s] = (ybar[s + 1] - ybar[s]) / step;
            }
        }
    }
    let theta = if degenerate { 0.0 } else { num / cov_d };
    let variance = if degenerate { 0.0 } else { delta_covariance(ds, g, &[member], &[true])[(0, 0)] };
    Ok(PartialEstimate { theta, variance, value_set: value_set.to_vec(), weights, adjacent, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::d4;

    #[test]
    fn d4_beta() {
        let ds = d4();
        let p = PairId::new(0, 1).unwrap();
        let b = beta_pair(&ds, p, &GFunction::index(2)).unwrap();
        assert!((b.value - 1.0).abs() < 1e-12);
        let g = GFunction::new(vec![3.5, -2.0]).unwrap();
        assert!((beta_pair(&ds, p, &g).unwrap().value - 1.0).abs() < 1e-12);
        let flat = GFunction::new(vec![1.0, 1.0]).unwrap();
        assert!(beta_pair(&ds, p, &flat).unwrap().degenerate);
    }

    #[test]
    fn d4_vector_and_theta() {
        let ds = d4();
        let sel = PairSet::new(vec![PairId::new(0, 1).unwrap()], Orientation::Both).unwrap();
        let est = beta_vector(&ds, &sel, &GFunction::index(2)).unwrap();
        assert!((est.beta[0] - 1.0).abs() < 1e-12);
        assert_eq!(est.beta[1], 0.0);
        assert_eq!(est.sigma[(1, 1)], 0.0);
        let none = beta_vector(&ds, &PairSet::empty(Orientation::Both), &GFunction::index(2)).unwrap();
        assert!(none.beta.iter().all(|&b| b == 0.0));
        assert!(none.sigma.iter().all(|&s| s == 0.0));
        let th = theta_partial(&ds, &[0, 1], &GFunction::index(2)).unwrap();
        assert!((th.theta - 1.0).abs() < 1e-12);
        assert!((th.weights[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_first_stage_is_degenerate() {
        let ds = Dataset::from_indices(vec![1.0, 2.0, 3.0, 4.0], vec![0, 1, 0, 1], vec![0, 0, 1, 1], 2, 2).unwrap();
        let b = beta_pair(&ds, PairId::new(0, 1).unwrap(), &GFunction::index(2)).unwrap();
        assert!(b.degenerate);
        assert_eq!(b.value, 0.0);
    }
}
