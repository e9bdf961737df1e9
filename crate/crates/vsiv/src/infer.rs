//! Two-part Wald test on restrictions of selected pairwise estimates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma_ur;

use crate::dataset::PairId;
use crate::error::{Result, VsivError};
use crate::estimate::LateEstimate;

const RANK_TOL: f64 = 1e-10;

/// A smooth restriction supplied with its Jacobian.
pub trait SmoothRestriction: Send + Sync {
    fn value(&self, beta: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, beta: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Clone)]
pub enum Restriction {
    /// A beta - b
    Affine { a: DMatrix<f64>, b: DVector<f64> },
    Smooth(Arc<dyn SmoothRestriction>),
}

impl fmt::Debug for Restriction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { a, b } => f.debug_struct("Affine").field("a", a).field("b", b).finish(),
            Self::Smooth(_) => f.write_str("Smooth(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub pairs: Vec<PairId>,
    pub restriction: Restriction,
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * top).count()
}

impl Hypothesis {
    /// H0: A beta_S = b, with A of full row rank.
    pub fn affine(pairs: Vec<PairId>, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let s = pairs.len();
        if s == 0 {
            return Err(VsivError::Argument("hypothesis needs at least one pair".into()));
        }
        if a.ncols() != s || a.nrows() != b.len() || a.nrows() == 0 {
            return Err(VsivError::Argument(format!(
                "restriction is {}x{} with {} constants for {s} pairs",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.nrows() > s || numerical_rank(&a) < a.nrows() {
            return Err(VsivError::Argument("restriction matrix must have full row rank".into()));
        }
        Ok(Self { pairs, restriction: Restriction::Affine { a, b } })
    }

    pub fn smooth(pairs: Vec<PairId>, r: Arc<dyn SmoothRestriction>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(VsivError::Argument("hypothesis needs at least one pair".into()));
        }
        Ok(Self { pairs, restriction: Restriction::Smooth(r) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    /// 1 when every hypothesis pair was selected.
    pub ts1: u8,
    pub ts2: f64,
    pub critical: f64,
    pub alpha: f64,
    pub df: usize,
    pub reject: bool,
}

/// Upper-`alpha` quantile of the chi-square distribution with `r` degrees of freedom.
pub fn chi2_quantile(r: usize, alpha: f64) -> Result<f64> {
    if r == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(VsivError::Argument(format!("need r >= 1 and 0 < alpha < 1, got r={r}, alpha={alpha}")));
    }
    let k = r as f64 / 2.0;
    let upper = |c: f64| gamma_ur(k, c / 2.0);
    // bracket: upper tail is decreasing in c
    let (mut lo, mut hi) = (0.0, r as f64 + 10.0);
    while upper(hi) > alpha {
        lo = hi;
        hi *= 2.0;
    }
    let mut c = 0.5 * (lo + hi);
    let ln_norm = statrs::function::gamma::ln_gamma(k) + k * std::f64::consts::LN_2;
    for _ in 0..200 {
        let f = upper(c) - alpha;
        if f > 0.0 {
            lo = c;
        } else {
            hi = c;
        }
        let pdf = ((k - 1.0) * c.ln() - c / 2.0 - ln_norm).exp();
        let mut next = c + f / pdf;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - c).abs() <= 1e-15 * c.max(1e-300) {
            return Ok(next);
        }
        c = next;
    }
    Ok(c)
}

/// Reject when a hypothesis pair is unselected or the Wald statistic exceeds
/// the chi-square critical value.
pub fn wald_test(est: &LateEstimate, hyp: &Hypothesis, alpha: f64) -> Result<TestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(VsivError::Argument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let idx: Vec<usize> = hyp
        .pairs
        .iter()
        .map(|&p| {
            est.index_of(p)
                .ok_or_else(|| VsivError::Argument(format!("pair ({}, {}) not in the estimate", p.k, p.kprime)))
        })
        .collect::<Result<_>>()?;
    let ts1 = hyp.pairs.iter().all(|&p| est.selected.contains(p)) as u8;
    let beta_s = DVector::from_iterator(idx.len(), idx.iter().map(|&i| est.beta[i]));
    let sigma_s = DMatrix::from_fn(idx.len(), idx.len(), |a, b| est.sigma[(idx[a], idx[b])]);
    let (value, jac) = match &hyp.restriction {
        Restriction::Affine { a, b } => (a * &beta_s - b, a.clone()),
        Restriction::Smooth(r) => (r.value(&beta_s), r.jacobian(&beta_s)),
    };
    let df = value.len();
    if jac.nrows() != df || jac.ncols() != idx.len() {
        return Err(VsivError::Argument("Jacobian shape does not match the restriction".into()));
    }
    let inner = &jac * sigma_s * jac.transpose();
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.clone().symmetric_eigen();
    let top = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let bottom = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let singular = !(top > 0.0) || bottom <= RANK_TOL * top;
    let ts2 = if singular {
        if ts1 == 1 {
            return Err(VsivError::Inference(format!(
                "restricted covariance is rank deficient (smallest eigenvalue {bottom:e}, largest {top:e})"
            )));
        }
        f64::INFINITY
    } else {
        let chol = inner.cholesky().ok_or_else(|| VsivError::Inference("restricted covariance is not positive definite".into()))?;
        let q = value.dot(&chol.solve(&value));
        (est.n as f64 * q).max(0.0)
    };
    let critical = chi2_quantile(df, alpha)?;
    Ok(TestResult { ts1, ts2, critical, alpha, df, reject: ts1 == 0 || ts2 > critical })
}
