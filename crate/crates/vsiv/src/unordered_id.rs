//! Response types and counterfactual identification for unordered treatments.
//!
//! A response type lists the treatment taken at every instrument value. For a
//! pair of instrument values the distinct restricted types form a 2 x L
//! matrix; `B_d` marks where it equals `d`, and `Sigma_d(t)` collects the types
//! that take `d` exactly `t` times.

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, PairId, PairSet};
use crate::error::{Result, VsivError};

const PINV_EPS: f64 = 1e-12;
const PROB_TOL: f64 = 1e-12;

/// K x N_S matrix of treatment indices, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    columns: Vec<Vec<usize>>,
    k: usize,
    j: usize,
}

impl ResponseMatrix {
    pub fn new(columns: Vec<Vec<usize>>, k: usize, j: usize) -> Result<Self> {
        if columns.is_empty() {
            return Err(VsivError::Structural("response matrix has no columns".into()));
        }
        if columns.iter().any(|c| c.len() != k) {
            return Err(VsivError::Structural(format!("every response type needs {k} entries")));
        }
        if columns.iter().flatten().any(|&d| d >= j) {
            return Err(VsivError::Structural("response type entry outside the treatment support".into()));
        }
        for (a, c) in columns.iter().enumerate() {
            if columns[..a].contains(c) {
                return Err(VsivError::Structural(format!("response type {a} repeats an earlier column")));
            }
        }
        Ok(Self { columns, k, j })
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.columns
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn j(&self) -> usize {
        self.j
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResponse {
    pub pair: PairId,
    /// Distinct restricted types in first-occurrence order.
    pub kr: Vec<[usize; 2]>,
    j: usize,
}

impl PairResponse {
    pub fn len(&self) -> usize {
        self.kr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kr.is_empty()
    }

    /// Binary 2 x L matrix 1{kr = d}.
    pub fn b_matrix(&self, d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(2, self.kr.len(), |m, l| (self.kr[l][m] == d) as u8 as f64)
    }

    /// Column indices of the types taking `d` exactly `t` times.
    pub fn sigma_set(&self, d: usize, t: usize) -> Vec<usize> {
        (0..self.kr.len()).filter(|&l| self.kr[l].iter().filter(|&&v| v == d).count() == t).collect()
    }

    /// Indicator row vector of [`Self::sigma_set`].
    pub fn b_vector(&self, d: usize, t: usize) -> DVector<f64> {
        let set = self.sigma_set(d, t);
        DVector::from_fn(self.kr.len(), |l, _| set.contains(&l) as u8 as f64)
    }

    /// The restricted types of a stratum, as values.
    pub fn stratum(&self, d: usize, t: usize) -> Vec<[usize; 2]> {
        let mut s: Vec<[usize; 2]> = self.sigma_set(d, t).into_iter().map(|l| self.kr[l]).collect();
        s.sort_unstable();
        s
    }

    pub fn treatments(&self) -> usize {
        self.j
    }
}

/// Restrict to rows (k, k') and collapse repeated columns.
pub fn k_transform(r: &ResponseMatrix, pair: PairId) -> Result<PairResponse> {
    if pair.k >= pair.kprime {
        return Err(VsivError::Argument("response pairs need k < k'".into()));
    }
    if pair.kprime >= r.k {
        return Err(VsivError::Argument("pair outside the response matrix".into()));
    }
    let mut kr: Vec<[usize; 2]> = Vec::new();
    for c in &r.columns {
        let col = [c[pair.k], c[pair.kprime]];
        if !kr.contains(&col) {
            kr.push(col);
        }
    }
    Ok(PairResponse { pair, kr, j: r.j })
}

/// True when no 2 x 2 submatrix is the identity or the anti-identity.
pub fn is_lonesum(b: &DMatrix<f64>) -> bool {
    let (r, c) = b.shape();
    for r1 in 0..r {
        for r2 in r1 + 1..r {
            for c1 in 0..c {
                for c2 in c1 + 1..c {
                    let (a, bb, cc, d) = (b[(r1, c1)], b[(r1, c2)], b[(r2, c1)], b[(r2, c2)]);
                    if a == d && bb == cc && a != bb {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Moore-Penrose inverse of a binary 2 x L matrix.
///
/// Lonesum inputs use the factorization B = C D with C the distinct non-zero
/// columns (by column sum) and D their indicator rows; other inputs fall back
/// to the SVD pseudo-inverse.
pub fn pinv_binary(b: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = b.shape();
    if b.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(cols, rows);
    }
    if rows == 2 && is_lonesum(b) {
        let sums: Vec<usize> = (0..cols).map(|l| b.column(l).sum() as usize).collect();
        let ts: Vec<usize> = [1, 2].into_iter().filter(|t| sums.contains(t)).collect();
        let c = DMatrix::from_fn(rows, ts.len(), |m, i| {
            let l = sums.iter().position(|&s| s == ts[i]).unwrap();
            b[(m, l)]
        });
        let d = DMatrix::from_fn(ts.len(), cols, |i, l| (sums[l] == ts[i]) as u8 as f64);
        let ctc = (c.transpose() * &c).try_inverse();
        let ddt = (&d * d.transpose()).try_inverse();
        if let (Some(ctc), Some(ddt)) = (ctc, ddt) {
            return d.transpose() * ddt * ctc * c.transpose();
        }
    }
    b.clone().pseudo_inverse(PINV_EPS).expect("non-negative epsilon")
}

/// Plug-in moments W = (Z_P, P_DZ(d_1..d_J), Q_YDZ(d_1..d_J)) and their covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStack {
    pub w: DVector<f64>,
    /// Sample covariance of the per-row moment vectors.
    pub sigma: DMatrix<f64>,
    k: usize,
    j: usize,
}

impl MomentStack {
    pub fn z_p(&self) -> Vec<f64> {
        self.w.rows(0, self.k).iter().copied().collect()
    }

    /// P(D = d, Z = z) over z.
    pub fn p_dz(&self, d: usize) -> Vec<f64> {
        self.w.rows(self.k + d * self.k, self.k).iter().copied().collect()
    }

    /// E[kappa(Y) 1{D = d, Z = z}] over z.
    pub fn q_ydz(&self, d: usize) -> Vec<f64> {
        self.w.rows(self.k + (self.j + d) * self.k, self.k).iter().copied().collect()
    }

    /// (P(D = d | z_k), P(D = d | z_k')); empty groups give 0.
    pub fn p_pair(&self, pair: PairId, d: usize) -> DVector<f64> {
        let (zp, p) = (self.z_p(), self.p_dz(d));
        DVector::from_fn(2, |m, _| {
            let z = if m == 0 { pair.k } else { pair.kprime };
            if zp[z] > 0.0 { p[z] / zp[z] } else { 0.0 }
        })
    }

    /// (E[kappa(Y) 1{D = d} | z_k], same at z_k').
    pub fn q_pair(&self, pair: PairId, d: usize) -> DVector<f64> {
        let (zp, q) = (self.z_p(), self.q_ydz(d));
        DVector::from_fn(2, |m, _| {
            let z = if m == 0 { pair.k } else { pair.kprime };
            if zp[z] > 0.0 { q[z] / zp[z] } else { 0.0 }
        })
    }
}

pub fn moment_stack(ds: &Dataset, kappa: &dyn Fn(f64) -> f64) -> MomentStack {
    let (k, j, n) = (ds.k(), ds.j(), ds.n());
    let dim = k + 2 * j * k;
    let mut w = DVector::<f64>::zeros(dim);
    let mut cross = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..n {
        let (z, d) = (ds.z()[i], ds.d()[i]);
        let ky = kappa(ds.y()[i]);
        let nz = [(z, 1.0), (k + d * k + z, 1.0), (k + (j + d) * k + z, ky)];
        for &(a, va) in &nz {
            w[a] += va;
            for &(b, vb) in &nz {
                cross[(a, b)] += va * vb;
            }
        }
    }
    let nf = n as f64;
    w /= nf;
    let sigma = cross / nf - &w * w.transpose();
    MomentStack { w, sigma, k, j }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counterfactual {
    /// Probability that the restricted type lies in the stratum.
    pub probability: f64,
    /// E[kappa(Y_d) | stratum]; `None` when the probability is not positive.
    pub mean: Option<f64>,
    /// B_d is lonesum for the pair; when false the result is zero by convention.
    pub lonesum: bool,
}

fn contraction(pr: &PairResponse, d: usize, t: usize, v: &DVector<f64>) -> f64 {
    let b = pr.b_matrix(d);
    pr.b_vector(d, t).dot(&(pinv_binary(&b) * v))
}

fn counterfactual_from(stack: &MomentStack, pr: &PairResponse, d: usize, t: usize) -> Counterfactual {
    if !is_lonesum(&pr.b_matrix(d)) {
        return Counterfactual { probability: 0.0, mean: None, lonesum: false };
    }
    let probability = contraction(pr, d, t, &stack.p_pair(pr.pair, d));
    let mean = (probability > PROB_TOL).then(|| contraction(pr, d, t, &stack.q_pair(pr.pair, d)) / probability);
    Counterfactual { probability, mean, lonesum: true }
}

/// Stratum probability and counterfactual mean for treatment `d`, count `t`.
pub fn counterfactuals(
    ds: &Dataset,
    pair: PairId,
    r: &ResponseMatrix,
    d: usize,
    t: usize,
    kappa: &dyn Fn(f64) -> f64,
) -> Result<Counterfactual> {
    check_shapes(ds, r)?;
    if !(1..=2).contains(&t) || d >= r.j {
        return Err(VsivError::Argument("t must be 1 or 2 and d inside the treatment support".into()));
    }
    let pr = k_transform(r, pair)?;
    Ok(counterfactual_from(&moment_stack(ds, kappa), &pr, d, t))
}

fn check_shapes(ds: &Dataset, r: &ResponseMatrix) -> Result<()> {
    if r.k != ds.k() || r.j != ds.j() {
        return Err(VsivError::Structural(format!(
            "response matrix is for K={}, J={}; data has K={}, J={}",
            r.k,
            r.j,
            ds.k(),
            ds.j()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MteEntry {
    pub pair: PairId,
    pub d: usize,
    pub d_alt: usize,
    pub t: usize,
    pub t_alt: usize,
    /// Zero unless `identified`.
    pub value: f64,
    /// Pair selected, strata equal and non-empty, both counterfactuals defined.
    pub identified: bool,
}

/// Mean effects of `d` relative to `d_alt` for every pair k < k' and each
/// (t, t') in (1,1), (1,2), (2,1), (2,2).
pub fn mte_unordered(
    ds: &Dataset,
    selected: &PairSet,
    r: &ResponseMatrix,
    contrasts: &[(usize, usize)],
) -> Result<Vec<MteEntry>> {
    check_shapes(ds, r)?;
    if contrasts.iter().any(|&(a, b)| a >= r.j || b >= r.j) {
        return Err(VsivError::Argument("contrast outside the treatment support".into()));
    }
    let stack = moment_stack(ds, &|y| y);
    let mut out = Vec::new();
    for k in 0..r.k {
        for kp in k + 1..r.k {
            let pair = PairId::new(k, kp)?;
            let pr = k_transform(r, pair)?;
            let chosen = selected.contains(pair) || selected.contains(pair.reversed());
            for &(d, d_alt) in contrasts {
                for (t, t_alt) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
                    let stratum = pr.stratum(d, t);
                    let same = !stratum.is_empty() && stratum == pr.stratum(d_alt, t_alt);
                    let mut entry = MteEntry { pair, d, d_alt, t, t_alt, value: 0.0, identified: false };
                    if chosen && same {
                        let a = counterfactual_from(&stack, &pr, d, t);
                        let b = counterfactual_from(&stack, &pr, d_alt, t_alt);
                        if let (Some(ma), Some(mb)) = (a.mean, b.mean) {
                            entry.value = ma - mb;
                            entry.identified = true;
                        }
                    }
                    out.push(entry);
                }
            }
        }
    }
    Ok(out)
}
