//! Partition-based inequalities for multivalued treatments.
//!
//! For a pair of instrument values, psi(A, d, z) = P(Y in A, D = d | Z = z)
//! with A a half-open cell (a, b]. Three inequalities built from a finite
//! collection of partitions of the real line must hold (psi_l <= 0) when the
//! pair is valid; a pair is kept when sqrt(T_n) * psi_l <= t_n for all three.

use crate::dataset::{GroupTables, PairId, PairSet};
use crate::error::{Result, VsivError};

/// Default cap on the number of (partition tuple, cell tuple) evaluations.
pub const DEFAULT_TUPLE_CAP: usize = 5_000_000;

/// Partitions of the real line given by strictly increasing cut points.
///
/// A partition with cuts c_1 < ... < c_m has cells (-inf, c_1], (c_1, c_2],
/// ..., (c_m, inf).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCollection {
    partitions: Vec<Vec<f64>>,
}

impl PartitionCollection {
    pub fn new(partitions: Vec<Vec<f64>>) -> Result<Self> {
        if partitions.is_empty() {
            return Err(VsivError::Argument("partition collection is empty".into()));
        }
        for p in &partitions {
            if p.iter().any(|c| !c.is_finite()) || p.windows(2).any(|w| w[0] >= w[1]) {
                return Err(VsivError::Argument("partition cut points must be finite and strictly increasing".into()));
            }
        }
        Ok(Self { partitions })
    }

    /// One partition per cell count in `cells`, cut at empirical quantiles of `y`.
    pub fn quantiles(y: &[f64], cells: &[usize]) -> Result<Self> {
        if y.is_empty() {
            return Err(VsivError::EmptyInput("no outcomes for quantile partitions".into()));
        }
        let mut sorted = y.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mut parts = Vec::new();
        for &q in cells {
            if q == 0 {
                return Err(VsivError::Argument("a partition needs at least one cell".into()));
            }
            let mut cuts: Vec<f64> = (1..q)
                .map(|i| {
                    let rank = ((i * n) as f64 / q as f64).ceil() as usize;
                    sorted[rank.clamp(1, n) - 1]
                })
                .collect();
            cuts.dedup();
            parts.push(cuts);
        }
        Self::new(parts)
    }

    /// Quantile partitions with 2, 3 and 5 cells.
    pub fn default_for(y: &[f64]) -> Result<Self> {
        Self::quantiles(y, &[2, 3, 5])
    }

    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    pub fn partitions(&self) -> &[Vec<f64>] {
        &self.partitions
    }

    /// Cells of partition `p` as (lower, upper) with `None` for infinite ends.
    pub fn cells(&self, p: usize) -> Vec<(Option<f64>, Option<f64>)> {
        let cuts = &self.partitions[p];
        (0..=cuts.len())
            .map(|c| (if c == 0 { None } else { Some(cuts[c - 1]) }, cuts.get(c).copied()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiReport {
    pub pair: PairId,
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub t_n: f64,
    /// sqrt(T_n) * max(psi1, psi2, psi3)
    pub comparand: f64,
}

impl PsiReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.comparand <= threshold
    }
}

/// P(lo < Y <= hi, D = d | Z = z); an empty group gives 0.
pub fn psi_hat(tables: &GroupTables, lo: Option<f64>, hi: Option<f64>, d: usize, z: usize) -> f64 {
    let nz = tables.z_count(z);
    if nz == 0 {
        return 0.0;
    }
    tables.count_half_open(d, z, lo, hi) as f64 / nz as f64
}

/// Mixed-radix enumeration of index tuples.
fn tuples(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut cur = vec![0usize; radices.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for (pos, r) in cur.iter_mut().zip(radices) {
            *pos += 1;
            if *pos < *r {
                break;
            }
            *pos = 0;
        }
    }
    out
}

/// Evaluate the three inequalities for a pair.
pub fn psi_bounds(tables: &GroupTables, pair: PairId, parts: &PartitionCollection, tuple_cap: usize) -> Result<PsiReport> {
    let j = tables.j();
    if j < 2 {
        return Err(VsivError::Structural("need at least 2 treatment values".into()));
    }
    let np = parts.len();
    let zs = [pair.k, pair.kprime];
    let cells: Vec<Vec<(Option<f64>, Option<f64>)>> = (0..np).map(|p| parts.cells(p)).collect();
    let sizes: Vec<usize> = cells.iter().map(Vec::len).collect();

    let tuple_count = np.checked_pow(j as u32).unwrap_or(usize::MAX);
    let max_cells = *sizes.iter().max().unwrap();
    let work = tuple_count.saturating_mul(max_cells.checked_pow(j as u32).unwrap_or(usize::MAX));
    if work > tuple_cap {
        return Err(VsivError::Guard(format!(
            "{np} partitions over {j} treatments need {work} evaluations, cap is {tuple_cap}"
        )));
    }

    // x[z][d][p][c]
    let x: Vec<Vec<Vec<Vec<f64>>>> = zs
        .iter()
        .map(|&z| {
            (0..j)
                .map(|d| cells.iter().map(|cs| cs.iter().map(|&(lo, hi)| psi_hat(tables, lo, hi, d, z)).collect()).collect())
                .collect()
        })
        .collect();

    let mut psi1 = f64::NEG_INFINITY;
    for p in 0..np {
        for d in 0..j {
            let s: f64 = (0..sizes[p]).map(|c| x[0][d][p][c].max(x[1][d][p][c])).sum();
            psi1 = psi1.max(s - 1.0);
        }
    }

    let part_tuples = tuples(&vec![np; j]);
    let mut min_total = f64::INFINITY;
    for pt in &part_tuples {
        let radices: Vec<usize> = pt.iter().map(|&p| sizes[p]).collect();
        let mut total = 0.0;
        for ct in tuples(&radices) {
            let s = |zi: usize| (0..j).map(|d| x[zi][d][pt[d]][ct[d]]).sum::<f64>();
            total += s(0).min(s(1));
        }
        min_total = min_total.min(total);
    }
    let psi2 = 1.0 - min_total;

    let psi3 = psi3(tables, pair, &x, &sizes, np)?;
    let t_n = tables.t_n();
    let comparand = t_n.sqrt() * psi1.max(psi2).max(psi3);
    Ok(PsiReport { pair, psi1, psi2, psi3, t_n, comparand })
}

/// Third inequality: for each treatment j and each choice of partitions for
/// the other treatments, sup over cells A of
/// max_z psi(A, d_j, z) - sum over other-cell tuples of min_z [psi(A, d_j, z) + rest_z].
fn psi3(tables: &GroupTables, pair: PairId, x: &[Vec<Vec<Vec<f64>>>], sizes: &[usize], np: usize) -> Result<f64> {
    let j = tables.j();
    let (n1, n2) = (tables.z_count(pair.k) as f64, tables.z_count(pair.kprime) as f64);
    let share = |c: usize, n: f64| if n > 0.0 { c as f64 / n } else { 0.0 };
    let mut best = f64::NEG_INFINITY;
    for dj in 0..j {
        let runs = arm_runs(tables.cell(dj, pair.k), tables.cell(dj, pair.kprime));
        let others: Vec<usize> = (0..j).filter(|&d| d != dj).collect();
        for pt in tuples(&vec![np; others.len()]) {
            let radices: Vec<usize> = pt.iter().map(|&p| sizes[p]).collect();
            let mut s1_total = 0.0;
            let mut diffs = Vec::new();
            for ct in tuples(&radices) {
                let rest = |zi: usize| others.iter().enumerate().map(|(i, &d)| x[zi][d][pt[i]][ct[i]]).sum::<f64>();
                let (s1, s2) = (rest(0), rest(1));
                s1_total += s1;
                diffs.push(s2 - s1);
            }
            diffs.sort_by(f64::total_cmp);
            let count = diffs.len() as f64;
            let mut prefix = vec![0.0];
            for e in &diffs {
                prefix.push(prefix.last().unwrap() + e);
            }
            let objective = |a1: f64, a2: f64| {
                let delta = a2 - a1;
                let m = diffs.partition_point(|&e| e < -delta);
                let tilde = count * a1 + s1_total + m as f64 * delta + prefix[m];
                a1.max(a2) - tilde
            };
            best = best.max(objective(0.0, 0.0));
            let (pre1, pre2) = (&runs.0, &runs.1);
            let m = pre1.len() - 1;
            for a in 0..m {
                for b in a + 1..=m {
                    let v = objective(share(pre1[b] - pre1[a], n1), share(pre2[b] - pre2[a], n2));
                    if v > best {
                        best = v;
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Prefix counts of the two groups over the merged distinct outcomes.
fn arm_runs(g1: &[f64], g2: &[f64]) -> (Vec<usize>, Vec<usize>) {
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
        while i1 < g1.len() && g1[i1] == v {
            i1 += 1;
        }
        while i2 < g2.len() && g2[i2] == v {
            i2 += 1;
        }
        pre1.push(i1);
        pre2.push(i2);
    }
    (pre1, pre2)
}

/// Pairs whose three scaled inequalities are all within `t_n`.
///
/// Binary treatments skip the check: the sup statistic's implications imply
/// these, so every input pair is kept.
pub fn z2_hat(
    tables: &GroupTables,
    pairs: &PairSet,
    parts: &PartitionCollection,
    t_n: f64,
    tuple_cap: usize,
) -> Result<PairSet> {
    if t_n <= 0.0 {
        return Err(VsivError::Argument("t_n must be positive".into()));
    }
    if tables.j() == 2 {
        return Ok(pairs.clone());
    }
    let mut keep = Vec::new();
    for p in pairs.iter() {
        if psi_bounds(tables, p, parts, tuple_cap)?.passes(t_n) {
            keep.push(p);
        }
    }
    PairSet::new(keep, pairs.orientation())
}
