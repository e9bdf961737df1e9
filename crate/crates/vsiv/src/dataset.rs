//! Observed data, label supports, and per-cell sorted outcome tables.
//!
//! Every probability in the crate is an integer count divided by `n` (or by a
//! group size) once, at the end, so that small hand-checked cases are exact.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Result, VsivError};

/// Ordered list of distinct labels with a numeric value per label.
///
/// The numeric value is the parsed label when every label is a number and the
/// dense index otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    labels: Vec<String>,
    values: Vec<f64>,
}

impl Support {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut seen = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if seen.insert(l.clone(), i).is_some() {
                return Err(VsivError::Schema(format!("duplicate support label '{l}'")));
            }
        }
        let parsed: Option<Vec<f64>> = labels.iter().map(|l| l.trim().parse::<f64>().ok()).collect();
        let values = match parsed {
            Some(v) if v.iter().all(|x| x.is_finite()) => v,
            _ => (0..labels.len()).map(|i| i as f64).collect(),
        };
        Ok(Self { labels, values })
    }

    /// Support from labels `0..len` rendered as integers.
    pub fn indexed(len: usize) -> Self {
        Self {
            labels: (0..len).map(|i| i.to_string()).collect(),
            values: (0..len).map(|i| i as f64).collect(),
        }
    }

    /// Sorted distinct labels: numerically if all parse as numbers, else lexically.
    pub fn infer<'a>(raw: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut distinct: Vec<String> = raw.into_iter().map(|s| s.trim().to_string()).collect();
        distinct.sort();
        distinct.dedup();
        let numeric: Option<Vec<f64>> = distinct.iter().map(|l| l.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut idx: Vec<usize> = (0..distinct.len()).collect();
            idx.sort_by(|&a, &b| nums[a].total_cmp(&nums[b]));
            distinct = idx.into_iter().map(|i| distinct[i].clone()).collect();
        }
        Self::new(distinct)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label.trim())
    }
}

/// How treatment values relate to each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentOrder {
    Ordered,
    Unordered,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    y: Vec<f64>,
    d: Vec<usize>,
    z: Vec<usize>,
    treatment: Support,
    instrument: Support,
    order: TreatmentOrder,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        d: Vec<usize>,
        z: Vec<usize>,
        treatment: Support,
        instrument: Support,
        order: TreatmentOrder,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(VsivError::EmptyInput("dataset has no rows".into()));
        }
        if d.len() != n || z.len() != n {
            return Err(VsivError::Schema("y, d and z columns differ in length".into()));
        }
        if treatment.len() < 2 {
            return Err(VsivError::Schema("treatment support needs at least 2 values".into()));
        }
        if instrument.len() < 2 {
            return Err(VsivError::Schema("instrument support needs at least 2 values".into()));
        }
        if let Some(i) = d.iter().position(|&v| v >= treatment.len()) {
            return Err(VsivError::Schema(format!("row {i}: treatment index {} out of range", d[i])));
        }
        if let Some(i) = z.iter().position(|&v| v >= instrument.len()) {
            return Err(VsivError::Schema(format!("row {i}: instrument index {} out of range", z[i])));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(VsivError::Schema(format!("row {i}: outcome is not finite")));
        }
        if order == TreatmentOrder::Ordered
            && treatment.values().windows(2).any(|w| w[0] >= w[1])
        {
            return Err(VsivError::Schema("ordered treatment labels must be strictly increasing".into()));
        }
        Ok(Self { y, d, z, treatment, instrument, order })
    }

    /// Dataset with integer labels `0..j` and `0..k`.
    pub fn from_indices(y: Vec<f64>, d: Vec<usize>, z: Vec<usize>, j: usize, k: usize) -> Result<Self> {
        Self::new(y, d, z, Support::indexed(j), Support::indexed(k), TreatmentOrder::Ordered)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of treatment values J.
    pub fn j(&self) -> usize {
        self.treatment.len()
    }

    /// Number of instrument values K.
    pub fn k(&self) -> usize {
        self.instrument.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[usize] {
        &self.d
    }

    pub fn z(&self) -> &[usize] {
        &self.z
    }

    pub fn treatment(&self) -> &Support {
        &self.treatment
    }

    pub fn instrument(&self) -> &Support {
        &self.instrument
    }

    pub fn order(&self) -> TreatmentOrder {
        self.order
    }

    /// Numeric treatment value of row `i`.
    pub fn d_value(&self, i: usize) -> f64 {
        self.treatment.values()[self.d[i]]
    }

    pub fn with_order(mut self, order: TreatmentOrder) -> Result<Self> {
        if order == TreatmentOrder::Ordered
            && self.treatment.values().windows(2).any(|w| w[0] >= w[1])
        {
            return Err(VsivError::Schema("ordered treatment labels must be strictly increasing".into()));
        }
        self.order = order;
        Ok(self)
    }

    /// Same outcomes and treatments with a new instrument column.
    pub fn with_instrument(&self, z: Vec<usize>, instrument: Support) -> Result<Self> {
        Self::new(self.y.clone(), self.d.clone(), z, self.treatment.clone(), instrument, self.order)
    }

    pub fn tables(&self) -> GroupTables {
        GroupTables::new(self)
    }
}

/// Column names and optional declared supports for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub y: String,
    pub d: String,
    pub z: String,
    pub treatment_support: Option<Vec<String>>,
    pub instrument_support: Option<Vec<String>>,
    pub order: TreatmentOrder,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            y: "y".into(),
            d: "d".into(),
            z: "z".into(),
            treatment_support: None,
            instrument_support: None,
            order: TreatmentOrder::Ordered,
        }
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| VsivError::Schema(format!("missing column '{name}'")))
    };
    let (iy, id, iz) = (col(&schema.y)?, col(&schema.d)?, col(&schema.z)?);

    let mut y = Vec::new();
    let mut d_raw = Vec::new();
    let mut z_raw = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| VsivError::Row { line, msg: e.to_string() })?;
        let field = |c: usize, name: &str| -> Result<String> {
            match rec.get(c).map(str::trim) {
                Some(s) if !s.is_empty() => Ok(s.to_string()),
                _ => Err(VsivError::Row { line, msg: format!("missing value in column '{name}'") }),
            }
        };
        let ys = field(iy, &schema.y)?;
        let yv: f64 = ys
            .parse()
            .map_err(|_| VsivError::Row { line, msg: format!("cannot parse outcome '{ys}'") })?;
        if !yv.is_finite() {
            return Err(VsivError::Row { line, msg: format!("outcome '{ys}' is not finite") });
        }
        y.push(yv);
        d_raw.push(field(id, &schema.d)?);
        z_raw.push(field(iz, &schema.z)?);
    }
    if y.is_empty() {
        return Err(VsivError::EmptyInput("csv has no data rows".into()));
    }

    let treatment = match &schema.treatment_support {
        Some(labels) => Support::new(labels.clone())?,
        None => Support::infer(d_raw.iter().map(String::as_str))?,
    };
    let instrument = match &schema.instrument_support {
        Some(labels) => Support::new(labels.clone())?,
        None => Support::infer(z_raw.iter().map(String::as_str))?,
    };
    let map = |raw: &[String], sup: &Support, what: &str| -> Result<Vec<usize>> {
        raw.iter()
            .enumerate()
            .map(|(i, v)| {
                sup.index_of(v).ok_or_else(|| VsivError::Row {
                    line: i + 2,
                    msg: format!("{what} value '{v}' is not in the declared support"),
                })
            })
            .collect()
    };
    let d = map(&d_raw, &treatment, "treatment")?;
    let z = map(&z_raw, &instrument, "instrument")?;
    Dataset::new(y, d, z, treatment, instrument, schema.order)
}

/// Sorted outcomes for every (treatment, instrument) cell plus group counts.
#[derive(Debug, Clone)]
pub struct GroupTables {
    n: usize,
    j: usize,
    k: usize,
    cells: Vec<Vec<f64>>,
    cell_sums: Vec<f64>,
    z_counts: Vec<usize>,
    grid: Vec<f64>,
}

impl GroupTables {
    pub fn new(ds: &Dataset) -> Self {
        let (j, k) = (ds.j(), ds.k());
        let mut cells = vec![Vec::new(); j * k];
        let mut cell_sums = vec![0.0; j * k];
        let mut z_counts = vec![0usize; k];
        for i in 0..ds.n() {
            let c = ds.d[i] * k + ds.z[i];
            cells[c].push(ds.y[i]);
            cell_sums[c] += ds.y[i];
            z_counts[ds.z[i]] += 1;
        }
        for c in &mut cells {
            c.sort_by(f64::total_cmp);
        }
        let mut grid = ds.y.clone();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        Self { n: ds.n(), j, k, cells, cell_sums, z_counts, grid }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Sorted outcomes of rows with D = d and Z = z.
    pub fn cell(&self, d: usize, z: usize) -> &[f64] {
        &self.cells[d * self.k + z]
    }

    pub fn cell_count(&self, d: usize, z: usize) -> usize {
        self.cells[d * self.k + z].len()
    }

    pub fn cell_sum(&self, d: usize, z: usize) -> f64 {
        self.cell_sums[d * self.k + z]
    }

    pub fn z_count(&self, z: usize) -> usize {
        self.z_counts[z]
    }

    /// Sorted distinct outcomes of the whole sample.
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// n times the product of all instrument-value shares.
    pub fn t_n(&self) -> f64 {
        let n = self.n as f64;
        self.z_counts.iter().fold(n, |acc, &c| acc * (c as f64 / n))
    }

    /// Rows in cell (d, z) with a <= y <= b.
    pub fn count_closed(&self, d: usize, z: usize, a: f64, b: f64) -> usize {
        if a > b {
            return 0;
        }
        let c = self.cell(d, z);
        c.partition_point(|&v| v <= b) - c.partition_point(|&v| v < a)
    }

    /// Rows in cell (d, z) with lo < y <= hi; `None` bounds are infinite.
    pub fn count_half_open(&self, d: usize, z: usize, lo: Option<f64>, hi: Option<f64>) -> usize {
        let c = self.cell(d, z);
        let upper = hi.map_or(c.len(), |h| c.partition_point(|&v| v <= h));
        let lower = lo.map_or(0, |l| c.partition_point(|&v| v <= l));
        upper.saturating_sub(lower)
    }

    /// Empirical mass of [a, b] x {d} x {z}.
    pub fn interval_mass(&self, d: usize, z: usize, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(VsivError::Argument(format!("interval endpoints reversed: {a} > {b}")));
        }
        if d >= self.j || z >= self.k {
            return Err(VsivError::Argument(format!("cell ({d}, {z}) out of range")));
        }
        Ok(self.count_closed(d, z, a, b) as f64 / self.n as f64)
    }
}

/// Ordered pair of instrument indices (k, k').
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairId {
    pub k: usize,
    pub kprime: usize,
}

impl PairId {
    pub fn new(k: usize, kprime: usize) -> Result<Self> {
        if k == kprime {
            return Err(VsivError::Argument(format!("pair ({k}, {kprime}) repeats an instrument value")));
        }
        Ok(Self { k, kprime })
    }

    pub fn reversed(self) -> Self {
        Self { k: self.kprime, kprime: self.k }
    }

    pub fn contains(self, z: usize) -> bool {
        self.k == z || self.kprime == z
    }

    /// Same pair ignoring orientation.
    pub fn same_values(self, other: PairId) -> bool {
        self == other || self == other.reversed()
    }
}

/// Whether a pair universe lists both orientations or only k < k'.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Both,
    Upper,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSet {
    pairs: Vec<PairId>,
    orientation: Orientation,
}

impl PairSet {
    pub fn new(pairs: Vec<PairId>, orientation: Orientation) -> Result<Self> {
        for (i, p) in pairs.iter().enumerate() {
            if pairs[..i].contains(p) {
                return Err(VsivError::Argument(format!("duplicate pair ({}, {})", p.k, p.kprime)));
            }
            if orientation == Orientation::Upper && p.k > p.kprime {
                return Err(VsivError::Argument(format!(
                    "pair ({}, {}) is not in upper-triangle orientation",
                    p.k, p.kprime
                )));
            }
        }
        Ok(Self { pairs, orientation })
    }

    pub fn empty(orientation: Orientation) -> Self {
        Self { pairs: Vec::new(), orientation }
    }

    /// Every pair over `k` instrument values, in row-major order.
    pub fn all(k: usize, orientation: Orientation) -> Self {
        let mut pairs = Vec::new();
        for a in 0..k {
            for b in 0..k {
                let keep = match orientation {
                    Orientation::Both => a != b,
                    Orientation::Upper => a < b,
                };
                if keep {
                    pairs.push(PairId { k: a, kprime: b });
                }
            }
        }
        Self { pairs, orientation }
    }

    pub fn pairs(&self) -> &[PairId] {
        &self.pairs
    }

    pub fn orientation(&self) -> Orientation {
        self.orientation
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, p: PairId) -> bool {
        self.pairs.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = PairId> + '_ {
        self.pairs.iter().copied()
    }

    /// Pairs of `self` that are also in `other`, in `self`'s order.
    pub fn intersect(&self, other: &PairSet) -> PairSet {
        Self {
            pairs: self.pairs.iter().copied().filter(|p| other.contains(*p)).collect(),
            orientation: self.orientation,
        }
    }

    pub fn is_subset_of(&self, other: &PairSet) -> bool {
        self.pairs.iter().all(|p| other.contains(*p))
    }
}

/// Per-observation quantities averaged by [`cond_moment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Moment {
    One,
    Y,
    D,
    G,
    GY,
    GD,
    YY,
    YD,
    DD,
    GG,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Mean of the moment over rows whose instrument value lies in `subset`.
///
/// `g` maps instrument indices to reals and is only read for moments that
/// involve it. An empty subsample yields 0 with the degenerate flag set.
pub fn cond_moment(ds: &Dataset, moment: Moment, g: &[f64], subset: &[usize]) -> MomentValue {
    let mut member = vec![false; ds.k()];
    for &s in subset {
        if s < member.len() {
            member[s] = true;
        }
    }
    let mut count = 0usize;
    let mut sum = 0.0;
    for i in 0..ds.n() {
        let z = ds.z[i];
        if !member[z] {
            continue;
        }
        count += 1;
        let (y, d) = (ds.y[i], ds.d_value(i));
        let gz = || g[z];
        sum += match moment {
            Moment::One => 1.0,
            Moment::Y => y,
            Moment::D => d,
            Moment::G => gz(),
            Moment::GY => gz() * y,
            Moment::GD => gz() * d,
            Moment::YY => y * y,
            Moment::YD => y * d,
            Moment::DD => d * d,
            Moment::GG => gz() * gz(),
        };
    }
    if count == 0 {
        return MomentValue { value: 0.0, degenerate: true };
    }
    MomentValue { value: sum / count as f64, degenerate: false }
}
