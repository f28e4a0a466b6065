//! Datasets, pool bookkeeping, synthetic generators and CSV ingestion.
//!
//! The CSV layout is `label,f0,f1,...,f{d-1}` with one sample per line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Feature rows with integer class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl FeatureDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(invalid("dataset needs at least one sample"));
        }
        if features.ncols() == 0 {
            return Err(invalid("feature dimension must be at least 1"));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(invalid(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> (Array2<f64>, Vec<usize>) {
        let x = self.features.select(Axis(0), indices);
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// Writes the dataset in the `label,f0,...` CSV layout with round-trip
    /// precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "label")?;
        for j in 0..self.dim() {
            write!(out, ",f{j}")?;
        }
        writeln!(out)?;
        for (row, label) in self.features.rows().into_iter().zip(&self.labels) {
            write!(out, "{label}")?;
            for v in row {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a dataset; the number of classes is `max label + 1`.
pub fn load_dataset(path: &Path) -> Result<FeatureDataset> {
    load_dataset_impl(path, None)
}

/// Reads a dataset whose labels must all be below `num_classes`.
pub fn load_dataset_with_classes(path: &Path, num_classes: usize) -> Result<FeatureDataset> {
    load_dataset_impl(path, Some(num_classes))
}

fn load_dataset_impl(path: &Path, num_classes: Option<usize>) -> Result<FeatureDataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;

    let mut records = reader.records();
    let header = match records.next() {
        None => return Err(Error::NoSamples { path: path.into() }),
        Some(r) => r.map_err(|e| parse_err(1, e.to_string()))?,
    };
    if header.len() < 2 || &header[0] != "label" {
        return Err(parse_err(
            1,
            "header must be `label,f0,...,f{d-1}` with at least one feature".into(),
        ));
    }
    let dim = header.len() - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record.map_err(|e| parse_err(0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != dim + 1 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", dim + 1, record.len()),
            ));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid label `{}`", &record[0])))?;
        if let Some(k) = num_classes {
            if label >= k {
                return Err(parse_err(line, format!("label {label} >= num_classes {k}")));
            }
        }
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("invalid number `{field}`")))?;
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::NoSamples { path: path.into() });
    }
    let k = num_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let features = Array2::from_shape_vec((labels.len(), dim), values).expect("row arity checked while parsing");
    FeatureDataset::new(features, labels, k)
}

/// Class means for a synthetic mixture: either explicit or drawn at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeanLayout {
    Explicit(Vec<Vec<f64>>),
    Random { random: RandomMeans },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomMeans {
    /// Each coordinate is drawn from `Normal(offset, scale^2)`.
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    pub seed: u64,
}

/// Isotropic Gaussian mixture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub means: MeanLayout,
    pub stddevs: Vec<f64>,
    pub counts: Vec<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn resolved_means(&self) -> Result<Vec<Vec<f64>>> {
        match &self.means {
            MeanLayout::Explicit(m) => Ok(m.clone()),
            MeanLayout::Random { random } => {
                if !(random.scale >= 0.0) {
                    return Err(invalid("random mean scale must be >= 0"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(random.seed);
                Ok((0..self.num_classes)
                    .map(|_| {
                        (0..self.dim)
                            .map(|_| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                random.offset + random.scale * z
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 {
            return Err(invalid("num_classes and dim must be >= 1"));
        }
        if self.stddevs.len() != self.num_classes || self.counts.len() != self.num_classes {
            return Err(invalid("stddevs and counts need one entry per class"));
        }
        if self.counts.contains(&0) {
            return Err(invalid("every class count must be >= 1"));
        }
        if self.stddevs.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(invalid("stddevs must be finite and > 0"));
        }
        let means = self.resolved_means()?;
        if means.len() != self.num_classes || means.iter().any(|m| m.len() != self.dim) {
            return Err(invalid("means must be num_classes x dim"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_counts(&self, counts: Vec<usize>) -> Self {
        Self { counts, ..self.clone() }
    }
}

/// Draws `counts[k]` samples from `Normal(mean_k, stddev_k^2 I)` for every
/// class, then shuffles the rows. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<FeatureDataset> {
    spec.validate()?;
    let means = spec.resolved_means()?;
    let n: usize = spec.counts.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut labels = Vec::with_capacity(n);
    for (k, &c) in spec.counts.iter().enumerate() {
        labels.extend(std::iter::repeat_n(k, c));
    }
    // Fisher-Yates via the same stream keeps the layout deterministic.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let mut features = Array2::zeros((n, spec.dim));
    for (mut row, &k) in features.rows_mut().into_iter().zip(&labels) {
        let sd = spec.stddevs[k];
        for (v, &m) in row.iter_mut().zip(&means[k]) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = m + sd * z;
        }
    }
    FeatureDataset::new(features, labels, spec.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    AdditiveNoise,
    MeanTranslation,
}

/// Parametric feature-space corruption used for dataset-shift evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub kind: ShiftKind,
    pub magnitude: f64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0) || !self.magnitude.is_finite() {
            return Err(invalid("shift magnitude must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Returns a corrupted copy of `ds`; labels are untouched and magnitude 0 is
/// the identity.
pub fn apply_shift<R: Rng + ?Sized>(ds: &FeatureDataset, shift: &ShiftSpec, rng: &mut R) -> Result<FeatureDataset> {
    shift.validate()?;
    if shift.magnitude == 0.0 {
        return Ok(ds.clone());
    }
    let mut features = ds.features.clone();
    match shift.kind {
        ShiftKind::AdditiveNoise => {
            let noise = Normal::new(0.0, shift.magnitude).expect("magnitude validated");
            features.mapv_inplace(|v| v + noise.sample(rng));
        }
        ShiftKind::MeanTranslation => features.mapv_inplace(|v| v + shift.magnitude),
    }
    FeatureDataset::new(features, ds.labels.clone(), ds.num_classes)
}

/// Labeled/unlabeled index bookkeeping over a dataset of `n` samples.
/// Both sets keep insertion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    in_labeled: Vec<bool>,
    cycle: usize,
}

impl PoolState {
    /// Everything unlabeled.
    pub fn new(n: usize) -> Self {
        Self {
            labeled: Vec::new(),
            unlabeled: (0..n).collect(),
            in_labeled: vec![false; n],
            cycle: 0,
        }
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }

    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn size(&self) -> usize {
        self.in_labeled.len()
    }

    pub fn is_labeled(&self, i: usize) -> bool {
        self.in_labeled.get(i).copied().unwrap_or(false)
    }

    /// Moves `indices` from the unlabeled to the labeled set. Fails without
    /// modifying the pool if any index is out of range, already labeled, or
    /// repeated.
    pub fn acquire(&mut self, indices: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.size()];
        for &i in indices {
            if i >= self.size() {
                return Err(invalid(format!("index {i} outside pool of {}", self.size())));
            }
            if self.in_labeled[i] || seen[i] {
                return Err(invalid(format!("index {i} acquired twice")));
            }
            seen[i] = true;
        }
        for &i in indices {
            self.in_labeled[i] = true;
            self.labeled.push(i);
        }
        self.unlabeled.retain(|&i| !seen[i]);
        Ok(())
    }

    pub fn advance_cycle(&mut self) {
        self.cycle += 1;
    }
}

/// Uniform draw without replacement of `min(size, |unlabeled|)` unlabeled
/// indices, returned in ascending order.
pub fn draw_query_subset<R: Rng + ?Sized>(pool: &PoolState, size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(invalid("query subset size must be >= 1"));
    }
    let n = pool.unlabeled.len();
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let mut out: Vec<usize> = if size >= n {
        pool.unlabeled.clone()
    } else {
        index::sample(rng, n, size)
            .into_iter()
            .map(|p| pool.unlabeled[p])
            .collect()
    };
    out.sort_unstable();
    Ok(out)
}

/// Initial labeled set of `m` samples. With `stratified`, classes get
/// `m / K` samples each (remainder to random classes, shortfalls filled
/// uniformly); otherwise a uniform draw over the whole dataset.
pub fn draw_seed_set<R: Rng + ?Sized>(
    labels: &[usize],
    num_classes: usize,
    m: usize,
    stratified: bool,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = labels.len();
    if m == 0 || m > n {
        return Err(invalid(format!("seed set of {m} from {n} samples")));
    }
    if !stratified {
        let mut out = index::sample(rng, n, m).into_vec();
        out.sort_unstable();
        return Ok(out);
    }

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut quota = vec![m / num_classes; num_classes];
    for k in index::sample(rng, num_classes, m % num_classes) {
        quota[k] += 1;
    }
    let mut chosen = vec![false; n];
    let mut out = Vec::with_capacity(m);
    for (members, &q) in by_class.iter().zip(&quota) {
        let take = q.min(members.len());
        for p in index::sample(rng, members.len(), take) {
            chosen[members[p]] = true;
            out.push(members[p]);
        }
    }
    if out.len() < m {
        let rest: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
        for p in index::sample(rng, rest.len(), m - out.len()) {
            out.push(rest[p]);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Isotropic Gaussian cluster of `count` points whose centre lies at least
/// `distance` within-class standard deviations from every class mean of
/// `pool`. The spread is the largest per-class RMS coordinate stddev, which
/// is also the unit for `distance`. Rows are labelled 0.
pub fn generate_ood_cluster(pool: &FeatureDataset, distance: f64, count: usize, seed: u64) -> Result<FeatureDataset> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(invalid("OOD distance must be finite and > 0"));
    }
    if count == 0 {
        return Err(invalid("OOD count must be >= 1"));
    }
    let d = pool.dim();
    let mut means = Vec::new();
    let mut sigma: f64 = 0.0;
    for k in 0..pool.num_classes() {
        let rows: Vec<usize> = (0..pool.len()).filter(|&i| pool.labels[i] == k).collect();
        if rows.is_empty() {
            continue;
        }
        let x = pool.features.select(Axis(0), &rows);
        let mean = x.mean_axis(Axis(0)).expect("non-empty class");
        if rows.len() > 1 {
            let var = x.var_axis(Axis(0), 1.0).mean().unwrap_or(0.0);
            sigma = sigma.max(var.sqrt());
        }
        means.push(mean);
    }
    if means.is_empty() {
        return Err(invalid("pool has no samples"));
    }
    if sigma == 0.0 {
        sigma = 1.0;
    }
    let centroid = means.iter().fold(Array1::<f64>::zeros(d), |acc, m| acc + m) / means.len() as f64;
    let reach = means
        .iter()
        .map(|m| (m - &centroid).mapv(|v| v * v).sum().sqrt())
        .fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir = Array1::from_shape_simple_fn(d, || rng.sample::<f64, _>(StandardNormal));
    let norm = dir.dot(&dir).sqrt();
    dir /= norm;
    let centre = &centroid + &(dir * (reach + distance * sigma));
    let features = Array2::from_shape_fn((count, d), |(_, j)| {
        centre[j] + sigma * rng.sample::<f64, _>(StandardNormal)
    });
    FeatureDataset::new(features, vec![0; count], pool.num_classes())
}
