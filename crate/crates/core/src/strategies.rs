//! Acquisition scoring and selection.
//!
//! Score orientation differs per strategy: entropy, BALD, FRE and CoreSet
//! distance are "higher is more informative", the per-class feature
//! similarity is "lower is more informative". [`ood_scores`] flips the
//! similarity so every score there reads "higher = more novel".

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, ClassConditionalPca};
use crate::losses::softmax;
use crate::nn::{argmax_rows, LossKind, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Random,
    Entropy,
    Bald,
    Coreset,
    FeatureSim,
    Scal,
    Dfm,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 7] = [
        StrategyKind::Random,
        StrategyKind::Entropy,
        StrategyKind::Bald,
        StrategyKind::Coreset,
        StrategyKind::FeatureSim,
        StrategyKind::Scal,
        StrategyKind::Dfm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Entropy => "entropy",
            StrategyKind::Bald => "bald",
            StrategyKind::Coreset => "coreset",
            StrategyKind::FeatureSim => "featuresim",
            StrategyKind::Scal => "scal",
            StrategyKind::Dfm => "dfm",
        }
    }

    /// Training objective of the model this strategy queries.
    pub fn loss(self) -> LossKind {
        match self {
            StrategyKind::Scal => LossKind::SupervisedContrastive,
            _ => LossKind::CrossEntropy,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    LowestFirst,
    HighestFirst,
}

fn rank_cmp(scores: &[f64], direction: Direction) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        let o = match direction {
            Direction::HighestFirst => scores[b].total_cmp(&scores[a]),
            Direction::LowestFirst => scores[a].total_cmp(&scores[b]),
        };
        o.then(a.cmp(&b))
    }
}

fn entropy_row(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

/// Predictive entropy `-sum_k p_k ln p_k` per row.
pub fn score_entropy(probs: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    probs
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let s = row.sum();
            if (s - 1.0).abs() > 1e-4 || row.iter().any(|&p| p < 0.0) {
                return Err(invalid(format!("row {i} is not a distribution (sum {s})")));
            }
            Ok(entropy_row(row))
        })
        .collect()
}

/// Mutual information `H(mean_t p_t) - mean_t H(p_t)` from `passes x n x K`
/// Monte-Carlo samples.
pub fn score_bald(mc_probs: ArrayView3<'_, f64>) -> Result<Vec<f64>> {
    let (passes, n, _) = mc_probs.dim();
    if passes < 2 {
        return Err(invalid(format!("BALD needs at least 2 passes, got {passes}")));
    }
    let mean = mc_probs.mean_axis(Axis(0)).expect("passes >= 2");
    let mut expected = vec![0.0; n];
    for pass in mc_probs.outer_iter() {
        for (e, row) in expected.iter_mut().zip(pass.rows()) {
            *e += entropy_row(row);
        }
    }
    Ok(mean
        .rows()
        .into_iter()
        .zip(expected)
        .map(|(row, e)| entropy_row(row) - e / passes as f64)
        .collect())
}

/// Positions of the `m` best scores; ties go to the lower position.
pub fn select_top(scores: &[f64], m: usize, direction: Direction) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(rank_cmp(scores, direction));
    order.truncate(m);
    order
}

/// Greedy k-center: `m` times, pick the candidate farthest from
/// `labeled ∪ already picked`. Ties go to the lower candidate index.
pub fn select_coreset_kcenter(
    candidates: ArrayView2<'_, f64>,
    labeled: ArrayView2<'_, f64>,
    m: usize,
) -> Result<Vec<usize>> {
    if labeled.nrows() == 0 {
        return Err(invalid("k-center needs a non-empty labeled set"));
    }
    if m > candidates.nrows() {
        return Err(invalid(format!(
            "cannot pick {m} centers from {} candidates",
            candidates.nrows()
        )));
    }
    let mut dist = linalg::pairwise_min_distances(candidates, labeled)?;
    let mut taken = vec![false; candidates.nrows()];
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best: Option<usize> = None;
        for (i, &d) in dist.iter().enumerate() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| d > dist[b]) {
                best = Some(i);
            }
        }
        let pick = best.expect("m <= candidates");
        taken[pick] = true;
        out.push(pick);
        linalg::relax_min_distances(&mut dist, candidates, candidates.row(pick));
    }
    Ok(out)
}

/// Unit-norm training embeddings grouped by class.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    classes: Vec<Option<Array2<f64>>>,
}

impl FeatureBank {
    pub fn new(embeddings: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.len() != embeddings.nrows() {
            return Err(Error::DimensionMismatch {
                expected: embeddings.nrows(),
                got: labels.len(),
            });
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_classes {
                return Err(invalid(format!("label {l} >= {num_classes} classes")));
            }
            members[l].push(i);
        }
        let classes = members
            .into_iter()
            .map(|idx| {
                (!idx.is_empty()).then(|| {
                    let mut rows = embeddings.select(Axis(0), &idx);
                    linalg::normalize_rows(&mut rows);
                    rows
                })
            })
            .collect();
        Ok(Self { classes })
    }

    pub fn class(&self, k: usize) -> Option<ArrayView2<'_, f64>> {
        self.classes.get(k).and_then(|c| c.as_ref().map(|a| a.view()))
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Max cosine similarity between `z` and the class-`k` bank, or `None`
    /// when the class has no bank.
    pub fn max_similarity(&self, z: ArrayView1<'_, f64>, k: usize) -> Option<f64> {
        let bank = self.class(k)?;
        let norm = z.dot(&z).sqrt();
        if norm == 0.0 {
            return Some(0.0);
        }
        Some(
            bank.dot(&z)
                .iter()
                .fold(f64::NEG_INFINITY, |a, &b| a.max(b / norm))
                .clamp(-1.0, 1.0),
        )
    }
}

/// Sentinel for candidates whose predicted class has no bank.
pub const MISSING_SIMILARITY: f64 = -1.0;

pub fn score_feature_similarity(bank: &FeatureBank, z: ArrayView1<'_, f64>, k: usize) -> f64 {
    bank.max_similarity(z, k).unwrap_or_else(|| {
        log::warn!("no feature bank for class {k}; scoring as maximally informative");
        MISSING_SIMILARITY
    })
}

/// Batched similarity scores plus the number of candidates that hit a
/// missing class bank.
pub fn score_feature_similarity_batch(
    bank: &FeatureBank,
    z: ArrayView2<'_, f64>,
    predicted: &[usize],
) -> (Vec<f64>, usize) {
    let mut scores = vec![MISSING_SIMILARITY; z.nrows()];
    let mut missing = 0;
    for k in 0..bank.num_classes().max(predicted.iter().max().map_or(0, |m| m + 1)) {
        let idx: Vec<usize> = (0..z.nrows()).filter(|&i| predicted[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let Some(rows) = bank.class(k) else {
            missing += idx.len();
            continue;
        };
        let mut zk = z.select(Axis(0), &idx);
        linalg::normalize_rows(&mut zk);
        let sims = zk.dot(&rows.t());
        for (&i, r) in idx.iter().zip(sims.rows()) {
            scores[i] = r.fold(f64::NEG_INFINITY, |a, &b| a.max(b)).clamp(-1.0, 1.0);
        }
    }
    if missing > 0 {
        log::warn!("{missing} candidates predicted into classes without a feature bank");
    }
    (scores, missing)
}

/// Sentinel for candidates whose predicted class has no PCA model.
pub const MISSING_FRE: f64 = f64::INFINITY;

pub fn score_dfm(pca: &ClassConditionalPca, z: ArrayView1<'_, f64>, k: usize) -> Result<f64> {
    match pca.class(k) {
        Some(p) => linalg::fre(p, z),
        None => {
            log::warn!("no PCA model for class {k}; scoring as maximally informative");
            Ok(MISSING_FRE)
        }
    }
}

pub fn score_dfm_batch(
    pca: &ClassConditionalPca,
    z: ArrayView2<'_, f64>,
    predicted: &[usize],
) -> Result<(Vec<f64>, usize)> {
    let mut scores = vec![MISSING_FRE; z.nrows()];
    let mut missing = 0;
    let classes = pca.num_classes().max(predicted.iter().max().map_or(0, |m| m + 1));
    for k in 0..classes {
        let idx: Vec<usize> = (0..z.nrows()).filter(|&i| predicted[i] == k).collect();
        if idx.is_empty() {
            continue;
        }
        let Some(p) = pca.class(k) else {
            missing += idx.len();
            continue;
        };
        let fres = linalg::fre_batch(p, z.select(Axis(0), &idx).view())?;
        for (&i, f) in idx.iter().zip(fres) {
            scores[i] = f;
        }
    }
    if missing > 0 {
        log::warn!("{missing} candidates predicted into classes without a PCA model");
    }
    Ok((scores, missing))
}

/// Per-class quota for balanced selection of `m` items over `num_classes`
/// classes with `available[k]` candidates each: `m / K` everywhere, the
/// remainder going to the classes with the most candidates left over (ties
/// to the lower class index).
pub fn balanced_quotas(available: &[usize], m: usize) -> Vec<usize> {
    let k = available.len();
    if k == 0 {
        return Vec::new();
    }
    let base = m / k;
    let mut quota = vec![base; k];
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let la = available[a] as i64 - base as i64;
        let lb = available[b] as i64 - base as i64;
        lb.cmp(&la).then(a.cmp(&b))
    });
    for &c in order.iter().take(m % k) {
        quota[c] += 1;
    }
    quota
}

/// Balanced per-class selection: each predicted class contributes its best
/// `quota` candidates; any shortfall is filled with the best remaining
/// candidates overall. Returns `min(m, n)` positions in rank order.
pub fn select_balanced_per_class(
    scores: &[f64],
    predicted: &[usize],
    m: usize,
    num_classes: usize,
    direction: Direction,
) -> Result<Vec<usize>> {
    if scores.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: predicted.len(),
        });
    }
    if num_classes == 0 {
        return Err(invalid("balanced selection needs at least one class"));
    }
    if let Some(&bad) = predicted.iter().find(|&&p| p >= num_classes) {
        return Err(invalid(format!("predicted class {bad} >= {num_classes}")));
    }
    let n = scores.len();
    let m = m.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(rank_cmp(scores, direction));

    let mut available = vec![0usize; num_classes];
    for &p in predicted {
        available[p] += 1;
    }
    let quota = balanced_quotas(&available, m);
    let mut taken_per_class = vec![0usize; num_classes];
    let mut taken = vec![false; n];
    let mut count = 0;
    for &i in &order {
        let c = predicted[i];
        if taken_per_class[c] < quota[c] {
            taken_per_class[c] += 1;
            taken[i] = true;
            count += 1;
        }
    }
    for &i in &order {
        if count == m {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            count += 1;
        }
    }
    Ok(order.into_iter().filter(|&i| taken[i]).collect())
}

/// Pool as seen by a strategy: features of every sample plus the labels the
/// oracle has revealed for the labeled indices. Unlabeled and test labels
/// are not reachable from here.
#[derive(Debug, Clone, Copy)]
pub struct PoolView<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labeled: &'a [usize],
    pub labeled_labels: &'a [usize],
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcquisitionOptions {
    /// Stochastic forward passes for BALD.
    pub mc_passes: usize,
    /// Retained-variance fraction for the class-conditional PCA.
    pub variance_fraction: f64,
    /// Balanced per-class selection for SCAL, FeatureSim and DFM; when off
    /// they take the global top `M`.
    pub balanced: bool,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        Self {
            mc_passes: 50,
            variance_fraction: 0.95,
            balanced: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionResult {
    /// Dataset indices, in selection order.
    pub selected: Vec<usize>,
    /// Score per offered candidate in the strategy's native orientation
    /// (empty for Random).
    pub scores: Vec<f64>,
    /// Selected samples per predicted class.
    pub class_counts: Vec<usize>,
    /// Wall-clock time of scoring and selection.
    pub query_time_ns: u64,
    /// Candidates whose predicted class had no bank/PCA model.
    pub missing_class_warnings: usize,
}

/// Model state a scoring function needs beyond the candidates themselves.
enum Prepared {
    None,
    Embeddings(Array2<f64>),
    Bank(FeatureBank),
    Pca(ClassConditionalPca),
}

fn labeled_embeddings(model: &Mlp, pool: &PoolView<'_>) -> Result<Array2<f64>> {
    if pool.labeled.is_empty() {
        return Err(invalid("strategy needs a non-empty labeled set"));
    }
    let x = pool.features.select(Axis(0), pool.labeled);
    Ok(model.forward(x.view())?.embeddings)
}

fn prepare(kind: StrategyKind, model: &Mlp, pool: &PoolView<'_>, opts: &AcquisitionOptions) -> Result<Prepared> {
    if pool.labeled.len() != pool.labeled_labels.len() {
        return Err(Error::DimensionMismatch {
            expected: pool.labeled.len(),
            got: pool.labeled_labels.len(),
        });
    }
    Ok(match kind {
        StrategyKind::Random | StrategyKind::Entropy | StrategyKind::Bald => Prepared::None,
        StrategyKind::Coreset => Prepared::Embeddings(labeled_embeddings(model, pool)?),
        StrategyKind::FeatureSim | StrategyKind::Scal => {
            let e = labeled_embeddings(model, pool)?;
            Prepared::Bank(FeatureBank::new(e.view(), pool.labeled_labels, pool.num_classes)?)
        }
        StrategyKind::Dfm => {
            let e = labeled_embeddings(model, pool)?;
            Prepared::Pca(ClassConditionalPca::fit(
                e.view(),
                pool.labeled_labels,
                pool.num_classes,
                opts.variance_fraction,
            )?)
        }
    })
}

fn class_counts(predicted: &[usize], selected_pos: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &p in selected_pos {
        if let Some(c) = counts.get_mut(predicted[p]) {
            *c += 1;
        }
    }
    counts
}

/// Scores the candidates `subset` (dataset indices) and picks `m` of them.
/// Timing covers building the strategy's state, scoring and selection.
pub fn acquire<R: Rng + ?Sized>(
    kind: StrategyKind,
    model: &Mlp,
    pool: &PoolView<'_>,
    subset: &[usize],
    m: usize,
    opts: &AcquisitionOptions,
    rng: &mut R,
) -> Result<AcquisitionResult> {
    if subset.is_empty() {
        return Err(invalid("empty candidate subset"));
    }
    if m == 0 {
        return Err(invalid("acquisition size must be >= 1"));
    }
    let m = m.min(subset.len());
    let k = pool.num_classes;

    let start = Instant::now();
    let prepared = prepare(kind, model, pool, opts)?;
    let x = pool.features.select(Axis(0), subset);
    let mut missing = 0;
    let (positions, scores, predicted) = match (kind, &prepared) {
        (StrategyKind::Random, _) => {
            let mut pos = index::sample(rng, subset.len(), m).into_vec();
            pos.sort_unstable();
            (pos, Vec::new(), None)
        }
        (StrategyKind::Entropy, _) => {
            let probs = model.predict_proba(x.view())?;
            let scores = score_entropy(probs.view())?;
            let pred = argmax_rows(probs.view());
            (select_top(&scores, m, Direction::HighestFirst), scores, Some(pred))
        }
        (StrategyKind::Bald, _) => {
            let mc = model.mc_dropout_probs(x.view(), opts.mc_passes, rng)?;
            let scores = score_bald(mc.view())?;
            let mean = mc.mean_axis(Axis(0)).expect("passes >= 1");
            let pred = argmax_rows(mean.view());
            (select_top(&scores, m, Direction::HighestFirst), scores, Some(pred))
        }
        (StrategyKind::Coreset, Prepared::Embeddings(labeled)) => {
            let out = model.forward(x.view())?;
            let pos = select_coreset_kcenter(out.embeddings.view(), labeled.view(), m)?;
            let scores = linalg::pairwise_min_distances(out.embeddings.view(), labeled.view())?;
            (pos, scores, Some(argmax_rows(out.logits.view())))
        }
        (StrategyKind::FeatureSim | StrategyKind::Scal, Prepared::Bank(bank)) => {
            let out = model.forward(x.view())?;
            let pred = argmax_rows(out.logits.view());
            let (scores, miss) = score_feature_similarity_batch(bank, out.embeddings.view(), &pred);
            missing = miss;
            let pos = if opts.balanced {
                select_balanced_per_class(&scores, &pred, m, k, Direction::LowestFirst)?
            } else {
                select_top(&scores, m, Direction::LowestFirst)
            };
            (pos, scores, Some(pred))
        }
        (StrategyKind::Dfm, Prepared::Pca(pca)) => {
            let out = model.forward(x.view())?;
            let pred = argmax_rows(out.logits.view());
            let (scores, miss) = score_dfm_batch(pca, out.embeddings.view(), &pred)?;
            missing = miss;
            let pos = if opts.balanced {
                select_balanced_per_class(&scores, &pred, m, k, Direction::HighestFirst)?
            } else {
                select_top(&scores, m, Direction::HighestFirst)
            };
            (pos, scores, Some(pred))
        }
        _ => unreachable!("prepare() matches the strategy kind"),
    };
    let query_time_ns = start.elapsed().as_nanos() as u64;

    let predicted = match predicted {
        Some(p) => p,
        None => argmax_rows(model.forward(x.view())?.logits.view()),
    };
    Ok(AcquisitionResult {
        selected: positions.iter().map(|&p| subset[p]).collect(),
        class_counts: class_counts(&predicted, &positions, k),
        scores,
        query_time_ns,
        missing_class_warnings: missing,
    })
}

/// Scores `x` with the strategy's own scoring function, oriented so that
/// higher means more novel. `None` for Random, which has no score.
pub fn ood_scores<R: Rng + ?Sized>(
    kind: StrategyKind,
    model: &Mlp,
    pool: &PoolView<'_>,
    x: ArrayView2<'_, f64>,
    opts: &AcquisitionOptions,
    rng: &mut R,
) -> Result<Option<Vec<f64>>> {
    let prepared = prepare(kind, model, pool, opts)?;
    Ok(match (kind, &prepared) {
        (StrategyKind::Random, _) => None,
        (StrategyKind::Entropy, _) => {
            let logits = model.forward(x)?.logits;
            Some(score_entropy(softmax(logits.view()).view())?)
        }
        (StrategyKind::Bald, _) => Some(score_bald(model.mc_dropout_probs(x, opts.mc_passes, rng)?.view())?),
        (StrategyKind::Coreset, Prepared::Embeddings(labeled)) => {
            let e = model.forward(x)?.embeddings;
            Some(linalg::pairwise_min_distances(e.view(), labeled.view())?)
        }
        (StrategyKind::FeatureSim | StrategyKind::Scal, Prepared::Bank(bank)) => {
            let out = model.forward(x)?;
            let pred = argmax_rows(out.logits.view());
            let (s, _) = score_feature_similarity_batch(bank, out.embeddings.view(), &pred);
            Some(s.into_iter().map(|v| -v).collect())
        }
        (StrategyKind::Dfm, Prepared::Pca(pca)) => {
            let out = model.forward(x)?;
            let pred = argmax_rows(out.logits.view());
            Some(score_dfm_batch(pca, out.embeddings.view(), &pred)?.0)
        }
        _ => unreachable!("prepare() matches the strategy kind"),
    })
}
