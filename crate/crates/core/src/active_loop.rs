//! The acquisition loop: seed labeling, then train -> evaluate -> draw a
//! candidate subset -> score -> acquire, one [`CycleRecord`] per cycle.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{draw_query_subset, draw_seed_set, FeatureDataset, PoolState};
use crate::error::{invalid, Result};
use crate::metrics::{self, LabelHistogram};
use crate::nn::{self, argmax_rows, Activation, Mlp, MlpConfig, TrainConfig};
use crate::strategies::{self, AcquisitionOptions, PoolView, StrategyKind};

/// Architecture knobs; input and class counts come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub dropout: f64,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            embedding_dim: 32,
            dropout: 0.2,
            activation: Activation::Relu,
        }
    }
}

impl ModelSpec {
    pub fn mlp_config(&self, input_dim: usize, num_classes: usize) -> MlpConfig {
        MlpConfig {
            input_dim,
            hidden: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
            num_classes,
            dropout: self.dropout,
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Samples acquired per cycle (also the seed-set size).
    pub acquisition_size: usize,
    pub cycles: usize,
    /// Size of the random candidate subset drawn from the unlabeled pool.
    pub subset_size: usize,
    pub strategy: StrategyKind,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub acquisition: AcquisitionOptions,
    /// Class-stratified seed set instead of a uniform draw.
    #[serde(default)]
    pub stratified_seed: bool,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
}

fn default_ece_bins() -> usize {
    metrics::DEFAULT_ECE_BINS
}

fn default_trials() -> usize {
    5
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.acquisition_size == 0 {
            return Err(invalid("acquisition_size must be >= 1"));
        }
        if self.cycles == 0 {
            return Err(invalid("cycles must be >= 1"));
        }
        if self.subset_size == 0 {
            return Err(invalid("subset_size must be >= 1"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.ece_bins == 0 {
            return Err(invalid("ece_bins must be >= 1"));
        }
        if self.subset_size < self.acquisition_size {
            log::warn!(
                "subset_size {} < acquisition_size {}; acquisitions are clamped",
                self.subset_size,
                self.acquisition_size
            );
        }
        self.train.validate()?;
        if !(self.acquisition.variance_fraction > 0.0 && self.acquisition.variance_fraction <= 1.0) {
            return Err(invalid("variance_fraction must be in (0, 1]"));
        }
        if self.acquisition.mc_passes < 2 {
            return Err(invalid("mc_passes must be >= 2"));
        }
        Ok(())
    }
}

/// Held-out data the loop evaluates on after every cycle.
#[derive(Debug, Clone)]
pub struct EvalSets {
    pub test: FeatureDataset,
    pub shifted: Option<FeatureDataset>,
    pub ood: Option<FeatureDataset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub labeled_count: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub brier: f64,
    pub sampling_bias: f64,
    /// True-label counts of the labeled set.
    pub class_counts: Vec<usize>,
    /// Absent for cycle 0, which only trains on the seed set.
    pub query_time_ns: Option<u64>,
    pub shifted_accuracy: Option<f64>,
    pub shifted_ece: Option<f64>,
    pub ood_auroc: Option<f64>,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub strategy: StrategyKind,
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<CycleRecord>,
    /// Every labeled index in acquisition order, seed set first.
    pub labeled_order: Vec<usize>,
    /// The pool ran out before every cycle acquired a full batch.
    pub truncated: bool,
}

/// Independent RNG streams derived from one trial seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    SeedSet = 1,
    Subset = 2,
    Init = 3,
    Train = 4,
    Acquire = 5,
    Eval = 6,
}

fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}

/// Label provider for the simulation: reveals ground truth only for indices
/// that have been acquired.
struct Oracle<'a> {
    labels: &'a [usize],
}

impl Oracle<'_> {
    fn reveal(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }
}

/// Accuracy, ECE and Brier of `model` on `ds`.
pub fn evaluate(model: &Mlp, ds: &FeatureDataset, ece_bins: usize) -> Result<(f64, f64, f64)> {
    let probs = model.predict_proba(ds.features())?;
    let pred = argmax_rows(probs.view());
    Ok((
        metrics::accuracy(&pred, ds.labels())?,
        metrics::ece_from_probs(probs.view(), ds.labels(), ece_bins)?,
        metrics::brier(probs.view(), ds.labels())?,
    ))
}

/// AUROC of in-distribution (`test`) versus `ood` rows under the strategy's
/// own scoring function, or `None` for strategies without one.
pub fn ood_auroc(
    kind: StrategyKind,
    model: &Mlp,
    pool: &PoolView<'_>,
    test: ArrayView2<'_, f64>,
    ood: ArrayView2<'_, f64>,
    opts: &AcquisitionOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    let Some(inside) = strategies::ood_scores(kind, model, pool, test, opts, rng)? else {
        return Ok(None);
    };
    let outside = strategies::ood_scores(kind, model, pool, ood, opts, rng)?.expect("same strategy");
    Ok(Some(metrics::auroc(&inside, &outside)?))
}

/// Fresh model trained from scratch on the labeled rows.
pub fn train_fresh(
    config: &LoopConfig,
    kind: StrategyKind,
    x: ArrayView2<'_, f64>,
    y: &[usize],
    num_classes: usize,
    seed: u64,
    cycle: u64,
) -> Result<(Mlp, f64)> {
    let mlp_cfg = config.model.mlp_config(x.ncols(), num_classes);
    let mut init_rng = stream_rng(seed, Stream::Init, cycle);
    let mut model = Mlp::new(mlp_cfg, &mut init_rng)?;
    let train_cfg = TrainConfig {
        loss: kind.loss(),
        seed,
        ..config.train.clone()
    };
    let mut train_rng = stream_rng(seed, Stream::Train, cycle);
    let report = nn::train(&mut model, x, y, &train_cfg, &mut train_rng)?;
    Ok((model, report.loss.last().copied().unwrap_or(f64::NAN)))
}

/// One active-learning run of `config.strategy` over `pool_data`.
pub fn run_trial(
    config: &LoopConfig,
    pool_data: &FeatureDataset,
    eval: &EvalSets,
    trial: usize,
    seed: u64,
) -> Result<TrialOutcome> {
    run_trial_with_model(config, pool_data, eval, trial, seed).map(|(outcome, _)| outcome)
}

/// [`run_trial`], also returning the model trained in the last cycle.
pub fn run_trial_with_model(
    config: &LoopConfig,
    pool_data: &FeatureDataset,
    eval: &EvalSets,
    trial: usize,
    seed: u64,
) -> Result<(TrialOutcome, Mlp)> {
    config.validate()?;
    let kind = config.strategy;
    let m = config.acquisition_size;
    let k = pool_data.num_classes();
    if pool_data.len() < m {
        return Err(invalid(format!(
            "pool of {} samples cannot seed {m} labels",
            pool_data.len()
        )));
    }
    for ds in [Some(&eval.test), eval.shifted.as_ref(), eval.ood.as_ref()]
        .into_iter()
        .flatten()
    {
        if ds.dim() != pool_data.dim() {
            return Err(invalid("evaluation data dimension differs from the pool"));
        }
    }
    if eval.test.num_classes() > k || eval.shifted.as_ref().is_some_and(|s| s.num_classes() > k) {
        return Err(invalid("evaluation data has more classes than the pool"));
    }

    let oracle = Oracle {
        labels: pool_data.labels(),
    };
    let mut pool = PoolState::new(pool_data.len());
    let seed_set = draw_seed_set(
        pool_data.labels(),
        k,
        m,
        config.stratified_seed,
        &mut stream_rng(seed, Stream::SeedSet, 0),
    )?;
    pool.acquire(&seed_set)?;
    let mut revealed = oracle.reveal(&seed_set);

    let mut records = Vec::with_capacity(config.cycles);
    let mut truncated = false;
    let mut model: Option<Mlp> = None;
    for cycle in 0..config.cycles {
        let mut query_time_ns = None;
        if let Some(current) = &model {
            if pool.unlabeled().is_empty() {
                truncated = true;
                break;
            }
            let subset = draw_query_subset(
                &pool,
                config.subset_size,
                &mut stream_rng(seed, Stream::Subset, cycle as u64),
            )?;
            let view = PoolView {
                features: pool_data.features(),
                labeled: pool.labeled(),
                labeled_labels: &revealed,
                num_classes: k,
            };
            let result = strategies::acquire(
                kind,
                current,
                &view,
                &subset,
                m,
                &config.acquisition,
                &mut stream_rng(seed, Stream::Acquire, cycle as u64),
            )?;
            pool.acquire(&result.selected)?;
            revealed.extend(oracle.reveal(&result.selected));
            pool.advance_cycle();
            query_time_ns = Some(result.query_time_ns);
            if result.selected.len() < m {
                truncated = true;
            }
        }

        let (x, y) = pool_data.select(pool.labeled());
        debug_assert_eq!(y, revealed);
        let (trained, final_train_loss) = train_fresh(config, kind, x.view(), &revealed, k, seed, cycle as u64)?;

        let (accuracy, ece, brier) = evaluate(&trained, &eval.test, config.ece_bins)?;
        let (shifted_accuracy, shifted_ece) = match &eval.shifted {
            Some(s) => {
                let (a, e, _) = evaluate(&trained, s, config.ece_bins)?;
                (Some(a), Some(e))
            }
            None => (None, None),
        };
        let hist = LabelHistogram::from_labels(&revealed, k);
        let ood_auroc = match &eval.ood {
            Some(o) => {
                let view = PoolView {
                    features: pool_data.features(),
                    labeled: pool.labeled(),
                    labeled_labels: &revealed,
                    num_classes: k,
                };
                ood_auroc(
                    kind,
                    &trained,
                    &view,
                    eval.test.features(),
                    o.features(),
                    &config.acquisition,
                    &mut stream_rng(seed, Stream::Eval, cycle as u64),
                )?
            }
            None => None,
        };
        records.push(CycleRecord {
            cycle,
            labeled_count: pool.labeled().len(),
            accuracy,
            ece,
            brier,
            sampling_bias: metrics::sampling_bias(&hist)?,
            class_counts: hist.counts().to_vec(),
            query_time_ns,
            shifted_accuracy,
            shifted_ece,
            ood_auroc,
            final_train_loss,
        });
        model = Some(trained);
        if truncated {
            break;
        }
    }
    let outcome = TrialOutcome {
        strategy: kind,
        trial,
        seed,
        records,
        labeled_order: pool.labeled().to_vec(),
        truncated,
    };
    Ok((outcome, model.expect("cycles >= 1")))
}

/// Mean and sample standard deviation (absent for a single value).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Self { mean, stddev, n })
    }
}

/// Metric names aggregated per cycle.
pub const SUMMARY_METRICS: [&str; 9] = [
    "labeled_count",
    "accuracy",
    "ece",
    "brier",
    "sampling_bias",
    "query_time_ns",
    "shifted_accuracy",
    "shifted_ece",
    "ood_auroc",
];

fn metric_value(r: &CycleRecord, name: &str) -> Option<f64> {
    match name {
        "labeled_count" => Some(r.labeled_count as f64),
        "accuracy" => Some(r.accuracy),
        "ece" => Some(r.ece),
        "brier" => Some(r.brier),
        "sampling_bias" => Some(r.sampling_bias),
        "query_time_ns" => r.query_time_ns.map(|t| t as f64),
        "shifted_accuracy" => r.shifted_accuracy,
        "shifted_ece" => r.shifted_ece,
        "ood_auroc" => r.ood_auroc,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSummary {
    pub cycle: usize,
    pub metrics: BTreeMap<String, Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: StrategyKind,
    pub trials: usize,
    pub cycles: Vec<CycleSummary>,
    /// Mean query time over every acquisition of every trial.
    pub mean_query_time_ns: Option<f64>,
    /// `mean_query_time_ns` divided by Entropy's, when Entropy ran.
    pub relative_query_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<StrategySummary>,
}

/// Per-strategy, per-cycle aggregation across trials.
pub fn summarize(trials: &[TrialOutcome]) -> Vec<StrategySummary> {
    let mut by_strategy: BTreeMap<StrategyKind, Vec<&TrialOutcome>> = BTreeMap::new();
    for t in trials {
        by_strategy.entry(t.strategy).or_default().push(t);
    }
    let mut out: Vec<StrategySummary> = by_strategy
        .into_iter()
        .map(|(strategy, runs)| {
            let max_cycles = runs.iter().map(|r| r.records.len()).max().unwrap_or(0);
            let cycles = (0..max_cycles)
                .map(|c| {
                    let metrics = SUMMARY_METRICS
                        .iter()
                        .filter_map(|&name| {
                            let values: Vec<f64> = runs
                                .iter()
                                .filter_map(|r| r.records.get(c))
                                .filter_map(|rec| metric_value(rec, name))
                                .collect();
                            Stat::of(&values).map(|s| (name.to_string(), s))
                        })
                        .collect();
                    CycleSummary { cycle: c, metrics }
                })
                .collect();
            let times: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.records.iter().filter_map(|rec| rec.query_time_ns))
                .map(|t| t as f64)
                .collect();
            StrategySummary {
                strategy,
                trials: runs.len(),
                cycles,
                mean_query_time_ns: Stat::of(&times).map(|s| s.mean),
                relative_query_time: None,
            }
        })
        .collect();
    let baseline = out
        .iter()
        .find(|s| s.strategy == StrategyKind::Entropy)
        .and_then(|s| s.mean_query_time_ns);
    if let Some(base) = baseline.filter(|&b| b > 0.0) {
        for s in &mut out {
            s.relative_query_time = s.mean_query_time_ns.map(|t| t / base);
        }
    }
    out
}

/// Runs every `(strategy, trial)` cell; trial `t` uses seed
/// `base_seed + t`. Cells run on the current rayon pool and results come
/// back in `(strategy, trial)` order.
pub fn run_experiment(
    config: &LoopConfig,
    strategies: &[StrategyKind],
    pool_data: &FeatureDataset,
    eval: &EvalSets,
) -> Result<ExperimentResult> {
    config.validate()?;
    if strategies.is_empty() {
        return Err(invalid("no strategies to run"));
    }
    let cells: Vec<(StrategyKind, usize)> = strategies
        .iter()
        .flat_map(|&s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let trials = cells
        .par_iter()
        .map(|&(strategy, t)| {
            let cfg = LoopConfig {
                strategy,
                ..config.clone()
            };
            run_trial(&cfg, pool_data, eval, t, config.base_seed.wrapping_add(t as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&trials);
    Ok(ExperimentResult { trials, summary })
}
