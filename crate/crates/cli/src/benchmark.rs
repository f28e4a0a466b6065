//! `benchmark-query`: scoring plus selection time per strategy on one fixed
//! trained model and candidate subset, relative to Entropy.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scal_core::active_loop::{train_fresh, Stat};
use scal_core::data::{draw_query_subset, draw_seed_set, PoolState};
use scal_core::nn::LossKind;
use scal_core::strategies::{acquire, PoolView, StrategyKind};

use crate::config::{Datasets, ExperimentConfig, Overrides};
use crate::{finish_output, start_output, write_json, CliError};

pub const BENCHMARK_CSV: &str = "benchmark.csv";
pub const BENCHMARK_JSON: &str = "benchmark.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub strategy: StrategyKind,
    pub repetitions: usize,
    pub mean_ns: f64,
    pub stddev_ns: Option<f64>,
    pub relative_to_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub candidates: usize,
    pub labeled: usize,
    pub acquisition_size: usize,
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkReport {
    pub fn row(&self, kind: StrategyKind) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.strategy == kind)
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "{} candidates, {} labeled, M = {}\n{:<12} {:>14} {:>10}\n",
            self.candidates, self.labeled, self.acquisition_size, "strategy", "mean ms", "relative"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>14.3} {:>10.3}\n",
                r.strategy.as_str(),
                r.mean_ns / 1e6,
                r.relative_to_entropy
            ));
        }
        out
    }
}

pub fn benchmark_query(config_path: &Path, overrides: &Overrides) -> Result<BenchmarkReport, CliError> {
    let cfg = ExperimentConfig::load(config_path)?.apply(overrides)?;
    let report = benchmark_config(&cfg)?;
    let marker = start_output(&cfg.output_dir)?;
    write_report(&cfg.output_dir, &report)?;
    finish_output(&marker)?;
    Ok(report)
}

/// Measures without writing anything.
pub fn benchmark_config(cfg: &ExperimentConfig) -> Result<BenchmarkReport, CliError> {
    cfg.validate()?;
    let data = Datasets::build(cfg)?;
    let pool_data = &data.pool;
    let k = pool_data.num_classes();
    let settings = &cfg.benchmark;
    let mut kinds = settings.strategies.clone().unwrap_or_else(|| cfg.strategies.clone());
    if !kinds.contains(&StrategyKind::Entropy) {
        kinds.insert(0, StrategyKind::Entropy);
    }

    let labeled_size = settings.labeled_size.min(pool_data.len().saturating_sub(1));
    if labeled_size == 0 {
        return Err(CliError::Runtime("pool too small to benchmark".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let labeled = draw_seed_set(pool_data.labels(), k, labeled_size, false, &mut rng)?;
    let mut state = PoolState::new(pool_data.len());
    state.acquire(&labeled)?;
    let subset_size = settings.subset_size.unwrap_or(cfg.subset_size);
    let subset = draw_query_subset(&state, subset_size, &mut rng)?;
    if subset.len() < subset_size {
        log::warn!(
            "only {} unlabeled candidates for a subset of {subset_size}",
            subset.len()
        );
    }
    let (x, y) = pool_data.select(state.labeled());

    let base = cfg.loop_config(StrategyKind::Entropy);
    let needs = |loss: LossKind| kinds.iter().any(|s| s.loss() == loss);
    let ce_model = if needs(LossKind::CrossEntropy) {
        Some(train_fresh(&base, StrategyKind::Entropy, x.view(), &y, k, cfg.seed, 0)?.0)
    } else {
        None
    };
    let con_model = if needs(LossKind::SupervisedContrastive) {
        Some(train_fresh(&base, StrategyKind::Scal, x.view(), &y, k, cfg.seed, 0)?.0)
    } else {
        None
    };

    let view = PoolView {
        features: pool_data.features(),
        labeled: state.labeled(),
        labeled_labels: &y,
        num_classes: k,
    };
    let mut means = Vec::with_capacity(kinds.len());
    for &kind in &kinds {
        let model = match kind.loss() {
            LossKind::CrossEntropy => ce_model.as_ref(),
            LossKind::SupervisedContrastive => con_model.as_ref(),
        }
        .expect("model trained for every loss in use");
        let mut qrng = ChaCha8Rng::seed_from_u64(cfg.seed);
        // Warm-up, discarded.
        acquire(
            kind,
            model,
            &view,
            &subset,
            cfg.acquisition_size,
            &cfg.acquisition,
            &mut qrng,
        )?;
        let times: Vec<f64> = (0..settings.repetitions)
            .map(|_| {
                acquire(
                    kind,
                    model,
                    &view,
                    &subset,
                    cfg.acquisition_size,
                    &cfg.acquisition,
                    &mut qrng,
                )
                .map(|r| r.query_time_ns as f64)
            })
            .collect::<Result<_, _>>()?;
        let stat = Stat::of(&times).expect("repetitions >= 1");
        log::info!("{kind}: {:.3} ms", stat.mean / 1e6);
        means.push((kind, stat));
    }
    let entropy = means
        .iter()
        .find(|(k, _)| *k == StrategyKind::Entropy)
        .map(|(_, s)| s.mean)
        .expect("entropy always measured");
    let rows = means
        .into_iter()
        .map(|(strategy, s)| BenchmarkRow {
            strategy,
            repetitions: settings.repetitions,
            mean_ns: s.mean,
            stddev_ns: s.stddev,
            relative_to_entropy: s.mean / entropy,
        })
        .collect();
    Ok(BenchmarkReport {
        candidates: subset.len(),
        labeled: labeled.len(),
        acquisition_size: cfg.acquisition_size.min(subset.len()),
        rows,
    })
}

fn write_report(dir: &Path, report: &BenchmarkReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join(BENCHMARK_CSV))?;
    w.write_record(["strategy", "repetitions", "mean_ns", "stddev_ns", "relative_to_entropy"])?;
    for r in &report.rows {
        w.write_record([
            r.strategy.to_string(),
            r.repetitions.to_string(),
            r.mean_ns.to_string(),
            crate::fmt_opt(r.stddev_ns),
            r.relative_to_entropy.to_string(),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join(BENCHMARK_JSON), report)
}
