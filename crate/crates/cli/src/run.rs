//! `run`: every (strategy, trial) cell of an experiment, persisted as
//! `cycles.csv`, `summary.json` and `manifest.json`.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scal_core::active_loop::{run_trial, summarize, StrategySummary, TrialOutcome};
use scal_core::strategies::StrategyKind;

use crate::config::{Datasets, ExperimentConfig, Overrides};
use crate::{finish_output, fmt_opt, start_output, thread_pool, write_json, CliError};

pub const CYCLES_FILE: &str = "cycles.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Column order of `cycles.csv`. Only `query_time_ns` varies between
/// identical runs.
pub const CYCLE_COLUMNS: [&str; 16] = [
    "strategy",
    "trial",
    "seed",
    "cycle",
    "labeled_count",
    "accuracy",
    "ece",
    "brier",
    "sampling_bias",
    "class_counts",
    "shifted_accuracy",
    "shifted_ece",
    "ood_auroc",
    "final_train_loss",
    "truncated",
    "query_time_ns",
];

pub const TIMING_COLUMNS: [&str; 1] = ["query_time_ns"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub strategy: StrategyKind,
    pub trial: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u128,
    pub total_seconds: f64,
    pub cells: Vec<CellTiming>,
}

/// Everything needed to re-execute a run: `config` is the effective
/// configuration after command-line overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: ExperimentConfig,
    pub config_sha256: String,
    pub base_seed: u64,
    pub trial_seeds: Vec<u64>,
    pub threads: usize,
    pub timings: Timings,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTrial {
    pub strategy: StrategyKind,
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config_sha256: String,
    pub strategies: Vec<StrategySummary>,
    pub truncated: Vec<TruncatedTrial>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<StrategySummary>,
    pub manifest: Manifest,
}

pub fn run(config_path: &Path, overrides: &Overrides) -> Result<RunOutput, CliError> {
    let cfg = ExperimentConfig::load(config_path)?.apply(overrides)?;
    run_config(&cfg, overrides.threads)
}

pub fn run_config(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RunOutput, CliError> {
    cfg.validate()?;
    let pool = thread_pool(threads)?;
    let dir = cfg.output_dir.clone();
    let marker = start_output(&dir)?;
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let start = Instant::now();

    let data = Datasets::build(cfg)?;
    let needed = cfg.acquisition_size * cfg.cycles;
    if data.pool.len() < needed {
        log::warn!(
            "pool holds {} samples but {} cycles of {} need {needed}; runs will be truncated",
            data.pool.len(),
            cfg.cycles,
            cfg.acquisition_size
        );
    }
    let eval = data.eval_sets();
    let seeds = cfg.trial_seeds();
    let cells: Vec<(StrategyKind, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();

    let results: Vec<(TrialOutcome, f64)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, trial)| {
                let t0 = Instant::now();
                let outcome = run_trial(&cfg.loop_config(strategy), &data.pool, &eval, trial, seeds[trial])
                    .map_err(|e| CliError::Runtime(format!("{strategy} trial {trial}: {e}")))?;
                let secs = t0.elapsed().as_secs_f64();
                log::info!("{strategy} trial {trial} done in {secs:.2}s");
                Ok((outcome, secs))
            })
            .collect::<Result<_, CliError>>()
    })?;

    let trials: Vec<TrialOutcome> = results.iter().map(|(o, _)| o.clone()).collect();
    let summary = summarize(&trials);
    let hash = cfg.hash();

    write_cycles(&dir.join(CYCLES_FILE), &trials)?;
    write_json(
        &dir.join(SUMMARY_FILE),
        &SummaryFile {
            config_sha256: hash.clone(),
            strategies: summary.clone(),
            truncated: trials
                .iter()
                .filter(|t| t.truncated)
                .map(|t| TruncatedTrial {
                    strategy: t.strategy,
                    trial: t.trial,
                })
                .collect(),
        },
    )?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "run".to_string(),
        config: cfg.clone(),
        config_sha256: hash,
        base_seed: cfg.seed,
        trial_seeds: seeds,
        threads: pool.current_num_threads(),
        timings: Timings {
            started_unix_ms,
            total_seconds: start.elapsed().as_secs_f64(),
            cells: results
                .iter()
                .map(|(o, s)| CellTiming {
                    strategy: o.strategy,
                    trial: o.trial,
                    seconds: *s,
                })
                .collect(),
        },
        outputs: vec![CYCLES_FILE.into(), SUMMARY_FILE.into(), MANIFEST_FILE.into()],
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    finish_output(&marker)?;
    Ok(RunOutput {
        dir,
        trials,
        summary,
        manifest,
    })
}

fn write_cycles(path: &Path, trials: &[TrialOutcome]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CYCLE_COLUMNS)?;
    for t in trials {
        for r in &t.records {
            let counts: Vec<String> = r.class_counts.iter().map(usize::to_string).collect();
            w.write_record([
                t.strategy.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                r.cycle.to_string(),
                r.labeled_count.to_string(),
                r.accuracy.to_string(),
                r.ece.to_string(),
                r.brier.to_string(),
                r.sampling_bias.to_string(),
                counts.join(";"),
                fmt_opt(r.shifted_accuracy),
                fmt_opt(r.shifted_ece),
                fmt_opt(r.ood_auroc),
                r.final_train_loss.to_string(),
                t.truncated.to_string(),
                r.query_time_ns.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
