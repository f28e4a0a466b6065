//! `eval-robustness`: runs the loop, then scores the final model of every
//! trial on the OOD set and on the test set at every shift magnitude.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scal_core::active_loop::{evaluate, run_trial_with_model, Stat};
use scal_core::strategies::StrategyKind;

use crate::config::{Datasets, ExperimentConfig, Overrides};
use crate::{finish_output, fmt_opt, start_output, thread_pool, write_json, CliError};

pub const SHIFT_CSV: &str = "robustness_shift.csv";
pub const OOD_CSV: &str = "robustness_ood.csv";
pub const ROBUSTNESS_JSON: &str = "robustness.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub strategy: StrategyKind,
    pub trial: usize,
    pub magnitude: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub brier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub strategy: StrategyKind,
    pub trial: usize,
    /// Absent for Random, which has no score.
    pub auroc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub magnitude: f64,
    pub accuracy: Stat,
    pub ece: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRobustness {
    pub strategy: StrategyKind,
    pub clean_accuracy: Stat,
    pub clean_ece: Stat,
    pub ood_auroc: Option<Stat>,
    pub shift: Vec<ShiftSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    /// Scores read "higher = more novel" and OOD rows are the positives.
    pub orientation: String,
    pub shift_rows: Vec<ShiftRow>,
    pub ood_rows: Vec<OodRow>,
    pub clean_rows: Vec<ShiftRow>,
    pub strategies: Vec<StrategyRobustness>,
}

impl RobustnessReport {
    pub fn strategy(&self, kind: StrategyKind) -> Option<&StrategyRobustness> {
        self.strategies.iter().find(|s| s.strategy == kind)
    }
}

pub fn eval_robustness(config_path: &Path, overrides: &Overrides) -> Result<RobustnessReport, CliError> {
    let cfg = ExperimentConfig::load(config_path)?.apply(overrides)?;
    let marker = start_output(&cfg.output_dir)?;
    let report = robustness_config(&cfg, overrides.threads)?;
    write_report(&cfg.output_dir, &report)?;
    finish_output(&marker)?;
    Ok(report)
}

/// Computes the report without writing anything.
pub fn robustness_config(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<RobustnessReport, CliError> {
    cfg.validate()?;
    if cfg.shift.is_none() && cfg.ood.is_none() {
        return Err(CliError::Config(
            "eval-robustness needs a `shift` or `ood` section".into(),
        ));
    }
    let pool = thread_pool(threads)?;
    let data = Datasets::build(cfg)?;
    let eval = data.eval_sets();
    let seeds = cfg.trial_seeds();
    let cells: Vec<(StrategyKind, usize)> = cfg
        .strategies
        .iter()
        .flat_map(|&s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();

    type Cell = (ShiftRow, Vec<ShiftRow>, OodRow);
    let per_cell: Vec<Cell> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(strategy, trial)| -> Result<Cell, CliError> {
                let (outcome, model) =
                    run_trial_with_model(&cfg.loop_config(strategy), &data.pool, &eval, trial, seeds[trial])
                        .map_err(|e| CliError::Runtime(format!("{strategy} trial {trial}: {e}")))?;
                let (accuracy, ece, brier) = evaluate(&model, &data.test, cfg.ece_bins)?;
                let clean = ShiftRow {
                    strategy,
                    trial,
                    magnitude: 0.0,
                    accuracy,
                    ece,
                    brier,
                };
                let shifted = data
                    .shifted
                    .iter()
                    .map(|(m, ds)| {
                        let (accuracy, ece, brier) = evaluate(&model, ds, cfg.ece_bins)?;
                        Ok(ShiftRow {
                            strategy,
                            trial,
                            magnitude: *m,
                            accuracy,
                            ece,
                            brier,
                        })
                    })
                    .collect::<Result<_, CliError>>()?;
                let auroc = outcome.records.last().and_then(|r| r.ood_auroc);
                Ok((clean, shifted, OodRow { strategy, trial, auroc }))
            })
            .collect::<Result<Vec<Cell>, CliError>>()
    })?;

    let mut clean_rows = Vec::new();
    let mut shift_rows = Vec::new();
    let mut ood_rows = Vec::new();
    for (c, s, o) in per_cell {
        clean_rows.push(c);
        shift_rows.extend(s);
        if data.ood.is_some() {
            ood_rows.push(o);
        }
    }

    let strategies = cfg
        .strategies
        .iter()
        .map(|&kind| {
            let clean: Vec<&ShiftRow> = clean_rows.iter().filter(|r| r.strategy == kind).collect();
            let stat = |v: Vec<f64>| Stat::of(&v).expect("trials >= 1");
            let aurocs: Vec<f64> = ood_rows
                .iter()
                .filter(|r| r.strategy == kind)
                .filter_map(|r| r.auroc)
                .collect();
            StrategyRobustness {
                strategy: kind,
                clean_accuracy: stat(clean.iter().map(|r| r.accuracy).collect()),
                clean_ece: stat(clean.iter().map(|r| r.ece).collect()),
                ood_auroc: Stat::of(&aurocs),
                shift: data
                    .shifted
                    .iter()
                    .map(|(m, _)| {
                        let rows: Vec<&ShiftRow> = shift_rows
                            .iter()
                            .filter(|r| r.strategy == kind && r.magnitude == *m)
                            .collect();
                        ShiftSummary {
                            magnitude: *m,
                            accuracy: stat(rows.iter().map(|r| r.accuracy).collect()),
                            ece: stat(rows.iter().map(|r| r.ece).collect()),
                        }
                    })
                    .collect(),
            }
        })
        .collect();
    Ok(RobustnessReport {
        orientation: "higher score = more novel; OOD samples are the positive class".into(),
        shift_rows,
        ood_rows,
        clean_rows,
        strategies,
    })
}

fn write_report(dir: &Path, report: &RobustnessReport) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(dir.join(SHIFT_CSV))?;
    w.write_record(["strategy", "trial", "magnitude", "accuracy", "ece", "brier"])?;
    for r in &report.shift_rows {
        w.write_record([
            r.strategy.to_string(),
            r.trial.to_string(),
            r.magnitude.to_string(),
            r.accuracy.to_string(),
            r.ece.to_string(),
            r.brier.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(OOD_CSV))?;
    w.write_record(["strategy", "trial", "auroc"])?;
    for r in &report.ood_rows {
        w.write_record([r.strategy.to_string(), r.trial.to_string(), fmt_opt(r.auroc)])?;
    }
    w.flush()?;
    write_json(&dir.join(ROBUSTNESS_JSON), report)
}
