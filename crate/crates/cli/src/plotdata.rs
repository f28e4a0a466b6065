//! `emit-plotdata`: long-format CSVs, one per figure family, built from a
//! run's `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::run::{SummaryFile, SUMMARY_FILE};
use crate::{fmt_opt, CliError};

pub const PLOT_COLUMNS: [&str; 6] = ["figure", "strategy", "cycle", "labeled_count", "mean", "stddev"];

/// `(file stem, [(figure name, summary metric)])`.
pub const FAMILIES: [(&str, &[(&str, &str)]); 4] = [
    ("accuracy", &[("accuracy-vs-labels", "accuracy")]),
    ("bias", &[("bias-vs-labels", "sampling_bias")]),
    ("ece", &[("ece-vs-labels", "ece")]),
    (
        "robustness",
        &[
            ("shifted-accuracy-vs-labels", "shifted_accuracy"),
            ("shifted-ece-vs-labels", "shifted_ece"),
            ("ood-auroc-vs-labels", "ood_auroc"),
        ],
    ),
];

/// Writes `<family>.csv` into `out` (default `<results>/plotdata`) and
/// returns the written paths. Families without data are skipped.
pub fn emit_plotdata(results: &Path, out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let summary_path = results.join(SUMMARY_FILE);
    if !results.is_dir() {
        return Err(CliError::Runtime(format!(
            "{}: results directory not found",
            results.display()
        )));
    }
    let text =
        fs::read_to_string(&summary_path).map_err(|e| CliError::Runtime(format!("{}: {e}", summary_path.display())))?;
    let summary: SummaryFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Runtime(format!("{}: corrupt summary: {e}", summary_path.display())))?;

    let out = out.map(Path::to_path_buf).unwrap_or_else(|| results.join("plotdata"));
    fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut written = Vec::new();
    for (stem, figures) in FAMILIES {
        let mut rows = Vec::new();
        for &(figure, metric) in figures {
            for s in &summary.strategies {
                for c in &s.cycles {
                    let Some(stat) = c.metrics.get(metric) else {
                        continue;
                    };
                    let labeled = c
                        .metrics
                        .get("labeled_count")
                        .map(|l| l.mean.to_string())
                        .unwrap_or_default();
                    rows.push([
                        figure.to_string(),
                        s.strategy.to_string(),
                        c.cycle.to_string(),
                        labeled,
                        stat.mean.to_string(),
                        fmt_opt(stat.stddev),
                    ]);
                }
            }
        }
        if rows.is_empty() {
            log::warn!("no data for the {stem} family; skipped");
            continue;
        }
        let path = out.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(PLOT_COLUMNS)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}
