//! `generate-data`: writes the configured synthetic datasets as CSV.

use std::path::{Path, PathBuf};

use crate::config::{DatasetSource, Datasets, ExperimentConfig, Overrides};
use crate::{finish_output, start_output, CliError};

/// Writes `pool.csv`, `test.csv` and, when configured, `ood.csv` and one
/// `shift_<magnitude>.csv` per shift magnitude.
pub fn generate_data(config_path: &Path, overrides: &Overrides) -> Result<Vec<PathBuf>, CliError> {
    let cfg = ExperimentConfig::load(config_path)?.apply(overrides)?;
    generate_config(&cfg)
}

pub fn generate_config(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    if !matches!(cfg.dataset, DatasetSource::Synthetic { .. }) {
        return Err(CliError::Config("generate-data needs a synthetic dataset".into()));
    }
    let data = Datasets::build(cfg)?;
    let dir = &cfg.output_dir;
    let marker = start_output(dir)?;
    let mut written = Vec::new();
    let mut save = |name: String, ds: &scal_core::FeatureDataset| -> Result<(), CliError> {
        let path = dir.join(name);
        ds.write_csv(&path)?;
        written.push(path);
        Ok(())
    };
    save("pool.csv".into(), &data.pool)?;
    save("test.csv".into(), &data.test)?;
    if let Some(ood) = &data.ood {
        save("ood.csv".into(), ood)?;
    }
    for (m, ds) in &data.shifted {
        save(format!("shift_{m}.csv"), ds)?;
    }
    finish_output(&marker)?;
    Ok(written)
}
