//! Experiment configuration file: one flat JSON object per experiment.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scal_core::active_loop::{EvalSets, LoopConfig, ModelSpec};
use scal_core::data::{
    apply_shift, generate_ood_cluster, generate_synthetic, load_dataset, load_dataset_with_classes, ShiftKind,
    ShiftSpec, SyntheticSpec,
};
use scal_core::metrics::DEFAULT_ECE_BINS;
use scal_core::nn::TrainConfig;
use scal_core::strategies::{AcquisitionOptions, StrategyKind};
use scal_core::FeatureDataset;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub strategies: Vec<StrategyKind>,
    pub acquisition_size: usize,
    pub cycles: usize,
    pub subset_size: usize,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub acquisition: AcquisitionOptions,
    #[serde(default)]
    pub stratified_seed: bool,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Trial `t` runs with seed `seed + t`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shift: Option<ShiftSettings>,
    #[serde(default)]
    pub ood: Option<OodSource>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub benchmark: BenchmarkSettings,
}

fn default_ece_bins() -> usize {
    DEFAULT_ECE_BINS
}

fn default_trials() -> usize {
    5
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic {
        pool: SyntheticSpec,
        /// Per-class test counts; the test set shares the pool's means.
        test_counts: Vec<usize>,
        /// Defaults to the pool seed plus one.
        #[serde(default)]
        test_seed: Option<u64>,
    },
    Csv {
        pool: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSettings {
    pub kind: ShiftKind,
    /// `run` evaluates at the largest; `eval-robustness` sweeps them all.
    pub magnitudes: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OodSource {
    Cluster {
        /// In units of the largest within-class standard deviation.
        distance: f64,
        count: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSettings {
    pub labeled_size: usize,
    /// Candidate subset size; defaults to the loop's `subset_size`.
    pub subset_size: Option<usize>,
    pub repetitions: usize,
    /// Defaults to the experiment's strategy list. Entropy is always added
    /// as the baseline.
    pub strategies: Option<Vec<StrategyKind>>,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            labeled_size: 1000,
            subset_size: None,
            repetitions: 10,
            strategies: None,
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    /// Reads and validates `path`. Relative CSV paths resolve against the
    /// config file's directory and are stored absolute.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) -> Result<(), CliError> {
        let resolve = |p: &mut PathBuf| -> Result<(), CliError> {
            let joined = if p.is_absolute() { p.clone() } else { base.join(&*p) };
            *p = joined
                .canonicalize()
                .map_err(|e| CliError::Config(format!("{}: {e}", joined.display())))?;
            Ok(())
        };
        if let DatasetSource::Csv { pool, test } = &mut self.dataset {
            resolve(pool)?;
            resolve(test)?;
        }
        if let Some(OodSource::Csv { path }) = &mut self.ood {
            resolve(path)?;
        }
        Ok(())
    }

    pub fn apply(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(trials) = o.trials {
            self.trials = trials;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.strategies.is_empty() {
            return bad("strategies: at least one strategy is required".into());
        }
        let mut seen = HashSet::new();
        for s in &self.strategies {
            if !seen.insert(s) {
                return bad(format!("strategies: {s} listed twice"));
            }
        }
        self.loop_config(self.strategies[0])
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model
            .mlp_config(1, 2)
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        match &self.dataset {
            DatasetSource::Synthetic { pool, test_counts, .. } => {
                pool.validate()
                    .map_err(|e| CliError::Config(format!("dataset.synthetic.pool: {e}")))?;
                if test_counts.len() != pool.num_classes || test_counts.contains(&0) {
                    return bad("dataset.synthetic.test_counts: need one positive count per class".into());
                }
            }
            DatasetSource::Csv { .. } => {}
        }
        if let Some(shift) = &self.shift {
            if shift.magnitudes.is_empty() {
                return bad("shift.magnitudes: at least one magnitude is required".into());
            }
            for &m in &shift.magnitudes {
                ShiftSpec {
                    kind: shift.kind,
                    magnitude: m,
                }
                .validate()
                .map_err(|e| CliError::Config(format!("shift: {e}")))?;
            }
        }
        if let Some(OodSource::Cluster { distance, count, .. }) = &self.ood {
            if *distance <= 0.0 || !distance.is_finite() || *count == 0 {
                return bad("ood.cluster: distance must be > 0 and count >= 1".into());
            }
        }
        if self.benchmark.repetitions == 0 || self.benchmark.labeled_size == 0 {
            return bad("benchmark: repetitions and labeled_size must be >= 1".into());
        }
        if self.benchmark.subset_size == Some(0) {
            return bad("benchmark.subset_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn loop_config(&self, strategy: StrategyKind) -> LoopConfig {
        LoopConfig {
            acquisition_size: self.acquisition_size,
            cycles: self.cycles,
            subset_size: self.subset_size,
            strategy,
            model: self.model.clone(),
            train: self.train.clone(),
            acquisition: self.acquisition.clone(),
            stratified_seed: self.stratified_seed,
            ece_bins: self.ece_bins,
            trials: self.trials,
            base_seed: self.seed,
        }
    }

    pub fn trial_seeds(&self) -> Vec<u64> {
        (0..self.trials).map(|t| self.seed.wrapping_add(t as u64)).collect()
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Materialized data for one experiment.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub pool: FeatureDataset,
    pub test: FeatureDataset,
    pub ood: Option<FeatureDataset>,
    /// `(magnitude, shifted test set)` in config order.
    pub shifted: Vec<(f64, FeatureDataset)>,
}

impl Datasets {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let (pool, test) = match &cfg.dataset {
            DatasetSource::Synthetic {
                pool,
                test_counts,
                test_seed,
            } => {
                let test_spec = pool
                    .with_counts(test_counts.clone())
                    .with_seed(test_seed.unwrap_or(pool.seed.wrapping_add(1)));
                (generate_synthetic(pool)?, generate_synthetic(&test_spec)?)
            }
            DatasetSource::Csv { pool, test } => {
                let pool = load_dataset(pool)?;
                let k = pool.num_classes();
                let test = load_dataset_with_classes(test, k)?;
                (pool, test)
            }
        };
        if pool.dim() != test.dim() {
            return Err(CliError::Runtime(format!(
                "pool has {} features but test has {}",
                pool.dim(),
                test.dim()
            )));
        }
        let ood = match &cfg.ood {
            None => None,
            Some(OodSource::Cluster { distance, count, seed }) => {
                Some(generate_ood_cluster(&pool, *distance, *count, *seed)?)
            }
            Some(OodSource::Csv { path }) => Some(load_dataset(path)?),
        };
        let shifted = match &cfg.shift {
            None => Vec::new(),
            Some(s) => s
                .magnitudes
                .iter()
                .map(|&m| {
                    // Same stream per magnitude, so noise patterns only scale.
                    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                    let spec = ShiftSpec {
                        kind: s.kind,
                        magnitude: m,
                    };
                    Ok((m, apply_shift(&test, &spec, &mut rng)?))
                })
                .collect::<Result<_, CliError>>()?,
        };
        Ok(Self {
            pool,
            test,
            ood,
            shifted,
        })
    }

    /// Evaluation sets for the loop: the shifted set is the one at the
    /// largest magnitude.
    pub fn eval_sets(&self) -> EvalSets {
        let shifted = self
            .shifted
            .iter()
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, ds)| ds.clone());
        EvalSets {
            test: self.test.clone(),
            shifted,
            ood: self.ood.clone(),
        }
    }
}
