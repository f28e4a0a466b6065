//! Pool-based active learning over fixed feature vectors: query strategies,
//! a small MLP trainer with cross-entropy or supervised contrastive loss, and
//! sampling-bias and calibration metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod active_loop;
pub mod data;
pub mod error;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod strategies;

pub use active_loop::{run_experiment, run_trial, CycleRecord, EvalSets, LoopConfig, ModelSpec, TrialOutcome};
pub use data::{FeatureDataset, PoolState};
pub use error::{Error, Result};
pub use nn::{Mlp, MlpConfig, TrainConfig};
pub use strategies::StrategyKind;
