//! Optimisation, checkpoints, weight transfer, the two-phase training
//! protocol and the experiment grid.

pub mod checkpoint;
pub mod experiment;
pub mod optim;
pub mod schedule;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, Phase};
pub use experiment::{run_experiment, ExperimentConfig, ExperimentContext, MetricsReport, ReportRow};
pub use optim::Adam;
pub use schedule::{early_stop, lr_schedule, PlateauTracker, StopDecision};
pub use train::{
    evaluate, finetune, model_from_checkpoint, transfer_encoder, Aggregation, EvalMetrics, FinetuneOutcome,
};

/// Optimiser and schedule settings for one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            plateau_factor: 0.1,
            plateau_patience: 5,
            early_stop_patience: 12,
            min_delta: 1e-4,
            max_epochs: 100,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must be in (0,1), got {}", self.plateau_factor));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be >= 1".into());
        }
        if !(self.min_delta >= 0.0) {
            return bad(format!("min_delta must be >= 0, got {}", self.min_delta));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { plateau_factor: 1.0, ..Default::default() },
            TrainConfig { plateau_patience: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
        let e = serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 0.01, "bogus": 1}"#);
        assert!(e.is_err());
    }
}
