//! Run records: a serialized account of one training run that, together
//! with the dataset, fully determines a rerun. Wall time is reported on
//! stdout but deliberately kept out of the record so that fixed-seed reruns
//! serialize byte-identically.

use crate::config::TrainConfig;
use crate::losses::LossBreakdown;
use crate::metrics::MetricReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: LossBreakdown,
    /// Samples skipped because their target was CTC-infeasible.
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub final_train: Option<MetricReport>,
    pub final_dev: Option<MetricReport>,
}

impl RunRecord {
    pub fn to_json(&self) -> crate::Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
