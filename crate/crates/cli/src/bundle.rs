use ers_core::losses::EntropyStateRecord;
use ers_core::pipeline::Stage;
use ers_core::EnsembleReport;
use serde::{Deserialize, Serialize};

pub const BUNDLE_FORMAT: &str = "ers-report-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMember {
    pub source: String,
    pub sha256: String,
    pub stage: Stage,
    pub lambda: [f64; 4],
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub source: String,
    pub records: Vec<EntropyStateRecord>,
}

/// Everything `eval` computes, as stored in `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub format: String,
    pub dataset_sha256: String,
    pub checkpoints: Vec<BundleMember>,
    pub report: EnsembleReport,
    pub trajectories: Vec<Trajectory>,
}
