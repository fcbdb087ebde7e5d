use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::lambda::LambdaVector;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretext,
    Scan,
    Selflabel,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretext => "pretext",
            Stage::Scan => "scan",
            Stage::Selflabel => "selflabel",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Stage::Pretext => 0,
            Stage::Scan => 1,
            Stage::Selflabel => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Stage::Pretext),
            1 => Some(Stage::Scan),
            2 => Some(Stage::Selflabel),
            _ => None,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one training stage reads.
///
/// `model` and `augment_sigma` matter only to the pretext stage, and
/// `update_encoder` only to the later ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: LambdaVector,
    pub seed: u64,
    /// Log every this many epochs; the last epoch is always logged.
    pub log_every: usize,
    pub update_encoder: bool,
    pub augment_sigma: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1".into());
        }
        if !self.lambda.is_finite() {
            return bad(format!("lambda must be finite, got {}", self.lambda));
        }
        if !(self.augment_sigma >= 0.0 && self.augment_sigma.is_finite()) {
            return bad(format!(
                "augment_sigma must be non-negative, got {}",
                self.augment_sigma
            ));
        }
        self.model
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Canonical JSON form; the checkpoint digest is taken over these bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_json().as_bytes()).into()
    }
}

/// Epochs, batch size, step size and log cadence of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub log_every: usize,
}

/// Shared settings for every ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub pretext: StageParams,
    pub scan: StageParams,
    /// `None` stops each member after the clustering stage.
    pub selflabel: Option<StageParams>,
    pub neighbors_k: usize,
    pub augment_sigma: f64,
    pub update_encoder: bool,
    pub confidence_threshold: f64,
    pub seed: u64,
}

impl PipelineConfig {
    /// Defaults sized for the default synthetic dataset.
    pub fn new(input_dim: usize, n_clusters: usize, augment_sigma: f64) -> Self {
        Self {
            model: ModelConfig::new(input_dim, n_clusters),
            pretext: StageParams {
                epochs: 10,
                batch_size: 64,
                learning_rate: 0.05,
                log_every: 1,
            },
            scan: StageParams {
                epochs: 60,
                batch_size: 16,
                learning_rate: 0.05,
                log_every: 5,
            },
            selflabel: Some(StageParams {
                epochs: 10,
                batch_size: 64,
                learning_rate: 0.05,
                log_every: 5,
            }),
            neighbors_k: 5,
            augment_sigma,
            update_encoder: false,
            confidence_threshold: 0.9,
            seed: 0,
        }
    }

    pub fn stage_config(&self, stage: Stage, lambda: LambdaVector) -> TrainConfig {
        let params = match stage {
            Stage::Pretext => self.pretext,
            Stage::Scan => self.scan,
            Stage::Selflabel => self.selflabel.unwrap_or(self.scan),
        };
        TrainConfig {
            stage,
            epochs: params.epochs,
            batch_size: params.batch_size,
            learning_rate: params.learning_rate,
            lambda,
            seed: self.seed,
            log_every: params.log_every,
            update_encoder: self.update_encoder,
            augment_sigma: self.augment_sigma,
            model: self.model.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let probe = LambdaVector::baseline();
        self.stage_config(Stage::Pretext, probe).validate()?;
        self.stage_config(Stage::Scan, probe).validate()?;
        if self.selflabel.is_some() {
            self.stage_config(Stage::Selflabel, probe).validate()?;
        }
        if self.neighbors_k == 0 {
            return Err(PipelineError::Config(
                "neighbors_k must be at least 1".into(),
            ));
        }
        check_threshold(self.confidence_threshold)
    }
}

pub(crate) fn check_threshold(t: f64) -> Result<(), PipelineError> {
    if t > 0.5 && t < 1.0 {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "confidence threshold must lie strictly between 0.5 and 1, got {t}"
        )))
    }
}

/// Lambda vectors of an ensemble plus the settings they share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<LambdaVector>,
    pub pipeline: PipelineConfig,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.members.is_empty() {
            return Err(PipelineError::Config(
                "an ensemble needs at least one member".into(),
            ));
        }
        if let Some(bad) = self.members.iter().find(|l| !l.is_finite()) {
            return Err(PipelineError::Config(format!("non-finite lambda {bad}")));
        }
        self.pipeline.validate()
    }
}
