use rayon::prelude::*;

use super::config::{EnsembleSpec, PipelineConfig, Stage};
use super::train::{
    embed_dataset, train_pretext, train_scan, train_selflabel, MetricRecord, StageRun,
};
use super::{Checkpoint, PipelineError};
use crate::data::{mine_neighbors, HierarchicalDataset, NeighborIndex};
use crate::lambda::LambdaVector;

/// All stages of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct MemberRun {
    pub lambda: LambdaVector,
    pub pretext: Checkpoint,
    pub scan: Checkpoint,
    pub selflabel: Option<Checkpoint>,
    pub metrics: Vec<MetricRecord>,
    pub warnings: Vec<String>,
}

impl MemberRun {
    /// The checkpoint of the last stage that ran.
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.selflabel.as_ref().unwrap_or(&self.scan)
    }
}

/// Per-member outcomes in member order.
#[derive(Debug)]
pub struct EnsembleRun {
    pub members: Vec<Result<MemberRun, PipelineError>>,
}

impl EnsembleRun {
    pub fn succeeded(&self) -> impl Iterator<Item = (usize, &MemberRun)> {
        self.members
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.as_ref().ok().map(|m| (i, m)))
    }
}

/// Runs the clustering and optional self-label stages on top of a finished
/// pretext stage.
pub fn run_member(
    config: &PipelineConfig,
    lambda: LambdaVector,
    dataset: &HierarchicalDataset,
    pretext: &StageRun,
    neighbors: &NeighborIndex,
) -> Result<MemberRun, PipelineError> {
    let scan = train_scan(
        &config.stage_config(Stage::Scan, lambda),
        dataset,
        neighbors,
        &pretext.checkpoint,
    )?;
    let mut metrics = pretext.metrics.clone();
    metrics.extend(scan.metrics);
    let mut warnings = pretext.warnings.clone();
    warnings.extend(scan.warnings);
    let selflabel = match config.selflabel {
        Some(_) => {
            let run = train_selflabel(
                &config.stage_config(Stage::Selflabel, lambda),
                dataset,
                &scan.checkpoint,
                config.confidence_threshold,
            )?;
            metrics.extend(run.metrics);
            warnings.extend(run.warnings);
            (run.checkpoint.stage() == Stage::Selflabel).then_some(run.checkpoint)
        }
        None => None,
    };
    Ok(MemberRun {
        lambda,
        pretext: pretext.checkpoint.clone(),
        scan: scan.checkpoint,
        selflabel,
        metrics,
        warnings,
    })
}

/// Pretext stage plus the neighbor index mined from its embeddings.
pub fn prepare_pretext(
    config: &PipelineConfig,
    lambda: LambdaVector,
    dataset: &HierarchicalDataset,
) -> Result<(StageRun, NeighborIndex), PipelineError> {
    let run = train_pretext(&config.stage_config(Stage::Pretext, lambda), dataset)?;
    let emb = embed_dataset(&run.checkpoint.encoder, dataset)?;
    let neighbors = mine_neighbors(&emb, config.neighbors_k)?;
    Ok((run, neighbors))
}

type PretextOutcome = Result<(StageRun, NeighborIndex), String>;

/// Trains every member, in parallel, sharing one pretext run among members
/// with bitwise-equal `lambda0`.
///
/// A failing member is reported in its slot and the others still run.
pub fn train_ensemble(
    spec: &EnsembleSpec,
    dataset: &HierarchicalDataset,
) -> Result<EnsembleRun, PipelineError> {
    spec.validate()?;
    let config = &spec.pipeline;
    let mut groups: Vec<u64> = spec.members.iter().map(|l| l.lambda0.to_bits()).collect();
    groups.sort_unstable();
    groups.dedup();
    let pretexts: Vec<(u64, PretextOutcome)> = groups
        .par_iter()
        .map(|&bits| {
            let lambda = spec
                .members
                .iter()
                .copied()
                .find(|l| l.lambda0.to_bits() == bits)
                .expect("group comes from a member");
            let shared = LambdaVector {
                lambda1: 0.0,
                lambda2: 0.0,
                lambda3: 0.0,
                ..lambda
            };
            (
                bits,
                prepare_pretext(config, shared, dataset).map_err(|e| e.to_string()),
            )
        })
        .collect();

    let members = spec
        .members
        .par_iter()
        .map(|&lambda| {
            let (_, shared) = pretexts
                .iter()
                .find(|(bits, _)| *bits == lambda.lambda0.to_bits())
                .expect("every lambda0 has a pretext run");
            match shared {
                Ok((pretext, neighbors)) => run_member(config, lambda, dataset, pretext, neighbors),
                Err(e) => Err(PipelineError::PretextFailed(e.clone())),
            }
        })
        .collect();
    Ok(EnsembleRun { members })
}
