use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{check_threshold, Stage, TrainConfig};
use super::{Checkpoint, PipelineError};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{augment_rows, AugmentationSpec, HierarchicalDataset, NeighborIndex};
use crate::losses::{
    scan_ers_loss, scan_terms_value, simclr_ers_loss, EntropyStateRecord, ScanTermValues,
    PROB_FLOOR,
};
use crate::model::{ClusterHead, EncoderParams, LayerVars};
use crate::rng::derive_seed;

const STREAM_ENCODER: u64 = 1;
const STREAM_HEAD: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_PRETEXT_ORDER: u64 = 4;
const STREAM_SCAN_ORDER: u64 = 5;
const STREAM_SELFLABEL_ORDER: u64 = 6;

/// One logged point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub step: u64,
    /// Mean minibatch objective over the epoch.
    pub loss: f64,
    /// Clustering terms over the full dataset at the end of the epoch.
    pub terms: Option<ScanTermValues>,
}

/// Output of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRun {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricRecord>,
    pub warnings: Vec<String>,
}

fn expect_stage(config: &TrainConfig, stage: Stage) -> Result<(), PipelineError> {
    config.validate()?;
    if config.stage != stage {
        return Err(PipelineError::Config(format!(
            "{stage} trainer called with a {} config",
            config.stage
        )));
    }
    Ok(())
}

fn expect_input(
    stage: Stage,
    expected: Stage,
    input: &Checkpoint,
    digest: &[u8; 32],
) -> Result<(), PipelineError> {
    if input.stage() != expected {
        return Err(PipelineError::StageOrder {
            stage,
            expected,
            found: input.stage(),
        });
    }
    if &input.dataset_digest != digest {
        return Err(PipelineError::DatasetMismatch);
    }
    Ok(())
}

fn logged(config: &TrainConfig, epoch: usize) -> bool {
    (epoch + 1).is_multiple_of(config.log_every) || epoch + 1 == config.epochs
}

fn gather(t: &Tensor, rows: &[usize]) -> Tensor {
    let d = t.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * d);
    for &i in rows {
        data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
    }
    Tensor::from_parts(vec![rows.len(), d], data)
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn check_finite(loss: f64, stage: Stage, epoch: usize) -> Result<(), PipelineError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(PipelineError::Diverged {
            stage,
            epoch,
            detail: format!("loss became {loss}"),
        })
    }
}

/// Unit-norm embeddings of every sample.
pub fn embed_dataset(
    encoder: &EncoderParams,
    dataset: &HierarchicalDataset,
) -> Result<Tensor, PipelineError> {
    Ok(encoder.embed_rows(dataset.samples())?)
}

/// `[n_samples, n_clusters]` cluster probabilities under a checkpoint.
pub fn cluster_probs(
    checkpoint: &Checkpoint,
    dataset: &HierarchicalDataset,
) -> Result<Tensor, PipelineError> {
    let emb = embed_dataset(&checkpoint.encoder, dataset)?;
    Ok(checkpoint.head.probs_rows(&emb)?)
}

/// Clustering terms of a checkpoint over the full dataset.
///
/// Matches the values logged at the checkpoint's final step.
pub fn recompute_terms(
    checkpoint: &Checkpoint,
    dataset: &HierarchicalDataset,
    neighbors: &NeighborIndex,
) -> Result<ScanTermValues, PipelineError> {
    let emb = embed_dataset(&checkpoint.encoder, dataset)?;
    full_terms(
        &checkpoint.encoder,
        &checkpoint.head,
        dataset,
        neighbors,
        &emb,
        &checkpoint.lambda(),
        false,
    )
}

fn full_terms(
    encoder: &EncoderParams,
    head: &ClusterHead,
    dataset: &HierarchicalDataset,
    neighbors: &NeighborIndex,
    frozen: &Tensor,
    lambda: &crate::lambda::LambdaVector,
    encoder_moved: bool,
) -> Result<ScanTermValues, PipelineError> {
    let emb = if encoder_moved {
        embed_dataset(encoder, dataset)?
    } else {
        frozen.clone()
    };
    let probs = head.probs_rows(&emb)?;
    let nb = gather(&probs, neighbors.flat());
    Ok(scan_terms_value(&probs, &nb, neighbors.k(), lambda)?)
}

/// Trains the encoder on `(x, augment(x))` pairs.
pub fn train_pretext(
    config: &TrainConfig,
    dataset: &HierarchicalDataset,
) -> Result<StageRun, PipelineError> {
    expect_stage(config, Stage::Pretext)?;
    if config.model.input_dim != dataset.dim() {
        return Err(PipelineError::Config(format!(
            "model input_dim {} does not match dataset dimension {}",
            config.model.input_dim,
            dataset.dim()
        )));
    }
    let stage = Stage::Pretext;
    let mut encoder = EncoderParams::init(&config.model, derive_seed(config.seed, STREAM_ENCODER));
    let head = ClusterHead::init(&config.model, derive_seed(config.seed, STREAM_HEAD));
    let aug = AugmentationSpec::new(
        config.augment_sigma,
        derive_seed(config.seed, STREAM_AUGMENT),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_PRETEXT_ORDER));
    let samples = dataset.samples();

    let mut metrics = Vec::new();
    let mut step = 0u64;
    let mut epoch_loss = 0.0;
    for epoch in 0..config.epochs {
        let order = shuffled(dataset.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = encoder.record(&mut tape);
            let clean = tape.constant(gather(samples, batch));
            let noisy = tape.constant(augment_rows(samples, batch, &aug, epoch as u64));
            let run = |tape: &mut Tape| -> Result<Var, PipelineError> {
                let za = EncoderParams::forward(tape, &vars, clean)?;
                let zb = EncoderParams::forward(tape, &vars, noisy)?;
                Ok(simclr_ers_loss(tape, za, zb, config.lambda.lambda0)?)
            };
            let loss = run(&mut tape).map_err(|e| PipelineError::from_step(e, stage, epoch))?;
            let value = tape.scalar_value(loss)?;
            check_finite(value, stage, epoch)?;
            let grads = tape.backward(loss)?;
            encoder.apply_gradients(&vars, &grads, config.learning_rate);
            total += value * batch.len() as f64;
            step += 1;
        }
        epoch_loss = total / dataset.len() as f64;
        if logged(config, epoch) {
            metrics.push(MetricRecord {
                stage,
                epoch,
                step,
                loss: epoch_loss,
                terms: None,
            });
        }
    }
    let checkpoint = Checkpoint {
        config: config.clone(),
        dataset_digest: dataset.digest(),
        encoder,
        head,
        final_loss: epoch_loss,
        final_terms: None,
        records: Vec::new(),
    };
    Ok(StageRun {
        checkpoint,
        metrics,
        warnings: Vec::new(),
    })
}

/// Embeds a batch, through the recorded encoder when it is trainable or
/// from the precomputed table otherwise.
fn embed_batch(
    tape: &mut Tape,
    enc_vars: Option<&[LayerVars]>,
    samples: &Tensor,
    frozen: &Tensor,
    rows: &[usize],
) -> Result<Var, PipelineError> {
    match enc_vars {
        Some(vars) => {
            let x = tape.constant(gather(samples, rows));
            Ok(EncoderParams::forward(tape, vars, x)?)
        }
        None => Ok(tape.constant(gather(frozen, rows))),
    }
}

/// Trains the cluster head (and the encoder when `update_encoder` is set)
/// on the regularized neighbor-consistency objective.
pub fn train_scan(
    config: &TrainConfig,
    dataset: &HierarchicalDataset,
    neighbors: &NeighborIndex,
    pretext: &Checkpoint,
) -> Result<StageRun, PipelineError> {
    expect_stage(config, Stage::Scan)?;
    let stage = Stage::Scan;
    let digest = dataset.digest();
    expect_input(stage, Stage::Pretext, pretext, &digest)?;
    if neighbors.len() != dataset.len() {
        return Err(PipelineError::Config(format!(
            "neighbor index covers {} samples, dataset has {}",
            neighbors.len(),
            dataset.len()
        )));
    }
    let mut warnings = Vec::new();
    if config.lambda.lambda1 == 0.0 {
        let msg = format!(
            "lambda1 is zero for {}: nothing keeps the mean prediction spread across clusters",
            config.lambda
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut encoder = pretext.encoder.clone();
    let mut head = pretext.head.clone();
    let samples = dataset.samples();
    let frozen = embed_dataset(&encoder, dataset)?;
    let k = neighbors.k();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SCAN_ORDER));

    let mut metrics = Vec::new();
    let mut records = Vec::new();
    let mut step = 0u64;
    let mut epoch_loss = 0.0;
    for epoch in 0..config.epochs {
        let order = shuffled(dataset.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let enc_vars = config.update_encoder.then(|| encoder.record(&mut tape));
            let head_vars = head.record(&mut tape);
            let nb_rows = neighbors.gather(batch);
            let run = |tape: &mut Tape| -> Result<Var, PipelineError> {
                let ea = embed_batch(tape, enc_vars.as_deref(), samples, &frozen, batch)?;
                let en = embed_batch(tape, enc_vars.as_deref(), samples, &frozen, &nb_rows)?;
                let pa = ClusterHead::forward(tape, head_vars, ea)?;
                let pn = ClusterHead::forward(tape, head_vars, en)?;
                Ok(scan_ers_loss(tape, pa, pn, k, &config.lambda)?.total)
            };
            let loss = run(&mut tape).map_err(|e| PipelineError::from_step(e, stage, epoch))?;
            let value = tape.scalar_value(loss)?;
            check_finite(value, stage, epoch)?;
            let grads = tape.backward(loss)?;
            if let Some(vars) = &enc_vars {
                encoder.apply_gradients(vars, &grads, config.learning_rate);
            }
            head.apply_gradients(head_vars, &grads, config.learning_rate);
            total += value * batch.len() as f64;
            step += 1;
        }
        epoch_loss = total / dataset.len() as f64;
        if logged(config, epoch) {
            let terms = full_terms(
                &encoder,
                &head,
                dataset,
                neighbors,
                &frozen,
                &config.lambda,
                config.update_encoder,
            )
            .map_err(|e| PipelineError::from_step(e, stage, epoch))?;
            records.push(EntropyStateRecord { step, terms });
            metrics.push(MetricRecord {
                stage,
                epoch,
                step,
                loss: epoch_loss,
                terms: Some(terms),
            });
        }
    }
    let final_terms = records.last().map(|r| r.terms);
    let checkpoint = Checkpoint {
        config: config.clone(),
        dataset_digest: digest,
        encoder,
        head,
        final_loss: epoch_loss,
        final_terms,
        records,
    };
    Ok(StageRun {
        checkpoint,
        metrics,
        warnings,
    })
}

/// Fine-tunes on confident pseudo-labels with cross-entropy.
///
/// Pseudo-labels are the input checkpoint's argmax clusters on samples whose
/// top probability reaches `confidence_threshold`. When no sample qualifies
/// the input checkpoint comes back unchanged with a warning. The output keeps
/// the input's clustering-stage records.
pub fn train_selflabel(
    config: &TrainConfig,
    dataset: &HierarchicalDataset,
    scan: &Checkpoint,
    confidence_threshold: f64,
) -> Result<StageRun, PipelineError> {
    expect_stage(config, Stage::Selflabel)?;
    check_threshold(confidence_threshold)?;
    let stage = Stage::Selflabel;
    let digest = dataset.digest();
    expect_input(stage, Stage::Scan, scan, &digest)?;

    let probs = cluster_probs(scan, dataset)?;
    let n_clusters = scan.head.n_clusters();
    let confident: Vec<(usize, usize)> = probs
        .rows()
        .enumerate()
        .filter_map(|(i, row)| {
            let (label, &p) =
                row.iter().enumerate().fold(
                    (0, &row[0]),
                    |best, (c, p)| if *p > *best.1 { (c, p) } else { best },
                );
            (p >= confidence_threshold).then_some((i, label))
        })
        .collect();
    if confident.is_empty() {
        let msg = format!(
            "no sample reaches confidence {confidence_threshold}; self-label stage skipped"
        );
        log::warn!("{msg}");
        return Ok(StageRun {
            checkpoint: scan.clone(),
            metrics: Vec::new(),
            warnings: vec![msg],
        });
    }

    let mut encoder = scan.encoder.clone();
    let mut head = scan.head.clone();
    let samples = dataset.samples();
    let frozen = embed_dataset(&encoder, dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_SELFLABEL_ORDER));

    let mut metrics = Vec::new();
    let mut step = 0u64;
    let mut epoch_loss = 0.0;
    for epoch in 0..config.epochs {
        let order = shuffled(confident.len(), &mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let rows: Vec<usize> = batch.iter().map(|&j| confident[j].0).collect();
            let mut onehot = vec![0.0; rows.len() * n_clusters];
            for (r, &j) in batch.iter().enumerate() {
                onehot[r * n_clusters + confident[j].1] = 1.0;
            }
            let mut tape = Tape::new();
            let enc_vars = config.update_encoder.then(|| encoder.record(&mut tape));
            let head_vars = head.record(&mut tape);
            let target = tape.constant(Tensor::from_parts(vec![rows.len(), n_clusters], onehot));
            let run = |tape: &mut Tape| -> Result<Var, PipelineError> {
                let e = embed_batch(tape, enc_vars.as_deref(), samples, &frozen, &rows)?;
                let p = ClusterHead::forward(tape, head_vars, e)?;
                let picked = tape.mul(p, target)?;
                let picked = tape.sum_last_axis(picked)?;
                let picked = tape.clamp(picked, PROB_FLOOR, 1.0)?;
                let logs = tape.log(picked)?;
                let m = tape.mean(logs)?;
                Ok(tape.neg(m)?)
            };
            let loss = run(&mut tape).map_err(|e| PipelineError::from_step(e, stage, epoch))?;
            let value = tape.scalar_value(loss)?;
            check_finite(value, stage, epoch)?;
            let grads = tape.backward(loss)?;
            if let Some(vars) = &enc_vars {
                encoder.apply_gradients(vars, &grads, config.learning_rate);
            }
            head.apply_gradients(head_vars, &grads, config.learning_rate);
            total += value * batch.len() as f64;
            step += 1;
        }
        epoch_loss = total / confident.len() as f64;
        if logged(config, epoch) {
            metrics.push(MetricRecord {
                stage,
                epoch,
                step,
                loss: epoch_loss,
                terms: None,
            });
        }
    }
    let checkpoint = Checkpoint {
        config: config.clone(),
        dataset_digest: digest,
        encoder,
        head,
        final_loss: epoch_loss,
        final_terms: None,
        records: scan.records.clone(),
    };
    Ok(StageRun {
        checkpoint,
        metrics,
        warnings: Vec::new(),
    })
}
