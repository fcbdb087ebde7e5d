use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use ers_core::data::generate;
use ers_core::eval::evaluate_ensemble;
use ers_core::pipeline::{cluster_probs, Checkpoint};
use ers_core::PredictionSet;

use crate::bundle::{BundleMember, ReportBundle, Trajectory, BUNDLE_FORMAT};
use crate::manifest::{expand_checkpoints, sha256_hex, to_json_pretty, write_file, FileEntry};
use crate::{fresh_dir, CliError, RunConfig};

/// Evaluates checkpoints on the configured dataset and writes a report
/// bundle: `report.json`, `topk.csv`, one prediction table per member and
/// `manifest.json`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    out: &Path,
    subclass_scoring: bool,
) -> Result<ReportBundle, CliError> {
    fresh_dir(out)?;
    let paths = expand_checkpoints(checkpoints)?;
    if paths.is_empty() {
        return Err(CliError::Usage("no checkpoints given".into()));
    }
    let dataset = generate(&cfg.data).map_err(anyhow::Error::from)?;
    let digest = dataset.digest();

    let mut members = Vec::new();
    let mut sets = Vec::new();
    let mut trajectories = Vec::new();
    for path in &paths {
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let ckpt = Checkpoint::from_bytes(&bytes)
            .with_context(|| format!("loading {}", path.display()))?;
        let source = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        if ckpt.dataset_digest != digest {
            return Err(
                anyhow!("{source} was trained on a different dataset (digest mismatch)").into(),
            );
        }
        let probs = cluster_probs(&ckpt, &dataset).map_err(anyhow::Error::from)?;
        sets.push(PredictionSet::new(probs, source.clone()).map_err(anyhow::Error::from)?);
        trajectories.push(Trajectory {
            source: source.clone(),
            records: ckpt.records.clone(),
        });
        members.push(BundleMember {
            source,
            sha256: sha256_hex(&bytes),
            stage: ckpt.stage(),
            lambda: ckpt.lambda().to_array(),
            final_loss: ckpt.final_loss,
        });
    }

    let mut options = cfg.eval.clone();
    options.subclass_scoring |= subclass_scoring;
    let report = evaluate_ensemble(&sets, &dataset, &options).map_err(anyhow::Error::from)?;
    let bundle = ReportBundle {
        format: BUNDLE_FORMAT.into(),
        dataset_sha256: hex::encode(digest),
        checkpoints: members,
        report,
        trajectories,
    };

    let mut files: Vec<FileEntry> = vec![write_file(out, "report.json", &to_json_pretty(&bundle))?];
    files.push(write_file(
        out,
        "topk.csv",
        crate::report::topk_table(&bundle).as_bytes(),
    )?);
    let labels = if options.subclass_scoring {
        dataset.sub_labels()
    } else {
        dataset.super_labels()
    };
    let n_labels = bundle.report.n_labels;
    for (set, member) in sets.into_iter().zip(&bundle.report.members) {
        let mapped = set
            .with_mapping(member.mapping.clone(), n_labels)
            .map_err(anyhow::Error::from)?;
        debug_assert_eq!(mapped.accuracy(labels).ok(), Some(member.accuracy));
        let stem = member.source.trim_end_matches(".ckpt");
        files.push(write_file(
            out,
            &format!("predictions/{stem}.csv"),
            mapped.to_csv().as_bytes(),
        )?);
    }
    write_file(out, "manifest.json", &to_json_pretty(&files))?;
    Ok(bundle)
}
