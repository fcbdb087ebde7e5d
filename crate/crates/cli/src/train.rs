use std::path::Path;

use anyhow::anyhow;
use ers_core::data::generate;
use ers_core::pipeline::{train_ensemble, EnsembleSpec, MetricRecord};
use serde::{Deserialize, Serialize};

use crate::manifest::{to_json_pretty, write_file, FileEntry};
use crate::{fresh_dir, CliError, RunConfig};

pub const RUN_FORMAT: &str = "ers-run-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestMember {
    pub index: usize,
    pub lambda: [f64; 4],
    pub checkpoint: Option<String>,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub config: String,
    pub dataset_sha256: String,
    pub members: Vec<ManifestMember>,
    pub warnings: Vec<String>,
    pub files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct MetricLine<'a> {
    member: usize,
    #[serde(flatten)]
    record: &'a MetricRecord,
}

/// Trains every configured member and writes the run directory.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunManifest, CliError> {
    fresh_dir(out)?;
    let dataset = generate(&cfg.data).map_err(anyhow::Error::from)?;
    let members = cfg.members().map_err(|(key, reason)| {
        CliError::Config(crate::ConfigError {
            key: key.into(),
            line: None,
            reason,
        })
    })?;
    let spec = EnsembleSpec {
        members,
        pipeline: cfg.pipeline(),
    };
    spec.validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let run = train_ensemble(&spec, &dataset).map_err(anyhow::Error::from)?;
    if run.succeeded().count() == 0 {
        let reasons: Vec<String> = run
            .members
            .iter()
            .filter_map(|m| m.as_ref().err().map(|e| e.to_string()))
            .collect();
        return Err(anyhow!("every member failed: {}", reasons.join("; ")).into());
    }

    let mut files = Vec::new();
    let config_text = cfg.echo();
    files.push(write_file(out, "config.toml", config_text.as_bytes())?);
    files.push(write_file(
        out,
        "dataset.txt",
        dataset.export_text().as_bytes(),
    )?);

    let mut metrics = String::new();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (index, (member, lambda)) in run.members.iter().zip(&spec.members).enumerate() {
        match member {
            Ok(m) => {
                let rel = format!("checkpoints/member-{index:02}.ckpt");
                files.push(write_file(out, &rel, &m.final_checkpoint().to_bytes())?);
                for record in &m.metrics {
                    metrics.push_str(
                        &serde_json::to_string(&MetricLine {
                            member: index,
                            record,
                        })
                        .expect("serializes"),
                    );
                    metrics.push('\n');
                }
                entries.push(ManifestMember {
                    index,
                    lambda: lambda.to_array(),
                    checkpoint: Some(rel),
                    error: None,
                    warnings: m.warnings.clone(),
                });
            }
            Err(e) => {
                log::warn!("member {index} failed: {e}");
                warnings.push(format!("member {index} failed: {e}"));
                entries.push(ManifestMember {
                    index,
                    lambda: lambda.to_array(),
                    checkpoint: None,
                    error: Some(e.to_string()),
                    warnings: Vec::new(),
                });
            }
        }
    }
    files.push(write_file(out, "metrics.jsonl", metrics.as_bytes())?);

    let manifest = RunManifest {
        format: RUN_FORMAT.into(),
        config: "config.toml".into(),
        dataset_sha256: hex::encode(dataset.digest()),
        members: entries,
        warnings,
        files,
    };
    write_file(out, "manifest.json", &to_json_pretty(&manifest))?;
    Ok(manifest)
}
