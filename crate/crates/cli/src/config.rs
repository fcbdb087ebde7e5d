//! TOML run configuration.

use std::path::PathBuf;

use ers_core::lambda::{eval_template, LambdaTemplate, SeriesSpec};
use ers_core::pipeline::StageParams;
use ers_core::{EvalOptions, GenerateParams, LambdaVector, ModelConfig, PipelineConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SERIES: &str = "geometric base=4 ratio=2 count=4";
pub const DEFAULT_BASE: [f64; 4] = [2.0, 5.0, 4.0, 0.0];

#[derive(Debug, Error, Clone, PartialEq)]
#[error("config error at `{key}`{}: {reason}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageBlock {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub log_every: Option<usize>,
}

impl StageBlock {
    fn fill(&mut self, d: StageParams) {
        self.epochs.get_or_insert(d.epochs);
        self.batch_size.get_or_insert(d.batch_size);
        self.learning_rate.get_or_insert(d.learning_rate);
        self.log_every.get_or_insert(d.log_every);
    }

    fn params(&self) -> StageParams {
        StageParams {
            epochs: self.epochs.unwrap_or_default(),
            batch_size: self.batch_size.unwrap_or_default(),
            learning_rate: self.learning_rate.unwrap_or_default(),
            log_every: self.log_every.unwrap_or_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelflabelBlock {
    pub enabled: Option<bool>,
    pub confidence_threshold: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub log_every: Option<usize>,
}

impl SelflabelBlock {
    fn stage(&self) -> StageBlock {
        StageBlock {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            log_every: self.log_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub hidden: Option<Vec<usize>>,
    pub embedding_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub neighbors_k: Option<usize>,
    /// Defaults to half the subclass spread.
    pub augment_sigma: Option<f64>,
    pub update_encoder: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaBlock {
    /// Coefficients shared by the series members; the series sets `lambda3`.
    pub base: Option<[f64; 4]>,
    pub series: Option<String>,
    pub vectors: Option<Vec<[f64; 4]>>,
    /// Built-in template ids or four comma-separated rules, evaluated at the
    /// superclass count.
    pub templates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub data: GenerateParams,
    #[serde(default)]
    pub model: ModelBlock,
    #[serde(default)]
    pub pretext: StageBlock,
    #[serde(default)]
    pub scan: StageBlock,
    #[serde(default)]
    pub selflabel: SelflabelBlock,
    #[serde(default)]
    pub training: TrainingBlock,
    #[serde(default)]
    pub lambda: LambdaBlock,
    #[serde(default)]
    pub eval: EvalOptions,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[table]`, or of a top-level key when `table` is empty.
fn find_key(text: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if key.is_empty() && current == table {
                return Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn fail(text: &str, path: &str, reason: impl Into<String>) -> ConfigError {
    let (table, key) = path.rsplit_once('.').unwrap_or(("", path));
    let line = find_key(text, table, key).or_else(|| find_key(text, table, ""));
    ConfigError {
        key: path.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Parses, fills defaults and validates. The result has every optional
/// field set, so echoing it and parsing again gives an equal value.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let line = e.span().map(|s| line_of(text, s.start));
        let msg = e.message().to_string();
        let key = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "<document>".into());
        ConfigError {
            key,
            line,
            reason: msg,
        }
    })?;
    cfg.fill_defaults();
    cfg.validate(text)?;
    Ok(cfg)
}

impl RunConfig {
    pub fn fill_defaults(&mut self) {
        let d = PipelineConfig::new(
            self.data.d_in,
            self.data.n_super,
            0.5 * self.data.sub_spread,
        );
        self.seed.get_or_insert(d.seed);
        self.model.hidden.get_or_insert(d.model.hidden.clone());
        self.model
            .embedding_dim
            .get_or_insert(d.model.embedding_dim);
        self.pretext.fill(d.pretext);
        self.scan.fill(d.scan);
        let sl = d.selflabel.expect("selflabel has defaults");
        self.selflabel.enabled.get_or_insert(true);
        self.selflabel
            .confidence_threshold
            .get_or_insert(d.confidence_threshold);
        let mut stage = self.selflabel.stage();
        stage.fill(sl);
        self.selflabel.epochs = stage.epochs;
        self.selflabel.batch_size = stage.batch_size;
        self.selflabel.learning_rate = stage.learning_rate;
        self.selflabel.log_every = stage.log_every;
        self.training.neighbors_k.get_or_insert(d.neighbors_k);
        self.training.augment_sigma.get_or_insert(d.augment_sigma);
        self.training.update_encoder.get_or_insert(d.update_encoder);
        let explicit = self.lambda.vectors.is_some() || self.lambda.templates.is_some();
        self.lambda.base.get_or_insert(DEFAULT_BASE);
        self.lambda.vectors.get_or_insert_with(Vec::new);
        self.lambda.templates.get_or_insert_with(Vec::new);
        if self.lambda.series.is_none() {
            self.lambda.series = Some(if explicit {
                String::new()
            } else {
                DEFAULT_SERIES.to_string()
            });
        }
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        if let Err(e) = self.data.validate() {
            let msg = e.to_string();
            let field = [
                "n_sub_per_super",
                "n_super",
                "d_in",
                "samples_per_sub",
                "separation",
                "sub_spread",
            ]
            .into_iter()
            .find(|f| msg.contains(f))
            .unwrap_or("n_super");
            return Err(fail(text, &format!("data.{field}"), msg));
        }
        if let Some(h) = &self.model.hidden {
            if h.contains(&0) {
                return Err(fail(text, "model.hidden", "layer widths must be positive"));
            }
        }
        if self.model.embedding_dim == Some(0) {
            return Err(fail(text, "model.embedding_dim", "must be at least 1"));
        }
        for (name, block) in [
            ("pretext", &self.pretext),
            ("scan", &self.scan),
            ("selflabel", &self.selflabel.stage()),
        ] {
            for (key, v) in [
                ("epochs", block.epochs),
                ("batch_size", block.batch_size),
                ("log_every", block.log_every),
            ] {
                if v == Some(0) {
                    return Err(fail(text, &format!("{name}.{key}"), "must be at least 1"));
                }
            }
            if let Some(lr) = block.learning_rate {
                if !(lr > 0.0 && lr.is_finite()) {
                    return Err(fail(
                        text,
                        &format!("{name}.learning_rate"),
                        "must be positive and finite",
                    ));
                }
            }
        }
        if let Some(t) = self.selflabel.confidence_threshold {
            if !(t > 0.5 && t < 1.0) {
                return Err(fail(
                    text,
                    "selflabel.confidence_threshold",
                    "must lie strictly between 0.5 and 1",
                ));
            }
        }
        if let Some(k) = self.training.neighbors_k {
            if k == 0 || k >= self.data.n_samples() {
                return Err(fail(
                    text,
                    "training.neighbors_k",
                    "must be at least 1 and below the sample count",
                ));
            }
        }
        if let Some(s) = self.training.augment_sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(fail(
                    text,
                    "training.augment_sigma",
                    "must be non-negative and finite",
                ));
            }
        }
        if self
            .lambda
            .base
            .is_some_and(|b| b.iter().any(|v| !v.is_finite()))
        {
            return Err(fail(text, "lambda.base", "coefficients must be finite"));
        }
        if self
            .lambda
            .vectors
            .iter()
            .flatten()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(fail(text, "lambda.vectors", "coefficients must be finite"));
        }
        let members = self
            .members()
            .map_err(|(key, reason)| fail(text, key, reason))?;
        if members.is_empty() {
            return Err(fail(text, "lambda.series", "the ensemble has no members"));
        }
        if !(self.eval.quorum > 0.5 && self.eval.quorum <= 1.0) {
            return Err(fail(text, "eval.quorum", "must lie in (0.5, 1]"));
        }
        if self.eval.tiers == 0 {
            return Err(fail(text, "eval.tiers", "must be at least 1"));
        }
        if self.eval.prototypes == 0 {
            return Err(fail(text, "eval.prototypes", "must be at least 1"));
        }
        if self.eval.ks.contains(&0) {
            return Err(fail(text, "eval.ks", "subset sizes must be at least 1"));
        }
        Ok(())
    }

    /// Member lambda vectors: explicit vectors, then templates, then the series.
    pub fn members(&self) -> Result<Vec<LambdaVector>, (&'static str, String)> {
        let mut out: Vec<LambdaVector> = self
            .lambda
            .vectors
            .iter()
            .flatten()
            .map(|v| LambdaVector::from_array(*v))
            .collect();
        for spec in self.lambda.templates.iter().flatten() {
            let t =
                LambdaTemplate::resolve(spec).map_err(|e| ("lambda.templates", e.to_string()))?;
            out.push(eval_template(&t, self.data.n_super));
        }
        if let Some(series) = self
            .lambda
            .series
            .as_deref()
            .filter(|s| !s.trim().is_empty())
        {
            let spec: SeriesSpec = series
                .parse()
                .map_err(|e: ers_core::LambdaError| ("lambda.series", e.to_string()))?;
            let base = LambdaVector::from_array(self.lambda.base.unwrap_or(DEFAULT_BASE));
            out.extend(spec.expand(base));
        }
        Ok(out)
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let mut model = ModelConfig::new(self.data.d_in, self.data.n_super);
        if let Some(h) = &self.model.hidden {
            model.hidden = h.clone();
        }
        if let Some(e) = self.model.embedding_dim {
            model.embedding_dim = e;
        }
        PipelineConfig {
            model,
            pretext: self.pretext.params(),
            scan: self.scan.params(),
            selflabel: (self.selflabel.enabled == Some(true))
                .then(|| self.selflabel.stage().params()),
            neighbors_k: self.training.neighbors_k.unwrap_or_default(),
            augment_sigma: self.training.augment_sigma.unwrap_or_default(),
            update_encoder: self.training.update_encoder.unwrap_or_default(),
            confidence_threshold: self.selflabel.confidence_threshold.unwrap_or(0.9),
            seed: self.seed.unwrap_or_default(),
        }
    }

    /// Resolved configuration as TOML, without the output directory.
    pub fn echo(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        toml::to_string(&c).expect("config serializes")
    }
}
