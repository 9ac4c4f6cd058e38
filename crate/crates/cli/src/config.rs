//! Pipeline configuration: declarative TOML file plus flag overrides,
//! resolved into one effective config whose hash stamps every artifact.
//! Precedence is flags > file > defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tabforge_core::backend::BackendConfig;
use tabforge_core::codec::DownstreamTaskConfig;
use tabforge_core::table::{FeatureKind, Transform};

use crate::error::CliError;

/// On-disk configuration file.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub task: Option<TaskSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct DatasetSection {
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    /// Domain phrase used in the instruction preamble.
    pub subject: Option<String>,
    /// Per-column kind overrides: name -> "numerical" | "categorical".
    #[serde(default)]
    pub overrides: BTreeMap<String, FeatureKind>,
    #[serde(default)]
    pub preprocess: Vec<Transform>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PipelineSection {
    pub k: Option<usize>,
    pub split_ratios: Option<(f64, f64, f64)>,
    pub split_seed: Option<u64>,
    pub temperature: Option<f64>,
    pub target_synthetic: Option<usize>,
    pub oversample_factor: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub filter: Option<bool>,
    pub permute: Option<bool>,
    pub max_new_tokens: Option<usize>,
    pub nrs_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TaskSection {
    pub question: String,
    /// Ordered class -> answer token table.
    pub answer_tokens: IndexMap<String, String>,
    #[serde(default)]
    pub value_phrases: BTreeMap<String, BTreeMap<String, String>>,
}

/// Flag-level overrides collected by the argument parser.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub csv: Option<PathBuf>,
    pub label: Option<String>,
    pub subject: Option<String>,
    pub k: Option<usize>,
    pub temperature: Option<f64>,
    pub target: Option<usize>,
    pub oversample: Option<f64>,
    pub seeds: Vec<u64>,
    pub split_seed: Option<u64>,
    pub no_filter: bool,
    pub no_permute: bool,
    pub backend_kind: Option<String>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_in_flight: Option<usize>,
    pub audit: Option<PathBuf>,
}

/// The hashed, data-affecting part of the configuration. Backend choice
/// deliberately stays out: swapping mock for HTTP between stages must not
/// invalidate a prepared run directory.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineIdentity {
    pub dataset_path: PathBuf,
    pub label_column: String,
    pub subject: String,
    pub overrides: BTreeMap<String, FeatureKind>,
    pub preprocess: Vec<Transform>,
    pub k: usize,
    pub split_ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub temperature: f64,
    pub target_synthetic: Option<usize>,
    pub oversample_factor: f64,
    pub seeds: Vec<u64>,
    pub filter: bool,
    pub permute: bool,
    pub max_new_tokens: usize,
    pub nrs_tolerance: f64,
}

/// Fully resolved configuration for one run.
#[derive(Debug, Clone)]
pub struct EffectiveConfig {
    pub identity: PipelineIdentity,
    pub backend: BackendConfig,
    pub task: Option<DownstreamTaskConfig>,
    pub run_dir: PathBuf,
    pub config_hash: String,
}

impl EffectiveConfig {
    pub fn resolve(
        config_path: Option<&Path>,
        flags: &FlagOverrides,
        run_dir: PathBuf,
    ) -> Result<Self, CliError> {
        let file: FileConfig = match config_path {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read config {}: {e}", path.display()))
                })?;
                toml::from_str(&text)
                    .map_err(|e| CliError::Config(format!("config parse error: {e}")))?
            }
            None => FileConfig::default(),
        };

        let dataset_path = flags
            .csv
            .clone()
            .or(file.dataset.path.clone())
            .ok_or_else(|| CliError::Config("no dataset path (use --csv or config)".into()))?;
        let label_column = flags
            .label
            .clone()
            .or(file.dataset.label_column.clone())
            .ok_or_else(|| CliError::Config("no label column (use --label or config)".into()))?;

        let identity = PipelineIdentity {
            dataset_path,
            label_column,
            subject: flags
                .subject
                .clone()
                .or(file.dataset.subject.clone())
                .unwrap_or_else(|| "records".to_string()),
            overrides: file.dataset.overrides.clone(),
            preprocess: file.dataset.preprocess.clone(),
            k: flags.k.or(file.pipeline.k).unwrap_or(5),
            split_ratios: file.pipeline.split_ratios.unwrap_or((0.7, 0.1, 0.2)),
            split_seed: flags.split_seed.or(file.pipeline.split_seed).unwrap_or(1234),
            temperature: flags
                .temperature
                .or(file.pipeline.temperature)
                .unwrap_or(0.7),
            target_synthetic: flags.target.or(file.pipeline.target_synthetic),
            oversample_factor: flags
                .oversample
                .or(file.pipeline.oversample_factor)
                .unwrap_or(1.2),
            seeds: if flags.seeds.is_empty() {
                file.pipeline
                    .seeds
                    .clone()
                    .unwrap_or_else(|| vec![1234, 1235, 1236])
            } else {
                flags.seeds.clone()
            },
            filter: if flags.no_filter {
                false
            } else {
                file.pipeline.filter.unwrap_or(true)
            },
            permute: if flags.no_permute {
                false
            } else {
                file.pipeline.permute.unwrap_or(true)
            },
            max_new_tokens: file.pipeline.max_new_tokens.unwrap_or(1024),
            nrs_tolerance: file.pipeline.nrs_tolerance.unwrap_or(0.01),
        };

        if identity.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if identity.k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if !(identity.oversample_factor >= 1.0) {
            return Err(CliError::Config(
                "oversample factor must be at least 1.0".into(),
            ));
        }

        let mut backend = file.backend.clone().unwrap_or_default();
        if let Some(kind) = &flags.backend_kind {
            backend.kind = match kind.as_str() {
                "mock" => tabforge_core::backend::BackendKind::Mock,
                "http" => tabforge_core::backend::BackendKind::Http,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown backend kind '{other}' (expected mock or http)"
                    )))
                }
            };
        }
        if let Some(endpoint) = &flags.endpoint {
            backend.endpoint = Some(endpoint.clone());
        }
        if backend.endpoint.is_none() {
            if let Ok(endpoint) = std::env::var("TABFORGE_ENDPOINT") {
                backend.endpoint = Some(endpoint);
            }
        }
        if let Some(model) = &flags.model {
            backend.model = Some(model.clone());
        }
        if let Some(limit) = flags.max_in_flight {
            backend.max_in_flight = limit;
        }
        if let Some(audit) = &flags.audit {
            backend.audit_path = Some(audit.clone());
        }
        backend
            .validate()
            .map_err(|e| CliError::Config(format!("backend config: {e}")))?;

        let task = file.task.as_ref().map(|t| {
            let mut task = DownstreamTaskConfig::new(t.question.clone(), t.answer_tokens.clone());
            task.value_phrases = t.value_phrases.clone();
            task
        });

        let config_hash = hash_identity(&identity);
        Ok(EffectiveConfig {
            identity,
            backend,
            task,
            run_dir,
            config_hash,
        })
    }

    /// Downstream task; defaults to identity answer tokens over classes.
    pub fn task_for(&self, classes: &indexmap::IndexSet<String>) -> DownstreamTaskConfig {
        self.task.clone().unwrap_or_else(|| {
            DownstreamTaskConfig::new(
                "Classify the following record.",
                classes.iter().map(|c| (c.clone(), c.clone())).collect(),
            )
        })
    }
}

fn hash_identity(identity: &PipelineIdentity) -> String {
    let canonical = serde_json::to_string(identity).expect("identity serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}
