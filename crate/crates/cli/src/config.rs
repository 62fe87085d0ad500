//! Run configuration: one TOML file layered over desk-scale defaults, with
//! command-line overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use affgrasp_core::fusion::FusionConfig;
use affgrasp_core::learning::TrainConfig;
use affgrasp_core::netcore::{AffordanceConfig, EvaluatorConfig, GeneratorConfig, VaeConfig};
use affgrasp_core::synthdata::{Category, DatasetConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Seeds at or above this value make "novel" objects; training only sees
/// objects below it.
pub const NOVEL_SEED_BASE: u64 = 1000;

/// The top-level `seed` drives data generation, model initialisation,
/// training and inference; the `seed` fields of the nested sections are
/// replaced by it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Rendered dataset (manifest and blobs).
    pub data_dir: PathBuf,
    /// Checkpoints, traces, reports and candidates.
    pub out_dir: PathBuf,
    pub categories: Vec<Category>,
    pub objects_per_category: usize,
    pub novel_per_category: usize,
    /// Trailing views of every existing object kept out of training.
    pub holdout_views: usize,
    /// Sampled grasps per view and task when measuring ESM.
    pub esm_samples: usize,
    pub dataset: DatasetConfig,
    pub generator: GeneratorConfig,
    pub evaluator: EvaluatorConfig,
    pub affordance: AffordanceConfig,
    pub vae: VaeConfig,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data_dir: PathBuf::from("run/data"),
            out_dir: PathBuf::from("run"),
            categories: Category::ALL.to_vec(),
            objects_per_category: 1,
            novel_per_category: 0,
            holdout_views: 8,
            esm_samples: 100,
            dataset: DatasetConfig::desk(),
            generator: GeneratorConfig::desk(),
            evaluator: EvaluatorConfig::desk(),
            affordance: AffordanceConfig::desk(),
            vae: VaeConfig::desk(),
            train: TrainConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses `key.path=value` into a one-entry table; the value is read as TOML
/// and falls back to a plain string.
fn override_table(assignment: &str) -> Result<toml::Value, CliError> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| CliError::Config(format!("override {assignment:?} is not key=value")))?;
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(CliError::Config(format!("override {key:?} has no value")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut v = value;
    for part in key.trim().split('.').rev() {
        if part.is_empty() {
            return Err(CliError::Config(format!("bad override key {key:?}")));
        }
        let mut t = toml::Table::new();
        t.insert(part.to_string(), v);
        v = toml::Value::Table(t);
    }
    Ok(v)
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` (`key.path=value`).
    pub fn layered(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut value = toml::Value::try_from(RunConfig::default()).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, toml::Value::Table(table));
        }
        for o in overrides {
            merge(&mut value, override_table(o)?);
        }
        let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.categories.is_empty() {
            return bad("categories must not be empty".into());
        }
        if self.objects_per_category == 0 {
            return bad("objects_per_category must be at least 1".into());
        }
        if self.holdout_views >= self.dataset.rotations_per_object {
            return bad(format!("holdout_views {} leaves no training view of {}", self.holdout_views, self.dataset.rotations_per_object));
        }
        if self.esm_samples == 0 {
            return bad("esm_samples must be positive".into());
        }
        if self.objects_per_category as u64 > NOVEL_SEED_BASE {
            return bad(format!("at most {NOVEL_SEED_BASE} existing objects per category"));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.fusion.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.affordance.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        DatasetConfig { seed: self.seed, ..self.dataset.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    pub fn fusion_config(&self) -> FusionConfig {
        FusionConfig { seed: self.seed, ..self.fusion.clone() }
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out_dir.join("checkpoints")
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.out_dir.join("traces")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out_dir.join("reports")
    }
}
