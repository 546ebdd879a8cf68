//! Run configuration shared by the CLI and the service.
//!
//! Relative paths inside a config file are taken relative to that file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::explainer::ExplainConfig;
use crate::pipeline::BuildConfig;
use crate::preprocess::DatasetSpec;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label_column: String,
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl DatasetConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            label_column: self.label_column.clone(),
            positive_label: self.positive_label.clone(),
            features: self.features.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: Option<DatasetConfig>,
    pub embeddings: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Round reports of every seed; defaults to `<model stem>.reports.json`.
    pub reports: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub port: u16,
    pub build: BuildConfig,
    pub explain: ExplainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            embeddings: None,
            labels: None,
            model: None,
            reports: None,
            seeds: vec![0, 1, 2, 3, 4],
            port: DEFAULT_PORT,
            build: BuildConfig::default(),
            explain: ExplainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CamError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| CamError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_against(base);
        Ok(cfg)
    }

    fn resolve_against(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.dataset {
            fix(&mut d.path);
        }
        for p in [&mut self.embeddings, &mut self.labels, &mut self.model, &mut self.reports]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.port < 1024 {
            return Err(CamError::Config(format!("port {} outside [1024, 65535]", self.port)));
        }
        if self.seeds.is_empty() {
            return Err(CamError::Config("at least one seed is required".into()));
        }
        self.build.check()
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| CamError::Config(format!("no {what} path given (config or flag)")))
    }

    pub fn dataset(&self) -> Result<&DatasetConfig> {
        self.dataset
            .as_ref()
            .ok_or_else(|| CamError::Config("no dataset given (config or --dataset)".into()))
    }

    pub fn reports_path(&self) -> Option<PathBuf> {
        self.reports.clone().or_else(|| {
            self.model.as_ref().map(|m| {
                let stem = m.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
                m.with_file_name(format!("{stem}.reports.json"))
            })
        })
    }
}
