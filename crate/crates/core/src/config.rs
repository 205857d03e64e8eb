//! TOML run configuration.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgseg::CgsegConfig;
use crate::inventory::SlideSize;
use crate::kb::{EmbeddingProvider, HttpEmbedder, MockEmbedder};
use crate::llm::BackendConfig;
use crate::pipeline::PipelineConfig;
use crate::scm::ScmWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: String,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub kind: EmbeddingKind,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding the bearer token, if the service needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_embed_timeout")]
    pub timeout_secs: u64,
}

fn default_dimension() -> usize {
    256
}
fn default_embed_timeout() -> u64 {
    30
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            kind: EmbeddingKind::Mock,
            dimension: default_dimension(),
            endpoint: None,
            model: None,
            api_key_env: None,
            timeout_secs: default_embed_timeout(),
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dimension == 0 {
            return Err(ConfigError::Invalid("embedding.dimension must be positive".into()));
        }
        if self.kind == EmbeddingKind::Http
            && (self.endpoint.as_deref().unwrap_or("").is_empty() || self.model.as_deref().unwrap_or("").is_empty())
        {
            return Err(ConfigError::Invalid("http embedding needs endpoint and model".into()));
        }
        Ok(())
    }

    /// The mock provider is keyed by the run seed.
    pub fn provider(&self, seed: u64) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        self.validate()?;
        match self.kind {
            EmbeddingKind::Mock => Ok(Box::new(MockEmbedder::new(self.dimension, seed))),
            EmbeddingKind::Http => HttpEmbedder::new(
                self.endpoint.as_deref().unwrap_or_default(),
                self.model.as_deref().unwrap_or_default(),
                self.dimension,
                self.api_key_env.as_deref(),
                Duration::from_secs(self.timeout_secs),
            )
            .map(|e| Box::new(e) as Box<dyn EmbeddingProvider>)
            .map_err(|e| ConfigError::Invalid(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckerKind {
    /// Accept every candidate without running it.
    #[default]
    Accept,
    /// Syntax-check snippets and execute programs in the external runner.
    Runner,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerConfig {
    #[serde(default)]
    pub kind: CheckerKind,
    /// Runner command line, e.g. `["python3", "runner/main.py"]`.
    #[serde(default)]
    pub command: Vec<String>,
    #[serde(default)]
    pub timeout_secs: Option<f64>,
}

impl CheckerConfig {
    pub fn timeout(&self) -> f64 {
        self.timeout_secs.unwrap_or(60.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub design: Option<PathBuf>,
    #[serde(default)]
    pub pictures_dir: Option<PathBuf>,
    pub shape_kb: PathBuf,
    pub function_kb: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_max_refine")]
    pub max_refine: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub cgseg: CgsegConfig,
    #[serde(default)]
    pub scm: ScmWeights,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub geometry: SlideSize,
    #[serde(default)]
    pub checker: CheckerConfig,
}

fn default_top_k() -> usize {
    5
}
fn default_max_refine() -> usize {
    3
}
fn default_parallelism() -> usize {
    1
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            source: Box::new(e),
        })
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.design.as_mut() {
            fix(p);
        }
        if let Some(p) = self.pictures_dir.as_mut() {
            fix(p);
        }
        fix(&mut self.shape_kb);
        fix(&mut self.function_kb);
        fix(&mut self.output_dir);
        if let Some(p) = self.backend.script.as_mut() {
            fix(p);
        }
    }

    /// Checks values and that every referenced input exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, p) in [("shape_kb", &self.shape_kb), ("function_kb", &self.function_kb)] {
            if !p.is_file() {
                return invalid(format!("{name} not found: {}", p.display()));
            }
        }
        if let Some(p) = &self.design {
            if !p.is_file() {
                return invalid(format!("design not found: {}", p.display()));
            }
        }
        if let Some(p) = &self.pictures_dir {
            if !p.is_dir() {
                return invalid(format!("pictures_dir not found: {}", p.display()));
            }
        }
        if self.top_k == 0 {
            return invalid("top_k must be positive".into());
        }
        if self.max_refine == 0 {
            return invalid("max_refine must be positive".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be positive".into());
        }
        if !(self.geometry.width_in > 0.0 && self.geometry.height_in > 0.0) {
            return invalid("geometry sizes must be positive".into());
        }
        if self.checker.kind == CheckerKind::Runner && self.checker.command.is_empty() {
            return invalid("checker.command is required for the runner checker".into());
        }
        self.cgseg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.backend.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.embedding.validate()
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            cgseg: self.cgseg,
            slide: self.geometry,
            top_k: self.top_k,
            max_refine: self.max_refine,
            parallelism: self.parallelism,
            record_timing: self.record_timing,
        }
    }

    /// Files in `pictures_dir`, sorted by name.
    pub fn pictures(&self) -> Result<Vec<PathBuf>, ConfigError> {
        let Some(dir) = &self.pictures_dir else {
            return Ok(Vec::new());
        };
        let entries = std::fs::read_dir(dir).map_err(|source| ConfigError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        let mut files: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        Ok(files)
    }
}
