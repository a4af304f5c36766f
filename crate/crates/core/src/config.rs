//! Pipeline configuration file (TOML). Every field has a default, so an
//! empty file is valid; command-line flags override what it sets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::Chunking;
use crate::decoder::DecodeParams;
use crate::error::{Error, Result};
use crate::fm_index::IndexConfig;
use crate::identifiers::IdentifierParams;
use crate::model::ModelParams;
use crate::pipeline::RetrievalParams;
use crate::prompts::Task;
use crate::scorer::ScoringParams;

/// Environment variable naming a config file used when none is passed.
pub const CONFIG_ENV: &str = "NGRAMDEX_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub identifiers: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub mixture: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub provenance: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierConfig {
    pub n: usize,
    /// Identifiers per context; unset means the task default.
    pub v: Option<usize>,
    pub rho: f64,
    /// Registered token-weight provider.
    pub provider: String,
}

impl Default for IdentifierConfig {
    fn default() -> Self {
        Self {
            n: 10,
            v: None,
            rho: 0.01,
            provider: "surrogate".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    pub lambda: f64,
    pub mu: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let p = ModelParams::default();
        Self {
            kind: "count".into(),
            lambda: p.lambda,
            mu: p.mu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: Task,
    pub seed: u64,
    /// Ranked contexts written per query; 0 keeps all.
    pub limit: usize,
    pub paths: Paths,
    pub chunking: Chunking,
    pub index: IndexConfig,
    pub identifiers: IdentifierConfig,
    pub model: ModelConfig,
    pub decode: DecodeParams,
    pub scoring: ScoringParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            task: Task::DR,
            seed: 0,
            limit: 100,
            paths: Paths::default(),
            chunking: Chunking::default(),
            index: IndexConfig::default(),
            identifiers: IdentifierConfig::default(),
            model: ModelConfig::default(),
            decode: DecodeParams::default(),
            scoring: ScoringParams::default(),
        }
    }
}

/// Identifiers per context: 10 for documents and passages, 5 for
/// sentences, and the single title for entities.
pub fn default_v(task: Task) -> usize {
    match task {
        Task::DR | Task::PR => 10,
        Task::SR => 5,
        Task::ER => 1,
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Loads `explicit`, else the file named by [`CONFIG_ENV`], else the
    /// defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Self::load(p);
        }
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn identifier_params(&self) -> IdentifierParams {
        IdentifierParams {
            n: self.identifiers.n,
            v: self.identifiers.v.unwrap_or_else(|| default_v(self.task)),
            rho: self.identifiers.rho,
            seed: self.seed,
        }
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            lambda: self.model.lambda,
            mu: self.model.mu,
        }
    }

    pub fn retrieval_params(&self) -> RetrievalParams {
        RetrievalParams {
            decode: self.decode,
            scoring: self.scoring,
            limit: self.limit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.decode.validate()?;
        self.scoring.validate()?;
        let id = self.identifier_params();
        if id.n == 0 || id.v == 0 {
            return Err(Error::Config("identifier n and v must be at least 1".into()));
        }
        if id.rho.is_nan() || id.rho <= 0.0 {
            return Err(Error::Config(format!("rho must be positive, got {}", id.rho)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let c = PipelineConfig::default();
        let id = c.identifier_params();
        assert_eq!((id.n, id.v, id.rho), (10, 10, 0.01));
        assert_eq!((c.scoring.alpha, c.scoring.beta, c.scoring.g), (2.0, 0.8, 5));
        assert_eq!((c.decode.beam_width, c.decode.steps), (15, 10));
        assert_eq!((c.model.lambda, c.model.mu), (0.5, 0.1));
        assert_eq!(Task::ALL.map(default_v), [10, 10, 5, 1]);
    }

    #[test]
    fn partial_file_keeps_other_defaults() {
        let c = PipelineConfig::from_toml_str("task = \"SR\"\nseed = 7\n[decode]\nbeam_width = 4\n").unwrap();
        assert_eq!(c.task, Task::SR);
        assert_eq!(c.identifier_params().v, 5);
        assert_eq!(c.identifier_params().seed, 7);
        assert_eq!(c.decode.beam_width, 4);
        assert_eq!(c.decode.steps, 10);
    }

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(PipelineConfig::from_toml_str("[paths]\ncorpsu = \"x\"\n").is_err());
    }

    #[test]
    fn validation() {
        let mut c = PipelineConfig::default();
        c.scoring.beta = 2.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.identifiers.rho = 0.0;
        assert!(c.validate().is_err());
    }
}
