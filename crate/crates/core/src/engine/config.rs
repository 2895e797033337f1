use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::concept::ConceptBuildOptions;
use crate::gateway::ProviderConfig;
use crate::ingest::ChunkPolicy;
use crate::instance::InstanceBuildOptions;
use crate::qa::QaConfig;
use crate::retriever::RetrievalConfig;

/// Artifact locations, relative to the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus_dir: String,
    pub graph_dir: String,
    pub index_file: String,
    pub sessions_dir: String,
    pub state_file: String,
    pub overrides_file: Option<String>,
    pub ontology_file: Option<String>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            corpus_dir: "data/corpus".into(),
            graph_dir: "data/graph".into(),
            index_file: "data/index.json".into(),
            sessions_dir: "data/sessions".into(),
            state_file: "data/state.json".into(),
            overrides_file: None,
            ontology_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Environment variable holding a static bearer token. Unset disables
    /// authentication.
    pub bearer_token_env: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            bind: "127.0.0.1:8080".into(),
            bearer_token_env: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub paths: PathsConfig,
    pub provider: ProviderConfig,
    pub chunking: ChunkPolicy,
    pub retrieval: RetrievalConfig,
    pub concept: ConceptBuildOptions,
    pub instance: InstanceBuildOptions,
    pub qa: QaConfig,
    pub server: ServerConfig,
}

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, EngineError> {
        let cfg: EngineConfig = toml::from_str(text).map_err(|e| EngineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file; relative paths in it resolve against its
    /// directory, which is returned alongside.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), EngineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::from_toml(&text)?;
        let root = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok((cfg, root))
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.provider.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        self.retrieval.validate().map_err(|e| EngineError::Config(e.to_string()))?;
        if self.qa.max_history_turns == 0 {
            return Err(EngineError::Config("qa.max_history_turns must be positive".into()));
        }
        if self.qa.prompt_budget_tokens == 0 {
            return Err(EngineError::Config("qa.prompt_budget_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = EngineConfig::default();
        assert_eq!(EngineConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial = EngineConfig::from_toml("[retrieval]\nk_final = 3\n[chunking]\nmax_tokens = 100\n").unwrap();
        assert_eq!(partial.retrieval.k_final, 3);
        assert_eq!(partial.chunking.max_tokens, 100);
        assert_eq!(partial.retrieval.k_chunks, 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EngineConfig::from_toml("[retrieval]\nk_final = 0\n").is_err());
        assert!(EngineConfig::from_toml("[chunking]\nmax_tokens = 10\nmin_tokens = 20\n").is_err());
        assert!(EngineConfig::from_toml("[nope]\n").is_err());
        assert!(EngineConfig::from_toml("[provider]\nfault_points = [\"bogus\"]\n").is_err());
    }
}
