//! Single entry point for generation, embedding and reranking calls.
//!
//! Every pipeline stage talks to a [`Gateway`], which wraps a pluggable
//! [`Provider`] with retry/backoff, embedding normalization and an
//! embedding cache. The [`MockProvider`] is deterministic and rule-based so
//! the whole system runs offline.

mod cache;
mod fault;
mod mock;
mod remote;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::EmbeddingCache;
pub use fault::{FaultPoint, FaultyProvider};
pub use mock::MockProvider;
pub use remote::OpenAiProvider;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("configuration error: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport(_))
    }
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

/// What a generation call is for. Each role has its own prompt template in
/// the calling module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationRole {
    Summarize,
    Keywords,
    ExtractHigh,
    ExtractMid,
    ExtractLow,
    CompleteAttributes,
    Decompose,
    RefineQuery,
    Answer,
    JudgeClaims,
}

impl GenerationRole {
    pub const ALL: [GenerationRole; 10] = [
        GenerationRole::Summarize,
        GenerationRole::Keywords,
        GenerationRole::ExtractHigh,
        GenerationRole::ExtractMid,
        GenerationRole::ExtractLow,
        GenerationRole::CompleteAttributes,
        GenerationRole::Decompose,
        GenerationRole::RefineQuery,
        GenerationRole::Answer,
        GenerationRole::JudgeClaims,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GenerationRole::Summarize => "summarize",
            GenerationRole::Keywords => "keywords",
            GenerationRole::ExtractHigh => "extract_high",
            GenerationRole::ExtractMid => "extract_mid",
            GenerationRole::ExtractLow => "extract_low",
            GenerationRole::CompleteAttributes => "complete_attributes",
            GenerationRole::Decompose => "decompose",
            GenerationRole::RefineQuery => "refine_query",
            GenerationRole::Answer => "answer",
            GenerationRole::JudgeClaims => "judge_claims",
        }
    }
}

impl fmt::Display for GenerationRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GenerationRole {
    type Err = GatewayError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| GatewayError::Config(format!("unknown generation role '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub role: GenerationRole,
    pub prompt: String,
    #[serde(default)]
    pub temperature: f32,
    #[serde(default = "default_max_output")]
    pub max_output_tokens: u32,
}

fn default_max_output() -> u32 {
    1024
}

impl GenerationRequest {
    pub fn new(role: GenerationRole, prompt: impl Into<String>) -> Self {
        Self {
            role,
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: default_max_output(),
        }
    }
}

/// L2-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`. Fails on an all-zero or non-finite input.
    pub fn normalized(values: Vec<f32>) -> Result<Self> {
        let norm = values.iter().map(|v| f64::from(*v) * f64::from(*v)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(GatewayError::Protocol("embedding has zero or non-finite norm".into()));
        }
        Ok(Self(values.into_iter().map(|v| (f64::from(v) / norm) as f32).collect()))
    }

    /// Wraps values assumed to be normalized already (e.g. loaded from disk).
    pub fn from_raw(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum()
}

/// Cosine similarity; 0 when either side has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Mock,
    /// OpenAI-compatible HTTP API (chat completions + embeddings).
    OpenAi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub generation_model: String,
    pub graph_model: String,
    pub judge_model: String,
    pub embedding_model: String,
    pub reranker_model: Option<String>,
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_s: u64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub mock_seed: u64,
    pub mock_dim: usize,
    /// Injected failures, e.g. `["decompose", "embed"]`. Testing only.
    pub fault_points: Vec<FaultPoint>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            generation_model: "gpt-4o-mini".into(),
            graph_model: "gpt-4o-mini".into(),
            judge_model: "gpt-4o".into(),
            embedding_model: "text-embedding-3-small".into(),
            reranker_model: Some("jina-reranker-v2-base".into()),
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_s: 60,
            max_retries: 2,
            retry_backoff_ms: 250,
            mock_seed: 0,
            mock_dim: 256,
            fault_points: Vec::new(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_s == 0 {
            return Err(GatewayError::Config("timeout_s must be > 0".into()));
        }
        if self.kind == ProviderKind::Mock && self.mock_dim == 0 {
            return Err(GatewayError::Config("mock_dim must be > 0".into()));
        }
        Ok(())
    }

    pub fn model_for(&self, role: GenerationRole) -> &str {
        use GenerationRole::*;
        match role {
            Summarize | Keywords | ExtractHigh | ExtractMid | ExtractLow | CompleteAttributes => &self.graph_model,
            JudgeClaims => &self.judge_model,
            Decompose | RefineQuery | Answer => &self.generation_model,
        }
    }
}

/// A backend capable of the three call kinds. Model names are resolved by
/// the [`Gateway`] from its config.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, model: &str, req: &GenerationRequest) -> Result<String>;

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>>;

    fn rerank(&self, model: &str, query: &str, candidates: &[String]) -> Result<Vec<(usize, f32)>>;

    /// Stable identifier of the embedding space, used for cache keys and
    /// index headers.
    fn embedding_space(&self, model: &str) -> String {
        model.to_string()
    }
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    config: ProviderConfig,
    cache: Option<EmbeddingCache>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider.name())
            .field("embedding_space", &self.embedding_space())
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, config: ProviderConfig) -> Self {
        Self {
            provider,
            config,
            cache: Some(EmbeddingCache::default()),
        }
    }

    /// Mock-backed gateway with default configuration.
    pub fn mock() -> Self {
        Self::from_config(&ProviderConfig::default()).expect("default mock config is valid")
    }

    /// Builds the provider named by `config`, wrapping it with fault
    /// injection when `fault_points` is non-empty. A remote provider whose
    /// key variable is unset is a configuration error.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        config.validate()?;
        let base: Arc<dyn Provider> = match config.kind {
            ProviderKind::Mock => Arc::new(MockProvider::new(config.mock_seed, config.mock_dim)),
            ProviderKind::OpenAi => {
                let key = std::env::var(&config.api_key_env).map_err(|_| {
                    GatewayError::Config(format!(
                        "environment variable {} is not set; it must hold the API key for {}",
                        config.api_key_env, config.endpoint
                    ))
                })?;
                Arc::new(OpenAiProvider::new(&config.endpoint, key, Duration::from_secs(config.timeout_s))?)
            }
        };
        let provider: Arc<dyn Provider> = if config.fault_points.is_empty() {
            base
        } else {
            Arc::new(FaultyProvider::new(base, config.fault_points.iter().copied()))
        };
        Ok(Self::new(provider, config.clone()))
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn embedding_space(&self) -> String {
        self.provider.embedding_space(&self.config.embedding_model)
    }

    pub fn cache(&self) -> Option<&EmbeddingCache> {
        self.cache.as_ref()
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T>) -> Result<T> {
        let mut attempt = 0u32;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let wait = self.config.retry_backoff_ms.saturating_mul(1u64 << attempt.min(16));
                    tracing::warn!(attempt, wait_ms = wait, error = %e, "retrying provider call");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<String> {
        let model = self.config.model_for(req.role).to_string();
        self.with_retries(|| self.provider.generate(&model, req))
    }

    /// Embed every text; vectors are L2-normalized and cached by
    /// (embedding space, content hash).
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
            return Err(GatewayError::Input(format!("text {i} is empty")));
        }
        let space = self.embedding_space();
        let mut out: Vec<Option<EmbeddingVector>> = match &self.cache {
            Some(c) => texts.iter().map(|t| c.get(&space, t)).collect(),
            None => vec![None; texts.len()],
        };
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let raw = self.with_retries(|| self.provider.embed(&self.config.embedding_model, &batch))?;
            if raw.len() != batch.len() {
                return Err(GatewayError::Protocol(format!(
                    "expected {} embeddings, provider returned {}",
                    batch.len(),
                    raw.len()
                )));
            }
            let dim = raw[0].len();
            for (slot, values) in missing.iter().zip(raw) {
                if values.len() != dim {
                    return Err(GatewayError::Protocol("embeddings differ in dimension".into()));
                }
                let v = EmbeddingVector::normalized(values)?;
                if let Some(c) = &self.cache {
                    c.put(&space, &texts[*slot], &v);
                }
                out[*slot] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        Ok(self.embed(&[text.to_string()])?.remove(0))
    }

    /// Indices of `candidates` with descending scores.
    pub fn rerank(&self, query: &str, candidates: &[String]) -> Result<Vec<(usize, f32)>> {
        if candidates.is_empty() {
            return Err(GatewayError::Input("no candidates to rerank".into()));
        }
        let model = self.config.reranker_model.clone().unwrap_or_default();
        let mut scored = self.with_retries(|| self.provider.rerank(&model, query, candidates))?;
        let mut seen = vec![false; candidates.len()];
        for (i, _) in &scored {
            if *i >= candidates.len() || std::mem::replace(&mut seen[*i], true) {
                return Err(GatewayError::Protocol(format!("reranker returned bad index {i}")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(GatewayError::Protocol("reranker dropped candidates".into()));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    pub fn load_cache(&self, path: &Path) -> std::io::Result<()> {
        match &self.cache {
            Some(c) if path.exists() => c.load(path),
            _ => Ok(()),
        }
    }

    pub fn save_cache(&self, path: &Path) -> std::io::Result<()> {
        match &self.cache {
            Some(c) => c.save(path),
            None => Ok(()),
        }
    }
}

/// `<name>\ncontent\n</name>`; the prompt convention shared by all templates.
pub fn tagged(name: &str, content: &str) -> String {
    format!("<{name}>\n{content}\n</{name}>")
}

/// Content of the first `<name>` block in `prompt`, trimmed.
pub fn extract_tag<'a>(prompt: &'a str, name: &str) -> Option<&'a str> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let start = prompt.find(&open)? + open.len();
    let end = prompt[start..].find(&close)? + start;
    Some(prompt[start..end].trim_matches('\n'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_round_trip_names() {
        for r in GenerationRole::ALL {
            assert_eq!(r.as_str().parse::<GenerationRole>().unwrap(), r);
            assert_eq!(serde_json::to_string(&r).unwrap(), format!("\"{}\"", r.as_str()));
        }
        assert!("nope".parse::<GenerationRole>().is_err());
    }

    #[test]
    fn default_models_per_role() {
        let c = ProviderConfig::default();
        assert_eq!(c.model_for(GenerationRole::Answer), "gpt-4o-mini");
        assert_eq!(c.model_for(GenerationRole::ExtractLow), "gpt-4o-mini");
        assert_eq!(c.model_for(GenerationRole::JudgeClaims), "gpt-4o");
        assert_eq!(c.embedding_model, "text-embedding-3-small");
        assert_eq!(c.reranker_model.as_deref(), Some("jina-reranker-v2-base"));
    }

    #[test]
    fn config_invariants() {
        let c = ProviderConfig { timeout_s: 0, ..Default::default() };
        assert!(matches!(Gateway::from_config(&c), Err(GatewayError::Config(_))));
    }

    #[test]
    fn missing_key_env_is_startup_error() {
        let c = ProviderConfig {
            kind: ProviderKind::OpenAi,
            api_key_env: "DSRAG_TEST_SURELY_UNSET_KEY".into(),
            ..Default::default()
        };
        assert!(matches!(Gateway::from_config(&c), Err(GatewayError::Config(_))));
    }

    #[test]
    fn tags_round_trip() {
        let p = format!("Intro\n{}\nOutro", tagged("text", "hello\nworld"));
        assert_eq!(extract_tag(&p, "text"), Some("hello\nworld"));
        assert_eq!(extract_tag(&p, "query"), None);
    }

    #[test]
    fn normalization() {
        let v = EmbeddingVector::normalized(vec![3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_err());
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 0.0]), 0.0);
    }
}
