use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{GatewayError, GenerationRequest, GenerationRole, Provider, Result};

/// A call site that can be made to fail on purpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FaultPoint {
    Role(GenerationRole),
    Embed,
    Rerank,
}

impl fmt::Display for FaultPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultPoint::Role(r) => f.write_str(r.as_str()),
            FaultPoint::Embed => f.write_str("embed"),
            FaultPoint::Rerank => f.write_str("rerank"),
        }
    }
}

impl FromStr for FaultPoint {
    type Err = GatewayError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "embed" => Ok(FaultPoint::Embed),
            "rerank" => Ok(FaultPoint::Rerank),
            other => other.parse().map(FaultPoint::Role),
        }
    }
}

impl TryFrom<String> for FaultPoint {
    type Error = GatewayError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FaultPoint> for String {
    fn from(f: FaultPoint) -> String {
        f.to_string()
    }
}

/// Wraps a provider and fails every call at the configured points with a
/// transport error.
pub struct FaultyProvider {
    inner: Arc<dyn Provider>,
    points: BTreeSet<FaultPoint>,
}

impl FaultyProvider {
    pub fn new(inner: Arc<dyn Provider>, points: impl IntoIterator<Item = FaultPoint>) -> Self {
        Self {
            inner,
            points: points.into_iter().collect(),
        }
    }

    fn check(&self, point: FaultPoint) -> Result<()> {
        if self.points.contains(&point) {
            Err(GatewayError::Transport(format!("injected fault at {point}")))
        } else {
            Ok(())
        }
    }
}

impl Provider for FaultyProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn generate(&self, model: &str, req: &GenerationRequest) -> Result<String> {
        self.check(FaultPoint::Role(req.role))?;
        self.inner.generate(model, req)
    }

    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.check(FaultPoint::Embed)?;
        self.inner.embed(model, texts)
    }

    fn rerank(&self, model: &str, query: &str, candidates: &[String]) -> Result<Vec<(usize, f32)>> {
        self.check(FaultPoint::Rerank)?;
        self.inner.rerank(model, query, candidates)
    }

    fn embedding_space(&self, model: &str) -> String {
        self.inner.embedding_space(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ProviderConfig};

    #[test]
    fn parse_points() {
        assert_eq!("embed".parse::<FaultPoint>().unwrap(), FaultPoint::Embed);
        assert_eq!(
            "answer".parse::<FaultPoint>().unwrap(),
            FaultPoint::Role(GenerationRole::Answer)
        );
        let v: Vec<FaultPoint> = serde_json::from_str(r#"["rerank","decompose"]"#).unwrap();
        assert_eq!(v.len(), 2);
        assert!("bogus".parse::<FaultPoint>().is_err());
    }

    #[test]
    fn injected_role_fails_others_pass() {
        let cfg = ProviderConfig {
            fault_points: vec![FaultPoint::Role(GenerationRole::Decompose)],
            max_retries: 1,
            retry_backoff_ms: 1,
            ..Default::default()
        };
        let gw = Gateway::from_config(&cfg).unwrap();
        let err = gw
            .generate(&GenerationRequest::new(GenerationRole::Decompose, "q"))
            .unwrap_err();
        assert!(matches!(err, GatewayError::Transport(_)));
        assert!(gw.generate(&GenerationRequest::new(GenerationRole::Keywords, "alpha beta")).is_ok());
        assert!(gw.embed_one("alpha").is_ok());
    }
}
