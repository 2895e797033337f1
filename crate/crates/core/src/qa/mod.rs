//! Prompt assembly, answer generation and dialogue sessions.

pub mod prompt;
mod session;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompt::{PromptTemplate, TemplateError};
pub use session::{now_ms, DialogueTurn, Session, SessionHandle, SessionStore, TurnRole};

use crate::gateway::{Gateway, GenerationRequest, GenerationRole};
use crate::ingest::TokenEstimator;
use crate::retriever::{retrieve, DegradationFlag, KnowledgeBase, RetrievalConfig, RetrievalError, RetrievalMode, UnifiedSearchContext};
use crate::text::{sha256_hex, short_hash};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaConfig {
    pub max_history_turns: usize,
    /// Path to a template file; the built-in template when unset.
    pub prompt_template: Option<String>,
    pub prompt_budget_tokens: usize,
}

impl Default for QaConfig {
    fn default() -> Self {
        QaConfig {
            max_history_turns: 6,
            prompt_template: None,
            prompt_budget_tokens: 6000,
        }
    }
}

#[derive(Debug, Error)]
pub enum QaError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub query_id: String,
    pub text: String,
    pub citations: Vec<String>,
    pub graph_entities_used: Vec<String>,
    pub degradation_flags: Vec<DegradationFlag>,
    pub latency_ms: u64,
    /// Generation failed; `text` explains and the session was not extended.
    #[serde(default)]
    pub failed: bool,
}

impl Answer {
    pub fn is_degraded(&self) -> bool {
        !self.degradation_flags.is_empty()
    }
}

fn render_history(turns: &[DialogueTurn]) -> String {
    turns
        .iter()
        .map(|t| {
            let who = match t.role {
                TurnRole::User => "User",
                TurnRole::Assistant => "Assistant",
            };
            format!("{who}: {}", t.text)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn passage_block(h: &crate::retriever::VectorHit) -> String {
    if h.breadcrumb.is_empty() {
        format!("[chunk:{}]\n{}", h.chunk_id, h.excerpt)
    } else {
        format!("[chunk:{}] {}\n{}", h.chunk_id, h.breadcrumb, h.excerpt)
    }
}

/// Renders the answer prompt. Passages are dropped from the lowest rank
/// upward until the prompt fits `budget_tokens`.
pub fn build_prompt(usc: &UnifiedSearchContext, template: &PromptTemplate, budget_tokens: usize, estimator: TokenEstimator) -> String {
    let history = render_history(&usc.history);
    let blocks: Vec<String> = usc.vector_hits.iter().map(passage_block).collect();
    let mut keep = blocks.len();
    loop {
        let prompt = template.render(&usc.graph_context.rendered, &blocks[..keep].join("\n\n"), &history, &usc.query);
        if keep == 0 || estimator.estimate(&prompt) <= budget_tokens {
            return prompt;
        }
        keep -= 1;
    }
}

/// Chunk ids named by `[chunk:<id>]` markers, in order of first use.
pub fn parse_citations(text: &str) -> Vec<String> {
    let re = regex::Regex::new(r"\[chunk:([^\]\s]+)\]").expect("static regex");
    let mut seen = BTreeSet::new();
    re.captures_iter(text)
        .map(|c| c[1].to_string())
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

pub fn context_digest(usc: &UnifiedSearchContext) -> String {
    let json = serde_json::to_vec(usc).expect("context serializes");
    sha256_hex(&json)[..16].to_string()
}

pub struct QaRequest<'a> {
    pub kb: &'a KnowledgeBase,
    pub retrieval: &'a RetrievalConfig,
    pub qa: &'a QaConfig,
    pub template: &'a PromptTemplate,
    pub mode: RetrievalMode,
    pub gateway: &'a Gateway,
}

/// Retrieves, prompts and generates for one question, then appends the
/// exchange to the session. A generation failure yields a flagged answer
/// and leaves the session as it was.
pub fn answer(question: &str, session: &mut Session, req: &QaRequest<'_>) -> Result<(Answer, UnifiedSearchContext), QaError> {
    let started = Instant::now();
    let query_id = format!("q-{}", short_hash(&[&session.id, &session.turns.len().to_string(), question.trim()]));
    let usc = retrieve(question, session.history(), req.kb, req.retrieval, req.mode, req.gateway)?;
    let prompt = build_prompt(&usc, req.template, req.qa.prompt_budget_tokens, req.retrieval.token_estimator);
    let mut flags = usc.trace.flags.clone();
    let graph_entities_used: Vec<String> = usc.graph_context.entities[..usc.graph_context.rendered_entities]
        .iter()
        .map(|e| e.entity.id.clone())
        .collect();

    let generated = req.gateway.generate(&GenerationRequest::new(GenerationRole::Answer, prompt));
    let text = match generated {
        Ok(t) => t.trim().to_string(),
        Err(e) => {
            flags.push(DegradationFlag::new("answer", "answer", &e));
            let answer = Answer {
                query_id,
                text: format!("The answer could not be generated: {e}"),
                citations: Vec::new(),
                graph_entities_used,
                degradation_flags: flags,
                latency_ms: started.elapsed().as_millis() as u64,
                failed: true,
            };
            return Ok((answer, usc));
        }
    };

    let mut citations = Vec::new();
    for id in parse_citations(&text) {
        if req.kb.chunk(&id).is_some() {
            citations.push(id);
        } else {
            flags.push(DegradationFlag {
                stage: "citations".into(),
                point: "answer".into(),
                message: format!("dropped unresolvable citation {id}"),
            });
        }
    }
    session.push_exchange(question.trim(), &text, Some(context_digest(&usc)));
    let answer = Answer {
        query_id,
        text,
        citations,
        graph_entities_used,
        degradation_flags: flags,
        latency_ms: started.elapsed().as_millis() as u64,
        failed: false,
    };
    Ok((answer, usc))
}
