//! Graph-guided retrieval: decomposition, concept pruning, instance
//! focusing, refined graph-scoped vector search.

mod context;
mod focus;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{merge_focus_results, refine_query, GraphContext, ScoredEntity};
pub use focus::{concept_boundary, decompose_query, focus_concepts, focus_instances, ConceptFocus, ConceptMatch, InstanceSubgraph, PruneLayer};

use crate::concept::ConceptGraph;
use crate::gateway::{EmbeddingVector, Gateway};
use crate::index::{rerank_hits, SearchHit, SectionFilter, VectorIndex};
use crate::ingest::{Chunk, TokenEstimator};
use crate::instance::InstanceGraph;
use crate::qa::DialogueTurn;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty query")]
    EmptyQuery,
    #[error("invalid retrieval config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub max_subqueries: usize,
    pub concept_top_m: usize,
    pub concept_sim_threshold: f64,
    pub k_chunks: usize,
    pub k_final: usize,
    pub instance_hop_limit: usize,
    pub rerank_enabled: bool,
    pub graph_budget_tokens: usize,
    pub token_estimator: TokenEstimator,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            max_subqueries: 4,
            concept_top_m: 3,
            concept_sim_threshold: 0.25,
            k_chunks: 5,
            k_final: 8,
            instance_hop_limit: 1,
            rerank_enabled: false,
            graph_budget_tokens: 1200,
            token_estimator: TokenEstimator::default(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let positive = [
            ("max_subqueries", self.max_subqueries),
            ("concept_top_m", self.concept_top_m),
            ("k_chunks", self.k_chunks),
            ("k_final", self.k_final),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(RetrievalError::Config(format!("{name} must be positive")));
        }
        if !(-1.0..=1.0).contains(&self.concept_sim_threshold) {
            return Err(RetrievalError::Config("concept_sim_threshold must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Ablation switch. `Flat` is plain vector search, `ConceptOnly` adds
/// decomposition and concept pruning, `Full` adds instance focusing and
/// query refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Flat,
    ConceptOnly,
    #[default]
    Full,
}

impl RetrievalMode {
    pub const ALL: [RetrievalMode; 3] = [RetrievalMode::Flat, RetrievalMode::ConceptOnly, RetrievalMode::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::Flat => "flat",
            RetrievalMode::ConceptOnly => "concept_only",
            RetrievalMode::Full => "full",
        }
    }
}

impl fmt::Display for RetrievalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        RetrievalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown retrieval mode {s:?} (expected flat, concept_only or full)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineTemplate {
    EntityGrounded,
    SectionGrounded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQuery {
    pub text: String,
    pub index: usize,
    pub parent_query: String,
}

/// A stage that fell back instead of failing. `point` names the gateway
/// role or call that failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegradationFlag {
    pub stage: String,
    pub point: String,
    pub message: String,
}

impl DegradationFlag {
    pub fn new(stage: &str, point: &str, err: &dyn fmt::Display) -> Self {
        DegradationFlag {
            stage: stage.to_string(),
            point: point.to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusResult {
    pub sub_query: SubQuery,
    pub matched_concepts: Vec<ConceptMatch>,
    pub surviving_sections: BTreeSet<String>,
    pub instance_subgraph: InstanceSubgraph,
    pub layers: Vec<PruneLayer>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub sub_query_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<RefineTemplate>,
    pub query: String,
    /// `None` means unfiltered.
    pub allowed_sections: Option<BTreeSet<String>>,
    pub hits: Vec<SearchHit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub mode: RetrievalMode,
    pub query: String,
    pub sub_queries: Vec<SubQuery>,
    pub focus: Vec<FocusResult>,
    pub refined_queries: Vec<String>,
    pub searches: Vec<SearchTrace>,
    pub flags: Vec<DegradationFlag>,
}

impl Trace {
    /// Chunks among `hits` whose section survived no sub-query's pruning.
    /// Always empty in flat mode, which does not prune.
    pub fn pruning_violations<'a>(&self, hits: &'a [VectorHit]) -> Vec<&'a str> {
        if self.mode == RetrievalMode::Flat {
            return Vec::new();
        }
        hits.iter()
            .filter(|h| !self.focus.iter().any(|f| f.surviving_sections.contains(&h.section_id)))
            .map(|h| h.chunk_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorHit {
    pub chunk_id: String,
    pub section_id: String,
    pub score: f64,
    pub rank: usize,
    pub excerpt: String,
    pub breadcrumb: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedSearchContext {
    pub query: String,
    pub graph_context: GraphContext,
    pub vector_hits: Vec<VectorHit>,
    pub history: Vec<DialogueTurn>,
    pub refined_queries: Vec<String>,
    pub trace: Trace,
}

impl UnifiedSearchContext {
    pub fn degradation_flags(&self) -> &[DegradationFlag] {
        &self.trace.flags
    }
}

/// Immutable snapshot of everything retrieval reads.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub concepts: ConceptGraph,
    pub instances: InstanceGraph,
    pub index: VectorIndex,
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
}

impl KnowledgeBase {
    pub fn new(concepts: ConceptGraph, instances: InstanceGraph, index: VectorIndex, chunks: Vec<Chunk>) -> Self {
        let by_id = chunks.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();
        KnowledgeBase {
            concepts,
            instances,
            index,
            chunks,
            by_id,
        }
    }

    pub fn chunk(&self, id: &str) -> Option<&Chunk> {
        self.by_id.get(id).map(|&i| &self.chunks[i])
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }
}

fn embed_all(texts: &[String], gateway: &Gateway, stage: &str, flags: &mut Vec<DegradationFlag>) -> Vec<Option<EmbeddingVector>> {
    match gateway.embed(texts) {
        Ok(v) => v.into_iter().map(Some).collect(),
        Err(e) => {
            flags.push(DegradationFlag::new(stage, "embed", &e));
            vec![None; texts.len()]
        }
    }
}

fn search(
    kb: &KnowledgeBase,
    q: Option<&EmbeddingVector>,
    k: usize,
    filter: Option<&SectionFilter>,
    flags: &mut Vec<DegradationFlag>,
) -> Vec<SearchHit> {
    let Some(q) = q else { return Vec::new() };
    match kb.index.search(q.values(), k, filter) {
        Ok(h) => h,
        Err(e) => {
            flags.push(DegradationFlag::new("vector_search", "embed", &e));
            Vec::new()
        }
    }
}

/// Runs the retrieval pipeline for one question. Gateway failures degrade
/// the affected stage and are recorded in the trace; the call itself only
/// fails on invalid input.
pub fn retrieve(
    query: &str,
    history: &[DialogueTurn],
    kb: &KnowledgeBase,
    cfg: &RetrievalConfig,
    mode: RetrievalMode,
    gateway: &Gateway,
) -> Result<UnifiedSearchContext, RetrievalError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    cfg.validate()?;
    let mut flags = Vec::new();

    let sub_queries = if mode == RetrievalMode::Flat {
        vec![SubQuery {
            text: query.to_string(),
            index: 0,
            parent_query: query.to_string(),
        }]
    } else {
        let (subs, flag) = decompose_query(query, cfg, gateway);
        flags.extend(flag);
        subs
    };
    let sq_texts: Vec<String> = sub_queries.iter().map(|s| s.text.clone()).collect();
    let sq_embs = embed_all(&sq_texts, gateway, "embed_query", &mut flags);

    let mut focus = Vec::new();
    if mode != RetrievalMode::Flat {
        for (sq, emb) in sub_queries.iter().zip(&sq_embs) {
            let cf = focus_concepts(&sq.text, emb.as_ref(), &kb.concepts, cfg);
            let instance_subgraph = if mode == RetrievalMode::Full {
                focus_instances(&cf.matched, &kb.concepts, &kb.instances, &sq.text, cfg.instance_hop_limit)
            } else {
                InstanceSubgraph::default()
            };
            focus.push(FocusResult {
                sub_query: sq.clone(),
                matched_concepts: cf.matched,
                surviving_sections: cf.surviving_sections,
                instance_subgraph,
                layers: cf.layers,
                low_confidence: cf.low_confidence,
            });
        }
    }
    let graph_context = merge_focus_results(&focus, &kb.concepts, &kb.instances, cfg.graph_budget_tokens, cfg.token_estimator);
    let incomplete = graph_context.entities[..graph_context.rendered_entities]
        .iter()
        .filter(|e| e.entity.is_incomplete())
        .count();
    if incomplete > 0 {
        flags.push(DegradationFlag {
            stage: "graph_context".into(),
            point: "complete_attributes".into(),
            message: format!("{incomplete} entities in the graph context missed attribute completion at build time"),
        });
    }

    let mut searches = Vec::new();
    let mut refined_queries = Vec::new();
    match mode {
        RetrievalMode::Flat => {
            let hits = search(kb, sq_embs[0].as_ref(), cfg.k_final, None, &mut flags);
            searches.push(SearchTrace {
                sub_query_index: 0,
                template: None,
                query: query.to_string(),
                allowed_sections: None,
                hits,
            });
        }
        RetrievalMode::ConceptOnly => {
            for (f, emb) in focus.iter().zip(&sq_embs) {
                let filter = SectionFilter::new(f.surviving_sections.iter().cloned());
                let hits = search(kb, emb.as_ref(), cfg.k_chunks, Some(&filter), &mut flags);
                searches.push(SearchTrace {
                    sub_query_index: f.sub_query.index,
                    template: None,
                    query: f.sub_query.text.clone(),
                    allowed_sections: Some(f.surviving_sections.clone()),
                    hits,
                });
            }
        }
        RetrievalMode::Full => {
            let mut planned = Vec::new();
            for f in &focus {
                let own = merge_focus_results(
                    std::slice::from_ref(f),
                    &kb.concepts,
                    &kb.instances,
                    cfg.graph_budget_tokens,
                    cfg.token_estimator,
                );
                let mut texts: Vec<String> = Vec::new();
                for template in [RefineTemplate::EntityGrounded, RefineTemplate::SectionGrounded] {
                    let text = match refine_query(&f.sub_query.text, &own, template, gateway) {
                        Ok(t) => t,
                        Err(e) => {
                            let stage = format!("refine_query:{}", serde_json::to_value(template).unwrap().as_str().unwrap());
                            flags.push(DegradationFlag::new(&stage, "refine_query", &e));
                            f.sub_query.text.clone()
                        }
                    };
                    if !texts.contains(&text) {
                        texts.push(text.clone());
                        planned.push((f, template, text));
                    }
                }
            }
            let texts: Vec<String> = planned.iter().map(|p| p.2.clone()).collect();
            let embs = embed_all(&texts, gateway, "embed_refined", &mut flags);
            for ((f, template, text), emb) in planned.into_iter().zip(&embs) {
                let filter = SectionFilter::new(f.surviving_sections.iter().cloned());
                let hits = search(kb, emb.as_ref(), cfg.k_chunks, Some(&filter), &mut flags);
                refined_queries.push(text.clone());
                searches.push(SearchTrace {
                    sub_query_index: f.sub_query.index,
                    template: Some(template),
                    query: text,
                    allowed_sections: Some(f.surviving_sections.clone()),
                    hits,
                });
            }
        }
    }

    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for s in &searches {
        for h in &s.hits {
            let e = best.entry(h.chunk_id.as_str()).or_insert(h.score);
            *e = e.max(h.score);
        }
    }
    let mut merged: Vec<SearchHit> = best
        .into_iter()
        .map(|(id, score)| SearchHit {
            chunk_id: id.to_string(),
            score,
            rank: 0,
        })
        .collect();
    merged.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    if cfg.rerank_enabled {
        let text_of = |id: &str| kb.chunk(id).map(|c| c.own_content().to_string()).unwrap_or_default();
        let (reranked, err) = rerank_hits(query, merged, text_of, gateway);
        merged = reranked;
        if let Some(e) = err {
            flags.push(DegradationFlag::new("rerank", "rerank", &e));
        }
    }
    merged.truncate(cfg.k_final);

    let vector_hits = merged
        .into_iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let c = kb.chunk(&h.chunk_id)?;
            Some(VectorHit {
                chunk_id: h.chunk_id,
                section_id: c.section_id.clone(),
                score: h.score,
                rank: i + 1,
                excerpt: c.own_content().to_string(),
                breadcrumb: c.context_header.clone(),
            })
        })
        .collect();

    Ok(UnifiedSearchContext {
        query: query.to_string(),
        graph_context,
        vector_hits,
        history: history.to_vec(),
        refined_queries: refined_queries.clone(),
        trace: Trace {
            mode,
            query: query.to_string(),
            sub_queries,
            focus,
            refined_queries,
            searches,
            flags,
        },
    })
}

#[cfg(test)]
mod tests;
