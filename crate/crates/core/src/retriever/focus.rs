use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::{DegradationFlag, RetrievalConfig, SubQuery};
use crate::concept::ConceptGraph;
use crate::gateway::{tagged, EmbeddingVector, Gateway, GenerationRequest, GenerationRole};
use crate::ingest::SectionLevel;
use crate::instance::{EntityNode, InstanceGraph};
use crate::text::{content_tokens, tokenize};

/// Splits a multi-intent query into sub-queries. Falls back to the query
/// itself when the provider fails or returns nothing usable.
pub fn decompose_query(query: &str, cfg: &RetrievalConfig, gateway: &Gateway) -> (Vec<SubQuery>, Option<DegradationFlag>) {
    let identity = |flag| {
        (
            vec![SubQuery {
                text: query.trim().to_string(),
                index: 0,
                parent_query: query.to_string(),
            }],
            flag,
        )
    };
    let prompt = format!(
        "Split the question into at most {} self-contained sub-questions, one per line, each covering a \
         different aspect. If it asks for one thing only, repeat it unchanged.\n{}",
        cfg.max_subqueries,
        tagged("query", query.trim())
    );
    match gateway.generate(&GenerationRequest::new(GenerationRole::Decompose, prompt)) {
        Ok(out) => {
            let mut seen = HashSet::new();
            let parts: Vec<String> = out
                .lines()
                .map(|l| l.trim().trim_start_matches(['-', '*']).trim().to_string())
                .filter(|l| !l.is_empty() && seen.insert(l.to_lowercase()))
                .take(cfg.max_subqueries)
                .collect();
            if parts.is_empty() {
                return identity(None);
            }
            let subs = parts
                .into_iter()
                .enumerate()
                .map(|(index, text)| SubQuery {
                    text,
                    index,
                    parent_query: query.to_string(),
                })
                .collect();
            (subs, None)
        }
        Err(e) => identity(Some(DegradationFlag::new("decompose", "decompose", &e))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMatch {
    pub concept_id: String,
    pub score: f64,
    /// Kept because one of its keywords occurs in the query.
    pub by_keyword: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneLayer {
    pub depth: usize,
    pub candidates: Vec<ConceptMatch>,
    pub kept: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConceptFocus {
    pub matched: Vec<ConceptMatch>,
    pub surviving_sections: BTreeSet<String>,
    pub layers: Vec<PruneLayer>,
    pub low_confidence: bool,
}

fn padded(tokens: &[String]) -> String {
    format!(" {} ", tokens.join(" "))
}

fn sort_matches(v: &mut [ConceptMatch]) {
    v.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.concept_id.cmp(&b.concept_id)));
}

/// Layer-wise descent of the concept graph. At each layer the candidates
/// are the children of the nodes kept at the previous layer; a candidate
/// is kept when it is among the top `concept_top_m` at or above the
/// similarity threshold, or when one of its keywords occurs in the query
/// (whatever its score).
/// The matches are the kept leaves (sections, or childless nodes higher
/// up); when the descent keeps no leaf at all, the deepest non-empty kept
/// layer is matched instead. Without an embedding only keyword matches
/// count.
pub fn focus_concepts(sq: &str, q_emb: Option<&EmbeddingVector>, cg: &ConceptGraph, cfg: &RetrievalConfig) -> ConceptFocus {
    let mut focus = ConceptFocus::default();
    if cg.is_empty() {
        focus.low_confidence = true;
        return focus;
    }
    let query = padded(&tokenize(sq));
    let score = |id: &str| -> ConceptMatch {
        let n = cg.node(id).expect("candidate exists");
        let s = q_emb.map_or(0.0, |q| q.dot(&n.summary_embedding));
        let by_keyword = n
            .keywords
            .iter()
            .map(|k| tokenize(k))
            .any(|t| !t.is_empty() && query.contains(&padded(&t)));
        ConceptMatch {
            concept_id: id.to_string(),
            score: s,
            by_keyword,
        }
    };

    let mut candidates: Vec<String> = cg.roots().to_vec();
    let mut leaves: BTreeMap<String, ConceptMatch> = BTreeMap::new();
    let mut deepest: Vec<ConceptMatch> = Vec::new();
    let mut depth = 0;
    while !candidates.is_empty() {
        let mut scored: Vec<ConceptMatch> = candidates.iter().map(|c| score(c)).collect();
        sort_matches(&mut scored);
        let mut kept: Vec<ConceptMatch> = scored.iter().filter(|m| m.by_keyword).cloned().collect();
        kept.extend(
            scored
                .iter()
                .filter(|m| m.score >= cfg.concept_sim_threshold)
                .take(cfg.concept_top_m)
                .filter(|m| !m.by_keyword)
                .cloned(),
        );
        if depth == 0 && kept.is_empty() {
            focus.low_confidence = true;
            kept = scored.iter().take(cfg.concept_top_m).cloned().collect();
        }
        sort_matches(&mut kept);
        focus.layers.push(PruneLayer {
            depth,
            candidates: scored.clone(),
            kept: kept.iter().map(|m| m.concept_id.clone()).collect(),
        });
        if !kept.is_empty() {
            deepest = kept.clone();
        }
        let mut next = Vec::new();
        let mut seen = HashSet::new();
        for m in kept {
            let node = cg.node(&m.concept_id).expect("kept node exists");
            let children = cg.children(&m.concept_id);
            if node.level < SectionLevel::Section && !children.is_empty() {
                next.extend(children.iter().filter(|c| seen.insert(c.as_str())).cloned());
            } else {
                leaves.insert(m.concept_id.clone(), m);
            }
        }
        candidates = next;
        depth += 1;
    }
    // kept leaves win; otherwise the descent stopped early and the deepest
    // kept layer stands in for them
    let matched = if leaves.is_empty() {
        deepest.into_iter().map(|m| (m.concept_id.clone(), m)).collect()
    } else {
        leaves
    };
    focus.matched = matched.into_values().collect();
    sort_matches(&mut focus.matched);
    for m in &focus.matched {
        focus
            .surviving_sections
            .extend(cg.subtree_sections(&m.concept_id).expect("matched node exists"));
    }
    focus
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceSubgraph {
    pub entity_ids: BTreeSet<String>,
    pub relation_ids: BTreeSet<String>,
    pub seed_ids: BTreeSet<String>,
}

/// Concept node ids covered by the matched concepts' subtrees.
pub fn concept_boundary(matched: &[ConceptMatch], cg: &ConceptGraph) -> BTreeSet<String> {
    matched
        .iter()
        .filter_map(|m| cg.concept_subtree(&m.concept_id).ok())
        .flatten()
        .collect()
}

/// Tokens plus the parts of snake_case identifiers.
pub(crate) fn match_tokens(text: &str) -> impl Iterator<Item = String> {
    tokenize(text).into_iter().flat_map(|t| {
        let mut v: Vec<String> = t.split('_').filter(|p| !p.is_empty()).map(str::to_string).collect();
        if v.len() > 1 {
            v.push(t);
        }
        v
    })
}

pub(crate) fn query_match_tokens(sq: &str) -> HashSet<String> {
    content_tokens(sq).into_iter().flat_map(|t| match_tokens(&t).collect::<Vec<_>>()).collect()
}

/// Number of distinct query tokens found in the entity's name or
/// attribute values.
pub(crate) fn query_overlap(e: &EntityNode, q: &HashSet<String>) -> usize {
    let mut own: HashSet<String> = match_tokens(&e.name_norm).collect();
    for (_, v) in e.visible_attributes() {
        own.extend(match_tokens(v));
    }
    own.intersection(q).count()
}

/// Entities inside the concept boundary whose name or attribute values
/// share a content token with the sub-query, expanded `hop_limit` hops
/// along relations without leaving the boundary.
pub fn focus_instances(
    matched: &[ConceptMatch],
    cg: &ConceptGraph,
    ig: &InstanceGraph,
    sq: &str,
    hop_limit: usize,
) -> InstanceSubgraph {
    let mut out = InstanceSubgraph::default();
    let boundary = concept_boundary(matched, cg);
    if boundary.is_empty() {
        return out;
    }
    let q = query_match_tokens(sq);
    for c in &boundary {
        for id in ig.ids_by_concept(c) {
            let e = ig.entity(id).expect("indexed entity");
            if query_overlap(e, &q) > 0 {
                out.seed_ids.insert(id.clone());
            }
        }
    }
    out.entity_ids = out.seed_ids.clone();
    let mut frontier: Vec<String> = out.seed_ids.iter().cloned().collect();
    for _ in 0..hop_limit {
        let mut next = Vec::new();
        for id in &frontier {
            for r in ig.relations_of(id) {
                let other = if &r.src == id { &r.dst } else { &r.src };
                let inside = ig.entity(other).is_some_and(|e| boundary.contains(&e.concept_node_id));
                if inside && out.entity_ids.insert(other.clone()) {
                    next.push(other.clone());
                }
            }
        }
        frontier = next;
    }
    for id in &out.entity_ids {
        for r in ig.relations_of(id) {
            if out.entity_ids.contains(&r.src) && out.entity_ids.contains(&r.dst) {
                out.relation_ids.insert(r.id.clone());
            }
        }
    }
    out
}
