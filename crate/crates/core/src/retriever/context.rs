use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::focus::{query_match_tokens, query_overlap};
use super::{FocusResult, RefineTemplate};
use crate::concept::ConceptGraph;
use crate::gateway::{tagged, Gateway, GatewayError, GenerationRequest, GenerationRole};
use crate::ingest::TokenEstimator;
use crate::instance::{EntityNode, InstanceGraph, RelationEdge};

const REFINE_ENTITIES: usize = 5;
const REFINE_SECTIONS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub entity: EntityNode,
    pub score: f64,
    /// Distinct sub-query tokens shared with the entity's name or
    /// attributes (best over sub-queries); zero for hop neighbours.
    #[serde(default)]
    pub overlap: usize,
}

/// Merged graph evidence for one query: entities and relations from all
/// sub-queries, the matched concept paths, and a rendering of both cut to
/// the token budget.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphContext {
    pub concept_paths: Vec<String>,
    pub entities: Vec<ScoredEntity>,
    pub relations: Vec<RelationEdge>,
    pub budget_tokens: usize,
    pub rendered: String,
    pub rendered_entities: usize,
}

impl GraphContext {
    pub fn is_empty(&self) -> bool {
        self.concept_paths.is_empty() && self.entities.is_empty()
    }
}

fn entity_line(e: &EntityNode) -> String {
    let attrs: Vec<String> = e.visible_attributes().map(|(k, v)| format!("{k} = {v}")).collect();
    if attrs.is_empty() {
        format!("- {} ({})", e.name, e.entity_class)
    } else {
        format!("- {} ({}): {}", e.name, e.entity_class, attrs.join("; "))
    }
}

/// Unions the sub-query results. Each entity is scored by the best
/// matched concept whose subtree contains it; rendering proceeds in score
/// order so the lowest-scoring concepts' entities are dropped first.
/// Within a concept, entities sharing more query tokens come first.
pub fn merge_focus_results(
    results: &[FocusResult],
    cg: &ConceptGraph,
    ig: &InstanceGraph,
    budget_tokens: usize,
    estimator: TokenEstimator,
) -> GraphContext {
    let mut concept_scores: BTreeMap<String, f64> = BTreeMap::new();
    let mut entity_scores: BTreeMap<String, f64> = BTreeMap::new();
    let mut relation_ids = Vec::new();
    let mut overlaps: HashMap<String, usize> = HashMap::new();
    for r in results {
        let q = query_match_tokens(&r.sub_query.text);
        for id in &r.instance_subgraph.seed_ids {
            if let Some(e) = ig.entity(id) {
                let o = overlaps.entry(id.clone()).or_default();
                *o = (*o).max(query_overlap(e, &q));
            }
        }
        let mut covered: HashMap<String, f64> = HashMap::new();
        for m in &r.matched_concepts {
            let best = concept_scores.entry(m.concept_id.clone()).or_insert(m.score);
            *best = best.max(m.score);
            for c in cg.concept_subtree(&m.concept_id).into_iter().flatten() {
                let s = covered.entry(c).or_insert(m.score);
                *s = s.max(m.score);
            }
        }
        for id in &r.instance_subgraph.entity_ids {
            let Some(e) = ig.entity(id) else { continue };
            let s = covered.get(&e.concept_node_id).copied().unwrap_or(0.0);
            let best = entity_scores.entry(id.clone()).or_insert(s);
            *best = best.max(s);
        }
        relation_ids.extend(r.instance_subgraph.relation_ids.iter().cloned());
    }

    let mut concepts: Vec<(String, f64)> = concept_scores.into_iter().collect();
    concepts.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let concept_paths: Vec<String> = concepts.iter().filter_map(|(id, _)| cg.node(id)).map(|n| n.path()).collect();

    let mut entities: Vec<ScoredEntity> = entity_scores
        .into_iter()
        .filter_map(|(id, score)| {
            ig.entity(&id).map(|e| ScoredEntity {
                entity: e.clone(),
                score,
                overlap: overlaps.get(&id).copied().unwrap_or(0),
            })
        })
        .collect();
    entities.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.overlap.cmp(&a.overlap))
            .then_with(|| a.entity.id.cmp(&b.entity.id))
    });

    relation_ids.sort();
    relation_ids.dedup();
    let rank: HashMap<&str, usize> = entities.iter().enumerate().map(|(i, e)| (e.entity.id.as_str(), i)).collect();
    let mut relations: Vec<RelationEdge> = ig
        .relations()
        .iter()
        .filter(|r| relation_ids.binary_search(&r.id).is_ok())
        .cloned()
        .collect();
    let key = |r: &RelationEdge| rank.get(r.src.as_str()).max(rank.get(r.dst.as_str())).copied().unwrap_or(usize::MAX);
    relations.sort_by(|a, b| key(a).cmp(&key(b)).then_with(|| a.id.cmp(&b.id)));

    let mut gc = GraphContext {
        concept_paths,
        entities,
        relations,
        budget_tokens,
        ..Default::default()
    };
    render(&mut gc, ig, estimator);
    gc
}

fn render(gc: &mut GraphContext, ig: &InstanceGraph, estimator: TokenEstimator) {
    let mut out = String::new();
    let fits = |out: &str, extra: &str| estimator.estimate(&format!("{out}{extra}")) <= gc.budget_tokens;
    let push_block = |out: &mut String, header: &str, lines: Vec<String>| -> Vec<bool> {
        let mut placed = Vec::new();
        let mut started = false;
        for line in lines {
            let piece = if started { format!("{line}\n") } else { format!("{header}\n{line}\n") };
            if fits(out, &piece) {
                out.push_str(&piece);
                started = true;
                placed.push(true);
            } else {
                break;
            }
        }
        placed
    };
    if gc.budget_tokens > 0 {
        push_block(&mut out, "Concepts:", gc.concept_paths.iter().map(|p| format!("- {p}")).collect());
        let placed = push_block(&mut out, "Entities:", gc.entities.iter().map(|e| entity_line(&e.entity)).collect());
        gc.rendered_entities = placed.len();
        let shown: std::collections::HashSet<&str> =
            gc.entities[..placed.len()].iter().map(|e| e.entity.id.as_str()).collect();
        let rel_lines: Vec<String> = gc
            .relations
            .iter()
            .filter(|r| shown.contains(r.src.as_str()) && shown.contains(r.dst.as_str()))
            .filter_map(|r| {
                let s = ig.entity(&r.src)?;
                let d = ig.entity(&r.dst)?;
                Some(format!("- {} --{}--> {}", s.name, r.predicate, d.name))
            })
            .collect();
        push_block(&mut out, "Relations:", rel_lines);
    }
    gc.rendered = out.trim_end().to_string();
}

/// Rewrites the query with graph evidence: the names of the entities
/// sharing the most query tokens (the top-ranked entities when none share
/// any) for the entity-grounded template, concept breadcrumbs
/// for the section-grounded one. Without such evidence the query is returned unchanged and no call
/// is made.
pub fn refine_query(query: &str, gc: &GraphContext, template: RefineTemplate, gateway: &Gateway) -> Result<String, GatewayError> {
    let (tag, lines, instruction): (&str, Vec<String>, &str) = match template {
        RefineTemplate::EntityGrounded => {
            let mut seen = std::collections::HashSet::new();
            let best = gc.entities.iter().map(|e| e.overlap).max().unwrap_or(0);
            let ranked = gc.entities.iter().filter(|e| e.overlap == best);
            let names = ranked
                .filter(|e| seen.insert(e.entity.name_norm.clone()))
                .take(REFINE_ENTITIES)
                .map(|e| e.entity.name.clone())
                .collect();
            ("entities", names, "Rewrite the question so that it names the relevant entities listed below.")
        }
        RefineTemplate::SectionGrounded => (
            "sections",
            gc.concept_paths.iter().take(REFINE_SECTIONS).cloned().collect(),
            "Rewrite the question so that it targets the documentation sections listed below.",
        ),
    };
    if lines.is_empty() {
        return Ok(query.trim().to_string());
    }
    let prompt = format!(
        "{instruction} Return only the rewritten question.\n{}\n{}",
        tagged("query", query.trim()),
        tagged(tag, &lines.join("\n"))
    );
    let out = gateway.generate(&GenerationRequest::new(GenerationRole::RefineQuery, prompt))?;
    let out = crate::text::collapse_whitespace(&out);
    Ok(if out.is_empty() { query.trim().to_string() } else { out })
}
