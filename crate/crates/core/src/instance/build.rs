use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    complete_attributes, dedup_relations, extract_high_level, extract_low_level, extract_mid_level, merge_entities,
    ChunkExtraction, EntityClass, EntityNode, InstanceError, InstanceGraph, RelationEdge, INCOMPLETE_KEY,
};
use crate::concept::{concept_id, ConceptGraph};
use crate::gateway::{Gateway, GatewayError};
use crate::ingest::{Chunk, Document, Modality};
use crate::store;

/// Domain ontology hints injected into mid-level extraction prompts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    #[serde(default)]
    pub classes: Vec<String>,
    #[serde(default)]
    pub seed_terms: Vec<String>,
}

impl Ontology {
    pub fn load(path: &Path) -> Result<Self, InstanceError> {
        Ok(store::read_json(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceBuildOptions {
    pub complete_attributes: bool,
    /// Chunks offered to attribute completion per entity.
    pub neighborhood_size: usize,
    #[serde(skip)]
    pub ontology: Option<Ontology>,
}

impl Default for InstanceBuildOptions {
    fn default() -> Self {
        Self {
            complete_attributes: true,
            neighborhood_size: 6,
            ontology: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub chunks_total: usize,
    pub chunks_processed: usize,
    pub sections_from_checkpoint: usize,
    pub skipped_lines: usize,
    pub malformed_table_rows: usize,
    /// Provider calls that returned unusable responses; their chunk
    /// contributes nothing.
    pub failed_calls: usize,
    pub raw_entities: usize,
    pub entities: usize,
    pub relations: usize,
    pub completed_entities: usize,
    pub incomplete_entities: Vec<String>,
    pub entities_by_class: BTreeMap<String, usize>,
    pub relations_by_tier: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SectionExtraction {
    pub entities: Vec<EntityNode>,
    pub relations: Vec<RelationEdge>,
    pub chunks: usize,
    pub skipped_lines: usize,
    pub malformed_rows: usize,
    pub failed_calls: usize,
}

/// Extraction results already obtained, per document (high tier) and per
/// section (mid and low tiers).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InstanceCheckpoint {
    pub documents: BTreeMap<String, SectionExtraction>,
    pub sections: BTreeMap<String, SectionExtraction>,
}

/// Transport and configuration failures abort the build; a response that
/// cannot be used only costs the chunk.
fn absorb(r: Result<ChunkExtraction, GatewayError>, scope: &str) -> Result<(ChunkExtraction, usize), InstanceError> {
    match r {
        Ok(x) => Ok((x, 0)),
        Err(e @ (GatewayError::Transport(_) | GatewayError::Config(_))) => Err(InstanceError::Gateway {
            scope: scope.to_string(),
            source: e,
        }),
        Err(e) => {
            tracing::warn!(scope, error = %e, "extraction call failed, chunk skipped");
            Ok((ChunkExtraction::default(), 1))
        }
    }
}

fn add(acc: &mut SectionExtraction, x: ChunkExtraction, failed: usize) {
    acc.entities.extend(x.entities);
    acc.relations.extend(x.relations);
    acc.skipped_lines += x.skipped_lines;
    acc.malformed_rows += x.malformed_rows;
    acc.failed_calls += failed;
}

fn extract_section(
    section_id: &str,
    chunks: &[&Chunk],
    cg: &ConceptGraph,
    opts: &InstanceBuildOptions,
    gateway: &Gateway,
) -> Result<SectionExtraction, InstanceError> {
    let cid = concept_id(section_id);
    let context = cg
        .node(&cid)
        .map(|n| format!("{}\n{}", n.path(), n.summary))
        .unwrap_or_default();
    let per_chunk: Vec<Result<SectionExtraction, InstanceError>> = chunks
        .par_iter()
        .map(|c| {
            let mut acc = SectionExtraction { chunks: 1, ..Default::default() };
            if c.modality != Modality::Table {
                let (x, f) = absorb(extract_mid_level(c, &cid, &context, opts.ontology.as_ref(), gateway), &c.id)?;
                add(&mut acc, x, f);
            }
            let (x, f) = absorb(extract_low_level(c, &cid, gateway), &c.id)?;
            add(&mut acc, x, f);
            Ok(acc)
        })
        .collect();
    let mut acc = SectionExtraction::default();
    for r in per_chunk {
        let r = r?;
        acc.chunks += r.chunks;
        add(
            &mut acc,
            ChunkExtraction {
                entities: r.entities,
                relations: r.relations,
                skipped_lines: r.skipped_lines,
                malformed_rows: r.malformed_rows,
            },
            r.failed_calls,
        );
    }
    Ok(acc)
}

/// Runs the high, mid and low extractors, merges duplicates, completes
/// attributes and validates the result. Every entity is linked to the
/// concept node of its chunk's section. Finished sections are recorded in
/// `checkpoint`.
pub fn build_instance_graph(
    docs: &[Document],
    chunks: &[Chunk],
    cg: &ConceptGraph,
    gateway: &Gateway,
    opts: &InstanceBuildOptions,
    checkpoint: &mut InstanceCheckpoint,
) -> Result<(InstanceGraph, BuildReport), InstanceError> {
    let mut report = BuildReport {
        chunks_total: chunks.len(),
        ..Default::default()
    };
    for doc in docs {
        if checkpoint.documents.contains_key(&doc.id) {
            continue;
        }
        let doc_chunks: Vec<Chunk> = chunks.iter().filter(|c| c.document_id == doc.id).cloned().collect();
        let (x, f) = absorb(extract_high_level(doc, cg, &doc_chunks, gateway), &doc.id)?;
        let mut acc = SectionExtraction::default();
        add(&mut acc, x, f);
        checkpoint.documents.insert(doc.id.clone(), acc);
    }

    let mut by_section: Vec<(&str, Vec<&Chunk>)> = Vec::new();
    for c in chunks {
        match by_section.last_mut() {
            Some((s, v)) if *s == c.section_id => v.push(c),
            _ => by_section.push((&c.section_id, vec![c])),
        }
    }
    for (section, section_chunks) in &by_section {
        if checkpoint.sections.contains_key(*section) {
            report.sections_from_checkpoint += 1;
            continue;
        }
        let x = extract_section(section, section_chunks, cg, opts, gateway)?;
        checkpoint.sections.insert(section.to_string(), x);
    }

    let mut raw_entities = Vec::new();
    let mut raw_relations = Vec::new();
    let doc_parts = docs.iter().filter_map(|d| checkpoint.documents.get(&d.id));
    let section_parts = by_section.iter().filter_map(|(s, _)| checkpoint.sections.get(*s));
    for part in doc_parts.chain(section_parts) {
        raw_entities.extend(part.entities.iter().cloned());
        raw_relations.extend(part.relations.iter().cloned());
        report.chunks_processed += part.chunks;
        report.skipped_lines += part.skipped_lines;
        report.malformed_table_rows += part.malformed_rows;
        report.failed_calls += part.failed_calls;
    }
    report.raw_entities = raw_entities.len();
    let mut entities = merge_entities(raw_entities);
    let relations = dedup_relations(raw_relations);

    if opts.complete_attributes {
        let chunk_index: HashMap<&str, usize> = chunks.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
        let results: Vec<Result<Option<EntityNode>, GatewayError>> = entities
            .par_iter()
            .map(|e| {
                if !matches!(
                    e.entity_class,
                    EntityClass::Parametric | EntityClass::Procedural | EntityClass::Identificational
                ) {
                    return Ok(None);
                }
                let hood = neighborhood(e, chunks, &chunk_index, opts.neighborhood_size);
                complete_attributes(e, &hood, gateway).map(Some)
            })
            .collect();
        for (e, r) in entities.iter_mut().zip(results) {
            match r {
                Ok(Some(done)) => {
                    if done != *e {
                        report.completed_entities += 1;
                    }
                    *e = done;
                }
                Ok(None) => {}
                Err(err) => {
                    tracing::warn!(entity = %e.id, error = %err, "attribute completion failed");
                    e.attributes.insert(INCOMPLETE_KEY.to_string(), err.to_string());
                    report.incomplete_entities.push(e.id.clone());
                }
            }
        }
    }

    for e in &entities {
        *report.entities_by_class.entry(e.entity_class.to_string()).or_default() += 1;
    }
    for r in &relations {
        *report.relations_by_tier.entry(format!("{:?}", r.tier).to_lowercase()).or_default() += 1;
    }
    report.entities = entities.len();
    report.relations = relations.len();
    let graph = InstanceGraph::new(entities, relations)?;
    Ok((graph, report))
}

/// Source chunks first, then the other chunks of the same sections in
/// document order.
fn neighborhood<'a>(e: &EntityNode, chunks: &'a [Chunk], index: &HashMap<&str, usize>, limit: usize) -> Vec<&'a Chunk> {
    let mut out: Vec<&Chunk> = e.source_chunk_ids.iter().filter_map(|id| index.get(id.as_str())).map(|&i| &chunks[i]).collect();
    let sections: Vec<String> = out.iter().map(|c| c.section_id.clone()).collect();
    for c in chunks.iter().filter(|c| sections.contains(&c.section_id)) {
        if !out.iter().any(|o| o.id == c.id) {
            out.push(c);
        }
    }
    out.truncate(limit.max(1));
    out
}
