//! The three extraction tiers and attribute completion. Provider output is a
//! tab-separated line protocol parsed line by line; lines that do not parse
//! are counted and skipped.

use std::collections::BTreeMap;

use super::{merge_entities, EntityClass, EntityNode, Ontology, RelationEdge, Tier};
use crate::concept::ConceptGraph;
use crate::gateway::{tagged, Gateway, GatewayError, GenerationRequest, GenerationRole};
use crate::ingest::table::parse_table;
use crate::ingest::{Chunk, Document, Modality, SectionLevel};
use crate::text::{collapse_whitespace, normalize_name, snake_case};

const DEFAULT_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolLine {
    Entity {
        class: String,
        name: String,
        attributes: Vec<(String, String)>,
    },
    Rel {
        src: String,
        predicate: String,
        dst: String,
        confidence: Option<f64>,
    },
    Attr {
        key: String,
        value: String,
        chunk_id: String,
    },
}

/// `None` for anything that is not a well-formed protocol line.
pub fn parse_line(line: &str) -> Option<ProtocolLine> {
    let fields: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').map(str::trim).collect();
    match fields.as_slice() {
        ["ENTITY", class, name, rest @ ..] if !name.is_empty() && rest.len() <= 1 => Some(ProtocolLine::Entity {
            class: class.to_lowercase(),
            name: collapse_whitespace(name),
            attributes: rest.first().map(|a| parse_attrs(a)).unwrap_or_default(),
        }),
        ["REL", src, predicate, dst, rest @ ..] if rest.len() <= 1 => {
            if src.is_empty() || dst.is_empty() || snake_case(predicate).is_empty() {
                return None;
            }
            let confidence = match rest.first() {
                Some(c) => Some(c.parse::<f64>().ok().filter(|c| (0.0..=1.0).contains(c))?),
                None => None,
            };
            Some(ProtocolLine::Rel {
                src: collapse_whitespace(src),
                predicate: predicate.to_string(),
                dst: collapse_whitespace(dst),
                confidence,
            })
        }
        ["ATTR", key, value, chunk_id] if !snake_case(key).is_empty() && !value.is_empty() => Some(ProtocolLine::Attr {
            key: snake_case(key),
            value: value.to_string(),
            chunk_id: chunk_id.to_string(),
        }),
        _ => None,
    }
}

fn parse_attrs(raw: &str) -> Vec<(String, String)> {
    raw.split(';')
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (snake_case(k), v.trim().to_string()))
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChunkExtraction {
    pub entities: Vec<EntityNode>,
    pub relations: Vec<RelationEdge>,
    /// Non-empty provider lines that were not usable.
    pub skipped_lines: usize,
    pub malformed_rows: usize,
}

fn entity_from(class: EntityClass, name: &str, attrs: &[(String, String)], concept: &str, chunk: &str) -> EntityNode {
    let mut e = EntityNode::new(name, class, concept, chunk);
    for (k, v) in attrs {
        e.attributes.entry(k.clone()).or_insert_with(|| v.clone());
    }
    e
}

fn one_line(text: &str) -> String {
    collapse_whitespace(&text.replace('\t', " "))
}

/// Macro-level relations between concepts of one document, read from
/// their summaries. Endpoints become `concept_ref` entities sourced from
/// the first chunk of each concept's subtree. Links that merely restate
/// the section hierarchy are dropped.
pub fn extract_high_level(
    doc: &Document,
    cg: &ConceptGraph,
    chunks: &[Chunk],
    gateway: &Gateway,
) -> Result<ChunkExtraction, GatewayError> {
    let concepts: Vec<_> = cg
        .nodes()
        .iter()
        .filter(|n| n.document_id == doc.id && n.level >= SectionLevel::Chapter)
        .collect();
    let mut out = ChunkExtraction::default();
    if concepts.len() < 2 {
        return Ok(out);
    }
    let listing: Vec<String> = concepts
        .iter()
        .map(|n| format!("{}\t{}", one_line(&n.title), one_line(&n.summary)))
        .collect();
    let prompt = format!(
        "Identify dependencies and cross-references between the concepts below (title<TAB>summary). \
         Output one line per relation: REL<TAB>source title<TAB>predicate<TAB>target title<TAB>confidence\n{}",
        tagged("concepts", &listing.join("\n"))
    );
    let raw = gateway.generate(&GenerationRequest::new(GenerationRole::ExtractHigh, prompt))?;

    let mut by_title: BTreeMap<String, &crate::concept::ConceptNode> = BTreeMap::new();
    for n in &concepts {
        by_title.entry(normalize_name(&n.title)).or_insert(n);
    }
    let first_chunk = |concept_id: &str| -> Option<&str> {
        let sections = cg.subtree_sections(concept_id).ok()?;
        chunks.iter().find(|c| sections.contains(&c.section_id)).map(|c| c.id.as_str())
    };
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let Some(ProtocolLine::Rel { src, predicate, dst, confidence }) = parse_line(line) else {
            out.skipped_lines += 1;
            continue;
        };
        let (Some(s), Some(d)) = (by_title.get(&normalize_name(&src)), by_title.get(&normalize_name(&dst))) else {
            out.skipped_lines += 1;
            continue;
        };
        let related = |a: &str, b: &str| cg.concept_subtree(a).map(|t| t.contains(b)).unwrap_or(false);
        if s.id == d.id || related(&s.id, &d.id) || related(&d.id, &s.id) {
            out.skipped_lines += 1;
            continue;
        }
        let (Some(sc), Some(dc)) = (first_chunk(&s.id), first_chunk(&d.id)) else {
            out.skipped_lines += 1;
            continue;
        };
        let se = EntityNode::new(&s.title, EntityClass::ConceptRef, &s.id, sc).with_attr("path", &s.path());
        let de = EntityNode::new(&d.title, EntityClass::ConceptRef, &d.id, dc).with_attr("path", &d.path());
        out.relations.push(RelationEdge::new(
            &se.id,
            &predicate,
            &de.id,
            Tier::High,
            sc,
            confidence.unwrap_or(DEFAULT_CONFIDENCE),
        ));
        out.entities.push(se);
        out.entities.push(de);
    }
    out.entities = merge_entities(out.entities);
    out.relations = super::dedup_relations(out.relations);
    Ok(out)
}

/// Components and operations of one chunk, plus the relations among them.
pub fn extract_mid_level(
    chunk: &Chunk,
    concept_node_id: &str,
    concept_context: &str,
    ontology: Option<&Ontology>,
    gateway: &Gateway,
) -> Result<ChunkExtraction, GatewayError> {
    let mut out = ChunkExtraction::default();
    let text = chunk.own_content();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let (classes, seeds) = match ontology {
        Some(o) => (o.classes.join(", "), o.seed_terms.join(", ")),
        None => (String::new(), String::new()),
    };
    let prompt = format!(
        "Extract the core components and operations described in the passage, using the domain context. \
         Output one line per item:\nENTITY<TAB>component|operation<TAB>name<TAB>key=value;...\n\
         REL<TAB>source name<TAB>predicate<TAB>target name<TAB>confidence\n{}\n{}\n{}\n{}",
        tagged("concept_context", concept_context),
        tagged("ontology_classes", &classes),
        tagged("seed_terms", &seeds),
        tagged("text", text),
    );
    let raw = gateway.generate(&GenerationRequest::new(GenerationRole::ExtractMid, prompt))?;
    let mut rels = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        match parse_line(line) {
            Some(ProtocolLine::Entity { class, name, attributes }) => match class.parse::<EntityClass>() {
                Ok(c @ (EntityClass::Component | EntityClass::Operation)) => {
                    out.entities.push(entity_from(c, &name, &attributes, concept_node_id, &chunk.id))
                }
                _ => out.skipped_lines += 1,
            },
            Some(ProtocolLine::Rel { src, predicate, dst, confidence }) => rels.push((src, predicate, dst, confidence)),
            _ => out.skipped_lines += 1,
        }
    }
    out.entities = merge_entities(out.entities);
    let find = |name: &str| {
        let n = normalize_name(name);
        out.entities.iter().find(|e| e.name_norm == n).map(|e| e.id.clone())
    };
    for (src, predicate, dst, confidence) in rels {
        match (find(&src), find(&dst)) {
            (Some(s), Some(d)) if s != d => rels_push(
                &mut out.relations,
                RelationEdge::new(&s, &predicate, &d, Tier::Mid, &chunk.id, confidence.unwrap_or(DEFAULT_CONFIDENCE)),
            ),
            _ => out.skipped_lines += 1,
        }
    }
    Ok(out)
}

fn rels_push(rels: &mut Vec<RelationEdge>, r: RelationEdge) {
    if !rels.iter().any(|x| x.id == r.id) {
        rels.push(r);
    }
}

fn first_words(text: &str, n: usize) -> String {
    let first = crate::text::split_sentences(text).into_iter().next().unwrap_or_default();
    let words: Vec<&str> = first.split_whitespace().take(n).collect();
    words.join(" ").trim_end_matches(['.', ',', ';', ':']).to_string()
}

/// Procedural, identificational and parametric entities. Table chunks also
/// yield one `artifact_table` entity linked to their row parameters; image
/// chunks yield exactly one `artifact_image` entity and nothing else.
pub fn extract_low_level(chunk: &Chunk, concept_node_id: &str, gateway: &Gateway) -> Result<ChunkExtraction, GatewayError> {
    let mut out = ChunkExtraction::default();
    let text = chunk.own_content();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let mut artifact = None;
    match chunk.modality {
        Modality::Image => {
            let e = EntityNode::new(&format!("image: {}", first_words(text, 8)), EntityClass::ArtifactImage, concept_node_id, &chunk.id)
                .with_attr("description", &collapse_whitespace(text));
            out.entities.push(e);
            return Ok(out);
        }
        Modality::Table => match parse_table(text) {
            Ok(t) => {
                out.malformed_rows = t.malformed_rows.len();
                for r in &t.malformed_rows {
                    tracing::warn!(chunk = %chunk.id, row = r, "skipping malformed table row");
                }
                let e = EntityNode::new(&format!("table: {}", t.header.join(", ")), EntityClass::ArtifactTable, concept_node_id, &chunk.id)
                    .with_attr("columns", &t.header.join(", "))
                    .with_attr("rows", &t.rows.len().to_string());
                artifact = Some(e.id.clone());
                out.entities.push(e);
            }
            Err(e) => tracing::warn!(chunk = %chunk.id, error = %e, "table chunk does not parse"),
        },
        Modality::Text => {}
    }
    let modality = match chunk.modality {
        Modality::Table => "table",
        _ => "text",
    };
    let prompt = format!(
        "Extract technical entities from the passage: procedural steps, identifiers (codes, versions, error numbers) \
         and parameters with their values. Output one line per entity:\n\
         ENTITY<TAB>procedural|identificational|parametric<TAB>name<TAB>key=value;...\n\
         Parametric entities must carry value=<value>.\n{}\n{}",
        tagged("modality", modality),
        tagged("text", text),
    );
    let raw = gateway.generate(&GenerationRequest::new(GenerationRole::ExtractLow, prompt))?;
    let mut found = Vec::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let Some(ProtocolLine::Entity { class, name, attributes }) = parse_line(line) else {
            out.skipped_lines += 1;
            continue;
        };
        match class.parse::<EntityClass>() {
            Ok(EntityClass::Parametric) if !attributes.iter().any(|(k, _)| k == "value") => out.skipped_lines += 1,
            Ok(c @ (EntityClass::Procedural | EntityClass::Identificational | EntityClass::Parametric)) => {
                found.push(entity_from(c, &name, &attributes, concept_node_id, &chunk.id))
            }
            _ => out.skipped_lines += 1,
        }
    }
    let found = merge_entities(found);
    if let Some(a) = &artifact {
        for e in found.iter().filter(|e| e.entity_class == EntityClass::Parametric) {
            rels_push(&mut out.relations, RelationEdge::new(a, "lists", &e.id, Tier::Low, &chunk.id, 1.0));
        }
    }
    out.entities.extend(found);
    out.entities = merge_entities(out.entities);
    Ok(out)
}

/// Adds attributes found in neighboring chunks. Existing attributes are
/// never changed; each added key `k` records `completed_from:k`.
pub fn complete_attributes(entity: &EntityNode, neighborhood: &[&Chunk], gateway: &Gateway) -> Result<EntityNode, GatewayError> {
    if neighborhood.is_empty() {
        return Ok(entity.clone());
    }
    let attrs: Vec<String> = entity.visible_attributes().map(|(k, v)| format!("{k}={v}")).collect();
    let described = format!(
        "name: {}\nclass: {}\nattributes: {}",
        entity.name,
        entity.entity_class,
        attrs.join(";")
    );
    let listing: Vec<String> = neighborhood.iter().map(|c| format!("{}\t{}", c.id, one_line(c.own_content()))).collect();
    let prompt = format!(
        "Find properties of the entity that are stated in the passages but missing from its attributes \
         (units, defaults, ranges). Output one line per property: ATTR<TAB>key<TAB>value<TAB>chunk id\n{}\n{}",
        tagged("entity", &described),
        tagged("chunks", &listing.join("\n")),
    );
    let raw = gateway.generate(&GenerationRequest::new(GenerationRole::CompleteAttributes, prompt))?;
    let mut out = entity.clone();
    for line in raw.lines() {
        if let Some(ProtocolLine::Attr { key, value, chunk_id }) = parse_line(line) {
            if key.contains(':') || out.attributes.contains_key(&key) || !neighborhood.iter().any(|c| c.id == chunk_id) {
                continue;
            }
            out.attributes.insert(format!("completed_from:{key}"), chunk_id);
            out.attributes.insert(key, value);
        }
    }
    Ok(out)
}
