//! Instance layer: typed entities and relations extracted from chunks,
//! each linked to the concept node of its section and to its source chunks.

mod build;
mod extract;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::store::{self, StoreError};
use crate::text::{normalize_name, short_hash, snake_case};

pub use build::{build_instance_graph, BuildReport, InstanceBuildOptions, InstanceCheckpoint, Ontology};
pub use extract::{
    complete_attributes, extract_high_level, extract_low_level, extract_mid_level, parse_line, ChunkExtraction,
    ProtocolLine,
};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("gateway failure while extracting '{scope}': {source}")]
    Gateway {
        scope: String,
        #[source]
        source: GatewayError,
    },
    #[error("invalid instance graph: {0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityClass {
    ConceptRef,
    Component,
    Operation,
    Procedural,
    Identificational,
    Parametric,
    ArtifactTable,
    ArtifactImage,
}

impl EntityClass {
    pub const ALL: [EntityClass; 8] = [
        EntityClass::ConceptRef,
        EntityClass::Component,
        EntityClass::Operation,
        EntityClass::Procedural,
        EntityClass::Identificational,
        EntityClass::Parametric,
        EntityClass::ArtifactTable,
        EntityClass::ArtifactImage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::ConceptRef => "concept_ref",
            EntityClass::Component => "component",
            EntityClass::Operation => "operation",
            EntityClass::Procedural => "procedural",
            EntityClass::Identificational => "identificational",
            EntityClass::Parametric => "parametric",
            EntityClass::ArtifactTable => "artifact_table",
            EntityClass::ArtifactImage => "artifact_image",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim().to_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown entity class '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Mid,
    Low,
}

/// Dedup key of an entity.
pub type EntityKey = (String, EntityClass, String);

/// Bookkeeping attribute set on entities whose attribute completion failed.
pub const INCOMPLETE_KEY: &str = "status:incomplete";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityNode {
    pub id: String,
    pub name: String,
    pub entity_class: EntityClass,
    pub name_norm: String,
    /// `instanceOf` link to the concept layer.
    pub concept_node_id: String,
    pub attributes: BTreeMap<String, String>,
    pub source_chunk_ids: Vec<String>,
}

pub fn entity_id(name_norm: &str, class: EntityClass, concept_node_id: &str) -> String {
    format!("e:{}", short_hash(&[name_norm, class.as_str(), concept_node_id]))
}

impl EntityNode {
    pub fn new(name: &str, class: EntityClass, concept_node_id: &str, source_chunk_id: &str) -> Self {
        let name = name.trim().to_string();
        let name_norm = normalize_name(&name);
        Self {
            id: entity_id(&name_norm, class, concept_node_id),
            name,
            entity_class: class,
            name_norm,
            concept_node_id: concept_node_id.to_string(),
            attributes: BTreeMap::new(),
            source_chunk_ids: vec![source_chunk_id.to_string()],
        }
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attributes.insert(key.to_string(), value.to_string());
        self
    }

    pub fn key(&self) -> EntityKey {
        (self.name_norm.clone(), self.entity_class, self.concept_node_id.clone())
    }

    /// Attributes meant for display (bookkeeping keys such as
    /// `completed_from:*` and `alt:*` omitted).
    pub fn visible_attributes(&self) -> impl Iterator<Item = (&String, &String)> {
        self.attributes.iter().filter(|(k, _)| !k.contains(':'))
    }

    /// Attribute completion failed for this entity during the build.
    pub fn is_incomplete(&self) -> bool {
        self.attributes.contains_key(INCOMPLETE_KEY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationEdge {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub predicate: String,
    pub tier: Tier,
    pub evidence_chunk_id: String,
    pub confidence: f64,
}

impl RelationEdge {
    pub fn new(src: &str, predicate: &str, dst: &str, tier: Tier, evidence_chunk_id: &str, confidence: f64) -> Self {
        let predicate = snake_case(predicate);
        Self {
            id: format!("r:{}", short_hash(&[src, &predicate, dst, &format!("{tier:?}")])),
            src: src.to_string(),
            dst: dst.to_string(),
            predicate,
            tier,
            evidence_chunk_id: evidence_chunk_id.to_string(),
            confidence: confidence.clamp(0.0, 1.0),
        }
    }
}

/// Groups entities by (name_norm, class, concept). The first occurrence
/// supplies name and attribute values; later conflicting values are kept
/// under `alt:<key>`; source chunk lists are unioned in order.
pub fn merge_entities(raw: Vec<EntityNode>) -> Vec<EntityNode> {
    let mut out: Vec<EntityNode> = Vec::new();
    let mut pos: HashMap<EntityKey, usize> = HashMap::new();
    for e in raw {
        match pos.get(&e.key()) {
            None => {
                pos.insert(e.key(), out.len());
                let mut e = e;
                let mut seen = HashSet::new();
                e.source_chunk_ids.retain(|c| seen.insert(c.clone()));
                out.push(e);
            }
            Some(&i) => {
                let target = &mut out[i];
                for c in e.source_chunk_ids {
                    if !target.source_chunk_ids.contains(&c) {
                        target.source_chunk_ids.push(c);
                    }
                }
                for (k, v) in e.attributes {
                    match target.attributes.get(&k) {
                        None => {
                            target.attributes.insert(k, v);
                        }
                        Some(existing) if *existing == v || k.starts_with("alt:") => {}
                        Some(_) => {
                            let alt = target.attributes.entry(format!("alt:{k}")).or_default();
                            if !alt.split(" | ").any(|a| a == v) {
                                if !alt.is_empty() {
                                    alt.push_str(" | ");
                                }
                                alt.push_str(&v);
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Relations deduplicated by id, first occurrence kept.
pub fn dedup_relations(raw: Vec<RelationEdge>) -> Vec<RelationEdge> {
    let mut seen = HashSet::new();
    raw.into_iter().filter(|r| seen.insert(r.id.clone())).collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "GraphFile", into = "GraphFile")]
pub struct InstanceGraph {
    entities: Vec<EntityNode>,
    relations: Vec<RelationEdge>,
    by_id: HashMap<String, usize>,
    by_name: BTreeMap<String, Vec<String>>,
    by_concept: BTreeMap<String, Vec<String>>,
    adjacency: HashMap<String, Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    entities: Vec<EntityNode>,
    relations: Vec<RelationEdge>,
}

impl From<GraphFile> for InstanceGraph {
    fn from(f: GraphFile) -> Self {
        let mut g = InstanceGraph {
            entities: f.entities,
            relations: f.relations,
            ..Default::default()
        };
        g.reindex();
        g
    }
}

impl From<InstanceGraph> for GraphFile {
    fn from(g: InstanceGraph) -> Self {
        GraphFile {
            entities: g.entities,
            relations: g.relations,
        }
    }
}

impl InstanceGraph {
    pub fn new(entities: Vec<EntityNode>, relations: Vec<RelationEdge>) -> Result<Self, InstanceError> {
        let mut g = InstanceGraph {
            entities,
            relations,
            ..Default::default()
        };
        g.reindex();
        g.check()?;
        Ok(g)
    }

    fn reindex(&mut self) {
        self.by_id = self.entities.iter().enumerate().map(|(i, e)| (e.id.clone(), i)).collect();
        self.by_name.clear();
        self.by_concept.clear();
        self.adjacency.clear();
        for e in &self.entities {
            self.by_name.entry(e.name_norm.clone()).or_default().push(e.id.clone());
            self.by_concept.entry(e.concept_node_id.clone()).or_default().push(e.id.clone());
        }
        for (i, r) in self.relations.iter().enumerate() {
            self.adjacency.entry(r.src.clone()).or_default().push(i);
            self.adjacency.entry(r.dst.clone()).or_default().push(i);
        }
    }

    fn check(&self) -> Result<(), InstanceError> {
        let bad = |m: String| Err(InstanceError::Invalid(m));
        let mut keys = HashSet::new();
        for e in &self.entities {
            if !keys.insert(e.key()) {
                return bad(format!("duplicate entity key for '{}' ({})", e.name, e.entity_class));
            }
            if e.source_chunk_ids.is_empty() {
                return bad(format!("entity '{}' has no source chunk", e.name));
            }
            if e.entity_class == EntityClass::Parametric && !e.attributes.contains_key("value") {
                return bad(format!("parametric entity '{}' has no value", e.name));
            }
        }
        if self.by_id.len() != self.entities.len() {
            return bad("duplicate entity id".into());
        }
        let mut ids = HashSet::new();
        for r in &self.relations {
            if r.src == r.dst {
                return bad(format!("relation {} is a self-loop", r.id));
            }
            if !self.by_id.contains_key(&r.src) || !self.by_id.contains_key(&r.dst) {
                return bad(format!("relation {} has a dangling endpoint", r.id));
            }
            if r.predicate.is_empty() || r.predicate != snake_case(&r.predicate) {
                return bad(format!("relation {} has a non-normalized predicate", r.id));
            }
            if !ids.insert(&r.id) {
                return bad(format!("duplicate relation id {}", r.id));
            }
        }
        Ok(())
    }

    pub fn entities(&self) -> &[EntityNode] {
        &self.entities
    }

    pub fn relations(&self) -> &[RelationEdge] {
        &self.relations
    }

    pub fn entity(&self, id: &str) -> Option<&EntityNode> {
        self.by_id.get(id).map(|&i| &self.entities[i])
    }

    pub fn ids_by_name(&self, name_norm: &str) -> &[String] {
        self.by_name.get(name_norm).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn ids_by_concept(&self, concept_node_id: &str) -> &[String] {
        self.by_concept.get(concept_node_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Relations touching entity `id`.
    pub fn relations_of(&self, id: &str) -> impl Iterator<Item = &RelationEdge> {
        self.adjacency
            .get(id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.relations[i])
    }

    /// Chunk ids referenced by entities or relations that are missing from
    /// `chunk_ids`.
    pub fn unresolved_provenance(&self, chunk_ids: &HashSet<&str>) -> BTreeSet<String> {
        self.entities
            .iter()
            .flat_map(|e| e.source_chunk_ids.iter())
            .chain(self.relations.iter().map(|r| &r.evidence_chunk_id))
            .filter(|c| !chunk_ids.contains(c.as_str()))
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), InstanceError> {
        Ok(store::write_json(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, InstanceError> {
        let g: InstanceGraph = store::read_json(path)?;
        g.check()?;
        Ok(g)
    }
}
