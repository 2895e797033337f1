//! Concept layer: one node per document section carrying a summary, keywords
//! and a summary embedding; `subTopic` edges follow the section tree and
//! `hasKeyword` edges point at keyword nodes shared across the corpus.

mod build;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{EmbeddingVector, GatewayError};
use crate::ingest::SectionLevel;
use crate::store::{self, StoreError};
use crate::text::normalize_name;

pub use build::{
    build_concept_graph, build_corpus_concept_graph, extract_keywords, summarize_section, BuildCheckpoint,
    ConceptBuildOptions, MAX_KEYWORDS,
};

#[derive(Debug, Error)]
pub enum ConceptError {
    #[error("section '{title}' ({section_id}) has no blocks and no children")]
    EmptySection { section_id: String, title: String },
    #[error("gateway failure while building '{section_id}': {source}")]
    Gateway {
        section_id: String,
        #[source]
        source: GatewayError,
    },
    #[error("subTopic cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown concept node '{0}'")]
    UnknownNode(String),
    #[error("invalid edge {src} -> {dst}: {message}")]
    InvalidEdge { src: String, dst: String, message: String },
    #[error("override file references unknown sections: {}", .0.join(", "))]
    UnknownOverride(Vec<String>),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    #[serde(rename = "subTopic")]
    SubTopic,
    #[serde(rename = "hasKeyword")]
    HasKeyword,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    Generated,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub id: String,
    pub document_id: String,
    pub section_id: String,
    pub level: SectionLevel,
    pub title: String,
    /// Titles from the root part down to this node.
    pub breadcrumb: Vec<String>,
    pub summary: String,
    pub summary_origin: Origin,
    pub keywords: Vec<String>,
    pub keywords_origin: Origin,
    pub summary_embedding: EmbeddingVector,
}

impl ConceptNode {
    pub fn path(&self) -> String {
        self.breadcrumb.join(" > ")
    }

    /// Text that was embedded for this node.
    pub fn embedding_text(title: &str, summary: &str) -> String {
        format!("{title}\n{summary}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordNode {
    pub id: String,
    pub text: String,
}

impl KeywordNode {
    pub fn id_for(text: &str) -> String {
        format!("kw:{}", normalize_name(text))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConceptEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
}

pub fn concept_id(section_id: &str) -> String {
    format!("c:{section_id}")
}

/// Section overrides standing in for expert annotation, keyed by section id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OverrideFile(pub BTreeMap<String, OverrideEntry>);

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverrideEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords: Option<Vec<String>>,
}

impl OverrideFile {
    pub fn load(path: &Path) -> Result<Self, ConceptError> {
        Ok(store::read_json(path)?)
    }

    pub fn get(&self, section_id: &str) -> Option<&OverrideEntry> {
        self.0.get(section_id)
    }

    /// Fails when an entry names a section outside `known`.
    pub fn check_against<'a>(&self, known: impl IntoIterator<Item = &'a str>) -> Result<(), ConceptError> {
        let known: BTreeSet<&str> = known.into_iter().collect();
        let unknown: Vec<String> = self.0.keys().filter(|k| !known.contains(k.as_str())).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(ConceptError::UnknownOverride(unknown))
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "GraphFile", into = "GraphFile")]
pub struct ConceptGraph {
    nodes: Vec<ConceptNode>,
    keyword_nodes: Vec<KeywordNode>,
    edges: Vec<ConceptEdge>,
    roots: Vec<String>,
    by_id: HashMap<String, usize>,
    by_section: HashMap<String, usize>,
    children: HashMap<String, Vec<String>>,
    parent: HashMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    roots: Vec<String>,
    nodes: Vec<ConceptNode>,
    keyword_nodes: Vec<KeywordNode>,
    edges: Vec<ConceptEdge>,
}

impl From<GraphFile> for ConceptGraph {
    fn from(f: GraphFile) -> Self {
        let mut g = ConceptGraph {
            nodes: f.nodes,
            keyword_nodes: f.keyword_nodes,
            edges: f.edges,
            roots: f.roots,
            ..Default::default()
        };
        g.reindex();
        g
    }
}

impl From<ConceptGraph> for GraphFile {
    fn from(g: ConceptGraph) -> Self {
        GraphFile {
            roots: g.roots,
            nodes: g.nodes,
            keyword_nodes: g.keyword_nodes,
            edges: g.edges,
        }
    }
}

impl ConceptGraph {
    /// Assembles and validates a graph: edge endpoints resolve, edge kinds
    /// connect the right node types, keyword texts are canonical and unique,
    /// and the subTopic subgraph is acyclic.
    pub fn from_parts(
        nodes: Vec<ConceptNode>,
        keyword_nodes: Vec<KeywordNode>,
        edges: Vec<ConceptEdge>,
        roots: Vec<String>,
    ) -> Result<Self, ConceptError> {
        let mut g = ConceptGraph {
            nodes,
            keyword_nodes,
            edges,
            roots,
            ..Default::default()
        };
        g.reindex();
        g.check()?;
        Ok(g)
    }

    fn reindex(&mut self) {
        self.by_id = self.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        self.by_section = self.nodes.iter().enumerate().map(|(i, n)| (n.section_id.clone(), i)).collect();
        self.children.clear();
        self.parent.clear();
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::SubTopic) {
            self.children.entry(e.src.clone()).or_default().push(e.dst.clone());
            self.parent.entry(e.dst.clone()).or_insert_with(|| e.src.clone());
        }
    }

    fn check(&self) -> Result<(), ConceptError> {
        let kw: BTreeSet<&str> = self.keyword_nodes.iter().map(|k| k.id.as_str()).collect();
        let mut texts = BTreeSet::new();
        for k in &self.keyword_nodes {
            if k.text != normalize_name(&k.text) || !texts.insert(k.text.as_str()) {
                return Err(ConceptError::InvalidEdge {
                    src: k.id.clone(),
                    dst: k.id.clone(),
                    message: format!("keyword '{}' is not canonical or is duplicated", k.text),
                });
            }
        }
        for e in &self.edges {
            let bad = |message: &str| ConceptError::InvalidEdge {
                src: e.src.clone(),
                dst: e.dst.clone(),
                message: message.to_string(),
            };
            if !self.by_id.contains_key(&e.src) {
                return Err(bad("source is not a concept node"));
            }
            match e.kind {
                EdgeKind::SubTopic if !self.by_id.contains_key(&e.dst) => {
                    return Err(bad("subTopic target is not a concept node"))
                }
                EdgeKind::HasKeyword if !kw.contains(e.dst.as_str()) => {
                    return Err(bad("hasKeyword target is not a keyword node"))
                }
                _ => {}
            }
        }
        for r in &self.roots {
            if !self.by_id.contains_key(r) {
                return Err(ConceptError::UnknownNode(r.clone()));
            }
        }
        self.topological_order().map(|_| ())
    }

    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn keyword_nodes(&self) -> &[KeywordNode] {
        &self.keyword_nodes
    }

    pub fn edges(&self) -> &[ConceptEdge] {
        &self.edges
    }

    pub fn roots(&self) -> &[String] {
        &self.roots
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&ConceptNode> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn node_for_section(&self, section_id: &str) -> Option<&ConceptNode> {
        self.by_section.get(section_id).map(|&i| &self.nodes[i])
    }

    pub fn children(&self, id: &str) -> &[String] {
        self.children.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn parent(&self, id: &str) -> Option<&str> {
        self.parent.get(id).map(String::as_str)
    }

    pub fn keywords_of(&self, id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::HasKeyword && e.src == id)
            .map(|e| e.dst.as_str())
            .collect()
    }

    /// Concepts linked to the keyword node `kw_id`.
    pub fn concepts_with_keyword(&self, kw_id: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::HasKeyword && e.dst == kw_id)
            .map(|e| e.src.as_str())
            .collect()
    }

    /// Adds a subTopic edge, rejecting it if it would close a cycle.
    pub fn add_subtopic(&mut self, src: &str, dst: &str) -> Result<(), ConceptError> {
        for id in [src, dst] {
            if !self.by_id.contains_key(id) {
                return Err(ConceptError::UnknownNode(id.to_string()));
            }
        }
        self.edges.push(ConceptEdge {
            src: src.to_string(),
            dst: dst.to_string(),
            kind: EdgeKind::SubTopic,
        });
        self.reindex();
        if let Err(e) = self.topological_order() {
            self.edges.pop();
            self.reindex();
            return Err(e);
        }
        Ok(())
    }

    /// Kahn topological sort of the subTopic subgraph. On failure, returns
    /// one cycle.
    pub fn topological_order(&self) -> Result<Vec<String>, ConceptError> {
        let mut indeg: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for e in self.edges.iter().filter(|e| e.kind == EdgeKind::SubTopic) {
            *indeg.entry(&e.dst).or_default() += 1;
        }
        let mut queue: VecDeque<&str> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| *n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = queue.pop_front() {
            order.push(n.to_string());
            for c in self.children(n) {
                let d = indeg.get_mut(c.as_str()).expect("indexed");
                *d -= 1;
                if *d == 0 {
                    queue.push_back(c);
                }
            }
        }
        if order.len() == indeg.len() {
            return Ok(order);
        }
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        let start = indeg.keys().find(|n| !done.contains(*n)).copied().expect("cycle exists");
        Err(ConceptError::Cycle(self.find_cycle(start, &done)))
    }

    fn find_cycle(&self, start: &str, done: &BTreeSet<&str>) -> Vec<String> {
        // every unsorted node has an unsorted predecessor; walk backwards
        // until a node repeats
        let preds: HashMap<&str, &str> = self
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::SubTopic && !done.contains(e.src.as_str()))
            .map(|e| (e.dst.as_str(), e.src.as_str()))
            .collect();
        let mut seen = Vec::new();
        let mut cur = start;
        while !seen.contains(&cur) {
            seen.push(cur);
            cur = preds[cur];
        }
        let pos = seen.iter().position(|n| *n == cur).expect("repeat");
        let mut cycle: Vec<String> = seen[pos..].iter().rev().map(|s| s.to_string()).collect();
        cycle.push(cycle[0].clone());
        cycle
    }

    /// All nodes reachable from `id` along subTopic edges, inclusive.
    pub fn concept_subtree(&self, id: &str) -> Result<BTreeSet<String>, ConceptError> {
        if !self.by_id.contains_key(id) {
            return Err(ConceptError::UnknownNode(id.to_string()));
        }
        let mut out = BTreeSet::new();
        let mut stack = vec![id.to_string()];
        while let Some(n) = stack.pop() {
            if out.insert(n.clone()) {
                stack.extend(self.children(&n).iter().cloned());
            }
        }
        Ok(out)
    }

    /// Section ids covered by the subtree of `id`.
    pub fn subtree_sections(&self, id: &str) -> Result<BTreeSet<String>, ConceptError> {
        Ok(self
            .concept_subtree(id)?
            .iter()
            .filter_map(|n| self.node(n))
            .map(|n| n.section_id.clone())
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ConceptError> {
        Ok(store::write_json(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConceptError> {
        let g: ConceptGraph = store::read_json(path)?;
        g.check()?;
        Ok(g)
    }
}
