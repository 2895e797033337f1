use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{ChunkPolicy, Document};
use crate::text::sha256_hex;

/// Build records kept in the state file. Each stage remembers the corpus
/// hash it was built from; a differing current hash makes it stale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub corpus: Option<CorpusRecord>,
    pub graph: Option<StageRecord>,
    pub index: Option<StageRecord>,
    /// Last failed build per stage, cleared by the next successful one.
    /// The artifacts of the previous successful build stay in use.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub message: String,
    pub at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub hash: String,
    pub documents: Vec<String>,
    pub chunks: usize,
    pub updated_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub corpus_hash: String,
    pub built_at: u64,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_space: Option<String>,
}

/// Hash over the documents (in id order) and the chunking policy.
pub fn corpus_hash(docs: &[Document], policy: &ChunkPolicy) -> String {
    let mut sorted: Vec<&Document> = docs.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let mut buf = serde_json::to_vec(policy).expect("policy serializes");
    for d in sorted {
        buf.push(0);
        buf.extend(serde_json::to_vec(d).expect("document serializes"));
    }
    sha256_hex(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageState {
    Missing,
    Ready,
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub state: StageState,
    pub built_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub ready: bool,
    pub stale: bool,
    pub corpus_hash: Option<String>,
    pub documents: usize,
    pub chunks: usize,
    pub concepts: usize,
    pub keyword_nodes: usize,
    pub entities: usize,
    pub relations: usize,
    pub indexed_chunks: usize,
    pub stages: BTreeMap<String, StageStatus>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub failures: BTreeMap<String, StageFailure>,
}

fn stage_status(rec: Option<&StageRecord>, current: Option<&str>, space: Option<&str>) -> StageStatus {
    match rec {
        None => StageStatus {
            state: StageState::Missing,
            built_at: None,
        },
        Some(r) => {
            let fresh = current == Some(r.corpus_hash.as_str()) && (space.is_none() || r.embedding_space.as_deref() == space);
            StageStatus {
                state: if fresh { StageState::Ready } else { StageState::Stale },
                built_at: Some(r.built_at),
            }
        }
    }
}

impl Manifest {
    pub fn graph_status(&self) -> StageStatus {
        stage_status(self.graph.as_ref(), self.corpus.as_ref().map(|c| c.hash.as_str()), None)
    }

    pub fn index_status(&self, embedding_space: &str) -> StageStatus {
        stage_status(self.index.as_ref(), self.corpus.as_ref().map(|c| c.hash.as_str()), Some(embedding_space))
    }

    pub fn status(&self, embedding_space: &str) -> Status {
        let count = |rec: &Option<StageRecord>, key: &str| rec.as_ref().and_then(|r| r.counts.get(key).copied()).unwrap_or(0);
        let ingest = StageStatus {
            state: if self.corpus.is_some() { StageState::Ready } else { StageState::Missing },
            built_at: self.corpus.as_ref().map(|c| c.updated_at),
        };
        let graph = self.graph_status();
        let index = self.index_status(embedding_space);
        let stale = graph.state == StageState::Stale || index.state == StageState::Stale;
        let ready = [&ingest, &graph, &index].iter().all(|s| s.state == StageState::Ready);
        Status {
            ready,
            stale,
            corpus_hash: self.corpus.as_ref().map(|c| c.hash.clone()),
            documents: self.corpus.as_ref().map_or(0, |c| c.documents.len()),
            chunks: self.corpus.as_ref().map_or(0, |c| c.chunks),
            concepts: count(&self.graph, "concepts"),
            keyword_nodes: count(&self.graph, "keyword_nodes"),
            entities: count(&self.graph, "entities"),
            relations: count(&self.graph, "relations"),
            indexed_chunks: count(&self.index, "indexed_chunks"),
            stages: BTreeMap::from([("ingest".to_string(), ingest), ("build-graph".to_string(), graph), ("index".to_string(), index)]),
            failures: self.failures.clone(),
        }
    }
}
