//! Exact cosine search over chunk embeddings with an optional section
//! filter. Search is an exhaustive scan; ties are broken by ascending
//! chunk id.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{self, EmbeddingVector, Gateway, GatewayError};
use crate::ingest::{Chunk, Modality};
use crate::store::{self, StoreError};

const FORMAT: &str = "dsrag-vector-index";
const VERSION: u32 = 1;
const EMBED_BATCH: usize = 64;
const PARALLEL_SCAN_MIN: usize = 4096;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedChunk {
    pub chunk_id: String,
    pub section_id: String,
    pub modality: Modality,
    pub embedded_text: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub chunk_id: String,
    pub score: f64,
    pub rank: usize,
}

/// Allowed section ids. An empty set matches nothing; "no restriction" is
/// expressed by passing no filter at all.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionFilter {
    pub allowed_section_ids: BTreeSet<String>,
}

impl SectionFilter {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        Self {
            allowed_section_ids: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn allows(&self, section_id: &str) -> bool {
        self.allowed_section_ids.contains(section_id)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(try_from = "IndexFile", into = "IndexFile")]
pub struct VectorIndex {
    dim: usize,
    model: String,
    records: Vec<IndexedChunk>,
    norms: Vec<f64>,
    by_id: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    dim: usize,
    model: String,
    count: usize,
    records: Vec<IndexedChunk>,
}

impl TryFrom<IndexFile> for VectorIndex {
    type Error = String;
    fn try_from(f: IndexFile) -> Result<Self, String> {
        if f.format != FORMAT {
            return Err(format!("not a vector index (format '{}')", f.format));
        }
        if f.version != VERSION {
            return Err(format!("unsupported index version {}", f.version));
        }
        if f.count != f.records.len() {
            return Err(format!("header count {} but {} records", f.count, f.records.len()));
        }
        let mut idx = VectorIndex::empty(f.dim, &f.model);
        for r in f.records {
            idx.insert(r).map_err(|e| e.to_string())?;
        }
        Ok(idx)
    }
}

impl From<VectorIndex> for IndexFile {
    fn from(i: VectorIndex) -> Self {
        IndexFile {
            format: FORMAT.into(),
            version: VERSION,
            dim: i.dim,
            model: i.model,
            count: i.records.len(),
            records: i.records,
        }
    }
}

fn order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

impl VectorIndex {
    pub fn empty(dim: usize, model: &str) -> Self {
        Self {
            dim,
            model: model.to_string(),
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[IndexedChunk] {
        &self.records
    }

    pub fn get(&self, chunk_id: &str) -> Option<&IndexedChunk> {
        self.by_id.get(chunk_id).map(|&i| &self.records[i])
    }

    pub fn insert(&mut self, rec: IndexedChunk) -> Result<(), IndexError> {
        if self.records.is_empty() && self.dim == 0 {
            self.dim = rec.vector.dim();
        }
        if rec.vector.dim() != self.dim {
            return Err(IndexError::Config(format!(
                "vector for {} has dim {}, index dim is {}",
                rec.chunk_id,
                rec.vector.dim(),
                self.dim
            )));
        }
        if self.by_id.contains_key(&rec.chunk_id) {
            return Err(IndexError::Input(format!("duplicate chunk id {}", rec.chunk_id)));
        }
        self.by_id.insert(rec.chunk_id.clone(), self.records.len());
        self.norms.push(rec.vector.norm());
        self.records.push(rec);
        Ok(())
    }

    /// Top-`k` chunks by cosine similarity among those passing `filter`.
    pub fn search(&self, query: &[f32], k: usize, filter: Option<&SectionFilter>) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::Input("k must be at least 1".into()));
        }
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        if query.len() != self.dim {
            return Err(IndexError::Input(format!("query dim {} does not match index dim {}", query.len(), self.dim)));
        }
        let qn = gateway::dot(query, query).sqrt();
        let score = |i: usize| -> Option<(usize, f64)> {
            let r = &self.records[i];
            if filter.is_some_and(|f| !f.allows(&r.section_id)) {
                return None;
            }
            let denom = qn * self.norms[i];
            let s = if denom == 0.0 { 0.0 } else { gateway::dot(query, r.vector.values()) / denom };
            // -0.0 and 0.0 must tie
            Some((i, s + 0.0))
        };
        let mut scored: Vec<(usize, f64)> = if self.records.len() >= PARALLEL_SCAN_MIN {
            (0..self.records.len()).into_par_iter().filter_map(score).collect()
        } else {
            (0..self.records.len()).filter_map(score).collect()
        };
        let cmp = |a: &(usize, f64), b: &(usize, f64)| {
            order((&self.records[a.0].chunk_id, a.1), (&self.records[b.0].chunk_id, b.1))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(rank, (i, s))| SearchHit {
                chunk_id: self.records[i].chunk_id.clone(),
                score: s,
                rank: rank + 1,
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        Ok(store::write_json(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Ok(store::read_json(path)?)
    }
}

/// Embeds every chunk (context header prepended) and adds it to `base`, or
/// to a fresh index when `base` is `None`.
pub fn index_chunks(chunks: &[Chunk], gateway: &Gateway, base: Option<VectorIndex>) -> Result<VectorIndex, IndexError> {
    let space = gateway.embedding_space();
    let mut idx = match base {
        Some(b) if b.model != space => {
            return Err(IndexError::Config(format!(
                "index was built with embedding space '{}', gateway uses '{space}'",
                b.model
            )))
        }
        Some(b) => b,
        None => VectorIndex::empty(0, &space),
    };
    for batch in chunks.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(Chunk::embedding_text).collect();
        let vectors = gateway.embed(&texts)?;
        for ((c, text), v) in batch.iter().zip(texts).zip(vectors) {
            idx.insert(IndexedChunk {
                chunk_id: c.id.clone(),
                section_id: c.section_id.clone(),
                modality: c.modality,
                embedded_text: text,
                vector: v,
            })?;
        }
    }
    Ok(idx)
}

/// Reorders hits by reranker score. On reranker failure the input order is
/// returned together with the error.
pub fn rerank_hits(
    query: &str,
    hits: Vec<SearchHit>,
    text_of: impl Fn(&str) -> String,
    gateway: &Gateway,
) -> (Vec<SearchHit>, Option<GatewayError>) {
    if hits.len() <= 1 {
        return (hits, None);
    }
    let texts: Vec<String> = hits.iter().map(|h| text_of(&h.chunk_id)).collect();
    match gateway.rerank(query, &texts) {
        Ok(order) => {
            let out = order
                .into_iter()
                .enumerate()
                .map(|(rank, (i, score))| SearchHit {
                    chunk_id: hits[i].chunk_id.clone(),
                    score: f64::from(score),
                    rank: rank + 1,
                })
                .collect();
            (out, None)
        }
        Err(e) => (hits, Some(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FaultPoint, ProviderConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, section: &str, v: Vec<f32>) -> IndexedChunk {
        IndexedChunk {
            chunk_id: id.into(),
            section_id: section.into(),
            modality: Modality::Text,
            embedded_text: id.into(),
            vector: EmbeddingVector::normalized(v).unwrap(),
        }
    }

    fn oracle(idx: &VectorIndex, q: &[f32], k: usize, filter: Option<&SectionFilter>) -> Vec<(String, f64)> {
        let qn: f64 = q.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
        let mut all: Vec<(String, f64)> = idx
            .records()
            .iter()
            .filter(|r| filter.is_none_or(|f| f.allowed_section_ids.contains(&r.section_id)))
            .map(|r| {
                let v = r.vector.values();
                let d: f64 = q.iter().zip(v).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                let vn: f64 = v.iter().map(|x| f64::from(*x) * f64::from(*x)).sum::<f64>().sqrt();
                (r.chunk_id.clone(), if qn * vn == 0.0 { 0.0 } else { d / (qn * vn) })
            })
            .collect();
        all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn random_index_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = VectorIndex::empty(8, "m");
        for i in 0..30 {
            let v: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            idx.insert(rec(&format!("c{i:02}"), &format!("s{}", i % 4), v)).unwrap();
        }
        for _ in 0..20 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got: Vec<(String, f64)> = idx.search(&q, 5, None).unwrap().into_iter().map(|h| (h.chunk_id, h.score)).collect();
            assert_eq!(got, oracle(&idx, &q, 5, None));
        }
    }

    #[test]
    fn self_similarity_and_ties() {
        let mut idx = VectorIndex::empty(2, "m");
        idx.insert(rec("b", "s", vec![1.0, 0.0])).unwrap();
        idx.insert(rec("a", "s", vec![1.0, 0.0])).unwrap();
        idx.insert(rec("c", "t", vec![0.0, 1.0])).unwrap();
        let hits = idx.search(&[1.0, 0.0], 3, None).unwrap();
        assert_eq!(hits.iter().map(|h| h.chunk_id.as_str()).collect::<Vec<_>>(), ["a", "b", "c"]);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn filter_semantics() {
        let mut idx = VectorIndex::empty(2, "m");
        idx.insert(rec("a", "s", vec![1.0, 0.0])).unwrap();
        idx.insert(rec("b", "t", vec![1.0, 0.1])).unwrap();
        assert!(idx.search(&[1.0, 0.0], 5, Some(&SectionFilter::default())).unwrap().is_empty());
        let only_t = idx.search(&[1.0, 0.0], 5, Some(&SectionFilter::new(["t"]))).unwrap();
        assert_eq!(only_t.len(), 1);
        assert_eq!(only_t[0].chunk_id, "b");
        assert!(matches!(idx.search(&[1.0], 1, None), Err(IndexError::Input(_))));
        assert!(matches!(idx.insert(rec("z", "s", vec![1.0, 0.0, 0.0])), Err(IndexError::Config(_))));
    }

    fn chunks(n: usize) -> Vec<Chunk> {
        (0..n)
            .map(|i| Chunk {
                id: format!("d/1#{i}"),
                document_id: "d".into(),
                section_id: "d/1".into(),
                modality: Modality::Text,
                content: format!("chunk number {i} about topic{}", i % 7),
                context_header: "Part".into(),
                char_span: None,
                token_estimate: 5,
                overlap_len: 0,
            })
            .collect()
    }

    #[test]
    fn indexing_is_deterministic_and_persistent() {
        let gw = Gateway::mock();
        assert!(index_chunks(&[], &gw, None).unwrap().search(&[1.0], 3, None).unwrap().is_empty());
        let cs = chunks(50);
        let a = index_chunks(&cs, &gw, None).unwrap();
        assert_eq!(a.len(), 50);
        assert!(a.records().iter().all(|r| r.vector.dim() == 256));
        let b = index_chunks(&cs, &Gateway::mock().without_cache(), None).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.json");
        a.save(&p).unwrap();
        let back = VectorIndex::load(&p).unwrap();
        assert_eq!(serde_json::to_vec(&back).unwrap(), serde_json::to_vec(&a).unwrap());
        let q = gw.embed_one("chunk number 3 about topic3").unwrap();
        assert_eq!(back.search(q.values(), 3, None).unwrap(), a.search(q.values(), 3, None).unwrap());
    }

    #[test]
    fn embedding_space_mismatch_is_config_error() {
        let a = index_chunks(&chunks(2), &Gateway::mock(), None).unwrap();
        let other = Gateway::from_config(&ProviderConfig { mock_dim: 64, ..Default::default() }).unwrap();
        assert!(matches!(index_chunks(&chunks(1), &other, Some(a)), Err(IndexError::Config(_))));
    }

    #[test]
    fn rerank_contract() {
        let gw = Gateway::mock();
        let hit = |id: &str, rank| SearchHit { chunk_id: id.into(), score: 0.5, rank };
        let (one, err) = rerank_hits("q", vec![hit("a", 1)], |_| "x".into(), &gw);
        assert_eq!(one.len(), 1);
        assert!(err.is_none());
        let texts = |id: &str| match id {
            "a" => "unrelated words".to_string(),
            _ => "replication lag".to_string(),
        };
        let (r, _) = rerank_hits("replication lag", vec![hit("a", 1), hit("b", 2)], texts, &gw);
        assert_eq!(r[0].chunk_id, "b");
        assert_eq!(r[0].rank, 1);
        let faulty = Gateway::from_config(&ProviderConfig {
            fault_points: vec![FaultPoint::Rerank],
            max_retries: 0,
            ..Default::default()
        })
        .unwrap();
        let (kept, err) = rerank_hits("replication lag", vec![hit("a", 1), hit("b", 2)], texts, &faulty);
        assert_eq!(kept[0].chunk_id, "a");
        assert!(err.is_some());
    }
}
