//! File-backed engine: configuration, pipeline stages, persisted state and
//! the query/eval surface shared by the CLI and the HTTP API.

mod config;
mod error;
mod state;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

pub use config::{EngineConfig, PathsConfig, ServerConfig};
pub use error::{EngineError, ErrorBody};
pub use state::{corpus_hash, CorpusRecord, Manifest, StageFailure, StageRecord, StageState, StageStatus, Status};

use crate::concept::{build_corpus_concept_graph, BuildCheckpoint, ConceptGraph, OverrideFile};
use crate::eval::{run_eval, EvalReport, EvalSample};
use crate::gateway::{FaultPoint, Gateway};
use crate::index::{index_chunks, VectorIndex};
use crate::ingest::{
    chunk_document, document_to_json, parse_document_with_id, validate_document, Chunk, Document, InputFormat, IssueKind,
    SectionLevel, ValidationIssue,
};
use crate::instance::{build_instance_graph, BuildReport, InstanceCheckpoint, InstanceGraph, Ontology};
use crate::qa::{self, now_ms, Answer, PromptTemplate, QaRequest, Session, SessionStore};
use crate::retriever::{DegradationFlag, GraphContext, KnowledgeBase, RetrievalMode, Trace, VectorHit};
use crate::store::{read_json, write_json, BuildLock};

const CONCEPTS_FILE: &str = "concepts.json";
const INSTANCES_FILE: &str = "instances.json";
const BUILD_REPORT_FILE: &str = "build_report.json";
const CONCEPT_CHECKPOINT: &str = "concepts.checkpoint.json";
const INSTANCE_CHECKPOINT: &str = "instances.checkpoint.json";
const CHUNKS_FILE: &str = "chunks.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ingested: Vec<String>,
    pub warnings: Vec<ValidationIssue>,
    pub documents: usize,
    pub chunks: usize,
    pub corpus_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub concepts: usize,
    pub keyword_nodes: usize,
    pub entities: usize,
    pub relations: usize,
    pub report: BuildReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSummary {
    pub indexed_chunks: usize,
    pub dim: usize,
    pub embedding_space: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub session_id: String,
    pub answer: Answer,
    pub graph_context: GraphContext,
    pub vector_hits: Vec<VectorHit>,
    pub refined_queries: Vec<String>,
    pub trace: Trace,
}

/// Wire shape of an answered query, shared by the CLI and the HTTP API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub session_id: String,
    pub query_id: String,
    pub answer: String,
    pub citations: Vec<String>,
    pub graph_entities_used: Vec<String>,
    pub degraded: bool,
    pub failed: bool,
    pub degradation_flags: Vec<crate::retriever::DegradationFlag>,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceRecord>,
}

impl QueryOutcome {
    pub fn response(&self, with_trace: bool) -> QueryResponse {
        QueryResponse {
            session_id: self.session_id.clone(),
            query_id: self.answer.query_id.clone(),
            answer: self.answer.text.clone(),
            citations: self.answer.citations.clone(),
            graph_entities_used: self.answer.graph_entities_used.clone(),
            degraded: self.answer.is_degraded(),
            failed: self.answer.failed,
            degradation_flags: self.answer.degradation_flags.clone(),
            latency_ms: self.answer.latency_ms,
            trace: with_trace.then(|| self.trace_record()),
        }
    }

    pub fn trace_record(&self) -> TraceRecord {
        TraceRecord {
            query_id: self.answer.query_id.clone(),
            session_id: self.session_id.clone(),
            question: self.trace.query.clone(),
            graph_context: self.graph_context.clone(),
            vector_hits: self.vector_hits.clone(),
            trace: self.trace.clone(),
        }
    }
}

/// Stored per answered query for the trace endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub query_id: String,
    pub session_id: String,
    pub question: String,
    pub graph_context: GraphContext,
    pub vector_hits: Vec<VectorHit>,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptView {
    pub id: String,
    pub section_id: String,
    pub level: SectionLevel,
    pub title: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub children: Vec<ConceptView>,
}

fn format_of(path: &Path) -> Option<InputFormat> {
    match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
        "md" | "markdown" => Some(InputFormat::MarkdownWithHeadings),
        "json" => Some(InputFormat::JsonDocument),
        _ => None,
    }
}

fn safe_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn is_fatal(issue: &ValidationIssue) -> bool {
    !matches!(issue.kind, IssueKind::MalformedTable | IssueKind::EmptyParagraph | IssueKind::EmptyImageCaption)
}

pub struct Engine {
    config: EngineConfig,
    root: PathBuf,
    gateway: Gateway,
    template: PromptTemplate,
    sessions: SessionStore,
    snapshot: RwLock<Option<Arc<KnowledgeBase>>>,
    traces: Mutex<HashMap<String, Arc<TraceRecord>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("root", &self.root).finish()
    }
}

impl Engine {
    /// Opens an engine rooted at `root`; relative config paths resolve
    /// against it.
    pub fn open(config: EngineConfig, root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        config.validate()?;
        let root = root.into();
        let gateway = Gateway::from_config(&config.provider)?;
        let template = match &config.qa.prompt_template {
            Some(p) => PromptTemplate::load(&root.join(p))?,
            None => PromptTemplate::default(),
        };
        let sessions = SessionStore::persistent(root.join(&config.paths.sessions_dir));
        let engine = Engine {
            config,
            root,
            gateway,
            template,
            sessions,
            snapshot: RwLock::new(None),
            traces: Mutex::new(HashMap::new()),
        };
        let cache = engine.cache_path();
        if cache.exists() {
            engine
                .gateway
                .load_cache(&cache)
                .map_err(|e| EngineError::Storage(format!("{}: {e}", cache.display())))?;
        }
        Ok(engine)
    }

    /// Opens the engine described by a config file, adding `faults` to the
    /// provider's injected failures.
    pub fn from_config_file(path: &Path, faults: &[FaultPoint]) -> Result<Self, EngineError> {
        let (mut config, root) = EngineConfig::load(path)?;
        config.provider.fault_points.extend(faults.iter().copied());
        Self::open(config, root)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    fn path(&self, p: &str) -> PathBuf {
        self.root.join(p)
    }

    fn state_path(&self) -> PathBuf {
        self.path(&self.config.paths.state_file)
    }

    fn lock_path(&self) -> PathBuf {
        let mut p = self.state_path().into_os_string();
        p.push(".lock");
        PathBuf::from(p)
    }

    fn documents_dir(&self) -> PathBuf {
        self.path(&self.config.paths.corpus_dir).join("documents")
    }

    fn chunks_path(&self) -> PathBuf {
        self.path(&self.config.paths.corpus_dir).join(CHUNKS_FILE)
    }

    fn graph_file(&self, name: &str) -> PathBuf {
        self.path(&self.config.paths.graph_dir).join(name)
    }

    fn index_path(&self) -> PathBuf {
        self.path(&self.config.paths.index_file)
    }

    fn cache_path(&self) -> PathBuf {
        self.index_path().with_extension("cache.json")
    }

    fn traces_dir(&self) -> PathBuf {
        self.path(&self.config.paths.sessions_dir).join("traces")
    }

    pub fn manifest(&self) -> Result<Manifest, EngineError> {
        let p = self.state_path();
        if p.exists() {
            Ok(read_json(&p)?)
        } else {
            Ok(Manifest::default())
        }
    }

    fn save_manifest(&self, m: &Manifest) -> Result<(), EngineError> {
        Ok(write_json(&self.state_path(), m)?)
    }

    fn invalidate(&self) {
        *self.snapshot.write().unwrap() = None;
    }

    pub fn status(&self) -> Result<Status, EngineError> {
        Ok(self.manifest()?.status(&self.gateway.embedding_space()))
    }

    pub fn load_documents(&self) -> Result<Vec<Document>, EngineError> {
        let dir = self.documents_dir();
        let mut docs = Vec::new();
        if !dir.exists() {
            return Ok(docs);
        }
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| EngineError::Storage(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            docs.push(read_json(&p)?);
        }
        Ok(docs)
    }

    fn load_chunks(&self) -> Result<Vec<Chunk>, EngineError> {
        let p = self.chunks_path();
        if !p.exists() {
            return Err(EngineError::Dependency { stage: "ingest" });
        }
        Ok(read_json(&p)?)
    }

    /// Parses every Markdown or JSON document under `path` (a file or a
    /// directory, non-recursive) and adds it to the corpus. Markdown
    /// documents are named after their file stem.
    pub fn ingest_path(&self, path: &Path) -> Result<IngestSummary, EngineError> {
        let files: Vec<PathBuf> = if path.is_dir() {
            let mut v: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| EngineError::Input(format!("{}: {e}", path.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && format_of(p).is_some())
                .collect();
            v.sort();
            v
        } else if path.is_file() {
            vec![path.to_path_buf()]
        } else {
            return Err(EngineError::Input(format!("{} does not exist", path.display())));
        };
        if files.is_empty() {
            return Err(EngineError::Input(format!("no .md or .json documents under {}", path.display())));
        }
        let mut docs = Vec::new();
        for f in files {
            let format = format_of(&f).ok_or_else(|| EngineError::Input(format!("{}: unsupported extension", f.display())))?;
            let raw = std::fs::read_to_string(&f).map_err(|e| EngineError::Input(format!("{}: {e}", f.display())))?;
            let stem = f.file_stem().and_then(|s| s.to_str()).map(str::to_string);
            let doc = parse_document_with_id(&raw, format, stem.as_deref())
                .map_err(|e| EngineError::Input(format!("{}: {e}", f.display())))?;
            docs.push(doc);
        }
        self.ingest_documents(docs)
    }

    /// Adds documents (replacing any with the same id) and rechunks the
    /// corpus. Later stages become stale.
    pub fn ingest_documents(&self, docs: Vec<Document>) -> Result<IngestSummary, EngineError> {
        let mut warnings = Vec::new();
        for d in &docs {
            if !safe_id(&d.id) {
                return Err(EngineError::Input(format!("document id '{}' must be [A-Za-z0-9._-]+", d.id)));
            }
            let issues = validate_document(d);
            if let Some(fatal) = issues.iter().find(|i| is_fatal(i)) {
                return Err(EngineError::Input(format!("document '{}': {}", d.id, fatal.message)));
            }
            warnings.extend(issues);
        }
        let _lock = BuildLock::acquire(&self.lock_path())?;
        let dir = self.documents_dir();
        for d in &docs {
            crate::store::write_atomic(&dir.join(format!("{}.json", d.id)), document_to_json(d).as_bytes())
                .map_err(|e| EngineError::Storage(e.to_string()))?;
        }
        let all = self.load_documents()?;
        let chunks: Vec<Chunk> = all.iter().flat_map(|d| chunk_document(d, &self.config.chunking)).collect();
        write_json(&self.chunks_path(), &chunks)?;
        let hash = corpus_hash(&all, &self.config.chunking);
        let mut m = self.manifest()?;
        m.corpus = Some(CorpusRecord {
            hash: hash.clone(),
            documents: all.iter().map(|d| d.id.clone()).collect(),
            chunks: chunks.len(),
            updated_at: now_ms(),
        });
        self.save_manifest(&m)?;
        self.invalidate();
        tracing::info!(documents = all.len(), chunks = chunks.len(), "corpus updated");
        Ok(IngestSummary {
            ingested: docs.iter().map(|d| d.id.clone()).collect(),
            warnings,
            documents: all.len(),
            chunks: chunks.len(),
            corpus_hash: hash,
        })
    }

    fn record_failure(&self, stage: &str, err: &EngineError) {
        let res = self.manifest().and_then(|mut m| {
            m.failures.insert(
                stage.to_string(),
                StageFailure {
                    message: err.to_string(),
                    at: now_ms(),
                },
            );
            self.save_manifest(&m)
        });
        if let Err(e) = res {
            tracing::warn!(error = %e, stage, "cannot record build failure");
        }
    }

    /// Builds both graph layers. Interrupted builds resume from the
    /// checkpoints in the graph directory; until then the previous graphs
    /// stay in use and the failure is recorded in the manifest.
    pub fn build_graph(&self) -> Result<GraphSummary, EngineError> {
        let _lock = BuildLock::acquire(&self.lock_path())?;
        let res = self.build_graph_locked();
        if let Err(e) = &res {
            if !matches!(e, EngineError::Dependency { .. }) {
                self.record_failure("build-graph", e);
            }
        }
        res
    }

    fn build_graph_locked(&self) -> Result<GraphSummary, EngineError> {
        let mut m = self.manifest()?;
        let corpus = m.corpus.clone().ok_or(EngineError::Dependency { stage: "ingest" })?;
        let docs = self.load_documents()?;
        let chunks = self.load_chunks()?;
        let overrides = match &self.config.paths.overrides_file {
            Some(p) => Some(OverrideFile::load(&self.path(p))?),
            None => None,
        };
        let mut instance_opts = self.config.instance.clone();
        if let Some(p) = &self.config.paths.ontology_file {
            instance_opts.ontology = Some(Ontology::load(&self.path(p))?);
        }

        let cp_path = self.graph_file(CONCEPT_CHECKPOINT);
        let mut cp: BuildCheckpoint = if cp_path.exists() { read_json(&cp_path)? } else { Default::default() };
        let built = build_corpus_concept_graph(&docs, overrides.as_ref(), &self.gateway, &self.config.concept, &mut cp);
        let cg = match built {
            Ok(g) => g,
            Err(e) => {
                write_json(&cp_path, &cp)?;
                return Err(e.into());
            }
        };

        let icp_path = self.graph_file(INSTANCE_CHECKPOINT);
        let mut icp: InstanceCheckpoint = if icp_path.exists() { read_json(&icp_path)? } else { Default::default() };
        let built = build_instance_graph(&docs, &chunks, &cg, &self.gateway, &instance_opts, &mut icp);
        let (ig, report) = match built {
            Ok(x) => x,
            Err(e) => {
                write_json(&cp_path, &cp)?;
                write_json(&icp_path, &icp)?;
                return Err(e.into());
            }
        };
        cg.save(&self.graph_file(CONCEPTS_FILE))?;
        ig.save(&self.graph_file(INSTANCES_FILE))?;
        write_json(&self.graph_file(BUILD_REPORT_FILE), &report)?;
        for p in [&cp_path, &icp_path] {
            let _ = std::fs::remove_file(p);
        }

        let summary = GraphSummary {
            concepts: cg.nodes().len(),
            keyword_nodes: cg.keyword_nodes().len(),
            entities: ig.entities().len(),
            relations: ig.relations().len(),
            report,
        };
        m.graph = Some(StageRecord {
            corpus_hash: corpus.hash,
            built_at: now_ms(),
            counts: BTreeMap::from([
                ("concepts".to_string(), summary.concepts),
                ("keyword_nodes".to_string(), summary.keyword_nodes),
                ("entities".to_string(), summary.entities),
                ("relations".to_string(), summary.relations),
            ]),
            embedding_space: Some(self.gateway.embedding_space()),
        });
        m.failures.remove("build-graph");
        self.save_manifest(&m)?;
        self.persist_cache();
        self.invalidate();
        Ok(summary)
    }

    /// Embeds every chunk into a fresh index. Unchanged chunks hit the
    /// embedding cache.
    pub fn build_index(&self) -> Result<IndexSummary, EngineError> {
        let _lock = BuildLock::acquire(&self.lock_path())?;
        let res = self.build_index_locked();
        if let Err(e) = &res {
            if !matches!(e, EngineError::Dependency { .. }) {
                self.record_failure("index", e);
            }
        }
        res
    }

    fn build_index_locked(&self) -> Result<IndexSummary, EngineError> {
        let mut m = self.manifest()?;
        let corpus = m.corpus.clone().ok_or(EngineError::Dependency { stage: "ingest" })?;
        let chunks = self.load_chunks()?;
        let index = index_chunks(&chunks, &self.gateway, None)?;
        index.save(&self.index_path())?;
        self.persist_cache();
        let summary = IndexSummary {
            indexed_chunks: index.len(),
            dim: index.dim(),
            embedding_space: index.model().to_string(),
        };
        m.index = Some(StageRecord {
            corpus_hash: corpus.hash,
            built_at: now_ms(),
            counts: BTreeMap::from([("indexed_chunks".to_string(), summary.indexed_chunks)]),
            embedding_space: Some(summary.embedding_space.clone()),
        });
        m.failures.remove("index");
        self.save_manifest(&m)?;
        self.invalidate();
        Ok(summary)
    }

    fn persist_cache(&self) {
        if let Err(e) = self.gateway.save_cache(&self.cache_path()) {
            tracing::warn!(error = %e, "cannot persist embedding cache");
        }
    }

    /// Checks that every stage is built and current.
    pub fn ensure_ready(&self) -> Result<(), EngineError> {
        let m = self.manifest()?;
        if m.corpus.is_none() {
            return Err(EngineError::Dependency { stage: "ingest" });
        }
        match m.graph_status().state {
            StageState::Missing => return Err(EngineError::Dependency { stage: "build-graph" }),
            StageState::Stale => return Err(EngineError::Stale { stage: "build-graph" }),
            StageState::Ready => {}
        }
        match m.index_status(&self.gateway.embedding_space()).state {
            StageState::Missing => Err(EngineError::Dependency { stage: "index" }),
            StageState::Stale => Err(EngineError::Stale { stage: "index" }),
            StageState::Ready => Ok(()),
        }
    }

    /// The loaded graphs, index and chunks. Loaded once and shared until
    /// the next build.
    pub fn knowledge(&self) -> Result<Arc<KnowledgeBase>, EngineError> {
        self.ensure_ready()?;
        if let Some(kb) = self.snapshot.read().unwrap().as_ref() {
            return Ok(kb.clone());
        }
        let mut slot = self.snapshot.write().unwrap();
        if let Some(kb) = slot.as_ref() {
            return Ok(kb.clone());
        }
        let cg = ConceptGraph::load(&self.graph_file(CONCEPTS_FILE))?;
        let ig = InstanceGraph::load(&self.graph_file(INSTANCES_FILE))?;
        let index = VectorIndex::load(&self.index_path())?;
        let chunks = self.load_chunks()?;
        let kb = Arc::new(KnowledgeBase::new(cg, ig, index, chunks));
        *slot = Some(kb.clone());
        Ok(kb)
    }

    pub fn create_session(&self) -> Result<Session, EngineError> {
        let h = self.sessions.create(self.config.qa.max_history_turns)?;
        let s = h.lock().unwrap().clone();
        Ok(s)
    }

    pub fn session(&self, id: &str) -> Result<Session, EngineError> {
        let h = self.sessions.get(id)?.ok_or_else(|| EngineError::NotFound {
            kind: "session",
            id: id.to_string(),
        })?;
        let s = h.lock().unwrap().clone();
        Ok(s)
    }

    /// Answers `question` within a session (a new one when `session_id` is
    /// `None`). Calls on the same session are serialized.
    pub fn query(&self, question: &str, session_id: Option<&str>, mode: RetrievalMode) -> Result<QueryOutcome, EngineError> {
        if question.trim().is_empty() {
            return Err(EngineError::Input("question must not be empty".into()));
        }
        let kb = self.knowledge()?;
        let handle = match session_id {
            Some(id) => self.sessions.get(id)?.ok_or_else(|| EngineError::NotFound {
                kind: "session",
                id: id.to_string(),
            })?,
            None => self.sessions.create(self.config.qa.max_history_turns)?,
        };
        let mut session = handle.lock().unwrap();
        let before = session.turns.len();
        let req = QaRequest {
            kb: &kb,
            retrieval: &self.config.retrieval,
            qa: &self.config.qa,
            template: &self.template,
            mode,
            gateway: &self.gateway,
        };
        let (mut answer, mut usc) = qa::answer(question, &mut session, &req)?;
        // answers served from artifacts whose rebuild failed
        for (stage, f) in &self.manifest()?.failures {
            let flag = DegradationFlag {
                stage: stage.clone(),
                point: "build".into(),
                message: format!("last {stage} run failed, serving the previous build: {}", f.message),
            };
            answer.degradation_flags.push(flag.clone());
            usc.trace.flags.push(flag);
        }
        self.sessions.record(&session.id, &session.turns[before..])?;
        let outcome = QueryOutcome {
            session_id: session.id.clone(),
            answer,
            graph_context: usc.graph_context,
            vector_hits: usc.vector_hits,
            refined_queries: usc.refined_queries,
            trace: usc.trace,
        };
        let record = outcome.trace_record();
        write_json(&self.traces_dir().join(format!("{}.json", record.query_id)), &record)?;
        self.traces.lock().unwrap().insert(record.query_id.clone(), Arc::new(record));
        Ok(outcome)
    }

    pub fn trace(&self, query_id: &str) -> Result<Arc<TraceRecord>, EngineError> {
        if let Some(t) = self.traces.lock().unwrap().get(query_id) {
            return Ok(t.clone());
        }
        let not_found = || EngineError::NotFound {
            kind: "trace",
            id: query_id.to_string(),
        };
        if !safe_id(query_id) {
            return Err(not_found());
        }
        let p = self.traces_dir().join(format!("{query_id}.json"));
        if !p.exists() {
            return Err(not_found());
        }
        let rec: Arc<TraceRecord> = Arc::new(read_json(&p)?);
        self.traces.lock().unwrap().insert(query_id.to_string(), rec.clone());
        Ok(rec)
    }

    pub fn chunk(&self, id: &str) -> Result<Chunk, EngineError> {
        let chunks = self.load_chunks()?;
        chunks.into_iter().find(|c| c.id == id).ok_or_else(|| EngineError::NotFound {
            kind: "chunk",
            id: id.to_string(),
        })
    }

    /// Concept tree below `root`, or the whole forest.
    pub fn concepts(&self, root: Option<&str>) -> Result<Vec<ConceptView>, EngineError> {
        let m = self.manifest()?;
        if m.graph.is_none() {
            return Err(EngineError::Dependency { stage: "build-graph" });
        }
        let cg = ConceptGraph::load(&self.graph_file(CONCEPTS_FILE))?;
        fn view(cg: &ConceptGraph, id: &str) -> ConceptView {
            let n = cg.node(id).expect("node exists");
            ConceptView {
                id: n.id.clone(),
                section_id: n.section_id.clone(),
                level: n.level,
                title: n.title.clone(),
                summary: n.summary.clone(),
                keywords: n.keywords.clone(),
                children: cg.children(id).iter().map(|c| view(cg, c)).collect(),
            }
        }
        match root {
            Some(r) if cg.node(r).is_none() => Err(EngineError::NotFound {
                kind: "concept",
                id: r.to_string(),
            }),
            Some(r) => Ok(vec![view(&cg, r)]),
            None => Ok(cg.roots().iter().map(|r| view(&cg, r)).collect()),
        }
    }

    pub fn eval(&self, dataset: &[EvalSample], modes: &[RetrievalMode]) -> Result<EvalReport, EngineError> {
        let kb = self.knowledge()?;
        let req = QaRequest {
            kb: &kb,
            retrieval: &self.config.retrieval,
            qa: &self.config.qa,
            template: &self.template,
            mode: RetrievalMode::Full,
            gateway: &self.gateway,
        };
        Ok(run_eval(dataset, &req, modes))
    }
}
