use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{
    concept_id, ConceptEdge, ConceptError, ConceptGraph, ConceptNode, EdgeKind, KeywordNode, Origin, OverrideFile,
};
use crate::gateway::{tagged, Gateway, GatewayError, GenerationRequest, GenerationRole};
use crate::ingest::{BlockKind, Document, Section, SectionLevel, TokenEstimator};
use crate::text::{collapse_whitespace, content_tokens, normalize_name, truncate_to_tokens};

pub const MAX_KEYWORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConceptBuildOptions {
    pub summary_max_tokens: usize,
    pub token_estimator: TokenEstimator,
}

impl Default for ConceptBuildOptions {
    fn default() -> Self {
        Self {
            summary_max_tokens: 120,
            token_estimator: TokenEstimator::CharsPerToken4,
        }
    }
}

/// Per-section results of an interrupted build. Passing the same
/// checkpoint to a rerun skips every section already recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildCheckpoint {
    pub sections: BTreeMap<String, SectionDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionDraft {
    pub summary: String,
    pub summary_origin: Origin,
    pub keywords: Vec<String>,
    pub keywords_origin: Origin,
}

fn own_text(sec: &Section) -> String {
    sec.blocks
        .iter()
        .filter(|b| b.kind != BlockKind::Table)
        .map(|b| b.text.trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Summary of a section from its own blocks plus its children's summaries.
/// Falls back to the title when the provider returns nothing.
pub fn summarize_section(
    sec: &Section,
    child_summaries: &[String],
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
) -> Result<String, ConceptError> {
    if sec.blocks.is_empty() && sec.children.is_empty() {
        return Err(ConceptError::EmptySection {
            section_id: sec.id.clone(),
            title: sec.title.clone(),
        });
    }
    let prompt = format!(
        "Summarize the {} below in at most {} tokens. State its core concepts plainly.\n{}\n{}\n{}",
        sec.level,
        opts.summary_max_tokens,
        tagged("title", &sec.title),
        tagged("text", &own_text(sec)),
        tagged("child_summaries", &child_summaries.join("\n")),
    );
    let out = gateway
        .generate(&GenerationRequest::new(GenerationRole::Summarize, prompt))
        .map_err(|source| ConceptError::Gateway {
            section_id: sec.id.clone(),
            source,
        })?;
    let mut summary = collapse_whitespace(&out);
    if summary.is_empty() {
        tracing::warn!(section = %sec.id, "empty summary, using title");
        summary = collapse_whitespace(&sec.title);
    }
    let est = opts.token_estimator;
    Ok(truncate_to_tokens(&summary, opts.summary_max_tokens, |t| est.estimate(t)))
}

/// Lowercased, deduplicated keywords parsed from one-per-line or
/// comma-separated provider output.
pub fn parse_keywords(raw: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    raw.split(['\n', ','])
        .map(|k| {
            let k = k.trim().trim_start_matches(['-', '*', '•']).trim();
            let k = k.trim_start_matches(|c: char| c.is_ascii_digit());
            let k = k.strip_prefix('.').or_else(|| k.strip_prefix(')')).unwrap_or(k);
            normalize_name(k.trim_matches(|c: char| c == '"' || c == '\''))
        })
        .filter(|k| !k.is_empty() && seen.insert(k.clone()))
        .take(MAX_KEYWORDS)
        .collect()
}

pub fn extract_keywords(summary: &str, gateway: &Gateway) -> Result<Vec<String>, GatewayError> {
    let prompt = format!(
        "List up to {MAX_KEYWORDS} domain keywords for the summary below, one per line, most important first.\n{}",
        tagged("text", summary)
    );
    let out = gateway.generate(&GenerationRequest::new(GenerationRole::Keywords, prompt))?;
    Ok(parse_keywords(&out))
}

fn title_keywords(title: &str) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<String> = content_tokens(title)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .take(MAX_KEYWORDS)
        .collect();
    if out.is_empty() {
        out.push(normalize_name(title));
    }
    out
}

fn draft_section(
    sec: &Section,
    child_summaries: &[String],
    overrides: Option<&OverrideFile>,
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
) -> Result<SectionDraft, ConceptError> {
    let entry = overrides.and_then(|o| o.get(&sec.id));
    let (summary, summary_origin) = match entry.and_then(|e| e.summary.as_deref()) {
        Some(s) if !s.trim().is_empty() => (collapse_whitespace(s), Origin::Override),
        _ => (summarize_section(sec, child_summaries, gateway, opts)?, Origin::Generated),
    };
    let (mut keywords, keywords_origin) = match entry.and_then(|e| e.keywords.as_ref()) {
        Some(k) => (parse_keywords(&k.join("\n")), Origin::Override),
        None => (
            extract_keywords(&summary, gateway).map_err(|source| ConceptError::Gateway {
                section_id: sec.id.clone(),
                source,
            })?,
            Origin::Generated,
        ),
    };
    if keywords.is_empty() {
        if sec.level == SectionLevel::Part {
            tracing::warn!(section = %sec.id, "no keyword candidates");
        } else {
            keywords = title_keywords(&sec.title);
        }
    }
    Ok(SectionDraft {
        summary,
        summary_origin,
        keywords,
        keywords_origin,
    })
}

fn draft_tree(
    sec: &Section,
    overrides: Option<&OverrideFile>,
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
    checkpoint: &mut BuildCheckpoint,
) -> Result<String, ConceptError> {
    let mut child_summaries = Vec::with_capacity(sec.children.len());
    for c in &sec.children {
        child_summaries.push(draft_tree(c, overrides, gateway, opts, checkpoint)?);
    }
    if let Some(d) = checkpoint.sections.get(&sec.id) {
        return Ok(d.summary.clone());
    }
    let draft = draft_section(sec, &child_summaries, overrides, gateway, opts)?;
    let summary = draft.summary.clone();
    checkpoint.sections.insert(sec.id.clone(), draft);
    Ok(summary)
}

struct Parts {
    nodes: Vec<ConceptNode>,
    keywords: BTreeMap<String, KeywordNode>,
    edges: Vec<ConceptEdge>,
    roots: Vec<String>,
}

fn build_parts(
    doc: &Document,
    overrides: Option<&OverrideFile>,
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
    checkpoint: &mut BuildCheckpoint,
) -> Result<Parts, ConceptError> {
    for s in &doc.sections {
        draft_tree(s, overrides, gateway, opts, checkpoint)?;
    }
    let walk = doc.walk();
    let texts: Vec<String> = walk
        .iter()
        .map(|r| ConceptNode::embedding_text(&r.section.title, &checkpoint.sections[&r.section.id].summary))
        .collect();
    let embeddings = if texts.is_empty() {
        Vec::new()
    } else {
        gateway.embed(&texts).map_err(|source| ConceptError::Gateway {
            section_id: doc.id.clone(),
            source,
        })?
    };
    let mut parts = Parts {
        nodes: Vec::new(),
        keywords: BTreeMap::new(),
        edges: Vec::new(),
        roots: Vec::new(),
    };
    let mut keyword_edges = Vec::new();
    for (r, emb) in walk.iter().zip(embeddings) {
        let d = &checkpoint.sections[&r.section.id];
        let id = concept_id(&r.section.id);
        match r.parent_id {
            Some(p) => parts.edges.push(ConceptEdge {
                src: concept_id(p),
                dst: id.clone(),
                kind: EdgeKind::SubTopic,
            }),
            None => parts.roots.push(id.clone()),
        }
        for k in &d.keywords {
            let kw = KeywordNode {
                id: KeywordNode::id_for(k),
                text: normalize_name(k),
            };
            keyword_edges.push(ConceptEdge {
                src: id.clone(),
                dst: kw.id.clone(),
                kind: EdgeKind::HasKeyword,
            });
            parts.keywords.entry(kw.id.clone()).or_insert(kw);
        }
        parts.nodes.push(ConceptNode {
            id,
            document_id: doc.id.clone(),
            section_id: r.section.id.clone(),
            level: r.section.level,
            title: r.section.title.clone(),
            breadcrumb: r.breadcrumb.iter().map(|s| s.to_string()).collect(),
            summary: d.summary.clone(),
            summary_origin: d.summary_origin,
            keywords: d.keywords.clone(),
            keywords_origin: d.keywords_origin,
            summary_embedding: emb,
        });
    }
    parts.edges.extend(keyword_edges);
    Ok(parts)
}

/// Concept graph of a single document. Sections are summarized bottom-up;
/// progress is recorded in `checkpoint` so a failed build can resume.
pub fn build_concept_graph(
    doc: &Document,
    overrides: Option<&OverrideFile>,
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
    checkpoint: &mut BuildCheckpoint,
) -> Result<ConceptGraph, ConceptError> {
    build_corpus_concept_graph(std::slice::from_ref(doc), overrides, gateway, opts, checkpoint)
}

/// One graph over several documents; keyword nodes are shared across them.
pub fn build_corpus_concept_graph(
    docs: &[Document],
    overrides: Option<&OverrideFile>,
    gateway: &Gateway,
    opts: &ConceptBuildOptions,
    checkpoint: &mut BuildCheckpoint,
) -> Result<ConceptGraph, ConceptError> {
    if let Some(o) = overrides {
        let walks: Vec<_> = docs.iter().map(|d| d.walk()).collect();
        o.check_against(walks.iter().flatten().map(|r| r.section.id.as_str()))?;
    }
    let mut nodes = Vec::new();
    let mut keywords = BTreeMap::new();
    let mut edges = Vec::new();
    let mut roots = Vec::new();
    for doc in docs {
        let p = build_parts(doc, overrides, gateway, opts, checkpoint)?;
        nodes.extend(p.nodes);
        keywords.extend(p.keywords);
        edges.extend(p.edges);
        roots.extend(p.roots);
    }
    ConceptGraph::from_parts(nodes, keywords.into_values().collect(), edges, roots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{FaultPoint, ProviderConfig};
    use crate::ingest::{parse_document_with_id, InputFormat};

    fn doc(md: &str) -> Document {
        parse_document_with_id(md, InputFormat::MarkdownWithHeadings, Some("d")).unwrap()
    }

    const TWO_CHAPTERS: &str = "# Storage\n\nStorage keeps data.\n\n## Indexes\n\nAn index speeds lookups. The index is a tree. Index pages split.\n\n## Scans\n\nA scan reads every row. An index can replace a scan. Index choice matters.\n";

    #[test]
    fn tree_shape_and_shared_keyword() {
        let g = build_concept_graph(
            &doc("# Part\n\nIntro text.\n\n## One\n\nFirst chapter.\n\n## Two\n\nSecond chapter.\n"),
            None,
            &Gateway::mock(),
            &Default::default(),
            &mut Default::default(),
        )
        .unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(g.edges().iter().filter(|e| e.kind == EdgeKind::SubTopic).count(), 2);
        assert_eq!(g.roots(), ["c:d/1"]);

        let g = build_concept_graph(&doc(TWO_CHAPTERS), None, &Gateway::mock(), &Default::default(), &mut Default::default())
            .unwrap();
        // "index" survives the top-5 cut in both chapter summaries
        let holders = g.concepts_with_keyword("kw:index");
        assert!(holders.contains(&"c:d/1.1") && holders.contains(&"c:d/1.2"), "{holders:?}");
        assert_eq!(g.keyword_nodes().iter().filter(|k| k.text == "index").count(), 1);
    }

    #[test]
    fn leaf_summary_is_first_two_sentences() {
        let d = doc("# P\n\nAlpha beta. Gamma delta. Epsilon zeta.\n");
        let s = summarize_section(&d.sections[0], &[], &Gateway::mock(), &Default::default()).unwrap();
        assert_eq!(s, "Alpha beta. Gamma delta.");
    }

    #[test]
    fn override_wins_without_gateway_call() {
        let d = doc("# P\n\nAlpha beta. Gamma delta.\n");
        let o: OverrideFile = serde_json::from_str(r#"{"d/1": {"summary": "Expert text.", "keywords": ["Expert", "expert "]}}"#).unwrap();
        let cfg = ProviderConfig {
            fault_points: vec![FaultPoint::Role(GenerationRole::Summarize), FaultPoint::Role(GenerationRole::Keywords)],
            max_retries: 0,
            ..Default::default()
        };
        let gw = Gateway::from_config(&cfg).unwrap();
        let g = build_concept_graph(&d, Some(&o), &gw, &Default::default(), &mut Default::default()).unwrap();
        let n = &g.nodes()[0];
        assert_eq!(n.summary, "Expert text.");
        assert_eq!(n.summary_origin, Origin::Override);
        assert_eq!(n.keywords, vec!["expert"]);
    }

    #[test]
    fn empty_section_names_section() {
        let d = doc("# P\n\n## Empty\n");
        let err = build_concept_graph(&d, None, &Gateway::mock(), &Default::default(), &mut Default::default()).unwrap_err();
        assert!(matches!(err, ConceptError::EmptySection { ref title, .. } if title == "Empty"), "{err}");
    }

    #[test]
    fn keywords_parse_and_dedup() {
        assert_eq!(parse_keywords("- Index\n2. index\n\"B Tree\", scan"), vec!["index", "b tree", "scan"]);
        let kws = extract_keywords("replication ensures durability and replication aids failover", &Gateway::mock()).unwrap();
        assert_eq!(kws[0], "replication");
        assert!(extract_keywords("and the of", &Gateway::mock()).unwrap().is_empty());
    }

    #[test]
    fn stopword_titles_keep_keywords_below_part_level() {
        let d = doc("# P\n\nThe of and.\n\n## Tuning\n\nIt is as it was.\n");
        let g = build_concept_graph(&d, None, &Gateway::mock(), &Default::default(), &mut Default::default()).unwrap();
        assert!(g.node("c:d/1").unwrap().keywords.is_empty());
        assert_eq!(g.node("c:d/1.1").unwrap().keywords, vec!["tuning"]);
    }

    #[test]
    fn failed_build_resumes_from_checkpoint() {
        let d = doc(TWO_CHAPTERS);
        let cfg = ProviderConfig {
            fault_points: vec![FaultPoint::Embed],
            max_retries: 0,
            ..Default::default()
        };
        let mut cp = BuildCheckpoint::default();
        let err = build_concept_graph(&d, None, &Gateway::from_config(&cfg).unwrap(), &Default::default(), &mut cp);
        assert!(matches!(err, Err(ConceptError::Gateway { .. })));
        assert_eq!(cp.sections.len(), 3);
        let cfg = ProviderConfig {
            fault_points: vec![FaultPoint::Role(GenerationRole::Summarize)],
            max_retries: 0,
            ..Default::default()
        };
        let resumed = build_concept_graph(&d, None, &Gateway::from_config(&cfg).unwrap(), &Default::default(), &mut cp).unwrap();
        let fresh = build_concept_graph(&d, None, &Gateway::mock(), &Default::default(), &mut Default::default()).unwrap();
        assert_eq!(serde_json::to_string(&resumed).unwrap(), serde_json::to_string(&fresh).unwrap());
    }

    #[test]
    fn persistence_round_trip() {
        let g = build_concept_graph(&doc(TWO_CHAPTERS), None, &Gateway::mock(), &Default::default(), &mut Default::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("concepts.json");
        g.save(&p).unwrap();
        let back = ConceptGraph::load(&p).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&g).unwrap());
        assert_eq!(back.children("c:d/1").len(), 2);
    }
}
