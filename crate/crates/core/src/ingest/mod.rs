//! Corpus ingestion: the canonical document model, the two accepted input
//! formats, validation and section-aware chunking.
//!
//! Documents arrive already parsed (no OCR here). Tables are carried as
//! Markdown, images as natural-language descriptions.

mod chunk;
mod parse;
pub mod table;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::chunk_document;
pub use parse::{document_to_json, parse_document, parse_document_with_id};
pub use validate::{validate_document, IssueKind, ValidationIssue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("structural error at '{title}': {message}")]
    Structure { title: String, message: String },
    #[error("invalid chunk policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFormat {
    JsonDocument,
    MarkdownWithHeadings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionLevel {
    Part,
    Chapter,
    Section,
    Subsection,
}

impl SectionLevel {
    pub const ALL: [SectionLevel; 4] = [
        SectionLevel::Part,
        SectionLevel::Chapter,
        SectionLevel::Section,
        SectionLevel::Subsection,
    ];

    /// 1 for parts, 4 for subsections. Matches the number of `#` in Markdown.
    pub fn depth(self) -> usize {
        self as usize + 1
    }

    pub fn from_depth(depth: usize) -> Option<Self> {
        Self::ALL.get(depth.checked_sub(1)?).copied()
    }

    pub fn child(self) -> Option<Self> {
        Self::from_depth(self.depth() + 1)
    }
}

impl fmt::Display for SectionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SectionLevel::Part => "part",
            SectionLevel::Chapter => "chapter",
            SectionLevel::Section => "section",
            SectionLevel::Subsection => "subsection",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub sections: Vec<Section>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub id: String,
    pub level: SectionLevel,
    pub title: String,
    /// Position among siblings. Reassigned from input order on parse.
    #[serde(default, skip_serializing)]
    pub order_index: usize,
    #[serde(default)]
    pub blocks: Vec<Block>,
    #[serde(default)]
    pub children: Vec<Section>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Paragraph,
    Table,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub kind: BlockKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_ref: Option<String>,
    /// Byte range in the raw input, when the input format provides one.
    #[serde(skip)]
    pub span: Option<(usize, usize)>,
}

impl Block {
    pub fn paragraph(text: impl Into<String>) -> Self {
        Self {
            kind: BlockKind::Paragraph,
            text: text.into(),
            raw_ref: None,
            span: None,
        }
    }

    pub fn table(markdown: impl Into<String>) -> Self {
        Self {
            kind: BlockKind::Table,
            text: markdown.into(),
            raw_ref: None,
            span: None,
        }
    }

    pub fn image(description: impl Into<String>, path: Option<String>) -> Self {
        Self {
            kind: BlockKind::Image,
            text: description.into(),
            raw_ref: path,
            span: None,
        }
    }
}

impl Document {
    /// Pre-order walk yielding each section with the chain of its ancestors'
    /// titles (root first, the section itself last).
    pub fn walk(&self) -> Vec<SectionRef<'_>> {
        fn rec<'a>(
            s: &'a Section,
            parent: Option<&'a str>,
            path: &mut Vec<&'a str>,
            out: &mut Vec<SectionRef<'a>>,
        ) {
            path.push(&s.title);
            out.push(SectionRef {
                section: s,
                parent_id: parent,
                breadcrumb: path.clone(),
            });
            for c in &s.children {
                rec(c, Some(&s.id), path, out);
            }
            path.pop();
        }
        let mut out = Vec::new();
        for s in &self.sections {
            rec(s, None, &mut Vec::new(), &mut out);
        }
        out
    }

    pub fn section_count(&self) -> usize {
        self.walk().len()
    }

    pub fn find_section(&self, id: &str) -> Option<&Section> {
        self.walk().into_iter().find(|r| r.section.id == id).map(|r| r.section)
    }
}

#[derive(Debug, Clone)]
pub struct SectionRef<'a> {
    pub section: &'a Section,
    pub parent_id: Option<&'a str>,
    pub breadcrumb: Vec<&'a str>,
}

impl SectionRef<'_> {
    pub fn context_header(&self) -> String {
        self.breadcrumb.join(" > ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Table,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub document_id: String,
    pub section_id: String,
    pub modality: Modality,
    pub content: String,
    /// `Part > Chapter > Section` breadcrumb, prepended when embedding.
    pub context_header: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub char_span: Option<(usize, usize)>,
    pub token_estimate: usize,
    /// Byte length of the leading overlap copied from the previous chunk.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub overlap_len: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl Chunk {
    /// Content without the overlap prefix.
    pub fn own_content(&self) -> &str {
        self.content[self.overlap_len..].trim_start()
    }

    pub fn embedding_text(&self) -> String {
        if self.context_header.is_empty() {
            self.content.clone()
        } else {
            format!("{}\n{}", self.context_header, self.content)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TokenEstimator {
    Whitespace,
    #[default]
    CharsPerToken4,
}

impl TokenEstimator {
    pub fn estimate(self, text: &str) -> usize {
        match self {
            TokenEstimator::Whitespace => text.split_whitespace().count(),
            TokenEstimator::CharsPerToken4 => text.chars().count().div_ceil(4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawChunkPolicy")]
pub struct ChunkPolicy {
    pub max_tokens: usize,
    pub min_tokens: usize,
    pub overlap_tokens: usize,
    pub token_estimator: TokenEstimator,
}

#[derive(Deserialize)]
struct RawChunkPolicy {
    #[serde(default = "default_max")]
    max_tokens: usize,
    #[serde(default = "default_min")]
    min_tokens: usize,
    #[serde(default)]
    overlap_tokens: usize,
    #[serde(default)]
    token_estimator: TokenEstimator,
}

fn default_max() -> usize {
    512
}
fn default_min() -> usize {
    64
}

impl TryFrom<RawChunkPolicy> for ChunkPolicy {
    type Error = IngestError;
    fn try_from(r: RawChunkPolicy) -> Result<Self, Self::Error> {
        ChunkPolicy::new(r.max_tokens, r.min_tokens, r.overlap_tokens, r.token_estimator)
    }
}

impl Default for ChunkPolicy {
    fn default() -> Self {
        Self {
            max_tokens: default_max(),
            min_tokens: default_min(),
            overlap_tokens: 0,
            token_estimator: TokenEstimator::CharsPerToken4,
        }
    }
}

impl ChunkPolicy {
    pub fn new(
        max_tokens: usize,
        min_tokens: usize,
        overlap_tokens: usize,
        token_estimator: TokenEstimator,
    ) -> Result<Self, IngestError> {
        if min_tokens >= max_tokens {
            return Err(IngestError::Policy(format!(
                "min_tokens ({min_tokens}) must be below max_tokens ({max_tokens})"
            )));
        }
        if overlap_tokens >= min_tokens {
            return Err(IngestError::Policy(format!(
                "overlap_tokens ({overlap_tokens}) must be below min_tokens ({min_tokens})"
            )));
        }
        Ok(Self {
            max_tokens,
            min_tokens,
            overlap_tokens,
            token_estimator,
        })
    }

    pub fn estimate(&self, text: &str) -> usize {
        self.token_estimator.estimate(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_invariants_enforced() {
        assert!(ChunkPolicy::new(512, 64, 0, TokenEstimator::CharsPerToken4).is_ok());
        assert!(ChunkPolicy::new(64, 64, 0, TokenEstimator::CharsPerToken4).is_err());
        assert!(ChunkPolicy::new(512, 64, 64, TokenEstimator::CharsPerToken4).is_err());
        let bad: Result<ChunkPolicy, _> = serde_json::from_str(r#"{"max_tokens": 10, "min_tokens": 20}"#);
        assert!(bad.is_err());
        let ok: ChunkPolicy = serde_json::from_str("{}").unwrap();
        assert_eq!(ok, ChunkPolicy::default());
    }

    #[test]
    fn level_depths() {
        assert_eq!(SectionLevel::Part.depth(), 1);
        assert_eq!(SectionLevel::from_depth(4), Some(SectionLevel::Subsection));
        assert_eq!(SectionLevel::from_depth(5), None);
        assert_eq!(SectionLevel::from_depth(0), None);
        assert_eq!(SectionLevel::Subsection.child(), None);
    }

    #[test]
    fn estimators() {
        assert_eq!(TokenEstimator::CharsPerToken4.estimate("abcde"), 2);
        assert_eq!(TokenEstimator::Whitespace.estimate(" a b  c "), 3);
    }
}
