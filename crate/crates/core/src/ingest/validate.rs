use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::table::parse_table;
use super::{BlockKind, Document, Section, SectionLevel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    EmptyDocument,
    DuplicateSectionId,
    EmptySectionId,
    LevelNotIncreasing,
    OrderIndexGap,
    EmptyImageCaption,
    MalformedTable,
    EmptyParagraph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
    pub message: String,
}

/// Report every invariant violation in `doc`. Never mutates; an empty list
/// means the document is safe to chunk and build from.
pub fn validate_document(doc: &Document) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    if doc.sections.is_empty() {
        issues.push(ValidationIssue {
            kind: IssueKind::EmptyDocument,
            section_id: None,
            message: format!("document '{}' has no sections", doc.id),
        });
    }
    let mut seen = HashSet::new();
    check_siblings(&doc.sections, None, &mut seen, &mut issues);
    issues
}

fn check_siblings<'a>(
    sections: &'a [Section],
    parent: Option<SectionLevel>,
    seen: &mut HashSet<&'a str>,
    issues: &mut Vec<ValidationIssue>,
) {
    for (i, s) in sections.iter().enumerate() {
        let sid = Some(s.id.clone());
        if s.order_index != i {
            issues.push(ValidationIssue {
                kind: IssueKind::OrderIndexGap,
                section_id: sid.clone(),
                message: format!("order_index {} at sibling position {i}", s.order_index),
            });
        }
        if s.id.is_empty() {
            issues.push(ValidationIssue {
                kind: IssueKind::EmptySectionId,
                section_id: None,
                message: format!("section '{}' has an empty id", s.title),
            });
        } else if !seen.insert(&s.id) {
            issues.push(ValidationIssue {
                kind: IssueKind::DuplicateSectionId,
                section_id: sid.clone(),
                message: format!("section id '{}' used more than once", s.id),
            });
        }
        let expected = match parent {
            None => Some(SectionLevel::Part),
            Some(p) => p.child(),
        };
        if expected != Some(s.level) {
            issues.push(ValidationIssue {
                kind: IssueKind::LevelNotIncreasing,
                section_id: sid.clone(),
                message: match expected {
                    Some(e) => format!("'{}' is a {} where a {e} is expected", s.title, s.level),
                    None => format!("'{}' nests below a subsection", s.title),
                },
            });
        }
        for (bi, b) in s.blocks.iter().enumerate() {
            match b.kind {
                BlockKind::Image if b.text.trim().is_empty() => issues.push(ValidationIssue {
                    kind: IssueKind::EmptyImageCaption,
                    section_id: sid.clone(),
                    message: format!("image block {bi} has no description"),
                }),
                BlockKind::Table => {
                    if let Err(e) = parse_table(&b.text) {
                        issues.push(ValidationIssue {
                            kind: IssueKind::MalformedTable,
                            section_id: sid.clone(),
                            message: format!("table block {bi}: {e}"),
                        });
                    }
                }
                BlockKind::Paragraph if b.text.trim().is_empty() => issues.push(ValidationIssue {
                    kind: IssueKind::EmptyParagraph,
                    section_id: sid.clone(),
                    message: format!("paragraph block {bi} is empty"),
                }),
                _ => {}
            }
        }
        check_siblings(&s.children, Some(s.level), seen, issues);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Block;

    fn section(id: &str, level: SectionLevel, order: usize) -> Section {
        Section {
            id: id.into(),
            level,
            title: id.to_uppercase(),
            order_index: order,
            blocks: vec![Block::paragraph("Some text.")],
            children: vec![],
        }
    }

    fn doc(sections: Vec<Section>) -> Document {
        Document {
            id: "d".into(),
            title: "D".into(),
            sections,
            source_meta: Default::default(),
        }
    }

    #[test]
    fn well_formed_is_clean() {
        let mut p = section("p", SectionLevel::Part, 0);
        p.children.push(section("c", SectionLevel::Chapter, 0));
        assert!(validate_document(&doc(vec![p])).is_empty());
    }

    #[test]
    fn empty_image_caption() {
        let mut p = section("p", SectionLevel::Part, 0);
        p.blocks.push(Block::image("  ", None));
        let issues = validate_document(&doc(vec![p]));
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::EmptyImageCaption);
    }

    #[test]
    fn duplicate_section_id() {
        let mut p = section("p", SectionLevel::Part, 0);
        p.children.push(section("p", SectionLevel::Chapter, 0));
        let issues = validate_document(&doc(vec![p]));
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].kind, IssueKind::DuplicateSectionId);
    }

    #[test]
    fn structural_problems_all_reported() {
        let mut p = section("p", SectionLevel::Part, 0);
        p.children.push(section("s", SectionLevel::Section, 3));
        p.blocks.push(Block::table("| a | b |\n| 1 | 2 |"));
        let d = doc(vec![p]);
        let before = d.clone();
        let kinds: Vec<_> = validate_document(&d).into_iter().map(|i| i.kind).collect();
        assert_eq!(d, before);
        assert!(kinds.contains(&IssueKind::MalformedTable));
        assert!(kinds.contains(&IssueKind::OrderIndexGap));
        assert!(kinds.contains(&IssueKind::LevelNotIncreasing));
        assert_eq!(validate_document(&doc(vec![]))[0].kind, IssueKind::EmptyDocument);
    }
}
