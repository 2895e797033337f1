//! Deterministic rule-based provider.
//!
//! Every output is a pure function of (seed, inputs). Generation dispatches
//! on the request role and reads its inputs from the tagged blocks the
//! prompt templates emit; embeddings are L2-normalized hashed
//! bags-of-tokens so shared vocabulary means higher cosine.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;

use super::{cosine, extract_tag, GenerationRequest, GenerationRole, Provider, Result};
use crate::ingest::table::parse_table;
use crate::qa::prompt as qa_prompt;
use crate::text::{content_tokens, fnv1a64, is_stopword, snake_case, split_sentences, tokenize};

pub const KEYWORD_TOP_K: usize = 5;

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    dim: usize,
}

impl Default for MockProvider {
    fn default() -> Self {
        Self::new(0, 256)
    }
}

impl MockProvider {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self { seed, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Unnormalized hashed bag of content tokens.
    pub fn embed_raw(&self, text: &str) -> Vec<f32> {
        let mut tokens = content_tokens(text);
        if tokens.is_empty() {
            tokens = tokenize(text);
        }
        if tokens.is_empty() {
            tokens = vec![text.trim().to_string()];
        }
        let mut v = vec![0f32; self.dim];
        for t in tokens {
            let h = fnv1a64(self.seed, t.as_bytes());
            v[(h % self.dim as u64) as usize] += 1.0;
        }
        v
    }

    fn payload<'a>(prompt: &'a str, tag: &str) -> &'a str {
        extract_tag(prompt, tag).unwrap_or(prompt)
    }
}

impl Provider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, _model: &str, req: &GenerationRequest) -> Result<String> {
        let p = req.prompt.as_str();
        let out = match req.role {
            GenerationRole::Summarize => summarize(
                extract_tag(p, "text").unwrap_or(""),
                extract_tag(p, "child_summaries").unwrap_or(""),
            ),
            GenerationRole::Keywords => top_keywords(Self::payload(p, "text"), KEYWORD_TOP_K).join("\n"),
            GenerationRole::ExtractHigh => extract_high(Self::payload(p, "concepts")),
            GenerationRole::ExtractMid => extract_mid(
                Self::payload(p, "text"),
                extract_tag(p, "seed_terms").unwrap_or(""),
            ),
            GenerationRole::ExtractLow => extract_low(
                Self::payload(p, "text"),
                extract_tag(p, "modality").unwrap_or("text").trim(),
            ),
            GenerationRole::CompleteAttributes => complete_attributes(
                extract_tag(p, "entity").unwrap_or(""),
                extract_tag(p, "chunks").unwrap_or(""),
            ),
            GenerationRole::Decompose => decompose(Self::payload(p, "query")).join("\n"),
            GenerationRole::RefineQuery => refine(
                Self::payload(p, "query"),
                extract_tag(p, "entities").or_else(|| extract_tag(p, "sections")).unwrap_or(""),
            ),
            GenerationRole::Answer => answer(p),
            GenerationRole::JudgeClaims => judge(p),
        };
        Ok(out)
    }

    fn embed(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_raw(t)).collect())
    }

    fn rerank(&self, _model: &str, query: &str, candidates: &[String]) -> Result<Vec<(usize, f32)>> {
        let q = self.embed_raw(query);
        let mut scored: Vec<(usize, f32)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, cosine(&q, &self.embed_raw(c)) as f32))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored)
    }

    fn embedding_space(&self, _model: &str) -> String {
        format!("mock-hash-{}-seed{}", self.dim, self.seed)
    }
}

/// First two sentences of the section's own text followed by the first
/// sentence of each child summary.
pub fn summarize(own_text: &str, child_summaries: &str) -> String {
    let mut parts: Vec<String> = split_sentences(own_text).into_iter().take(2).collect();
    for line in child_summaries.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(first) = split_sentences(line).into_iter().next() {
            parts.push(first);
        }
    }
    parts.join(" ")
}

/// Top-k most frequent non-stopword tokens (length >= 3, containing a
/// letter); ties broken lexicographically.
pub fn top_keywords(text: &str, k: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in content_tokens(text) {
        if t.chars().count() >= 3 && t.chars().any(char::is_alphabetic) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(t, _)| t).collect()
}

/// `references` relation when one concept's summary mentions another's title.
fn extract_high(concepts: &str) -> String {
    let entries: Vec<(&str, String)> = concepts
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(title, summary)| (title.trim(), summary.to_lowercase()))
        .collect();
    let mut out = Vec::new();
    for (i, (src, summary)) in entries.iter().enumerate() {
        for (j, (dst, _)) in entries.iter().enumerate() {
            if i != j && !dst.is_empty() && summary.contains(&dst.to_lowercase()) {
                out.push(format!("REL\t{src}\treferences\t{dst}\t1.0"));
            }
        }
    }
    out.join("\n")
}

const DETERMINERS: &[&str] = &["the", "a", "an", "each", "every", "all", "this", "that"];

fn clean_word(w: &str) -> String {
    w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '_')).to_lowercase()
}

fn looks_like_verb(w: &str) -> bool {
    w.len() > 3
        && w.ends_with('s')
        && !w.ends_with("ss")
        && !w.ends_with("us")
        && w.chars().all(|c| c.is_ascii_alphabetic())
        && !is_stopword(w)
}

/// Subject-verb-object match at the start of a sentence:
/// `[det] subject(1-2 words) verb-s [det] object(1-3 words)`.
pub fn svo(sentence: &str) -> Option<(String, String, String)> {
    let raw: Vec<&str> = sentence.split_whitespace().collect();
    let words: Vec<String> = raw.iter().map(|w| clean_word(w)).collect();
    let mut i = 0;
    if words.first().is_some_and(|w| DETERMINERS.contains(&w.as_str())) {
        i = 1;
    }
    for j in [i + 1, i + 2] {
        if j >= words.len() || !looks_like_verb(&words[j]) {
            continue;
        }
        let subject = &words[i..j];
        if subject.iter().any(|w| w.is_empty() || is_stopword(w) || looks_like_verb(w)) {
            continue;
        }
        // a subject word carrying trailing punctuation ends the clause
        if raw[i..j].iter().any(|w| w.ends_with([',', ';', ':'])) {
            continue;
        }
        let mut k = j + 1;
        if words.get(k).is_some_and(|w| DETERMINERS.contains(&w.as_str())) {
            k += 1;
        }
        let mut object = Vec::new();
        while k < words.len() && object.len() < 3 {
            let w = &words[k];
            if w.is_empty() || is_stopword(w) {
                break;
            }
            object.push(w.clone());
            if raw[k].ends_with(|c: char| !(c.is_alphanumeric() || c == '_')) {
                break;
            }
            k += 1;
        }
        if object.is_empty() {
            continue;
        }
        return Some((subject.join(" "), words[j].clone(), object.join(" ")));
    }
    None
}

fn extract_mid(text: &str, seed_terms: &str) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |line: String, lines: &mut Vec<String>| {
        if seen.insert(line.clone()) {
            lines.push(line);
        }
    };
    for sentence in split_sentences(text) {
        if let Some((s, v, o)) = svo(&sentence) {
            push(format!("ENTITY\tcomponent\t{s}\t"), &mut lines);
            push(format!("ENTITY\toperation\t{v}\t"), &mut lines);
            push(format!("ENTITY\tcomponent\t{o}\t"), &mut lines);
            push(format!("REL\t{s}\t{}\t{o}\t1.0", snake_case(&v)), &mut lines);
        }
    }
    let lower = format!(" {} ", tokenize(text).join(" "));
    for term in seed_terms.split(',').map(|t| tokenize(t).join(" ")).filter(|t| !t.is_empty()) {
        if lower.contains(&format!(" {term} ")) {
            push(format!("ENTITY\tcomponent\t{term}\t"), &mut lines);
        }
    }
    lines.join("\n")
}

fn param_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*([^\s,;]+)").unwrap())
}

fn ident_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[A-Z][A-Z0-9]*[-_]?[0-9]+$").unwrap())
}

fn step_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^Step (\d+)[:.]\s*(.+)$").unwrap())
}

fn unit_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bin (milliseconds|seconds|minutes|hours|bytes|kilobytes|megabytes|gigabytes|pages|percent|connections)\b")
            .unwrap()
    })
}

fn attr_value(v: &str) -> String {
    v.replace([';', '\t', '\n'], ",").trim().to_string()
}

fn extract_low(text: &str, modality: &str) -> String {
    let mut lines = Vec::new();
    if modality == "table" {
        if let Ok(t) = parse_table(text) {
            for row in &t.rows {
                if row.len() < 2 || row[0].is_empty() || row[1].is_empty() {
                    continue;
                }
                let mut attrs = vec![format!("value={}", attr_value(&row[1]))];
                for (h, cell) in t.header.iter().zip(row).skip(2) {
                    let key = snake_case(h);
                    if !key.is_empty() && !cell.is_empty() {
                        attrs.push(format!("{key}={}", attr_value(cell)));
                    }
                }
                lines.push(format!("ENTITY\tparametric\t{}\t{}", row[0], attrs.join(";")));
            }
        }
        return lines.join("\n");
    }
    let mut seen = BTreeSet::new();
    for c in param_re().captures_iter(text) {
        let name = c[1].trim_end_matches('.');
        let value = c[2].trim_end_matches(['.', ')']);
        if !value.is_empty() && seen.insert(("p", name.to_string())) {
            lines.push(format!("ENTITY\tparametric\t{name}\tvalue={}", attr_value(value)));
        }
    }
    for w in text.split_whitespace() {
        let tok = w.trim_matches(|c: char| !(c.is_alphanumeric() || c == '-' || c == '_'));
        if tok.len() >= 4
            && tok.chars().any(|c| c.is_ascii_digit())
            && ident_re().is_match(tok)
            && seen.insert(("i", tok.to_string()))
        {
            lines.push(format!("ENTITY\tidentificational\t{tok}\tkind=code"));
        }
    }
    for s in split_sentences(text) {
        if let Some(c) = step_re().captures(&s) {
            let name: Vec<&str> = c[2].trim_end_matches(['.', '!']).split_whitespace().take(6).collect();
            let name = name.join(" ").trim_end_matches([',', ';', ':']).to_string();
            if !name.is_empty() && seen.insert(("s", name.clone())) {
                lines.push(format!("ENTITY\tprocedural\t{name}\tstep={}", &c[1]));
            }
        }
    }
    lines.join("\n")
}

/// Adds a `unit` to parametric entities from the first neighborhood chunk
/// containing an `in <unit>` phrase.
fn complete_attributes(entity: &str, chunks: &str) -> String {
    let mut fields: HashMap<&str, &str> = HashMap::new();
    for line in entity.lines() {
        if let Some((k, v)) = line.split_once(':') {
            fields.insert(k.trim(), v.trim());
        }
    }
    let class = fields.get("class").copied().unwrap_or("");
    let has_unit = fields
        .get("attributes")
        .is_some_and(|a| a.split(';').any(|kv| kv.trim().starts_with("unit=")));
    if class != "parametric" || has_unit {
        return String::new();
    }
    for line in chunks.lines() {
        let Some((id, text)) = line.split_once('\t') else { continue };
        if let Some(c) = unit_re().captures(text) {
            return format!("ATTR\tunit\t{}\t{}", c[1].to_lowercase(), id.trim());
        }
    }
    String::new()
}

const SUBJECT_MARKERS: &[&str] = &["i", "we", "you", "to"];

/// Split a multi-intent question on `and` / `;` when every part has at
/// least two words; later parts inherit the first part's interrogative
/// prefix (`How do I ...`).
pub fn decompose(query: &str) -> Vec<String> {
    let q = query.trim();
    let question = q.ends_with('?');
    let body = q.trim_end_matches('?').trim();
    let lowered = body.to_lowercase();
    let mut parts: Vec<String> = Vec::new();
    let mut last = 0;
    let mut idx = 0;
    while idx < lowered.len() {
        let rest = &lowered[idx..];
        let sep = if rest.starts_with(" and ") {
            Some(5)
        } else if rest.starts_with(';') {
            Some(1)
        } else {
            None
        };
        match sep {
            Some(n) => {
                parts.push(body[last..idx].trim().to_string());
                idx += n;
                last = idx;
            }
            None => idx += rest.chars().next().map_or(1, char::len_utf8),
        }
    }
    parts.push(body[last..].trim().to_string());
    if parts.len() < 2 || parts.iter().any(|p| p.split_whitespace().count() < 2) {
        return vec![q.to_string()];
    }
    let first_words: Vec<&str> = parts[0].split_whitespace().collect();
    let prefix_len = first_words
        .iter()
        .position(|w| SUBJECT_MARKERS.contains(&w.to_lowercase().as_str()))
        .map(|p| p + 1)
        .unwrap_or(0);
    let prefix = first_words[..prefix_len].join(" ");
    let first_word = first_words[0].to_lowercase();
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let starts_same = p.split_whitespace().next().is_some_and(|w| w.to_lowercase() == first_word);
            let mut s = if i == 0 || prefix.is_empty() || starts_same {
                p.clone()
            } else {
                format!("{prefix} {p}")
            };
            if question {
                s.push('?');
            }
            s
        })
        .collect()
}

fn refine(query: &str, context_lines: &str) -> String {
    let extra: Vec<&str> = context_lines.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if extra.is_empty() {
        query.trim().to_string()
    } else {
        format!("{} {}", query.trim(), extra.join(" "))
    }
}

fn answer(prompt: &str) -> String {
    let question = qa_prompt::section_body(prompt, qa_prompt::QUESTION).unwrap_or("");
    let q_tokens: BTreeSet<String> = content_tokens(question).into_iter().collect();
    let mut sentences: Vec<String> = Vec::new();

    if let Some(graph) = qa_prompt::section_body(prompt, qa_prompt::GRAPH_CONTEXT) {
        for line in graph.lines() {
            let Some(fact) = line.trim().strip_prefix("- ") else { continue };
            let Some((name, _)) = fact.split_once(" (parametric)") else { continue };
            let name_tokens: BTreeSet<String> = tokenize(name).into_iter().collect();
            if name_tokens.iter().any(|t| q_tokens.contains(t)) && sentences.len() < 2 {
                sentences.push(format!("{}.", fact.trim_end_matches('.')));
            }
        }
    }

    if let Some(passages) = qa_prompt::section_body(prompt, qa_prompt::PASSAGES) {
        for (id, text) in qa_prompt::parse_passages(passages).into_iter().take(2) {
            let first_line = text.lines().next().unwrap_or("");
            if let Some(first) = split_sentences(first_line).into_iter().next() {
                sentences.push(format!("{first} [chunk:{id}]"));
            }
        }
    }

    if sentences.is_empty() {
        "No relevant knowledge was found in the knowledge base for this question.".into()
    } else {
        sentences.join(" ")
    }
}

fn judge(prompt: &str) -> String {
    match extract_tag(prompt, "task").map(str::trim) {
        Some("decompose") => claims_of(extract_tag(prompt, "answer").unwrap_or("")).join("\n"),
        Some("verdict") => {
            let context = extract_tag(prompt, "context").unwrap_or("").to_lowercase();
            extract_tag(prompt, "claims")
                .unwrap_or("")
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .enumerate()
                .map(|(i, claim)| {
                    let ok = context.contains(&claim.to_lowercase());
                    format!("{}: {}", i + 1, if ok { "yes" } else { "no" })
                })
                .collect::<Vec<_>>()
                .join("\n")
        }
        Some("relevance") => {
            let reference: BTreeSet<String> =
                content_tokens(extract_tag(prompt, "reference").unwrap_or("")).into_iter().collect();
            let ctx: BTreeSet<String> =
                content_tokens(extract_tag(prompt, "context").unwrap_or("")).into_iter().collect();
            let shared = reference.intersection(&ctx).count();
            if !reference.is_empty() && shared * 2 >= reference.len() {
                "yes".into()
            } else {
                "no".into()
            }
        }
        _ => String::new(),
    }
}

fn citation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[chunk:[^\]\s]+\]").unwrap())
}

/// Sentences of `answer` with citation markers and trailing terminators
/// removed.
pub fn claims_of(answer: &str) -> Vec<String> {
    let stripped = citation_re().replace_all(answer, " ");
    split_sentences(&stripped)
        .into_iter()
        .map(|s| s.trim_end_matches(['.', '!', '?']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}
