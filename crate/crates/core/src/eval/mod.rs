//! Faithfulness, answer relevancy and context precision, and a batch
//! runner over a question set.

mod metrics;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use metrics::{
    answer_relevancy, context_precision, context_precision_from_relevance, faithfulness, score_claims, ClaimVerdict,
    ContextPrecision, Faithfulness, RankedContext,
};

use crate::qa::{answer, QaRequest, Session};
use crate::retriever::{DegradationFlag, RetrievalMode};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("dataset line {line}: {message}")]
    Invalid { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSample {
    pub id: String,
    pub question: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_section_ids: Option<Vec<String>>,
}

/// One sample per non-blank line. Ids must be unique and question and
/// ground truth non-empty.
pub fn parse_dataset(text: &str) -> Result<Vec<EvalSample>, EvalError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |message: String| EvalError::Invalid { line: line_no, message };
        let s: EvalSample = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        if s.question.trim().is_empty() || s.ground_truth.trim().is_empty() {
            return Err(invalid("question and ground_truth must be non-empty".into()));
        }
        if !ids.insert(s.id.clone()) {
            return Err(invalid(format!("duplicate sample id {:?}", s.id)));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalSample>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub citations: Vec<String>,
    pub retrieved: Vec<String>,
    pub faithfulness: Option<f64>,
    pub answer_relevancy: Option<f64>,
    pub context_precision: Option<f64>,
    pub claims: Vec<ClaimVerdict>,
    pub relevance: Vec<bool>,
    pub diagnostics: Vec<String>,
    pub degradation_flags: Vec<DegradationFlag>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple<T> {
    pub faithfulness: T,
    pub answer_relevancy: T,
    pub context_precision: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: RetrievalMode,
    pub samples: usize,
    /// Arithmetic means over scored samples; `None` when none were scored.
    pub means: MetricTriple<Option<f64>>,
    pub unscored: MetricTriple<usize>,
    pub rows: Vec<SampleRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub methods: Vec<MethodReport>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let (mut sum, mut n, mut missing) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                n += 1;
            }
            None => missing += 1,
        }
    }
    ((n > 0).then(|| sum / n as f64), missing)
}

fn evaluate_sample(sample: &EvalSample, req: &QaRequest<'_>) -> SampleRow {
    let mut session = Session::new(format!("eval-{}", sample.id), req.qa.max_history_turns);
    let mut row = SampleRow {
        id: sample.id.clone(),
        question: sample.question.clone(),
        answer: String::new(),
        citations: Vec::new(),
        retrieved: Vec::new(),
        faithfulness: None,
        answer_relevancy: None,
        context_precision: None,
        claims: Vec::new(),
        relevance: Vec::new(),
        diagnostics: Vec::new(),
        degradation_flags: Vec::new(),
    };
    let (ans, usc) = match answer(&sample.question, &mut session, req) {
        Ok(x) => x,
        Err(e) => {
            row.diagnostics.push(format!("answer failed: {e}"));
            return row;
        }
    };
    row.answer = ans.text.clone();
    row.citations = ans.citations.clone();
    row.retrieved = usc.vector_hits.iter().map(|h| h.chunk_id.clone()).collect();
    row.degradation_flags = ans.degradation_flags.clone();
    if ans.failed {
        row.diagnostics.push("answer generation failed".into());
        return row;
    }

    let mut contexts: Vec<String> = usc.vector_hits.iter().map(|h| h.excerpt.clone()).collect();
    if !usc.graph_context.rendered.is_empty() {
        contexts.push(usc.graph_context.rendered.clone());
    }
    match faithfulness(&ans.text, &contexts, req.gateway) {
        Ok(f) => {
            row.faithfulness = Some(f.score);
            row.claims = f.claims;
            row.diagnostics.extend(f.diagnostic.map(|d| format!("faithfulness: {d}")));
        }
        Err(e) => row.diagnostics.push(format!("faithfulness unscored: {e}")),
    }
    match answer_relevancy(&sample.question, &ans.text, req.gateway) {
        Ok(s) => row.answer_relevancy = Some(s),
        Err(e) => row.diagnostics.push(format!("answer_relevancy unscored: {e}")),
    }
    let ranked: Vec<RankedContext> = usc
        .vector_hits
        .iter()
        .map(|h| RankedContext {
            text: h.excerpt.clone(),
            section_id: Some(h.section_id.clone()),
        })
        .collect();
    match context_precision(&ranked, sample, req.gateway) {
        Ok(p) => {
            row.context_precision = Some(p.score);
            row.relevance = p.relevance;
            row.diagnostics.extend(p.diagnostic.map(|d| format!("context_precision: {d}")));
        }
        Err(e) => row.diagnostics.push(format!("context_precision unscored: {e}")),
    }
    row
}

/// Answers every sample in a fresh session and scores it. Samples run in
/// parallel; rows are sorted by id. Failures stay with their sample.
pub fn run_method(dataset: &[EvalSample], req: &QaRequest<'_>) -> MethodReport {
    let mut rows: Vec<SampleRow> = dataset.par_iter().map(|s| evaluate_sample(s, req)).collect();
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    let (f, fu) = mean(rows.iter().map(|r| r.faithfulness));
    let (a, au) = mean(rows.iter().map(|r| r.answer_relevancy));
    let (c, cu) = mean(rows.iter().map(|r| r.context_precision));
    MethodReport {
        method: req.mode,
        samples: rows.len(),
        means: MetricTriple {
            faithfulness: f,
            answer_relevancy: a,
            context_precision: c,
        },
        unscored: MetricTriple {
            faithfulness: fu,
            answer_relevancy: au,
            context_precision: cu,
        },
        rows,
    }
}

pub fn run_eval(dataset: &[EvalSample], req: &QaRequest<'_>, modes: &[RetrievalMode]) -> EvalReport {
    let methods = modes
        .iter()
        .map(|&mode| {
            let r = QaRequest { mode, ..*req };
            run_method(dataset, &r)
        })
        .collect();
    EvalReport {
        format: "dsrag-eval-report".into(),
        version: 1,
        methods,
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn method(&self, mode: RetrievalMode) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == mode)
    }

    /// One row per method, scores to two decimals.
    pub fn to_markdown(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.2}"));
        let mut out = String::from("| Method | Faithfulness | Answer Relevancy | Context Precision |\n|---|---|---|---|\n");
        for m in &self.methods {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                m.method,
                cell(m.means.faithfulness),
                cell(m.means.answer_relevancy),
                cell(m.means.context_precision)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests;
