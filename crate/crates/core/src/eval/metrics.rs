use serde::{Deserialize, Serialize};

use super::EvalSample;
use crate::gateway::{cosine, tagged, Gateway, GatewayError, GenerationRequest, GenerationRole};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim: String,
    pub supported: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub score: f64,
    pub claims: Vec<ClaimVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn judge(task: &str, body: String, gateway: &Gateway) -> Result<String, GatewayError> {
    let prompt = format!("{}\n{body}", tagged("task", task));
    gateway.generate(&GenerationRequest::new(GenerationRole::JudgeClaims, prompt))
}

/// Parses `i: yes|no` verdict lines into one flag per claim.
fn parse_verdicts(out: &str, n: usize) -> Result<Vec<bool>, GatewayError> {
    let mut verdicts = vec![None; n];
    for line in out.lines() {
        let Some((i, v)) = line.split_once(':') else { continue };
        let Ok(i) = i.trim().parse::<usize>() else { continue };
        if (1..=n).contains(&i) {
            verdicts[i - 1] = match v.trim().to_lowercase().as_str() {
                "yes" => Some(true),
                "no" => Some(false),
                _ => None,
            };
        }
    }
    verdicts
        .into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or_else(|| GatewayError::Protocol(format!("judge gave no verdict for claim {}", i + 1))))
        .collect()
}

/// Share of the answer's claims that the judge finds supported by the
/// contexts. No claims scores 0 with a diagnostic.
pub fn faithfulness(answer: &str, contexts: &[String], gateway: &Gateway) -> Result<Faithfulness, GatewayError> {
    let out = judge(
        "decompose",
        format!(
            "Split the answer into short self-contained factual claims, one per line.\n{}",
            tagged("answer", answer.trim())
        ),
        gateway,
    )?;
    let claims: Vec<String> = out.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
    if claims.is_empty() {
        return Ok(Faithfulness {
            score: 0.0,
            claims: Vec::new(),
            diagnostic: Some("no claims extracted from the answer".into()),
        });
    }
    let out = judge(
        "verdict",
        format!(
            "For each numbered claim answer `<n>: yes` if the context supports it, otherwise `<n>: no`.\n{}\n{}",
            tagged("claims", &claims.join("\n")),
            tagged("context", &contexts.join("\n\n"))
        ),
        gateway,
    )?;
    let verdicts = parse_verdicts(&out, claims.len())?;
    Ok(score_claims(claims.into_iter().zip(verdicts).map(|(claim, supported)| ClaimVerdict { claim, supported }).collect()))
}

pub fn score_claims(claims: Vec<ClaimVerdict>) -> Faithfulness {
    if claims.is_empty() {
        return Faithfulness {
            score: 0.0,
            claims,
            diagnostic: Some("no claims extracted from the answer".into()),
        };
    }
    let supported = claims.iter().filter(|c| c.supported).count();
    Faithfulness {
        score: supported as f64 / claims.len() as f64,
        claims,
        diagnostic: None,
    }
}

/// Cosine of question and answer embeddings, clamped to `[0, 1]`.
pub fn answer_relevancy(question: &str, answer: &str, gateway: &Gateway) -> Result<f64, GatewayError> {
    let v = gateway.embed(&[question.to_string(), answer.to_string()])?;
    Ok(cosine(v[0].values(), v[1].values()).clamp(0.0, 1.0))
}

/// `Σ_k precision@k · v_k / #relevant`; 0 when nothing is relevant.
pub fn context_precision_from_relevance(relevance: &[bool]) -> f64 {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    sum / total as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedContext {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPrecision {
    pub score: f64,
    pub relevance: Vec<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

fn within(section_id: &str, reference: &str) -> bool {
    section_id == reference
        || section_id
            .strip_prefix(reference)
            .is_some_and(|rest| rest.starts_with('.'))
}

/// Labels each ranked context relevant or not and scores the ranking.
/// With reference sections a context is relevant when its section is one
/// of them or below one; otherwise the judge compares it with the ground
/// truth.
pub fn context_precision(ranked: &[RankedContext], sample: &EvalSample, gateway: &Gateway) -> Result<ContextPrecision, GatewayError> {
    let mut relevance = Vec::with_capacity(ranked.len());
    for ctx in ranked {
        let rel = match (&sample.reference_section_ids, &ctx.section_id) {
            (Some(refs), Some(sid)) if !refs.is_empty() => refs.iter().any(|r| within(sid, r)),
            _ => {
                let out = judge(
                    "relevance",
                    format!(
                        "Answer yes if the context is useful for reaching the reference answer, otherwise no.\n{}\n{}",
                        tagged("reference", &sample.ground_truth),
                        tagged("context", &ctx.text)
                    ),
                    gateway,
                )?;
                match out.trim().to_lowercase().as_str() {
                    "yes" => true,
                    "no" => false,
                    other => return Err(GatewayError::Protocol(format!("judge relevance verdict {other:?}"))),
                }
            }
        };
        relevance.push(rel);
    }
    let score = context_precision_from_relevance(&relevance);
    let diagnostic = if ranked.is_empty() {
        Some("no contexts retrieved".to_string())
    } else if !relevance.contains(&true) {
        Some("no relevant contexts".to_string())
    } else {
        None
    };
    Ok(ContextPrecision {
        score,
        relevance,
        diagnostic,
    })
}
