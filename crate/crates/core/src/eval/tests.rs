use proptest::prelude::*;

use super::*;
use crate::gateway::{FaultPoint, Gateway, GenerationRole, ProviderConfig};
use crate::qa::{PromptTemplate, QaConfig};
use crate::retriever::RetrievalConfig;
use crate::testkit;

fn ctx(s: &[&str]) -> Vec<String> {
    s.iter().map(|x| x.to_string()).collect()
}

#[test]
fn faithfulness_hand_counts() {
    let gw = Gateway::mock();
    let both = faithfulness(
        "The pool holds pages. The log records changes.",
        &ctx(&["The pool holds pages in memory.", "Every day the log records changes."]),
        &gw,
    )
    .unwrap();
    assert_eq!(both.score, 1.0);
    assert_eq!(both.claims.len(), 2);

    let half = faithfulness("The pool holds pages. The moon is cheese.", &ctx(&["The pool holds pages."]), &gw).unwrap();
    assert_eq!(half.score, 0.5);
    assert_eq!(
        half.claims,
        [
            ClaimVerdict {
                claim: "The pool holds pages".into(),
                supported: true
            },
            ClaimVerdict {
                claim: "The moon is cheese".into(),
                supported: false
            }
        ]
    );

    // hand-labelled: claims 1, 2 and 4 appear in the context, 3 does not
    let answer = "Replicas stream the log [chunk:a]. Lag is reported in seconds. Backups are encrypted. E1205 means a lost connection.";
    let context = ctx(&["Replicas stream the log from the primary.", "Lag is reported in seconds; E1205 means a lost connection."]);
    let three = faithfulness(answer, &context, &gw).unwrap();
    let pattern: Vec<bool> = three.claims.iter().map(|c| c.supported).collect();
    assert_eq!(pattern, [true, true, false, true]);
    assert_eq!(three.score, 0.75);
}

#[test]
fn faithfulness_without_claims_scores_zero() {
    let f = score_claims(vec![]);
    assert_eq!(f.score, 0.0);
    assert!(f.diagnostic.is_some());
    let gw = Gateway::mock();
    let r = faithfulness("[chunk:x]", &ctx(&["anything"]), &gw).unwrap();
    assert_eq!(r.score, 0.0);
    assert!(r.diagnostic.is_some());
}

#[test]
fn faithfulness_judge_failure_is_an_error() {
    let gw = Gateway::from_config(&ProviderConfig {
        fault_points: vec![FaultPoint::Role(GenerationRole::JudgeClaims)],
        ..Default::default()
    })
    .unwrap();
    assert!(faithfulness("a claim.", &ctx(&["a claim"]), &gw).is_err());
}

#[test]
fn precision_patterns() {
    assert_eq!(context_precision_from_relevance(&[true, true, false]), 1.0);
    assert_eq!(context_precision_from_relevance(&[false, false, false]), 0.0);
    assert!((context_precision_from_relevance(&[true, false, true]) - 0.8333).abs() < 1e-4);
    assert_eq!(context_precision_from_relevance(&[]), 0.0);
}

/// The formula evaluated literally: precision@k recomputed from scratch.
fn precision_brute(rel: &[bool]) -> f64 {
    let total = rel.iter().filter(|&&r| r).count();
    if total == 0 {
        return 0.0;
    }
    (1..=rel.len())
        .filter(|&k| rel[k - 1])
        .map(|k| rel[..k].iter().filter(|&&r| r).count() as f64 / k as f64)
        .sum::<f64>()
        / total as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn precision_rewards_earlier_relevance(rel in proptest::collection::vec(any::<bool>(), 1..20), pick in any::<proptest::sample::Index>()) {
        let base = context_precision_from_relevance(&rel);
        prop_assert!((base - precision_brute(&rel)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base));
        // move one relevant entry to an earlier slot
        let relevant: Vec<usize> = (0..rel.len()).filter(|&i| rel[i]).collect();
        if !relevant.is_empty() {
            let from = relevant[pick.index(relevant.len())];
            for to in 0..from {
                let mut moved = rel.clone();
                let v = moved.remove(from);
                moved.insert(to, v);
                prop_assert!(context_precision_from_relevance(&moved) + 1e-12 >= base);
            }
        }
    }
}

#[test]
fn relevancy_examples() {
    let gw = Gateway::mock();
    let q = "How large is the buffer pool?";
    assert!((answer_relevancy(q, q, &gw).unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(answer_relevancy("buffer pool size", "replica lag seconds", &gw).unwrap(), 0.0);
    let a = "The buffer pool size is 4096 megabytes";
    let va = gw.embed_one(q).unwrap();
    let vb = gw.embed_one(a).unwrap();
    let dot: f64 = va.values().iter().zip(vb.values()).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = va.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = vb.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    assert!((answer_relevancy(q, a, &gw).unwrap() - dot / (na * nb)).abs() < 1e-9);
}

#[test]
fn precision_uses_reference_sections_then_judge() {
    let gw = Gateway::mock();
    let sample = EvalSample {
        id: "s".into(),
        question: "q".into(),
        ground_truth: "replica lag seconds".into(),
        reference_section_ids: Some(vec!["d/2.1".into()]),
    };
    let ranked = vec![
        RankedContext {
            text: "x".into(),
            section_id: Some("d/2.1.1".into()),
        },
        RankedContext {
            text: "y".into(),
            section_id: Some("d/1".into()),
        },
    ];
    assert_eq!(context_precision(&ranked, &sample, &gw).unwrap().relevance, [true, false]);
    let judged = EvalSample {
        reference_section_ids: None,
        ..sample
    };
    let ranked = vec![
        RankedContext {
            text: "unrelated words".into(),
            section_id: None,
        },
        RankedContext {
            text: "the replica reports lag in seconds".into(),
            section_id: None,
        },
    ];
    let p = context_precision(&ranked, &judged, &gw).unwrap();
    assert_eq!(p.relevance, [false, true]);
    assert_eq!(p.score, 0.5);
}

#[test]
fn faithfulness_monotone_in_support() {
    let gw = Gateway::mock();
    let answer = "Pages live in the pool. The log is flushed. Replicas lag.";
    let pool = ["Pages live in the pool", "The log is flushed often", "Replicas lag behind", "noise"];
    let mut contexts = Vec::new();
    let mut last = faithfulness(answer, &contexts, &gw).unwrap().score;
    for c in pool {
        contexts.push(c.to_string());
        let s = faithfulness(answer, &contexts, &gw).unwrap().score;
        assert!(s >= last);
        last = s;
    }
    assert_eq!(last, 1.0);
}

#[test]
fn dataset_parsing() {
    let ok = "{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":\"g\"}\n\n{\"id\":\"b\",\"question\":\"q\",\"ground_truth\":\"g\",\"reference_section_ids\":[\"d/1\"]}\n";
    assert_eq!(parse_dataset(ok).unwrap().len(), 2);
    let dup = "{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":\"g\"}\n{\"id\":\"a\",\"question\":\"q\",\"ground_truth\":\"g\"}";
    assert!(matches!(parse_dataset(dup), Err(EvalError::Invalid { line: 2, .. })));
    assert!(parse_dataset("{\"id\":\"a\",\"question\":\" \",\"ground_truth\":\"g\"}").is_err());
    assert!(parse_dataset("not json").is_err());
}

fn samples() -> Vec<EvalSample> {
    let s = |id: &str, q: &str, g: &str, r: &str| EvalSample {
        id: id.into(),
        question: q.into(),
        ground_truth: g.into(),
        reference_section_ids: Some(vec![r.into()]),
    };
    vec![
        s("s3", "What does error E1205 mean?", "The replica lost its connection.", "manual/2.1.2"),
        s("s1", "What is the buffer_pool_size value?", "4096 megabytes.", "manual/1.1.1"),
        s("s2", "How often does a checkpoint run?", "Every 300 seconds.", "manual/1.2.1"),
    ]
}

#[test]
fn runner_means_and_determinism() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let (r, q, t) = (RetrievalConfig::default(), QaConfig::default(), PromptTemplate::default());
    let req = QaRequest {
        kb: &kb,
        retrieval: &r,
        qa: &q,
        template: &t,
        mode: RetrievalMode::Full,
        gateway: &gw,
    };
    let report = run_eval(&samples(), &req, &RetrievalMode::ALL);
    assert_eq!(report.methods.len(), 3);
    for m in &report.methods {
        let ids: Vec<&str> = m.rows.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["s1", "s2", "s3"]);
        let hand = (m.rows[0].faithfulness.unwrap() + m.rows[1].faithfulness.unwrap() + m.rows[2].faithfulness.unwrap()) / 3.0;
        assert!((m.means.faithfulness.unwrap() - hand).abs() < 1e-12);
        let hand = m.rows.iter().map(|r| r.context_precision.unwrap()).sum::<f64>() / 3.0;
        assert!((m.means.context_precision.unwrap() - hand).abs() < 1e-12);
        for r in &m.rows {
            for v in [r.faithfulness, r.answer_relevancy, r.context_precision] {
                assert!((0.0..=1.0).contains(&v.unwrap()));
            }
        }
    }
    let again = run_eval(&samples(), &req, &RetrievalMode::ALL);
    assert_eq!(report.to_json(), again.to_json());
    let md = report.to_markdown();
    assert!(md.starts_with("| Method | Faithfulness | Answer Relevancy | Context Precision |"));
    assert_eq!(md.lines().count(), 5);
}

#[test]
fn empty_dataset_marks_means_undefined() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let (r, q, t) = (RetrievalConfig::default(), QaConfig::default(), PromptTemplate::default());
    let req = QaRequest {
        kb: &kb,
        retrieval: &r,
        qa: &q,
        template: &t,
        mode: RetrievalMode::Full,
        gateway: &gw,
    };
    let report = run_eval(&[], &req, &[RetrievalMode::Full]);
    assert_eq!(report.methods[0].samples, 0);
    assert_eq!(report.methods[0].means.faithfulness, None);
    assert!(report.to_markdown().contains("| full | n/a | n/a | n/a |"));
}

#[test]
fn failed_answers_are_unscored() {
    let kb = testkit::manual();
    let gw = Gateway::from_config(&ProviderConfig {
        fault_points: vec![FaultPoint::Role(GenerationRole::Answer)],
        ..Default::default()
    })
    .unwrap();
    let (r, q, t) = (RetrievalConfig::default(), QaConfig::default(), PromptTemplate::default());
    let req = QaRequest {
        kb: &kb,
        retrieval: &r,
        qa: &q,
        template: &t,
        mode: RetrievalMode::Full,
        gateway: &gw,
    };
    let m = run_method(&samples(), &req);
    assert_eq!(m.unscored.faithfulness, 3);
    assert_eq!(m.means.faithfulness, None);
}
