use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gateway::{FaultPoint, GenerationRole, ProviderConfig};
use crate::instance::{EntityClass, EntityNode, RelationEdge, Tier};
use crate::testkit;

fn faulty(points: &[FaultPoint]) -> Gateway {
    Gateway::from_config(&ProviderConfig {
        fault_points: points.to_vec(),
        ..Default::default()
    })
    .unwrap()
}

fn all_sections(cg: &ConceptGraph) -> BTreeSet<String> {
    cg.nodes().iter().map(|n| n.section_id.clone()).collect()
}

#[test]
fn decompose_examples() {
    let cfg = RetrievalConfig::default();
    let gw = Gateway::mock();
    let (one, flag) = decompose_query("What is a B-tree?", &cfg, &gw);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].text, "What is a B-tree?");
    assert!(flag.is_none());

    let (two, _) = decompose_query("How do I configure replication and monitor lag?", &cfg, &gw);
    let texts: Vec<&str> = two.iter().map(|s| s.text.as_str()).collect();
    assert_eq!(texts, ["How do I configure replication?", "How do I monitor lag?"]);
    assert!(two.iter().all(|s| s.parent_query == "How do I configure replication and monitor lag?"));

    let (fallback, flag) = decompose_query("a and b c and d e", &cfg, &faulty(&[FaultPoint::Role(GenerationRole::Decompose)]));
    assert_eq!(fallback.len(), 1);
    assert_eq!(flag.unwrap().point, "decompose");
}

#[test]
fn decompose_caps_subqueries() {
    let cfg = RetrievalConfig {
        max_subqueries: 2,
        ..Default::default()
    };
    let (subs, _) = decompose_query("how do I size pools; tune eviction; read logs; add replicas", &cfg, &Gateway::mock());
    assert_eq!(subs.len(), 2);
}

#[test]
fn focus_prefers_lexically_matching_chapter() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let cg = &kb.concepts;
    let q = "eviction thread clock sweep";
    let emb = gw.embed_one(q).unwrap();
    let cfg = RetrievalConfig {
        concept_top_m: 1,
        concept_sim_threshold: 0.0,
        ..Default::default()
    };
    let f = focus_concepts(q, Some(&emb), cg, &cfg);
    assert!(!f.low_confidence);
    let ids: Vec<&str> = f.matched.iter().map(|m| m.concept_id.as_str()).collect();
    assert_eq!(ids, ["c:manual/1.1.2"]);
    assert_eq!(f.surviving_sections, BTreeSet::from(["manual/1.1.2".to_string()]));
}

#[test]
fn unsatisfiable_threshold_falls_back_to_roots() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let q = "zzz unrelated words";
    let emb = gw.embed_one(q).unwrap();
    let cfg = RetrievalConfig {
        concept_sim_threshold: 1.0 + 1e-9,
        ..Default::default()
    };
    // validate() rejects it, focus_concepts itself still has to cope
    assert!(cfg.validate().is_err());
    let f = focus_concepts(q, Some(&emb), &kb.concepts, &cfg);
    assert!(f.low_confidence);
    let roots: BTreeSet<&str> = kb.concepts.roots().iter().map(String::as_str).collect();
    let matched: BTreeSet<&str> = f.matched.iter().map(|m| m.concept_id.as_str()).collect();
    assert_eq!(matched, roots);
    assert_eq!(f.surviving_sections, all_sections(&kb.concepts));
}

#[test]
fn focus_contracts_hold_for_many_queries() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let cg = &kb.concepts;
    let every = all_sections(cg);
    let queries = [
        "buffer pool size",
        "what does error E1205 mean",
        "checkpoint interval",
        "replica setup port",
        "how is lag monitored",
        "nothing relevant here",
    ];
    for q in queries {
        for m in 1..=3 {
            let cfg = RetrievalConfig {
                concept_top_m: m,
                ..Default::default()
            };
            let f = focus_concepts(q, Some(&gw.embed_one(q).unwrap()), cg, &cfg);
            assert!(f.surviving_sections.is_subset(&every));
            let union: BTreeSet<String> =
                f.matched.iter().flat_map(|c| cg.subtree_sections(&c.concept_id).unwrap()).collect();
            assert_eq!(f.surviving_sections, union);
            // monotone narrowing
            for pair in f.layers.windows(2) {
                let allowed: HashSet<&str> = pair[0]
                    .kept
                    .iter()
                    .flat_map(|k| cg.children(k).iter().map(String::as_str))
                    .collect();
                assert!(pair[1].candidates.iter().all(|c| allowed.contains(c.concept_id.as_str())));
            }
            let roots: HashSet<&str> = cg.roots().iter().map(String::as_str).collect();
            assert!(f.layers[0].candidates.iter().all(|c| roots.contains(c.concept_id.as_str())));
        }
    }
}

#[test]
fn keyword_match_forces_node() {
    let kb = testkit::manual();
    let cg = &kb.concepts;
    let node = cg.node("c:manual/2").unwrap();
    let kw = node.keywords[0].clone();
    // no embedding: only keyword matches survive
    let cfg = RetrievalConfig::default();
    let f = focus_concepts(&format!("tell me about {kw}"), None, cg, &cfg);
    assert!(f.layers[0].kept.contains(&"c:manual/2".to_string()));
    assert!(f.layers[0].candidates.iter().any(|c| c.by_keyword));
}

#[test]
fn empty_graph_focus() {
    let cg = ConceptGraph::from_parts(vec![], vec![], vec![], vec![]).unwrap();
    let f = focus_concepts("anything", None, &cg, &RetrievalConfig::default());
    assert!(f.matched.is_empty() && f.surviving_sections.is_empty() && f.low_confidence);
}

/// 20 entities spread over the manual's concepts with random relations.
fn synthetic_instances(kb: &KnowledgeBase, seed: u64) -> InstanceGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts: Vec<String> = kb.concepts.nodes().iter().map(|n| n.id.clone()).collect();
    let words = ["pool", "page", "log", "replica", "port", "lag", "sweep", "disk"];
    let entities: Vec<EntityNode> = (0..20)
        .map(|i| {
            let c = &concepts[rng.gen_range(0..concepts.len())];
            let name = format!("{} item{i}", words[rng.gen_range(0..words.len())]);
            EntityNode::new(&name, EntityClass::Component, c, "manual/1#0")
        })
        .collect();
    let mut relations = Vec::new();
    for _ in 0..30 {
        let a = rng.gen_range(0..20);
        let b = rng.gen_range(0..20);
        if a != b {
            relations.push(RelationEdge::new(&entities[a].id, "uses", &entities[b].id, Tier::Mid, "manual/1#0", 1.0));
        }
    }
    InstanceGraph::new(entities, crate::instance::dedup_relations(relations)).unwrap()
}

/// Shortest undirected distance by repeated relaxation inside the boundary.
fn bfs_oracle(ig: &InstanceGraph, boundary: &BTreeSet<String>, seeds: &BTreeSet<String>, hops: usize) -> BTreeSet<String> {
    let inside: Vec<&EntityNode> = ig.entities().iter().filter(|e| boundary.contains(&e.concept_node_id)).collect();
    let mut dist: std::collections::HashMap<&str, usize> = seeds.iter().map(|s| (s.as_str(), 0)).collect();
    for _ in 0..inside.len() {
        for r in ig.relations() {
            let ok = |id: &str| inside.iter().any(|e| e.id == id);
            if !ok(&r.src) || !ok(&r.dst) {
                continue;
            }
            for (a, b) in [(&r.src, &r.dst), (&r.dst, &r.src)] {
                if let Some(&d) = dist.get(a.as_str()) {
                    let e = dist.entry(b.as_str()).or_insert(usize::MAX);
                    *e = (*e).min(d + 1);
                }
            }
        }
    }
    dist.into_iter().filter(|(_, d)| *d <= hops).map(|(id, _)| id.to_string()).collect()
}

#[test]
fn instance_focus_matches_bfs_oracle() {
    let kb = testkit::manual();
    let cg = &kb.concepts;
    for seed in 0..10 {
        let ig = synthetic_instances(&kb, seed);
        for q in ["pool", "replica lag", "disk sweep"] {
            for root in cg.roots() {
                let matched = vec![ConceptMatch {
                    concept_id: root.clone(),
                    score: 1.0,
                    by_keyword: false,
                }];
                let boundary = concept_boundary(&matched, cg);
                for hops in 0..=3 {
                    let sub = focus_instances(&matched, cg, &ig, q, hops);
                    if hops == 0 {
                        assert_eq!(sub.entity_ids, sub.seed_ids);
                    }
                    assert_eq!(sub.entity_ids, bfs_oracle(&ig, &boundary, &sub.seed_ids, hops), "seed {seed} q {q} hops {hops}");
                    for id in &sub.entity_ids {
                        assert!(boundary.contains(&ig.entity(id).unwrap().concept_node_id));
                    }
                    let expected_rel: BTreeSet<String> = ig
                        .relations()
                        .iter()
                        .filter(|r| sub.entity_ids.contains(&r.src) && sub.entity_ids.contains(&r.dst))
                        .map(|r| r.id.clone())
                        .collect();
                    assert_eq!(sub.relation_ids, expected_rel);
                }
            }
        }
    }
}

#[test]
fn instance_focus_without_concepts_is_empty() {
    let kb = testkit::manual();
    let sub = focus_instances(&[], &kb.concepts, &kb.instances, "buffer pool", 2);
    assert!(sub.entity_ids.is_empty() && sub.relation_ids.is_empty());
}

fn focus_for(kb: &KnowledgeBase, q: &str) -> FocusResult {
    let gw = Gateway::mock();
    let cfg = RetrievalConfig::default();
    let cf = focus_concepts(q, Some(&gw.embed_one(q).unwrap()), &kb.concepts, &cfg);
    FocusResult {
        sub_query: SubQuery {
            text: q.into(),
            index: 0,
            parent_query: q.into(),
        },
        instance_subgraph: focus_instances(&cf.matched, &kb.concepts, &kb.instances, q, 1),
        matched_concepts: cf.matched,
        surviving_sections: cf.surviving_sections,
        layers: cf.layers,
        low_confidence: cf.low_confidence,
    }
}

#[test]
fn merge_identity_dedup_and_budget() {
    let kb = testkit::manual();
    let est = TokenEstimator::default();
    let a = focus_for(&kb, "buffer pool size");
    let single = merge_focus_results(std::slice::from_ref(&a), &kb.concepts, &kb.instances, 1200, est);
    let ids: BTreeSet<String> = single.entities.iter().map(|e| e.entity.id.clone()).collect();
    assert_eq!(ids, a.instance_subgraph.entity_ids);
    assert!(!ids.is_empty());
    let rels: BTreeSet<String> = single.relations.iter().map(|r| r.id.clone()).collect();
    assert_eq!(rels, a.instance_subgraph.relation_ids);

    let doubled = merge_focus_results(&[a.clone(), a.clone()], &kb.concepts, &kb.instances, 1200, est);
    assert_eq!(doubled.entities.len(), single.entities.len());
    assert_eq!(doubled.rendered, single.rendered);

    let zero = merge_focus_results(std::slice::from_ref(&a), &kb.concepts, &kb.instances, 0, est);
    assert!(zero.rendered.is_empty());
    assert_eq!(zero.entities.len(), single.entities.len());
}

#[test]
fn truncation_drops_lowest_scores_first() {
    let kb = testkit::manual();
    let est = TokenEstimator::default();
    let a = focus_for(&kb, "buffer pool size and replication port");
    let full = merge_focus_results(std::slice::from_ref(&a), &kb.concepts, &kb.instances, 1200, est);
    for budget in 1..est.estimate(&full.rendered) {
        let gc = merge_focus_results(std::slice::from_ref(&a), &kb.concepts, &kb.instances, budget, est);
        assert!(est.estimate(&gc.rendered) <= budget);
        // what is rendered is a prefix of the score order
        for e in &gc.entities[..gc.rendered_entities] {
            assert!(gc.rendered.contains(&format!("- {} (", e.entity.name)));
        }
        assert!(gc.entities.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

#[test]
fn refine_examples() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let empty = GraphContext::default();
    for t in [RefineTemplate::EntityGrounded, RefineTemplate::SectionGrounded] {
        assert_eq!(refine_query("  what is x ", &empty, t, &gw).unwrap(), "what is x");
    }
    let gc = GraphContext {
        entities: vec![ScoredEntity {
            entity: EntityNode::new("buffer_pool", EntityClass::Component, "c:manual/1", "manual/1#0"),
            score: 1.0,
            overlap: 1,
        }],
        concept_paths: vec!["Storage Engine > Buffer Pool".into()],
        ..Default::default()
    };
    let e = refine_query("how big is the cache", &gc, RefineTemplate::EntityGrounded, &gw).unwrap();
    assert!(e.contains("how big is the cache") && e.contains("buffer_pool"));
    let s = refine_query("how big is the cache", &gc, RefineTemplate::SectionGrounded, &gw).unwrap();
    assert_ne!(e, s);
    let _ = &kb;
    let err = refine_query("q", &gc, RefineTemplate::EntityGrounded, &faulty(&[FaultPoint::Role(GenerationRole::RefineQuery)]));
    assert!(err.is_err());
}

#[test]
fn retrieve_on_empty_corpus() {
    let cg = ConceptGraph::from_parts(vec![], vec![], vec![], vec![]).unwrap();
    let ig = InstanceGraph::new(vec![], vec![]).unwrap();
    let gw = Gateway::mock();
    let kb = KnowledgeBase::new(cg, ig, VectorIndex::empty(256, &gw.embedding_space()), vec![]);
    for mode in RetrievalMode::ALL {
        let usc = retrieve("what is a page", &[], &kb, &RetrievalConfig::default(), mode, &gw).unwrap();
        assert!(usc.vector_hits.is_empty());
        assert!(usc.graph_context.is_empty());
    }
    assert!(matches!(
        retrieve("  ", &[], &kb, &RetrievalConfig::default(), RetrievalMode::Full, &gw),
        Err(RetrievalError::EmptyQuery)
    ));
}

#[test]
fn retrieve_respects_pruning_and_is_deterministic() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let cfg = RetrievalConfig::default();
    let q = "How do I configure replicas and what does error E1205 mean?";
    for mode in [RetrievalMode::ConceptOnly, RetrievalMode::Full] {
        let usc = retrieve(q, &[], &kb, &cfg, mode, &gw).unwrap();
        assert!(!usc.vector_hits.is_empty());
        assert!(usc.trace.pruning_violations(&usc.vector_hits).is_empty());
        for h in &usc.vector_hits {
            let c = kb.chunk(&h.chunk_id).unwrap();
            assert_eq!(c.own_content(), h.excerpt);
        }
        assert!(usc.vector_hits.len() <= cfg.k_final);
        assert_eq!(usc, retrieve(q, &[], &kb, &cfg, mode, &gw).unwrap());
    }
    let full = retrieve(q, &[], &kb, &cfg, RetrievalMode::Full, &gw).unwrap();
    assert!(full.trace.sub_queries.len() >= 2);
    assert!(!full.refined_queries.is_empty());
    assert!(full.trace.flags.is_empty());
}

#[test]
fn chapter_query_stays_inside_chapter() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let cfg = RetrievalConfig {
        concept_top_m: 1,
        ..Default::default()
    };
    let q = "replica primary address replica service replication port";
    let usc = retrieve(q, &[], &kb, &cfg, RetrievalMode::Full, &gw).unwrap();
    let chapter = kb.concepts.subtree_sections("c:manual/2").unwrap();
    assert!(!usc.vector_hits.is_empty());
    for h in &usc.vector_hits {
        assert!(chapter.contains(&h.section_id), "{} outside chapter", h.chunk_id);
    }
}

#[test]
fn flat_mode_searches_everything_once() {
    let kb = testkit::manual();
    let gw = Gateway::mock();
    let usc = retrieve("page eviction", &[], &kb, &RetrievalConfig::default(), RetrievalMode::Flat, &gw).unwrap();
    assert_eq!(usc.trace.searches.len(), 1);
    assert!(usc.trace.searches[0].allowed_sections.is_none());
    assert!(usc.trace.focus.is_empty());
    assert!(usc.graph_context.is_empty());
    let expected = kb.index.search(gw.embed_one("page eviction").unwrap().values(), 8, None).unwrap();
    let got: Vec<&str> = usc.vector_hits.iter().map(|h| h.chunk_id.as_str()).collect();
    let want: Vec<&str> = expected.iter().map(|h| h.chunk_id.as_str()).collect();
    assert_eq!(got, want);
}

#[test]
fn faults_degrade_instead_of_failing() {
    let kb = testkit::manual();
    let q = "How do I configure replicas and monitor lag?";
    let cases = [
        (FaultPoint::Role(GenerationRole::Decompose), "decompose"),
        (FaultPoint::Role(GenerationRole::RefineQuery), "refine_query"),
        (FaultPoint::Embed, "embed"),
    ];
    for (point, name) in cases {
        let gw = faulty(&[point]);
        let usc = retrieve(q, &[], &kb, &RetrievalConfig::default(), RetrievalMode::Full, &gw).unwrap();
        assert!(usc.trace.flags.iter().any(|f| f.point == name), "{name}: {:?}", usc.trace.flags);
    }
    let cfg = RetrievalConfig {
        rerank_enabled: true,
        ..Default::default()
    };
    let healthy = retrieve(q, &[], &kb, &cfg, RetrievalMode::Full, &Gateway::mock()).unwrap();
    let usc = retrieve(q, &[], &kb, &cfg, RetrievalMode::Full, &faulty(&[FaultPoint::Rerank])).unwrap();
    assert!(usc.trace.flags.iter().any(|f| f.point == "rerank"));
    assert_eq!(usc.vector_hits.len(), healthy.vector_hits.len());
}

#[test]
fn mode_parses() {
    for m in RetrievalMode::ALL {
        assert_eq!(m.as_str().parse::<RetrievalMode>().unwrap(), m);
    }
    assert!("deep".parse::<RetrievalMode>().is_err());
}
