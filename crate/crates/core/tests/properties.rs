mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use scene_ground::llm::{oracle_backed_mock, oracle_response};
use scene_ground::response::render_response;
use scene_ground::prompt::{compact_scene, tag_mentioned, CompactionStep};
use scene_ground::{
    aabb_of, answer_query_deterministic, build_prompt, can_contain, derive_edges, near, on_top_of,
    parse_response, parse_scene, relative_position, serialize_scene, size_compare, SizeQuestion, NodeId,
    ObjectNode, OracleConfig, ParseError, SceneGraph, SerializeOptions, SizeRelation, StructuredQuery,
};

use common::{dyadic_scene, edges_reference, translated};

fn grid(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo..=hi).prop_map(|v| v as f64 / 8.0)
}

fn node(id: u64) -> impl Strategy<Value = ObjectNode> {
    (
        [grid(0, 16), grid(0, 16), grid(0, 16)],
        [grid(-24, 24), grid(-24, 24), grid(-24, 24)],
        prop::sample::select(vec!["chair", "table", "lamp", "vase", "book", "white couch"]),
    )
        .prop_map(move |(e, c, tag)| ObjectNode::new(id, tag, e, c))
}

fn scene(max: usize) -> impl Strategy<Value = SceneGraph> {
    (1..=max)
        .prop_flat_map(|n| (0..n as u64).map(node).collect::<Vec<_>>())
        .prop_map(|nodes| SceneGraph::new(nodes).unwrap())
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!["red", "wooden", "soft", "tall", "a", "the", "chair"]), 0..60)
        .prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip_exact(s in scene(12)) {
        let text = serialize_scene(&s, &SerializeOptions::exact());
        prop_assert_eq!(parse_scene::<f64>(&text).unwrap(), s);
    }

    #[test]
    fn round_trip_one_decimal(
        cells in prop::collection::vec(([0i32..40, 0..40, 0..40], [-90i32..90, -90..90, -90..90]), 1..10)
    ) {
        let nodes: Vec<ObjectNode> = cells
            .iter()
            .enumerate()
            .map(|(i, (e, c))| {
                ObjectNode::new(i as u64, "box", e.map(|v| v as f64 / 10.0), c.map(|v| v as f64 / 10.0))
                    .with_caption("a box")
            })
            .collect();
        let s = SceneGraph::new(nodes).unwrap();
        let text = serialize_scene(&s, &SerializeOptions::default());
        prop_assert_eq!(parse_scene::<f64>(&text).unwrap(), s);
    }

    #[test]
    fn aabb_preserves_volume(n in node(0)) {
        let b = aabb_of(&n);
        let size = b.max.minus(b.min);
        prop_assert_eq!(size.product(), n.bbox_extent.product());
    }

    #[test]
    fn on_top_of_is_antisymmetric(a in node(0), b in node(1)) {
        let cfg = OracleConfig::default();
        prop_assert!(!(on_top_of(&a, &b, &cfg).unwrap() && on_top_of(&b, &a, &cfg).unwrap()));
    }

    #[test]
    fn size_compare_is_consistent(a in node(0), b in node(1)) {
        let cfg = OracleConfig::default();
        let ab = size_compare(&a, &b, &cfg).relation;
        let ba = size_compare(&b, &a, &cfg).relation;
        let flipped = match ab {
            SizeRelation::Bigger => SizeRelation::Smaller,
            SizeRelation::Smaller => SizeRelation::Bigger,
            SizeRelation::Similar => SizeRelation::Similar,
        };
        prop_assert_eq!(ba, flipped);
    }

    #[test]
    fn containment_is_a_strict_order(a in node(0), b in node(1), c in node(2)) {
        prop_assert!(!can_contain(&a, &a));
        prop_assert!(!(can_contain(&a, &b) && can_contain(&b, &a)));
        if can_contain(&a, &b) && can_contain(&b, &c) {
            prop_assert!(can_contain(&a, &c));
        }
    }

    #[test]
    fn near_is_symmetric(a in node(0), b in node(1)) {
        let cfg = OracleConfig::default();
        prop_assert_eq!(near(&a, &b, &cfg), near(&b, &a, &cfg));
    }

    #[test]
    fn predicates_ignore_translation(s in scene(10), o in [grid(-400, 400), grid(-400, 400), grid(-400, 400)]) {
        let cfg = OracleConfig::default();
        let t = translated(&s, o);
        prop_assert_eq!(derive_edges(&s, &cfg), derive_edges(&t, &cfg));
        for (a, ta) in s.nodes().iter().zip(t.nodes()) {
            for (b, tb) in s.nodes().iter().zip(t.nodes()) {
                if a.id == b.id {
                    continue;
                }
                prop_assert_eq!(
                    relative_position(a, b, &cfg).relations,
                    relative_position(ta, tb, &cfg).relations
                );
                prop_assert_eq!(on_top_of(a, b, &cfg).unwrap(), on_top_of(ta, tb, &cfg).unwrap());
            }
        }
    }

    #[test]
    fn predicates_ignore_scale(s in scene(10), p in -3i32..=3) {
        let k = 2f64.powi(p);
        let cfg = OracleConfig::default();
        let scaled = s.map_nodes(|n| {
            n.bbox_extent = n.bbox_extent.map(|v| v * k);
            n.bbox_center = n.bbox_center.map(|v| v * k);
        });
        let kcfg = cfg.scaled(k);
        prop_assert_eq!(derive_edges(&s, &cfg), derive_edges(&scaled, &kcfg));
        for (a, sa) in s.nodes().iter().zip(scaled.nodes()) {
            for (b, sb) in s.nodes().iter().zip(scaled.nodes()) {
                if a.id == b.id {
                    continue;
                }
                prop_assert_eq!(size_compare(a, b, &cfg).relation, size_compare(sa, sb, &kcfg).relation);
                prop_assert_eq!(can_contain(a, b), can_contain(sa, sb));
                prop_assert_eq!(
                    relative_position(a, b, &cfg).relations,
                    relative_position(sa, sb, &kcfg).relations
                );
            }
        }
    }

    #[test]
    fn derive_edges_matches_brute_force(s in scene(20)) {
        let cfg = OracleConfig::default();
        prop_assert_eq!(derive_edges(&s, &cfg), edges_reference(&s, &cfg));
    }

    #[test]
    fn compaction_never_grows(s in scene(30), caption in words(), budget in 50usize..3000, query in words()) {
        let s = s.map_nodes(|n| {
            n.caption = caption.clone();
            n.color = "brown".into();
            n.material = "wood".into();
        });
        if let Ok(c) = compact_scene(&s, &query, budget, 0) {
            let mut last = usize::MAX;
            let mut last_step = None;
            for a in &c.actions {
                prop_assert!(a.tokens_after <= a.tokens_before);
                prop_assert!(a.tokens_after <= last);
                prop_assert!(Some(a.step) > last_step);
                last = a.tokens_after;
                last_step = Some(a.step);
            }
            prop_assert!(scene_ground::estimate_tokens(&c.serialized()) <= budget);
            prop_assert!(!c.scene.is_empty());
        }
    }

    #[test]
    fn pruning_keeps_mentioned_nodes(s in scene(30), budget in 100usize..1500) {
        let query = "Where is the lamp?";
        if let Ok(c) = compact_scene(&s, query, budget, 0) {
            let pruned = c.actions.iter().any(|a| a.step == CompactionStep::PruneNodes);
            let others_left = c.scene.nodes().iter().any(|n| !tag_mentioned(n, query));
            if pruned && others_left {
                for n in s.nodes().iter().filter(|n| tag_mentioned(n, query)) {
                    prop_assert!(c.scene.node(n.id).is_some(), "lamp {} pruned", n.id);
                }
            }
        }
    }

    #[test]
    fn prompt_contains_query_and_tags(s in scene(15), query in words()) {
        let p = build_prompt(&s, &query, &[], 16_000).unwrap();
        prop_assert!(p.system_text.contains(query.as_str()));
        prop_assert_eq!(&p.user_query, &query);
        for id in &p.included_node_ids {
            let tag = &s.node(*id).unwrap().object_tag;
            prop_assert!(p.system_text.contains(tag.as_str()));
        }
        prop_assert_eq!(build_prompt(&s, &query, &[], 16_000).unwrap(), p);
    }

    #[test]
    fn parser_is_total(text in ".{0,400}") {
        match parse_response(&text) {
            Ok(_) | Err(ParseError::Unparseable { .. }) => {}
        }
    }

    #[test]
    fn parser_is_total_on_step_soup(
        parts in prop::collection::vec(
            prop::sample::select(vec![
                "STEP1 - ", "STEP-2 - ", "step3:", "STEP 4 -", "STEP-5 - Explanation:", "[1, 2]", "{\"object_id\": ",
                "{", "}", "\"object_tag\": \"x\"", "```json", "```", "\n", "relevant_objects: [", "42", "-",
            ]),
            0..40,
        )
    ) {
        let text = parts.concat();
        match parse_response(&text) {
            Ok(_) | Err(ParseError::Unparseable { .. }) => {}
        }
    }

    #[test]
    fn oracle_answers_render_and_parse_back(s in scene(8), i in 0usize..8, j in 0usize..8, kind in 0u8..4) {
        let n = s.len();
        let (a, b) = (s.nodes()[i % n].id, s.nodes()[j % n].id);
        prop_assume!(a != b);
        let q = match kind {
            0 => StructuredQuery::OnTopOf { subject: a, object: b },
            1 => StructuredQuery::SizeCompare { a, b, question: SizeQuestion::Bigger },
            2 => StructuredQuery::Containment { outer: a, inner: b },
            _ => StructuredQuery::RelativePosition { a, b },
        };
        let cfg = OracleConfig::default();
        let answer = answer_query_deterministic(&s, &q, &cfg).unwrap();
        let resp = oracle_response(&answer).unwrap();
        let parsed = parse_response(&render_response(&resp)).unwrap();
        prop_assert_eq!(parsed.fields(), resp.fields());
        prop_assert!(scene_ground::validate_grounding(&parsed, &s).is_empty());
        let raw = oracle_backed_mock(&s, &q, &cfg).unwrap();
        let reparsed = parse_response(&raw).unwrap();
        prop_assert_eq!(reparsed.fields(), resp.fields());
    }
}

#[test]
fn derive_edges_matches_brute_force_on_random_scenes() {
    let cfg = OracleConfig::default();
    for seed in 0..50 {
        let s = dyadic_scene(seed, 40);
        assert_eq!(derive_edges(&s, &cfg), edges_reference(&s, &cfg), "seed {seed}");
    }
}

#[test]
fn f32_scenes_behave_like_f64() {
    let couch32 = scene_ground::ObjectNodef::new(28, "white couch", [1.0, 0.9, 0.6], [2.8, 2.3, -1.2]);
    let pillow32 = scene_ground::ObjectNodef::new(27, "pillow", [0.7, 0.6, 0.3], [2.9, 2.5, -0.8]);
    let cfg32 = scene_ground::OracleConfigf::default();
    assert!(on_top_of(&pillow32, &couch32, &cfg32).unwrap());
    assert!(!on_top_of(&couch32, &pillow32, &cfg32).unwrap());
    assert!(can_contain(&couch32, &pillow32));
    let ids: HashSet<NodeId> = [NodeId(27), NodeId(28)].into();
    let s = scene_ground::SceneGraphf::new(vec![couch32, pillow32]).unwrap();
    assert_eq!(s.ids().collect::<HashSet<_>>(), ids);
}
