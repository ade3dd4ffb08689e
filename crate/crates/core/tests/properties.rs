use proptest::prelude::*;

use kgfuse::kec::{build_pair_sets, effective_weights, select_topk, Polarity};
use kgfuse::kg::{EmbeddingTable, EntityId, KnowledgeGraph};
use kgfuse::paths::{path_weights, semantic_distance, shortest_path, Endpoint, PairCorrelation, ReasonerConfig};

fn graph_from(edges: &[(u8, u8)]) -> KnowledgeGraph {
    let names: Vec<(String, String)> = edges
        .iter()
        .filter(|(a, b)| a != b)
        .map(|(a, b)| (format!("n{a:02}"), format!("n{b:02}")))
        .collect();
    KnowledgeGraph::from_triples(names.iter().map(|(a, b)| (a.as_str(), "r", b.as_str())))
}

proptest! {
    #[test]
    fn weights_are_convex_and_mirrored(m in 0usize..12, alpha in 0.01f64..0.99) {
        let head = path_weights(m, alpha, Endpoint::Head).unwrap();
        let mut tail = path_weights(m, alpha, Endpoint::Tail).unwrap();
        prop_assert!((head.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(head.windows(2).all(|w| w[0] > w[1]));
        tail.reverse();
        prop_assert_eq!(head, tail);
    }

    #[test]
    fn found_paths_are_valid_and_reversible(edges in prop::collection::vec((0u8..30, 0u8..30), 1..80)) {
        let g = graph_from(&edges);
        prop_assume!(!g.is_empty());
        let ids: Vec<EntityId> = g.entities().collect();
        for &u in &ids {
            for &v in &ids {
                let uv = shortest_path(&g, u, v, 5).unwrap();
                let vu = shortest_path(&g, v, u, 5).unwrap();
                prop_assert_eq!(uv.path().map(|p| p.hops()), vu.path().map(|p| p.hops()));
                if let Some(p) = uv.path() {
                    prop_assert!(p.is_valid_in(&g));
                    prop_assert!(p.hops() <= 5);
                }
            }
        }
    }

    #[test]
    fn distance_is_symmetric_and_bounded(
        edges in prop::collection::vec((0u8..20, 0u8..20), 1..50),
        seed in any::<u64>(),
    ) {
        let g = graph_from(&edges);
        prop_assume!(g.len() >= 2);
        let rows = (0..g.len())
            .map(|i| Some((0..3).map(|j| ((seed.wrapping_add(i as u64 * 7 + j) % 97) as f64) / 10.0).collect()))
            .collect();
        let e = EmbeddingTable::from_rows(3, rows);
        let config = ReasonerConfig { d_max: 1e3, ..Default::default() };
        let ids: Vec<EntityId> = g.entities().collect();
        for &u in &ids {
            for &v in &ids {
                let a = semantic_distance(u, v, &g, &e, &config).unwrap();
                let b = semantic_distance(v, u, &g, &e, &config).unwrap();
                prop_assert_eq!(a.distance, b.distance);
                prop_assert!(a.distance >= 0.0 && a.distance <= 1e3);
            }
        }
    }

    #[test]
    fn signed_weights_stay_on_simplex(
        pairs in prop::collection::vec((-30.0f64..30.0, 0.0f64..50.0), 1..8),
    ) {
        let (scores, dists): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        for pol in [Polarity::Relevant, Polarity::Irrelevant] {
            let w = effective_weights(&scores, &dists, pol).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0 && x.is_finite()));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn topk_splits_by_distance(dists in prop::collection::vec(0.0f64..10.0, 0..12), k in 1usize..5) {
        let pairs: Vec<PairCorrelation> = dists
            .iter()
            .enumerate()
            .map(|(i, d)| PairCorrelation {
                first: EntityId(i as u32),
                second: EntityId(100 + i as u32),
                head: vec![0.0],
                tail: vec![0.0],
                distance: *d,
                connected: true,
                hops: Some(1),
            })
            .collect();
        let top = select_topk(&pairs, k).unwrap();
        let n = k.min(pairs.len());
        prop_assert_eq!(top.relevant.len(), n);
        prop_assert_eq!(top.irrelevant.len(), n);
        let rest = |chosen: &[usize]| (0..dists.len()).filter(|i| !chosen.contains(i)).map(|i| dists[i]).collect::<Vec<_>>();
        let max_rel = top.relevant.iter().map(|&i| dists[i]).fold(f64::MIN, f64::max);
        prop_assert!(rest(&top.relevant).iter().all(|d| *d >= max_rel));
        let min_irr = top.irrelevant.iter().map(|&i| dists[i]).fold(f64::MAX, f64::min);
        prop_assert!(rest(&top.irrelevant).iter().all(|d| *d <= min_irr));
    }

    #[test]
    fn pair_sets_are_canonical_and_unique(
        text in prop::collection::btree_set(0u32..20, 0..7),
        visual in prop::collection::btree_set(0u32..20, 0..7),
    ) {
        let t: Vec<EntityId> = text.iter().copied().map(EntityId).collect();
        let v: Vec<EntityId> = visual.iter().copied().map(EntityId).collect();
        let sets = build_pair_sets(&t, &v);
        for set in &sets {
            prop_assert!(set.pairs.iter().all(|(a, b)| a <= b));
            prop_assert!(set.pairs.windows(2).all(|w| w[0] < w[1]));
        }
        prop_assert!(sets[1].len() <= t.len() * v.len());
    }
}
