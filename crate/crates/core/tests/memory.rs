mod common;

use std::collections::BTreeSet;

use imagnav::memory::{pruning_criterion, Completeness, MemoryConfig, MemoryMap, MemoryNode, NodeKind};
use imagnav::rng::rng_from;
use imagnav::world::{generate_world, WorldConfig, WorldGraph};
use proptest::prelude::*;
use rand::Rng as _;

fn node(feature: Vec<f64>, position: [f64; 3]) -> MemoryNode {
    MemoryNode { id: 0, kind: NodeKind::Imagination, feature, position, last_visit_step: 0, completeness: Completeness::Imagined }
}

fn world(seed: u64) -> WorldGraph {
    generate_world(&WorldConfig { seed, ..Default::default() }).unwrap()
}

#[test]
fn criterion_symmetric_over_random_pairs() {
    let mut rng = rng_from(4);
    for _ in 0..10_000 {
        let d = rng.random_range(1..12);
        let f = |rng: &mut imagnav::rng::Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let p = |rng: &mut imagnav::rng::Rng| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)];
        let a = node(f(&mut rng), p(&mut rng));
        let b = node(f(&mut rng), p(&mut rng));
        let ab = pruning_criterion(&a, &b).unwrap();
        let ba = pruning_criterion(&b, &a).unwrap();
        assert!((ab - ba).abs() <= 1e-12, "{ab} vs {ba}");
    }
}

#[test]
fn criterion_rejects_zero_features() {
    let a = node(vec![0.0; 3], [0.0; 3]);
    let b = node(vec![1.0, 0.0, 0.0], [0.0; 3]);
    assert!(pruning_criterion(&a, &b).is_err());
}

fn world_edges(w: &WorldGraph) -> BTreeSet<(u64, u64)> {
    w.nodes
        .iter()
        .flat_map(|n| w.neighbors(n.id).unwrap().into_iter().map(move |(m, _)| (n.id.min(m), n.id.max(m))))
        .collect()
}

#[test]
fn pruned_random_maps_keep_every_invariant() {
    let worlds: Vec<WorldGraph> = (0..5).map(world).collect();
    for seed in 0..200u64 {
        let w = &worlds[seed as usize % worlds.len()];
        let cap = (seed % 6) as usize;
        let mut m = common::random_map(w, seed, cap, 1 + seed as usize % 7, seed as usize % 13);
        m.prune_imagination(0.9);
        assert!(m.count(NodeKind::Imagination) <= cap);
        m.check_invariants().unwrap();
        for (a, b, len) in m.edges() {
            let (pa, pb) = (m.node(a).unwrap().position, m.node(b).unwrap().position);
            assert!((imagnav::geometry::distance(&pa, &pb) - len).abs() < 1e-9);
        }
        // merges never invent walkable edges between real nodes
        let real = world_edges(w);
        for (a, b, _) in m.edges() {
            if m.node(a).unwrap().kind.is_real() && m.node(b).unwrap().kind.is_real() {
                assert!(real.contains(&(a.min(b), a.max(b))), "edge {a}-{b} is not in the world");
            }
        }
    }
}

#[test]
fn visited_features_are_fixed() {
    let w = world(2);
    let mut m = MemoryMap::new(MemoryConfig::default());
    let noise = imagnav::world::ObservationNoise::uniform(0.2);
    let mut rng = rng_from(9);
    let start = w.nodes[0].id;
    m.integrate_observation(&imagnav::world::observe(&w, start, &noise, &mut rng).unwrap(), 1).unwrap();
    let before = m.node(start).unwrap().feature.clone();
    let next = w.neighbors(start).unwrap()[0].0;
    m.integrate_observation(&imagnav::world::observe(&w, next, &noise, &mut rng).unwrap(), 2).unwrap();
    m.integrate_observation(&imagnav::world::observe(&w, start, &noise, &mut rng).unwrap(), 3).unwrap();
    assert_eq!(m.node(start).unwrap().feature, before);
    assert_eq!(m.node(next).unwrap().kind, NodeKind::Visited);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prune_is_idempotent(seed in 0u64..10_000, cap in 0usize..6, extra in 0usize..14, moves in 1usize..6) {
        let w = world(seed % 3);
        let mut m = common::random_map(&w, seed, cap, moves, extra);
        m.prune_imagination(0.9);
        let once = m.clone();
        m.prune_imagination(0.9);
        prop_assert_eq!(m, once);
    }

    #[test]
    fn criterion_is_symmetric(
        a in prop::collection::vec(-3.0f64..3.0, 4),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        pa in prop::array::uniform3(-4.0f64..4.0),
        pb in prop::array::uniform3(-4.0f64..4.0),
    ) {
        prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
        let (x, y) = (node(a, pa), node(b, pb));
        prop_assert!((pruning_criterion(&x, &y).unwrap() - pruning_criterion(&y, &x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn cap_holds_after_any_prune(seed in 0u64..10_000, cap in 0usize..5, extra in 0usize..20) {
        let w = world(seed % 2);
        let mut m = common::random_map(&w, seed, cap, 3, extra);
        m.prune_imagination(0.9);
        prop_assert!(m.count(NodeKind::Imagination) <= cap);
        prop_assert!(m.check_invariants().is_ok());
    }
}
