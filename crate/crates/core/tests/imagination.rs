mod common;

use imagnav::harness::{train_waypoint, waypoint_samples};
use imagnav::imagination::{
    grow_tree, heatmap_gt, init_tree, merge_into_memory, nms_peaks, room_reweight, waypoint_loss, GeneratedNode,
    ImaginationConfig, Imaginer, Parent, RoomWeightDict, WaypointModel, WaypointSource, ANGULAR_BINS, RADIAL_BINS,
};
use imagnav::memory::{MemoryConfig, MemoryMap, NodeKind};
use imagnav::rng::{rng_from, Rng};
use imagnav::world::{generate_world, observe, FeatureLayout, ObservationNoise, WorldConfig, WorldGraph, WorldNode};
use proptest::prelude::*;
use rand::Rng as _;

const SMALL: FeatureLayout = FeatureLayout { appearance: 2, geometry: 1, semantic: 1 };

fn world(seed: u64) -> WorldGraph {
    generate_world(&WorldConfig { seed, ..WorldConfig::default() }).unwrap()
}

/// Walk `moves` steps along world edges, integrating each observation.
fn walked_map(w: &WorldGraph, cap: usize, moves: usize, rng: &mut Rng) -> (MemoryMap, Vec<u64>) {
    let mut m = MemoryMap::new(MemoryConfig { imagination_cap: cap, ..MemoryConfig::default() });
    let mut at = w.nodes[0].id;
    let mut visits = Vec::new();
    for step in 1..=moves {
        m.integrate_observation(&observe(w, at, &ObservationNoise::default(), rng).unwrap(), step).unwrap();
        visits.push(at);
        let nb = w.neighbors(at).unwrap();
        at = nb[rng.random_range(0..nb.len())].0;
    }
    (m, visits)
}

#[test]
fn history_keeps_the_last_two_visits() {
    let w = world(1);
    let mut rng = rng_from(3);
    let (m, visits) = walked_map(&w, 4, 5, &mut rng);
    let tree = init_tree(&m, w.layout(), &ImaginationConfig::default(), 5).unwrap();
    let h = &tree.branches[0].history;
    assert_eq!(h.len(), 2);
    assert_eq!(h[0].position, w.node(visits[3]).unwrap().position);
    assert_eq!(h[1].position, w.node(visits[4]).unwrap().position);
}

#[test]
fn no_navigable_nodes_leave_the_tree_inert() {
    let w = world(0);
    let mut m = MemoryMap::new(MemoryConfig::default());
    m.integrate_observation(&common::obs(0, [0.0; 3], [0.6, 0.8, 0.3, 1.0], &[]), 1).unwrap();
    let cfg = ImaginationConfig::default();
    let mut tree = init_tree(&m, SMALL, &cfg, 1).unwrap();
    assert!(tree.frontier.is_empty());
    let im = Imaginer::Oracle { world: &w, noise: 0.0 };
    grow_tree(&mut tree, &im, &WaypointSource::Random, None, &cfg, &mut rng_from(0)).unwrap();
    assert!(tree.generated.is_empty());
    let before = m.clone();
    merge_into_memory(&mut m, &tree).unwrap();
    assert_eq!(m, before);
}

/// Hub node 0 with three spokes, features split 2/1/1.
fn star_world() -> WorldGraph {
    let node = |id: u64, position: [f64; 3], f: [f64; 4]| WorldNode {
        id,
        position,
        appearance: f[..2].to_vec(),
        geometry: vec![f[2]],
        semantic: vec![f[3]],
        room_type: 0,
    };
    let nodes = vec![
        node(0, [0.0; 3], [0.5, 0.5, 0.5, 0.5]),
        node(1, [1.0, 0.0, 0.0], [0.1, 0.2, 0.3, 0.4]),
        node(2, [0.0, 1.0, 0.0], [0.4, 0.3, 0.2, 0.1]),
        node(3, [-1.0, 0.0, 0.0], [0.2, 0.2, 0.2, 0.2]),
    ];
    WorldGraph::from_parts(nodes, vec![(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)], 1, 1, 1).unwrap()
}

#[test]
fn two_expansions_with_branching_three_generate_at_most_twelve() {
    let w = star_world();
    let mut m = MemoryMap::new(MemoryConfig::default());
    m.integrate_observation(&observe(&w, 0, &ObservationNoise::default(), &mut rng_from(0)).unwrap(), 1).unwrap();
    let cfg = ImaginationConfig { depth: 2, max_waypoints: 3, ..ImaginationConfig::default() };
    let im = Imaginer::Oracle { world: &w, noise: 0.0 };
    for seed in 0..20 {
        let mut tree = init_tree(&m, w.layout(), &cfg, 1).unwrap();
        grow_tree(&mut tree, &im, &WaypointSource::Random, None, &cfg, &mut rng_from(seed)).unwrap();
        let at = |d: usize| tree.generated.iter().filter(|g| g.depth == d).count();
        assert_eq!((at(1), at(2)), (3, 9));
        assert!(tree.generated.len() <= 3 + 9);
        assert_eq!(tree.depth, 2);
    }
}

#[test]
fn uniform_semantic_reweighted_toward_one_object() {
    let w = RoomWeightDict { weights: vec![vec![1.0, 0.0, 0.0, 0.0]] };
    let out = room_reweight(&[0.25; 4], 0, &w).unwrap();
    for (o, e) in out.iter().zip([0.4, 0.2, 0.2, 0.2]) {
        assert!((o - e).abs() < 1e-12);
    }
    assert_eq!(room_reweight(&[0.1, 0.2, 0.3, 0.4], 0, &RoomWeightDict::zeros(1, 4)).unwrap(), vec![0.1, 0.2, 0.3, 0.4]);
}

#[test]
fn reweighted_semantics_sum_to_one() {
    let mut rng = rng_from(5);
    let dict = RoomWeightDict::from_priors(8, 16, 2.0);
    for _ in 0..10_000 {
        let raw: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let s: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let out = room_reweight(&s, rng.random_range(0..8), &dict).unwrap();
        assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn single_neighbor_gives_one_peak() {
    let h = heatmap_gt(&[(0.0, 1.0)]).unwrap();
    assert_eq!(h.shape(), (ANGULAR_BINS, RADIAL_BINS));
    assert_eq!((ANGULAR_BINS, RADIAL_BINS), (120, 12));
    assert_eq!(h.at(0, 4), 1.0);
    assert_eq!(nms_peaks(&h, 8, (5, 3)).len(), 1);
}

#[test]
fn trained_waypoint_model_beats_its_initialisation() {
    let worlds: Vec<WorldGraph> = (0..12).map(world).collect();
    let refs: Vec<&WorldGraph> = worlds.iter().collect();
    let (xs, ys) = waypoint_samples(&refs, 500).unwrap();
    assert_eq!(xs.len(), 500);
    let mse = |m: &WaypointModel| {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| waypoint_loss(&m.predict_heatmap(&x[..32], &x[32..]).unwrap(), y))
            .sum::<f64>()
            / xs.len() as f64
    };
    let mut model = WaypointModel::new(32, 16, 1);
    let before = mse(&model);
    train_waypoint(&mut model, &xs, &ys, 10, 16, 0.5, 1).unwrap();
    let after = mse(&model);
    assert!(after < before, "{after} !< {before}");
}

fn generated(position: [f64; 3], feature: [f64; 4], parent: Parent) -> GeneratedNode {
    GeneratedNode {
        position,
        appearance: feature[..2].to_vec(),
        geometry: vec![feature[2]],
        semantic: vec![feature[3]],
        depth: 1,
        parent,
    }
}

fn tree_with(map: &MemoryMap, nodes: Vec<GeneratedNode>) -> imagnav::imagination::ImaginationTree {
    let mut t = init_tree(map, SMALL, &ImaginationConfig::default(), 1).unwrap();
    t.frontier.clear();
    t.generated = nodes;
    t.depth = 1;
    t
}

#[test]
fn five_distinct_nodes_are_capped_at_four() {
    let mut m = MemoryMap::new(MemoryConfig { imagination_cap: 4, ..MemoryConfig::default() });
    m.integrate_observation(&common::obs(0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], &[(1, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0])]), 1)
        .unwrap();
    let feats = [[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0], [1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0], [-1.0, 0.0, 0.0, 1.0]];
    let nodes = feats
        .iter()
        .enumerate()
        .map(|(i, f)| generated([4.0 * (i as f64 + 1.0), 3.0 * i as f64, 0.0], *f, Parent::Memory(1)))
        .collect();
    let tree = tree_with(&m, nodes);
    let ids = merge_into_memory(&mut m, &tree).unwrap();
    assert_eq!(ids.len(), 5);
    assert_eq!(m.count(NodeKind::Imagination), 4);
    m.check_invariants().unwrap();
}

#[test]
fn imagined_copy_of_a_navigable_node_merges_into_it() {
    let mut m = MemoryMap::new(MemoryConfig::default());
    let nav = [0.3, 0.9, 0.2, 0.6];
    m.integrate_observation(&common::obs(0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], &[(1, [1.2, 0.4, 0.0], nav)]), 1).unwrap();
    let tree = tree_with(&m, vec![generated([1.2, 0.4, 0.0], nav, Parent::Memory(1))]);
    merge_into_memory(&mut m, &tree).unwrap();
    assert_eq!(m.count(NodeKind::Imagination), 0);
    assert_eq!(m.node(1).unwrap().kind, NodeKind::Navigable);
    assert_eq!(m.count(NodeKind::Navigable), 1);
}

#[test]
fn zero_noise_oracle_merges_world_features() {
    let w = world(4);
    let mut rng = rng_from(8);
    let (mut m, _) = walked_map(&w, 16, 3, &mut rng);
    let cfg = ImaginationConfig { depth: 1, ..ImaginationConfig::default() };
    let mut tree = init_tree(&m, w.layout(), &cfg, 3).unwrap();
    let im = Imaginer::Oracle { world: &w, noise: 0.0 };
    grow_tree(&mut tree, &im, &WaypointSource::GroundTruth(&w), None, &cfg, &mut rng).unwrap();
    merge_into_memory(&mut m, &tree).unwrap();
    for n in m.nodes().filter(|n| n.kind == NodeKind::Imagination) {
        assert_eq!(n.feature, w.nearest_node(&n.position).unwrap().feature());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn depth_and_cap_hold_over_random_walks(seed in 0u64..5_000, depth in 0usize..4, cap in 0usize..6, noise in 0.0f64..0.5) {
        let w = world(seed % 4);
        let mut rng = rng_from(seed);
        let mut m = MemoryMap::new(MemoryConfig { imagination_cap: cap, ..MemoryConfig::default() });
        let cfg = ImaginationConfig { depth, ..ImaginationConfig::default() };
        let im = Imaginer::Oracle { world: &w, noise };
        let mut at = w.nodes[0].id;
        for step in 1..=4 {
            m.integrate_observation(&observe(&w, at, &ObservationNoise::default(), &mut rng).unwrap(), step).unwrap();
            let mut tree = init_tree(&m, w.layout(), &cfg, step).unwrap();
            grow_tree(&mut tree, &im, &WaypointSource::Random, None, &cfg, &mut rng).unwrap();
            prop_assert!(tree.depth <= depth);
            prop_assert!(tree.branches.iter().all(|b| b.history.len() <= cfg.history));
            merge_into_memory(&mut m, &tree).unwrap();
            prop_assert!(m.count(NodeKind::Imagination) <= cap);
            prop_assert!(m.check_invariants().is_ok());
            let nb = w.neighbors(at).unwrap();
            at = nb[rng.random_range(0..nb.len())].0;
        }
    }

    #[test]
    fn raising_a_weight_never_lowers_its_object(
        s in prop::collection::vec(0.01f64..1.0, 6),
        w in prop::collection::vec(0.0f64..3.0, 6),
        c in 0usize..6,
        bump in 0.0f64..5.0,
    ) {
        let lo = RoomWeightDict { weights: vec![w.clone()] };
        let mut hi = w;
        hi[c] += bump;
        let hi = RoomWeightDict { weights: vec![hi] };
        let a = room_reweight(&s, 0, &lo).unwrap()[c];
        let b = room_reweight(&s, 0, &hi).unwrap()[c];
        prop_assert!(b >= a - 1e-12);
    }
}
