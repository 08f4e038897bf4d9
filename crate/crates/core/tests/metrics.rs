use std::collections::BTreeMap;

use imagnav::metrics::{aggregate, episode_metrics, EpisodeRecord, MetricsSummary};
use imagnav::rng::rng_from;
use imagnav::world::{generate_world, Category, NodeId, WorldConfig, WorldGraph, WorldNode};
use proptest::prelude::*;
use rand::Rng as _;

fn line(xs: &[f64]) -> WorldGraph {
    let nodes = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| WorldNode {
            id: i as u64,
            position: [x, 0.0, 0.0],
            appearance: vec![1.0],
            geometry: vec![0.0],
            semantic: vec![1.0],
            room_type: 0,
        })
        .collect();
    let edges = (1..xs.len()).map(|i| ((i - 1) as u64, i as u64, xs[i] - xs[i - 1])).collect();
    WorldGraph::from_parts(nodes, edges, 1, 1, 1).unwrap()
}

fn record(w: &WorldGraph, trajectory: Vec<NodeId>, goal: NodeId) -> EpisodeRecord {
    let stop_position = w.node(*trajectory.last().unwrap()).unwrap().position;
    EpisodeRecord { trajectory, stop_position, goal_node_id: goal }
}

/// A random walk that may or may not pass near the goal.
fn random_record(w: &WorldGraph, rng: &mut imagnav::rng::Rng) -> EpisodeRecord {
    let mut at = w.nodes[rng.random_range(0..w.len())].id;
    let mut trajectory = vec![at];
    for _ in 0..rng.random_range(0..12) {
        let nb = w.neighbors(at).unwrap();
        at = nb[rng.random_range(0..nb.len())].0;
        trajectory.push(at);
    }
    let goal = w.nodes[rng.random_range(0..w.len())].id;
    record(w, trajectory, goal)
}

#[test]
fn shortest_path_agent_scores_one() {
    let w = generate_world(&WorldConfig { seed: 9, ..WorldConfig::default() }).unwrap();
    for (a, b) in [(0usize, 47usize), (5, 20), (13, 13)] {
        let (path, _) = w.shortest_path(w.nodes[a].id, w.nodes[b].id).unwrap();
        let m = episode_metrics(&w, &record(&w, path, w.nodes[b].id)).unwrap();
        assert_eq!((m.sr, m.spl, m.ne, m.osr), (1.0, 1.0, 0.0, 1.0));
    }
}

#[test]
fn double_length_success_halves_spl() {
    // l = 10, p = 20: out to 15 and back to the goal at 10
    let w = line(&[0.0, 10.0, 15.0]);
    let m = episode_metrics(&w, &record(&w, vec![0, 1, 2, 1], 1)).unwrap();
    assert_eq!(m.tl, 20.0);
    assert_eq!(m.spl, 0.5);
}

#[test]
fn stopping_just_outside_three_meters_fails() {
    let w = line(&[0.0, 3.01]);
    let m = episode_metrics(&w, &record(&w, vec![0], 1)).unwrap();
    assert!((m.ne - 3.01).abs() < 1e-12);
    assert_eq!((m.sr, m.spl), (0.0, 0.0));
    let inside = line(&[0.0, 3.0]);
    assert_eq!(episode_metrics(&inside, &record(&inside, vec![0], 1)).unwrap().sr, 1.0);
}

#[test]
fn goal_outside_the_world_is_an_error() {
    let w = line(&[0.0, 1.0]);
    assert!(episode_metrics(&w, &record(&w, vec![0], 7)).is_err());
    assert!(aggregate(&[]).is_err());
}

#[test]
fn aggregate_examples() {
    let w = line(&[0.0, 10.0]);
    let hit = episode_metrics(&w, &record(&w, vec![0, 1], 1)).unwrap();
    let miss = episode_metrics(&w, &record(&w, vec![0], 1)).unwrap();
    let one = aggregate(&[(Category::S1, hit)]).unwrap();
    assert_eq!(one.overall, MetricsSummary { sr: 100.0, osr: 100.0, ..hit });
    let two = aggregate(&[(Category::S1, hit), (Category::S2, miss)]).unwrap();
    assert_eq!(two.overall.sr, 50.0);
    assert_eq!(two.by_category["S2"].sr, 0.0);
}

#[test]
fn inequalities_and_tl_oracle_over_a_sweep() {
    let worlds: Vec<WorldGraph> =
        (0..10).map(|s| generate_world(&WorldConfig { seed: 100 + s, ..WorldConfig::default() }).unwrap()).collect();
    let mut rng = rng_from(21);
    let mut all = Vec::new();
    for i in 0..300 {
        let w = &worlds[i % worlds.len()];
        let r = random_record(w, &mut rng);
        let m = episode_metrics(w, &r).unwrap();
        assert!(m.spl <= m.sr && m.sr <= m.osr, "{m:?}");
        assert!((0.0..=1.0).contains(&m.spl));
        // TL recomputed from the raw edge table
        let table: BTreeMap<(NodeId, NodeId), f64> =
            w.edges.iter().flat_map(|&(a, b, l)| [((a, b), l), ((b, a), l)]).collect();
        let tl: f64 = r.trajectory.windows(2).map(|p| table[&(p[0], p[1])]).sum();
        assert!((tl - m.tl).abs() < 1e-9);
        all.push((Category::SPLITS[i % 3], m));
    }
    let agg = aggregate(&all).unwrap();
    assert!(agg.overall.spl * 100.0 <= agg.overall.sr + 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_rigid_translation(seed in 0u64..1_000, dx in -50.0f64..50.0, dy in -50.0f64..50.0, dz in -5.0f64..5.0) {
        let w = generate_world(&WorldConfig { seed, ..WorldConfig::default() }).unwrap();
        let moved = w.translated([dx, dy, dz]);
        let mut rng = rng_from(seed);
        let r = random_record(&w, &mut rng);
        let r2 = record(&moved, r.trajectory.clone(), r.goal_node_id);
        let (a, b) = (episode_metrics(&w, &r).unwrap(), episode_metrics(&moved, &r2).unwrap());
        prop_assert_eq!((a.sr, a.osr), (b.sr, b.osr));
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }
}
