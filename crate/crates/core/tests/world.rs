use std::collections::{BTreeMap, BTreeSet, VecDeque};

use imagnav::rng::rng_from;
use imagnav::world::{
    generate_instruction, generate_world, observe, Category, NodeId, ObservationNoise, TokenKind, Vocabulary,
    WorldConfig, WorldGraph,
};
use proptest::prelude::*;

fn cfg(rooms: usize, nodes_per_room: usize, seed: u64) -> WorldConfig {
    WorldConfig { rooms, nodes_per_room, seed, ..WorldConfig::default() }
}

fn bfs_reach(w: &WorldGraph, from: NodeId) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::from([from]);
    let mut queue = VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        for (m, _) in w.neighbors(n).unwrap() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

#[test]
fn smallest_world_is_one_node() {
    let w = generate_world(&cfg(1, 1, 0)).unwrap();
    assert_eq!(w.len(), 1);
    assert!(w.edges.is_empty());
    let o = observe(&w, w.nodes[0].id, &ObservationNoise::default(), &mut rng_from(0)).unwrap();
    assert!(o.neighbor_stubs.is_empty());
}

#[test]
fn same_seed_same_world() {
    assert_eq!(generate_world(&cfg(4, 5, 7)).unwrap(), generate_world(&cfg(4, 5, 7)).unwrap());
}

#[test]
fn breadth_first_traversal_reaches_all_48_nodes() {
    let w = generate_world(&cfg(8, 6, 3)).unwrap();
    assert_eq!(w.len(), 48);
    assert_eq!(bfs_reach(&w, w.nodes[0].id).len(), 48);
}

#[test]
fn zero_noise_stubs_are_exact() {
    let w = generate_world(&cfg(8, 6, 1)).unwrap();
    for n in &w.nodes {
        let o = observe(&w, n.id, &ObservationNoise::default(), &mut rng_from(n.id)).unwrap();
        for s in &o.neighbor_stubs {
            assert_eq!(s.feature(), w.node(s.id).unwrap().feature());
        }
    }
}

#[test]
fn stub_noise_has_the_configured_std() {
    let w = generate_world(&cfg(8, 6, 2)).unwrap();
    let at = w.nodes[0].id;
    let stub_id = w.neighbors(at).unwrap()[0].0;
    let truth = w.node(stub_id).unwrap().feature();
    let noise = ObservationNoise::uniform(0.1);
    let mut rng = rng_from(11);
    let samples: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let o = observe(&w, at, &noise, &mut rng).unwrap();
            let s = o.neighbor_stubs.iter().find(|s| s.id == stub_id).unwrap();
            s.feature().iter().zip(&truth).map(|(a, b)| a - b).collect()
        })
        .collect();
    for c in 0..truth.len() {
        let xs: Vec<f64> = samples.iter().map(|s| s[c]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.1).abs() <= 0.01, "coordinate {c}: std {std}");
    }
}

#[test]
fn observe_is_pure_given_rng_state() {
    let w = generate_world(&cfg(8, 6, 4)).unwrap();
    let noise = ObservationNoise::uniform(0.3);
    let a = observe(&w, w.nodes[5].id, &noise, &mut rng_from(99)).unwrap();
    let b = observe(&w, w.nodes[5].id, &noise, &mut rng_from(99)).unwrap();
    assert_eq!(a, b);
}

/// Shortest length from `from` to every node, by enumerating every simple path.
fn brute_force_lengths(w: &WorldGraph, from: NodeId) -> BTreeMap<NodeId, f64> {
    fn walk(w: &WorldGraph, at: NodeId, len: f64, on_path: &mut BTreeSet<NodeId>, best: &mut BTreeMap<NodeId, f64>) {
        let e = best.entry(at).or_insert(f64::INFINITY);
        *e = e.min(len);
        for (m, l) in w.neighbors(at).unwrap() {
            if on_path.insert(m) {
                walk(w, m, len + l, on_path, best);
                on_path.remove(&m);
            }
        }
    }
    let mut best = BTreeMap::new();
    walk(w, from, 0.0, &mut BTreeSet::from([from]), &mut best);
    best
}

#[test]
fn shortest_paths_match_brute_force_on_a_20_node_world() {
    let w = generate_world(&WorldConfig { link_radius: 0.0, ..cfg(4, 5, 5) }).unwrap();
    assert_eq!(w.len(), 20);
    for src in w.nodes.iter().step_by(4) {
        let oracle = brute_force_lengths(&w, src.id);
        for dst in &w.nodes {
            let (path, len) = w.shortest_path(src.id, dst.id).unwrap();
            assert!((len - oracle[&dst.id]).abs() < 1e-9, "{} -> {}: {len} vs {}", src.id, dst.id, oracle[&dst.id]);
            let walked: f64 = path.windows(2).map(|p| w.edge_length(p[0], p[1]).unwrap()).sum();
            assert!((walked - len).abs() < 1e-9);
        }
    }
}

#[test]
fn generated_instructions_respect_their_category() {
    let vocab = Vocabulary::new(8, 16);
    let w = generate_world(&cfg(8, 6, 12)).unwrap();
    let mut covered = BTreeSet::new();
    for (a, b) in [(0usize, 47usize), (3, 40), (10, 30), (6, 45)] {
        let (path, _) = w.shortest_path(w.nodes[a].id, w.nodes[b].id).unwrap();
        let mut rooms: Vec<usize> = path.iter().map(|&n| w.node(n).unwrap().room_type).collect();
        rooms.dedup();
        for cat in Category::SPLITS {
            let Ok(ins) = generate_instruction(&w, &vocab, &path, cat) else { continue };
            let (r, o) = (ins.count(&vocab, TokenKind::Room), ins.count(&vocab, TokenKind::Object));
            match cat {
                Category::S1 => assert!(r >= 2 && o == 0),
                Category::S2 => assert!(o >= 2 && r == 0),
                _ => assert!(r + o >= 4),
            }
            if rooms.len() >= 3 {
                covered.insert(cat);
            }
        }
    }
    assert!(covered.contains(&Category::S1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn generated_worlds_are_valid_and_paths_symmetric(seed in any::<u64>(), rooms in 1usize..9, per in 1usize..7) {
        let w = generate_world(&cfg(rooms, per, seed)).unwrap();
        prop_assert!(w.validate().is_ok());
        prop_assert!(w.is_connected());
        let a = w.nodes[(seed % w.len() as u64) as usize].id;
        let b = w.nodes[((seed / 7) % w.len() as u64) as usize].id;
        let (ab, ba) = (w.shortest_path(a, b).unwrap().1, w.shortest_path(b, a).unwrap().1);
        prop_assert!((ab - ba).abs() < 1e-9);
    }
}
