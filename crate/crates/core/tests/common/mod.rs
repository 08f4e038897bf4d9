#![allow(dead_code)]

use imagnav::memory::{MemoryConfig, MemoryMap, NodeKind};
use imagnav::world::{NeighborStub, Observation};

/// Observation with a 4-dim feature split 2/1/1 and the given stubs.
pub fn obs(id: u64, pos: [f64; 3], feature: [f64; 4], stubs: &[(u64, [f64; 3], [f64; 4])]) -> Observation {
    Observation {
        node_id: id,
        position: pos,
        appearance: feature[..2].to_vec(),
        geometry: vec![feature[2]],
        semantic: vec![feature[3]],
        neighbor_stubs: stubs
            .iter()
            .map(|&(id, position, f)| NeighborStub {
                id,
                position,
                appearance: f[..2].to_vec(),
                geometry: vec![f[2]],
                semantic: vec![f[3]],
            })
            .collect(),
    }
}

/// Current node 0 with two Navigable neighbors, one Imagination node and Stop.
pub fn five_node_map() -> MemoryMap {
    let mut m = MemoryMap::new(MemoryConfig { imagination_cap: 4, ..Default::default() });
    let o = obs(
        0,
        [0.0, 0.0, 0.0],
        [0.6, 0.8, 0.3, 1.0],
        &[(1, [1.5, 0.2, 0.0], [0.9, -0.1, 0.5, 0.4]), (2, [-0.4, 1.1, 0.0], [-0.2, 0.7, 0.1, 0.8])],
    );
    m.integrate_observation(&o, 1).unwrap();
    m.add_imagination(vec![0.1, 0.2, 0.9, 0.3], [2.8, 0.5, 0.0], Some(1)).unwrap();
    m
}

/// Random walk of `moves` observations on `world`, then `extra` Imagination
/// nodes: half copies of existing features (duplicates), half random.
/// Returned unpruned.
pub fn random_map(world: &imagnav::world::WorldGraph, seed: u64, cap: usize, moves: usize, extra: usize) -> MemoryMap {
    use imagnav::rng::rng_from;
    use imagnav::world::{observe, ObservationNoise};
    use rand::Rng as _;

    let mut rng = rng_from(seed);
    let mut m = MemoryMap::new(MemoryConfig { imagination_cap: cap, ..Default::default() });
    let mut at = world.nodes[rng.random_range(0..world.len())].id;
    let noise = ObservationNoise::uniform(0.1);
    for step in 1..=moves.max(1) {
        m.integrate_observation(&observe(world, at, &noise, &mut rng).unwrap(), step).unwrap();
        let nb = world.neighbors(at).unwrap();
        at = nb[rng.random_range(0..nb.len())].0;
    }
    let dim = world.feature_dim();
    for _ in 0..extra {
        let real: Vec<_> = m.nodes().filter(|n| n.kind != NodeKind::Stop).cloned().collect();
        let (feature, position) = if rng.random_bool(0.5) {
            let n = &real[rng.random_range(0..real.len())];
            let jitter = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0];
            (n.feature.clone(), [n.position[0] + jitter[0], n.position[1] + jitter[1], n.position[2]])
        } else {
            let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            (f, [rng.random_range(0.0..9.0), rng.random_range(0.0..9.0), 0.0])
        };
        let parent = real[rng.random_range(0..real.len())].id;
        m.add_imagination(feature, position, Some(parent)).unwrap();
    }
    m
}
