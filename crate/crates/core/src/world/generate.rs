use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{NodeId, WorldGraph, WorldNode};
use crate::error::{Error, Result};
use crate::geometry::{distance, heading, Vec3};
use crate::rng::{rng_from, Rng};

/// Side length of one room cell in meters.
pub const CELL_SIZE: f64 = 3.0;
/// Half-width of the square inside a cell where ordinary nodes are placed.
const INTERIOR_HALF: f64 = 0.9;
/// Offset of a door node from the cell center toward its wall.
const DOOR_OFFSET: f64 = 0.75;
const MIN_SEPARATION: f64 = 0.5;
/// Range used to turn a neighbor distance into a sector-depth reading.
const DEPTH_RANGE: f64 = 3.5;
const VISUAL_VOCAB_SEED: u64 = 0x5A11_0B7E_D00D_F00D;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub rooms: usize,
    pub nodes_per_room: usize,
    pub object_vocab: usize,
    pub room_vocab: usize,
    pub appearance_dim: usize,
    pub geometry_dim: usize,
    /// Intra-room node pairs closer than this are linked (a spanning tree is always added).
    pub link_radius: f64,
    /// Probability that an adjacent room pair outside the spanning tree gets a door.
    pub extra_door_prob: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            rooms: 8,
            nodes_per_room: 6,
            object_vocab: 16,
            room_vocab: 8,
            appearance_dim: 32,
            geometry_dim: 16,
            link_radius: 1.5,
            extra_door_prob: 0.3,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.rooms >= 1, "rooms must be at least 1"),
            (self.nodes_per_room >= 1, "nodes_per_room must be at least 1"),
            (self.object_vocab >= 1, "object vocabulary must be nonempty"),
            (self.room_vocab >= 1, "room vocabulary must be nonempty"),
            (self.appearance_dim >= 1, "appearance dimension must be positive"),
            (self.geometry_dim >= 1, "geometry dimension must be positive"),
            (self.link_radius.is_finite() && self.link_radius >= 0.0, "link radius must be finite"),
            ((0.0..=1.0).contains(&self.extra_door_prob), "extra door probability must be in [0, 1]"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        Ok(())
    }
}

/// Objects a room type typically contains. Fixed across worlds so that the
/// room/object correlation is learnable.
pub fn room_prior_objects(room_type: usize, _room_vocab: usize, object_vocab: usize) -> Vec<usize> {
    let o = object_vocab;
    let set: BTreeSet<usize> = [2 * room_type % o, (2 * room_type + 1) % o, (2 * room_type + o / 2 + 1) % o]
        .into_iter()
        .collect();
    set.into_iter().collect()
}

/// Appearance embeddings shared by every world with the same dimensions.
struct VisualVocabulary {
    rooms: Vec<Vec<f64>>,
    objects: Vec<Vec<f64>>,
}

impl VisualVocabulary {
    fn new(cfg: &WorldConfig) -> Self {
        let seed = VISUAL_VOCAB_SEED
            ^ (cfg.appearance_dim as u64) << 32
            ^ (cfg.room_vocab as u64) << 16
            ^ cfg.object_vocab as u64;
        let mut rng = rng_from(seed);
        let scale = 1.0 / (cfg.appearance_dim as f64).sqrt();
        let mut draw = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    (0..cfg.appearance_dim)
                        .map(|_| scale * gauss(&mut rng))
                        .collect::<Vec<f64>>()
                })
                .collect()
        };
        let rooms = draw(cfg.room_vocab);
        let objects = draw(cfg.object_vocab);
        Self { rooms, objects }
    }
}

fn gauss(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn cell_center(room: usize, cols: usize) -> Vec3 {
    let (cx, cy) = (room % cols, room / cols);
    [CELL_SIZE * cx as f64 + CELL_SIZE / 2.0, CELL_SIZE * cy as f64 + CELL_SIZE / 2.0, 0.0]
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Doors between 4-adjacent room cells: a random spanning tree plus extras.
fn door_pairs(cfg: &WorldConfig, cols: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for a in 0..cfg.rooms {
        let (ax, ay) = (a % cols, a / cols);
        for b in a + 1..cfg.rooms {
            let (bx, by) = (b % cols, b / cols);
            if ax.abs_diff(bx) + ay.abs_diff(by) == 1 {
                candidates.push((a, b));
            }
        }
    }
    candidates.shuffle(rng);
    let mut parent: Vec<usize> = (0..cfg.rooms).collect();
    let mut doors = Vec::new();
    let mut extras = Vec::new();
    for (a, b) in candidates {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra] = rb;
            doors.push((a, b));
        } else {
            extras.push((a, b));
        }
    }
    for pair in extras {
        if rng.random::<f64>() < cfg.extra_door_prob {
            doors.push(pair);
        }
    }
    doors.sort_unstable();
    doors
}

fn min_gap(p: &Vec3, placed: &[Vec3]) -> f64 {
    placed.iter().map(|q| distance(p, q)).fold(f64::INFINITY, f64::min)
}

/// Sample a point with `sample` until it keeps the minimum separation;
/// falls back to the best of the attempts.
fn place(placed: &[Vec3], rng: &mut Rng, mut sample: impl FnMut(&mut Rng) -> Vec3) -> Vec3 {
    let mut best = sample(rng);
    let mut best_gap = min_gap(&best, placed);
    for _ in 0..200 {
        if best_gap >= MIN_SEPARATION {
            break;
        }
        let p = sample(rng);
        let g = min_gap(&p, placed);
        if g > best_gap {
            best = p;
            best_gap = g;
        }
    }
    best
}

/// Euclidean minimum spanning tree over `points` (Prim), as index pairs.
fn mst(points: &[Vec3]) -> Vec<(usize, usize)> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    in_tree[0] = true;
    for j in 1..n {
        best[j] = (distance(&points[0], &points[j]), 0);
    }
    let mut out = Vec::new();
    for _ in 1..n {
        let (j, &(_, from)) = best
            .iter()
            .enumerate()
            .filter(|(j, _)| !in_tree[*j])
            .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
            .expect("a vertex remains outside the tree");
        in_tree[j] = true;
        out.push((from.min(j), from.max(j)));
        for k in 0..n {
            if !in_tree[k] {
                let d = distance(&points[j], &points[k]);
                if d < best[k].0 {
                    best[k] = (d, j);
                }
            }
        }
    }
    out
}

/// Procedurally generate a connected synthetic building.
pub fn generate_world(cfg: &WorldConfig) -> Result<WorldGraph> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let vocab = VisualVocabulary::new(cfg);
    let cols = (cfg.rooms as f64).sqrt().ceil() as usize;

    let mut type_pool: Vec<usize> = (0..cfg.rooms.div_ceil(cfg.room_vocab))
        .flat_map(|_| 0..cfg.room_vocab)
        .collect();
    type_pool.shuffle(&mut rng);
    let room_types: Vec<usize> = type_pool[..cfg.rooms].to_vec();

    let doors = door_pairs(cfg, cols, &mut rng);
    let npr = cfg.nodes_per_room;
    let node_id = |room: usize, slot: usize| (room * npr + slot) as NodeId;

    // door slots: per room, the directions each slot faces
    let mut slot_dirs: Vec<Vec<Vec<[f64; 2]>>> = vec![vec![Vec::new(); npr]; cfg.rooms];
    let mut door_slots: Vec<(usize, usize, usize, usize)> = Vec::new();
    let mut next_slot = vec![0usize; cfg.rooms];
    for &(a, b) in &doors {
        let ca = cell_center(a, cols);
        let cb = cell_center(b, cols);
        let dir = [(cb[0] - ca[0]) / CELL_SIZE, (cb[1] - ca[1]) / CELL_SIZE];
        let sa = next_slot[a] % npr;
        let sb = next_slot[b] % npr;
        next_slot[a] += 1;
        next_slot[b] += 1;
        slot_dirs[a][sa].push(dir);
        slot_dirs[b][sb].push([-dir[0], -dir[1]]);
        door_slots.push((a, sa, b, sb));
    }

    let mut positions: Vec<Vec3> = vec![[0.0; 3]; cfg.rooms * npr];
    let mut edges: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for room in 0..cfg.rooms {
        let c = cell_center(room, cols);
        let mut placed: Vec<Vec3> = Vec::new();
        if npr == 1 {
            placed.push(c);
        } else {
            for dirs in slot_dirs[room].iter().filter(|d| !d.is_empty()) {
                let mean = [
                    dirs.iter().map(|d| d[0]).sum::<f64>() / dirs.len() as f64,
                    dirs.iter().map(|d| d[1]).sum::<f64>() / dirs.len() as f64,
                ];
                let single = dirs.len() == 1;
                let p = place(&placed, &mut rng, |rng| {
                    if single {
                        let along = rng.random_range(-0.1..=0.1);
                        let perp = rng.random_range(-0.5..=0.5);
                        let d = mean;
                        [
                            c[0] + d[0] * (DOOR_OFFSET + along) - d[1] * perp,
                            c[1] + d[1] * (DOOR_OFFSET + along) + d[0] * perp,
                            0.0,
                        ]
                    } else {
                        [
                            c[0] + DOOR_OFFSET * mean[0] + rng.random_range(-0.1..=0.1),
                            c[1] + DOOR_OFFSET * mean[1] + rng.random_range(-0.1..=0.1),
                            0.0,
                        ]
                    }
                });
                placed.push(p);
            }
            while placed.len() < npr {
                let p = place(&placed, &mut rng, |rng| {
                    [
                        c[0] + rng.random_range(-INTERIOR_HALF..=INTERIOR_HALF),
                        c[1] + rng.random_range(-INTERIOR_HALF..=INTERIOR_HALF),
                        0.0,
                    ]
                });
                placed.push(p);
            }
        }
        // slots with doors were placed first, in slot order
        let mut order: Vec<usize> = (0..npr).filter(|&s| !slot_dirs[room][s].is_empty()).collect();
        order.extend((0..npr).filter(|&s| slot_dirs[room][s].is_empty()));
        for (p, &slot) in placed.iter().zip(&order) {
            positions[room * npr + slot] = *p;
        }
        let local: Vec<Vec3> = (0..npr).map(|s| positions[room * npr + s]).collect();
        for (i, j) in mst(&local) {
            edges.insert((node_id(room, i), node_id(room, j)));
        }
        for i in 0..npr {
            for j in i + 1..npr {
                if distance(&local[i], &local[j]) <= cfg.link_radius {
                    edges.insert((node_id(room, i), node_id(room, j)));
                }
            }
        }
    }
    for &(a, sa, b, sb) in &door_slots {
        let (u, v) = (node_id(a, sa), node_id(b, sb));
        edges.insert((u.min(v), u.max(v)));
    }

    let edge_list: Vec<(NodeId, NodeId, f64)> = edges
        .iter()
        .map(|&(u, v)| (u, v, distance(&positions[u as usize], &positions[v as usize])))
        .collect();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
    for &(u, v, _) in &edge_list {
        adjacency[u as usize].push(v as usize);
        adjacency[v as usize].push(u as usize);
    }

    let mut nodes = Vec::with_capacity(positions.len());
    for room in 0..cfg.rooms {
        let rt = room_types[room];
        let prior = room_prior_objects(rt, cfg.room_vocab, cfg.object_vocab);
        for slot in 0..npr {
            let idx = room * npr + slot;
            let semantic = sample_semantic(&prior, cfg.object_vocab, &mut rng);
            let appearance = sample_appearance(&vocab, rt, &semantic, cfg.appearance_dim, &mut rng);
            let geometry = sector_depth(&positions[idx], adjacency[idx].iter().map(|&j| &positions[j]), cfg.geometry_dim);
            nodes.push(WorldNode { id: idx as NodeId, position: positions[idx], appearance, geometry, semantic, room_type: rt });
        }
    }
    WorldGraph::from_parts(nodes, edge_list, cfg.rooms, cfg.object_vocab, cfg.room_vocab)
}

fn sample_semantic(prior: &[usize], objects: usize, rng: &mut Rng) -> Vec<f64> {
    let landmark = if rng.random::<f64>() < 0.75 {
        prior[rng.random_range(0..prior.len())]
    } else {
        rng.random_range(0..objects)
    };
    let clutter: Vec<f64> = (0..objects).map(|_| Exp1.sample(rng)).collect();
    let clutter_sum: f64 = clutter.iter().sum();
    let mut s: Vec<f64> = clutter.iter().map(|c| 0.20 * c / clutter_sum).collect();
    s[landmark] += 0.55;
    for &o in prior {
        s[o] += 0.25 / prior.len() as f64;
    }
    let total: f64 = s.iter().sum();
    s.iter_mut().for_each(|v| *v /= total);
    s
}

fn sample_appearance(vocab: &VisualVocabulary, room_type: usize, semantic: &[f64], dim: usize, rng: &mut Rng) -> Vec<f64> {
    let jitter = 0.35 / (dim as f64).sqrt();
    let mut v: Vec<f64> = vocab.rooms[room_type].clone();
    for (o, &w) in semantic.iter().enumerate() {
        for (a, b) in v.iter_mut().zip(&vocab.objects[o]) {
            *a += 1.5 * w * b;
        }
    }
    for a in v.iter_mut() {
        *a += jitter * gauss(rng);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Panoramic depth stand-in: per heading sector, the proximity of the
/// nearest passable neighbor (0 where no passage exists).
pub(crate) fn sector_depth<'a>(origin: &Vec3, neighbors: impl Iterator<Item = &'a Vec3>, sectors: usize) -> Vec<f64> {
    let width = std::f64::consts::TAU / sectors as f64;
    let mut g = vec![0.0; sectors];
    for p in neighbors {
        let k = ((heading(origin, p) / width).floor() as usize).min(sectors - 1);
        let proximity = (1.0 - distance(origin, p) / DEPTH_RANGE).max(0.0);
        g[k] = f64::max(g[k], proximity);
    }
    g
}
