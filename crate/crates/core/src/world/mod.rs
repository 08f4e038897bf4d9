//! Ground-truth synthetic indoor environments.
//!
//! A [`WorldGraph`] is an immutable, connected graph of positioned viewpoints.
//! Each node carries three observation channels standing in for RGB, depth and
//! semantic panoramas: a unit-norm appearance vector, a sector-depth geometry
//! vector, and a probability vector over the object vocabulary.

mod generate;
mod instruction;
mod io;

pub use generate::{generate_world, room_prior_objects, WorldConfig};
pub use instruction::{generate_instruction, Category, Instruction, TokenKind, Vocabulary};
pub use io::{load_world, load_world_str, save_world, world_to_json};

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};

pub type NodeId = u64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldNode {
    pub id: NodeId,
    pub position: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
    pub room_type: usize,
}

impl WorldNode {
    /// Channels concatenated in memory-feature order: appearance, geometry, semantic.
    pub fn feature(&self) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.appearance.len() + self.geometry.len() + self.semantic.len());
        f.extend_from_slice(&self.appearance);
        f.extend_from_slice(&self.geometry);
        f.extend_from_slice(&self.semantic);
        f
    }
}

/// Channel widths of a concatenated feature vector `[appearance, geometry, semantic]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub appearance: usize,
    pub geometry: usize,
    pub semantic: usize,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.appearance + self.geometry + self.semantic
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Split a feature into its three channels.
    pub fn split<'a>(&self, f: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let (a, rest) = f.split_at(self.appearance);
        let (g, s) = rest.split_at(self.geometry);
        (a, g, s)
    }

    pub fn join(appearance: &[f64], geometry: &[f64], semantic: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(appearance.len() + geometry.len() + semantic.len());
        f.extend_from_slice(appearance);
        f.extend_from_slice(geometry);
        f.extend_from_slice(semantic);
        f
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldGraph {
    pub nodes: Vec<WorldNode>,
    pub edges: Vec<(NodeId, NodeId, f64)>,
    pub room_count: usize,
    pub object_vocab_size: usize,
    pub room_vocab_size: usize,
    index: HashMap<NodeId, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl WorldGraph {
    /// Assemble a graph without checking invariants (see [`WorldGraph::validate`]).
    /// Node and edge order is preserved; adjacency lists are sorted by neighbor id.
    pub fn from_parts(
        nodes: Vec<WorldNode>,
        edges: Vec<(NodeId, NodeId, f64)>,
        room_count: usize,
        object_vocab_size: usize,
        room_vocab_size: usize,
    ) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::Config(format!("duplicate node id {}", n.id)));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for &(a, b, len) in &edges {
            let ia = *index.get(&a).ok_or(Error::UnknownNode(a))?;
            let ib = *index.get(&b).ok_or(Error::UnknownNode(b))?;
            adjacency[ia].push((ib, len));
            adjacency[ib].push((ia, len));
        }
        for adj in &mut adjacency {
            adj.sort_by_key(|&(j, _)| nodes[j].id);
        }
        Ok(Self { nodes, edges, room_count, object_vocab_size, room_vocab_size, index, adjacency })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&WorldNode> {
        self.index.get(&id).map(|&i| &self.nodes[i]).ok_or(Error::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Neighbors of `id` as `(neighbor id, edge length)`, sorted by id.
    pub fn neighbors(&self, id: NodeId) -> Result<Vec<(NodeId, f64)>> {
        let i = *self.index.get(&id).ok_or(Error::UnknownNode(id))?;
        Ok(self.adjacency[i].iter().map(|&(j, l)| (self.nodes[j].id, l)).collect())
    }

    pub fn edge_length(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let i = *self.index.get(&a)?;
        let j = *self.index.get(&b)?;
        self.adjacency[i].iter().find(|&&(k, _)| k == j).map(|&(_, l)| l)
    }

    pub fn appearance_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.appearance.len())
    }

    pub fn geometry_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.geometry.len())
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.appearance.len() + n.geometry.len() + n.semantic.len())
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            appearance: self.appearance_dim(),
            geometry: self.geometry_dim(),
            semantic: self.nodes.first().map_or(0, |n| n.semantic.len()),
        }
    }

    /// Node nearest to `p` (ties → lowest id).
    pub fn nearest_node(&self, p: &Vec3) -> Option<&WorldNode> {
        self.nodes.iter().min_by(|a, b| {
            distance(&a.position, p)
                .partial_cmp(&distance(&b.position, p))
                .unwrap_or(Ordering::Equal)
                .then(a.id.cmp(&b.id))
        })
    }

    /// Breadth-first reachability from the first node.
    pub fn is_connected(&self) -> bool {
        self.reachable_from_first().iter().all(|&r| r)
    }

    fn reachable_from_first(&self) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        if self.nodes.is_empty() {
            return seen;
        }
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Check every structural and channel invariant. A violation names the
    /// index of the offending node or edge.
    pub fn validate(&self) -> std::result::Result<(), Violation> {
        let d = self.appearance_dim();
        let dg = self.geometry_dim();
        for (i, n) in self.nodes.iter().enumerate() {
            let bad = |msg: String| Violation::Node { index: i, msg };
            if n.appearance.len() != d || n.geometry.len() != dg || n.semantic.len() != self.object_vocab_size {
                return Err(bad(format!("node {} has inconsistent channel dimensions", n.id)));
            }
            if n.position.iter().chain(&n.appearance).chain(&n.geometry).chain(&n.semantic).any(|v| !v.is_finite()) {
                return Err(bad(format!("node {} has non-finite values", n.id)));
            }
            let norm = n.appearance.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(bad(format!("node {} appearance norm {norm} is not 1", n.id)));
            }
            if n.semantic.iter().any(|&v| v < 0.0) {
                return Err(bad(format!("node {} has negative semantic entries", n.id)));
            }
            let s: f64 = n.semantic.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(bad(format!("node {} semantic sums to {s}", n.id)));
            }
            if n.room_type >= self.room_vocab_size {
                return Err(bad(format!("node {} room type {} outside vocabulary", n.id, n.room_type)));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for (k, &(a, b, len)) in self.edges.iter().enumerate() {
            let bad = |msg: String| Violation::Edge { index: k, msg };
            if a == b {
                return Err(bad(format!("self-loop on node {a}")));
            }
            let (Some(&ia), Some(&ib)) = (self.index.get(&a), self.index.get(&b)) else {
                return Err(bad(format!("edge ({a}, {b}) references an unknown node")));
            };
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(bad(format!("duplicate edge ({a}, {b})")));
            }
            let euclid = distance(&self.nodes[ia].position, &self.nodes[ib].position);
            if !len.is_finite() || (len - euclid).abs() > 1e-9 {
                return Err(bad(format!("edge ({a}, {b}) length {len} differs from distance {euclid}")));
            }
        }
        let reach = self.reachable_from_first();
        if let Some(i) = reach.iter().position(|r| !r) {
            return Err(Violation::Node { index: i, msg: format!("node {} is disconnected", self.nodes[i].id) });
        }
        Ok(())
    }

    /// Shortest path by total edge length. Among equal-length paths the
    /// lexicographically smallest node-id sequence wins.
    pub fn shortest_path(&self, a: NodeId, b: NodeId) -> Result<(Vec<NodeId>, f64)> {
        let ia = *self.index.get(&a).ok_or(Error::UnknownNode(a))?;
        let ib = *self.index.get(&b).ok_or(Error::UnknownNode(b))?;
        if ia == ib {
            return Ok((vec![a], 0.0));
        }
        let to_goal = self.dijkstra(ib);
        if !to_goal[ia].is_finite() {
            return Err(Error::NoPath { from: a, to: b });
        }
        let mut path = vec![a];
        let mut length = 0.0;
        let mut u = ia;
        while u != ib {
            let remaining = to_goal[u];
            let tol = 1e-9 * (1.0 + remaining.abs());
            // adjacency is sorted by id, so the first admissible neighbor is the smallest
            let &(v, w) = self.adjacency[u]
                .iter()
                .find(|&&(v, w)| (w + to_goal[v] - remaining).abs() <= tol)
                .expect("dijkstra potential admits a successor");
            path.push(self.nodes[v].id);
            length += w;
            u = v;
        }
        Ok((path, length))
    }

    /// Shortest-path length between two nodes.
    pub fn geodesic(&self, a: NodeId, b: NodeId) -> Result<f64> {
        self.shortest_path(a, b).map(|(_, l)| l)
    }

    fn dijkstra(&self, src: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.partial_cmp(&self.0).unwrap_or(Ordering::Equal).then(o.1.cmp(&self.1))
            }
        }
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, src)]);
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &(v, w) in &self.adjacency[u] {
                let nd = d + w;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Item(nd, v));
                }
            }
        }
        dist
    }

    /// Same graph with every position shifted by `t`.
    pub fn translated(&self, t: Vec3) -> Self {
        let mut nodes = self.nodes.clone();
        for n in &mut nodes {
            for k in 0..3 {
                n.position[k] += t[k];
            }
        }
        Self::from_parts(nodes, self.edges.clone(), self.room_count, self.object_vocab_size, self.room_vocab_size)
            .expect("translation keeps ids valid")
    }
}

/// Location of an invariant violation inside a world.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Node { index: usize, msg: String },
    Edge { index: usize, msg: String },
}

/// Gaussian noise applied to neighbor stubs, one std per channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationNoise {
    pub appearance: f64,
    pub geometry: f64,
    pub semantic: f64,
}

impl ObservationNoise {
    pub fn uniform(std: f64) -> Self {
        Self { appearance: std, geometry: std, semantic: std }
    }
}

/// What a neighbor looks like from the occupied node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborStub {
    pub id: NodeId,
    pub position: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
}

impl NeighborStub {
    pub fn feature(&self) -> Vec<f64> {
        let mut f = self.appearance.clone();
        f.extend_from_slice(&self.geometry);
        f.extend_from_slice(&self.semantic);
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub node_id: NodeId,
    pub position: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
    pub neighbor_stubs: Vec<NeighborStub>,
}

impl Observation {
    pub fn feature(&self) -> Vec<f64> {
        let mut f = self.appearance.clone();
        f.extend_from_slice(&self.geometry);
        f.extend_from_slice(&self.semantic);
        f
    }
}

fn noisy(values: &[f64], std: f64, rng: &mut crate::rng::Rng) -> Vec<f64> {
    if std == 0.0 {
        return values.to_vec();
    }
    let normal = Normal::new(0.0, std).expect("finite noise std");
    values.iter().map(|v| v + normal.sample(rng)).collect()
}

/// Full channels at `id` plus noisy partial views of each neighbor.
pub fn observe(
    world: &WorldGraph,
    id: NodeId,
    noise: &ObservationNoise,
    rng: &mut crate::rng::Rng,
) -> Result<Observation> {
    let node = world.node(id)?;
    let mut neighbor_stubs = Vec::new();
    for (nid, _) in world.neighbors(id)? {
        let n = world.node(nid)?;
        neighbor_stubs.push(NeighborStub {
            id: nid,
            position: n.position,
            appearance: noisy(&n.appearance, noise.appearance, rng),
            geometry: noisy(&n.geometry, noise.geometry, rng),
            semantic: noisy(&n.semantic, noise.semantic, rng),
        });
    }
    Ok(Observation {
        node_id: id,
        position: node.position,
        appearance: node.appearance.clone(),
        geometry: node.geometry.clone(),
        semantic: node.semantic.clone(),
        neighbor_stubs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    fn bare_node(id: NodeId, x: f64) -> WorldNode {
        WorldNode {
            id,
            position: [x, 0.0, 0.0],
            appearance: vec![1.0],
            geometry: vec![0.0],
            semantic: vec![1.0],
            room_type: 0,
        }
    }

    #[test]
    fn triangle_prefers_two_hops() {
        // lengths are not Euclidean here; shortest_path works on any weights
        let nodes = vec![bare_node(0, 0.0), bare_node(1, 1.0), bare_node(2, 2.0)];
        let w = WorldGraph::from_parts(nodes, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 3.0)], 1, 1, 1).unwrap();
        let (path, len) = w.shortest_path(0, 2).unwrap();
        assert_eq!(path, vec![0, 1, 2]);
        assert_eq!(len, 2.0);
    }

    #[test]
    fn same_node_path() {
        let w = WorldGraph::from_parts(vec![bare_node(5, 0.0)], vec![], 1, 1, 1).unwrap();
        assert_eq!(w.shortest_path(5, 5).unwrap(), (vec![5], 0.0));
    }

    #[test]
    fn ties_break_lexicographically() {
        // square 0-1-3 and 0-2-3 with equal lengths
        let nodes = vec![bare_node(0, 0.0), bare_node(2, 1.0), bare_node(1, 1.0), bare_node(3, 2.0)];
        let w = WorldGraph::from_parts(nodes, vec![(0, 2, 1.0), (2, 3, 1.0), (0, 1, 1.0), (1, 3, 1.0)], 1, 1, 1)
            .unwrap();
        assert_eq!(w.shortest_path(0, 3).unwrap().0, vec![0, 1, 3]);
        assert_eq!(w.shortest_path(3, 0).unwrap().0, vec![3, 1, 0]);
    }

    #[test]
    fn disconnected_pair_is_an_error() {
        let w = WorldGraph::from_parts(vec![bare_node(0, 0.0), bare_node(1, 1.0)], vec![], 1, 1, 1).unwrap();
        assert!(matches!(w.shortest_path(0, 1), Err(Error::NoPath { .. })));
        assert!(matches!(w.validate(), Err(Violation::Node { index: 1, .. })));
        assert!(matches!(w.shortest_path(0, 9), Err(Error::UnknownNode(9))));
    }

    #[test]
    fn observe_unknown_node() {
        let w = WorldGraph::from_parts(vec![bare_node(0, 0.0)], vec![], 1, 1, 1).unwrap();
        let mut rng = rng_from(0);
        assert!(matches!(observe(&w, 3, &ObservationNoise::default(), &mut rng), Err(Error::UnknownNode(3))));
        let obs = observe(&w, 0, &ObservationNoise::default(), &mut rng).unwrap();
        assert!(obs.neighbor_stubs.is_empty());
    }
}
