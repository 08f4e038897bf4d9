//! The agent's hybrid topological map.
//!
//! Real nodes keep their world ids. Imagination nodes get ids above
//! [`IMAGINATION_BASE`], and the single stop node is [`STOP_ID`]. Stop is
//! implicitly linked to every other node and sits at the Current position.
//! Edge lengths are never stored: they are recomputed from node positions, so
//! they always equal the Euclidean distance.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cosine, distance, heading, midpoint, sub, Vec3};
use crate::world::{NodeId, Observation};

pub const STOP_ID: NodeId = u64::MAX;
pub const IMAGINATION_BASE: NodeId = 1 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Visited,
    Current,
    Navigable,
    Imagination,
    Stop,
}

impl NodeKind {
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    /// Real nodes are everything the agent has actually seen, plus Stop.
    pub fn is_real(self) -> bool {
        self != NodeKind::Imagination
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Completeness {
    Full,
    Partial,
    Imagined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: NodeId,
    pub kind: NodeKind,
    pub feature: Vec<f64>,
    pub position: Vec3,
    pub last_visit_step: usize,
    pub completeness: Completeness,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryConfig {
    /// Upper bound on Imagination nodes after a prune.
    pub imagination_cap: usize,
    /// Duplicate threshold on the pruning criterion.
    pub tau: f64,
    /// Positions are divided by this before the squared-error term.
    pub position_scale: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self { imagination_cap: 4, tau: 0.9, position_scale: 1.0 }
    }
}

/// `cos(f_i, f_j) - MSE(p_i, p_j)` with the MSE averaged over the 3 coordinates.
pub fn pruning_criterion(a: &MemoryNode, b: &MemoryNode) -> Result<f64> {
    pruning_criterion_scaled(a, b, 1.0)
}

pub fn pruning_criterion_scaled(a: &MemoryNode, b: &MemoryNode, position_scale: f64) -> Result<f64> {
    let cos = cosine(&a.feature, &b.feature).ok_or(Error::UndefinedCosine)?;
    let d = sub(&a.position, &b.position);
    let mse = d.iter().map(|x| (x / position_scale).powi(2)).sum::<f64>() / 3.0;
    Ok(cos - mse)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingInputs {
    pub feature: Vec<f64>,
    /// `(dx, dy, dz, distance, heading)` relative to the Current node.
    pub location: [f64; 5],
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryMap {
    nodes: BTreeMap<NodeId, MemoryNode>,
    adjacency: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub config: MemoryConfig,
    current: Option<NodeId>,
    next_imagination: NodeId,
    visits: Vec<(NodeId, usize)>,
    feature_dim: Option<usize>,
}

impl MemoryMap {
    pub fn new(config: MemoryConfig) -> Self {
        Self {
            nodes: BTreeMap::new(),
            adjacency: BTreeMap::new(),
            config,
            current: None,
            next_imagination: IMAGINATION_BASE,
            visits: Vec::new(),
            feature_dim: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&MemoryNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Nodes in ascending id order (Stop last).
    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn ids_of(&self, kind: NodeKind) -> Vec<NodeId> {
        self.nodes.values().filter(|n| n.kind == kind).map(|n| n.id).collect()
    }

    pub fn count(&self, kind: NodeKind) -> usize {
        self.nodes.values().filter(|n| n.kind == kind).count()
    }

    pub fn current(&self) -> Option<&MemoryNode> {
        self.current.and_then(|id| self.nodes.get(&id))
    }

    pub fn current_id(&self) -> Option<NodeId> {
        self.current
    }

    /// `(node, step)` for every integration, oldest first.
    pub fn visits(&self) -> &[(NodeId, usize)] {
        &self.visits
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    /// Stored neighbors; Stop is adjacent to everything but is not listed.
    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adjacency.get(&id).into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        if a == b {
            return false;
        }
        if a == STOP_ID || b == STOP_ID {
            return self.contains(a) && self.contains(b);
        }
        self.adjacency.get(&a).is_some_and(|s| s.contains(&b))
    }

    /// Explicit edges `(a, b, length)` with `a < b`; Stop edges are implicit.
    pub fn edges(&self) -> Vec<(NodeId, NodeId, f64)> {
        let mut out = Vec::new();
        for (&a, set) in &self.adjacency {
            for &b in set.range(a + 1..) {
                out.push((a, b, distance(&self.nodes[&a].position, &self.nodes[&b].position)));
            }
        }
        out
    }

    fn link(&mut self, a: NodeId, b: NodeId) {
        if a == b || a == STOP_ID || b == STOP_ID {
            return;
        }
        self.adjacency.entry(a).or_default().insert(b);
        self.adjacency.entry(b).or_default().insert(a);
    }

    fn unlink_all(&mut self, id: NodeId) -> BTreeSet<NodeId> {
        let set = self.adjacency.remove(&id).unwrap_or_default();
        for n in &set {
            if let Some(s) = self.adjacency.get_mut(n) {
                s.remove(&id);
            }
        }
        set
    }

    fn remove_node(&mut self, id: NodeId) {
        self.unlink_all(id);
        self.nodes.remove(&id);
    }

    fn check_dim(&mut self, len: usize) -> Result<()> {
        match self.feature_dim {
            None => {
                self.feature_dim = Some(len);
                Ok(())
            }
            Some(d) if d == len => Ok(()),
            Some(d) => Err(Error::Shape(format!("feature length {len}, map uses {d}"))),
        }
    }

    fn place_stop(&mut self, position: Vec3) {
        let dim = self.feature_dim.unwrap_or(0);
        let stop = self.nodes.entry(STOP_ID).or_insert_with(|| MemoryNode {
            id: STOP_ID,
            kind: NodeKind::Stop,
            feature: vec![0.0; dim],
            position,
            last_visit_step: 0,
            completeness: Completeness::Full,
        });
        stop.position = position;
    }

    /// Move the agent to `obs.node_id` and fold in what it sees.
    pub fn integrate_observation(&mut self, obs: &Observation, step: usize) -> Result<()> {
        if step == 0 {
            return Err(Error::Domain("observation steps start at 1".into()));
        }
        if let Some(prev) = self.current {
            if prev != obs.node_id && !self.has_edge(prev, obs.node_id) {
                return Err(Error::IllegalTransition { from: Some(prev), to: obs.node_id });
            }
        }
        let full = obs.feature();
        self.check_dim(full.len())?;
        for stub in &obs.neighbor_stubs {
            let len = stub.appearance.len() + stub.geometry.len() + stub.semantic.len();
            if len != full.len() {
                return Err(Error::Shape(format!("stub {} has feature length {len}", stub.id)));
            }
        }

        if let Some(prev) = self.current.take() {
            if let Some(n) = self.nodes.get_mut(&prev) {
                n.kind = NodeKind::Visited;
            }
        }
        match self.nodes.get_mut(&obs.node_id) {
            Some(n) if matches!(n.kind, NodeKind::Visited | NodeKind::Current) => {
                n.kind = NodeKind::Current;
                n.last_visit_step = step;
            }
            Some(n) => {
                n.kind = NodeKind::Current;
                n.feature = full;
                n.position = obs.position;
                n.last_visit_step = step;
                n.completeness = Completeness::Full;
            }
            None => {
                self.nodes.insert(
                    obs.node_id,
                    MemoryNode {
                        id: obs.node_id,
                        kind: NodeKind::Current,
                        feature: full,
                        position: obs.position,
                        last_visit_step: step,
                        completeness: Completeness::Full,
                    },
                );
            }
        }
        self.current = Some(obs.node_id);
        self.visits.push((obs.node_id, step));

        for stub in &obs.neighbor_stubs {
            let f = stub.feature();
            match self.nodes.get_mut(&stub.id) {
                None => {
                    self.nodes.insert(
                        stub.id,
                        MemoryNode {
                            id: stub.id,
                            kind: NodeKind::Navigable,
                            feature: f,
                            position: stub.position,
                            last_visit_step: 0,
                            completeness: Completeness::Partial,
                        },
                    );
                }
                Some(n) if n.kind == NodeKind::Navigable => {
                    for (a, b) in n.feature.iter_mut().zip(&f) {
                        *a = (*a + b) / 2.0;
                    }
                    n.position = stub.position;
                }
                Some(_) => {}
            }
            self.link(obs.node_id, stub.id);
        }
        self.place_stop(obs.position);
        Ok(())
    }

    /// Add an Imagination node linked to `parent`; returns its id.
    pub fn add_imagination(&mut self, feature: Vec<f64>, position: Vec3, parent: Option<NodeId>) -> Result<NodeId> {
        self.check_dim(feature.len())?;
        if let Some(p) = parent {
            self.node(p)?;
        }
        let id = self.next_imagination;
        self.next_imagination += 1;
        self.nodes.insert(
            id,
            MemoryNode {
                id,
                kind: NodeKind::Imagination,
                feature,
                position,
                last_visit_step: 0,
                completeness: Completeness::Imagined,
            },
        );
        if let Some(p) = parent {
            self.link(p, id);
        }
        Ok(id)
    }

    fn criterion(&self, a: NodeId, b: NodeId) -> Option<f64> {
        pruning_criterion_scaled(&self.nodes[&a], &self.nodes[&b], self.config.position_scale).ok()
    }

    /// Merge near-duplicate Imagination nodes, then enforce the cap.
    pub fn prune_imagination(&mut self, tau: f64) {
        loop {
            let imag = self.ids_of(NodeKind::Imagination);
            let mut best: Option<(f64, NodeId, NodeId)> = None;
            for &i in &imag {
                for (&j, nj) in &self.nodes {
                    if j == i || nj.kind == NodeKind::Stop {
                        continue;
                    }
                    // each Imagination pair once
                    if nj.kind == NodeKind::Imagination && j < i {
                        continue;
                    }
                    let Some(c) = self.criterion(i, j) else { continue };
                    if c <= tau {
                        continue;
                    }
                    let key = (i.min(j), i.max(j));
                    let better = match best {
                        None => true,
                        Some((bc, ba, bb)) => c > bc || (c == bc && key < (ba, bb)),
                    };
                    if better {
                        best = Some((c, key.0, key.1));
                    }
                }
            }
            let Some((_, a, b)) = best else { break };
            self.merge_pair(a, b);
        }

        let imag = self.ids_of(NodeKind::Imagination);
        let cap = self.config.imagination_cap;
        if imag.len() > cap {
            let cur = self.current;
            let mut ranked: Vec<(f64, NodeId)> = imag
                .iter()
                .map(|&i| (cur.and_then(|c| self.criterion(i, c)).unwrap_or(f64::NEG_INFINITY), i))
                .collect();
            ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            for &(_, id) in &ranked[cap..] {
                self.remove_node(id);
            }
        }
    }

    fn merge_pair(&mut self, a: NodeId, b: NodeId) {
        let (ka, kb) = (self.nodes[&a].kind, self.nodes[&b].kind);
        let (keep, gone) = match (ka, kb) {
            (NodeKind::Imagination, NodeKind::Imagination) => (a.min(b), a.max(b)),
            (NodeKind::Imagination, _) => (b, a),
            _ => (a, b),
        };
        let kept_kind = self.nodes[&keep].kind;
        let gone_node = self.nodes[&gone].clone();
        if matches!(kept_kind, NodeKind::Imagination | NodeKind::Navigable) {
            let n = self.nodes.get_mut(&keep).expect("kept node exists");
            for (x, y) in n.feature.iter_mut().zip(&gone_node.feature) {
                *x = (*x + y) / 2.0;
            }
            n.position = midpoint(&n.position, &gone_node.position);
        }
        // Visited and Current nodes hold fixed observations: the imagined
        // duplicate is absorbed without touching them.
        let links = self.unlink_all(gone);
        self.nodes.remove(&gone);
        let real_keep = kept_kind != NodeKind::Imagination;
        for n in links {
            // an imagined link between two real nodes is not a walkable edge
            if real_keep && self.nodes.get(&n).is_some_and(|x| x.kind != NodeKind::Imagination) {
                continue;
            }
            self.link(keep, n);
        }
    }

    /// Feature, relative location and step code for `id`.
    pub fn embedding_inputs(&self, id: NodeId, current_step: usize) -> Result<EmbeddingInputs> {
        let node = self.node(id)?;
        let origin = self.current().map(|c| c.position).unwrap_or(node.position);
        let d = sub(&node.position, &origin);
        let dist = distance(&node.position, &origin);
        let h = if dist == 0.0 { 0.0 } else { heading(&origin, &node.position) };
        let step = match node.kind {
            NodeKind::Current => current_step,
            NodeKind::Visited => node.last_visit_step,
            _ => 0,
        };
        Ok(EmbeddingInputs { feature: node.feature.clone(), location: [d[0], d[1], d[2], dist, h], step })
    }

    /// Shortest-hop counts between the listed nodes over stored edges. Stop is
    /// one hop from every other node; `None` means disconnected.
    pub fn hop_matrix(&self, order: &[NodeId]) -> Vec<Vec<Option<usize>>> {
        let mut out = vec![vec![None; order.len()]; order.len()];
        for (i, &src) in order.iter().enumerate() {
            let mut hops: BTreeMap<NodeId, usize> = BTreeMap::new();
            if src != STOP_ID {
                hops.insert(src, 0);
                let mut queue = VecDeque::from([src]);
                while let Some(u) = queue.pop_front() {
                    let h = hops[&u];
                    for v in self.neighbors(u) {
                        if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(v) {
                            e.insert(h + 1);
                            queue.push_back(v);
                        }
                    }
                }
            }
            for (j, &dst) in order.iter().enumerate() {
                out[i][j] = if src == dst {
                    Some(0)
                } else if src == STOP_ID || dst == STOP_ID {
                    Some(1)
                } else {
                    hops.get(&dst).copied()
                };
            }
        }
        out
    }

    /// Shortest route from Current to `target` through real edges. Intermediate
    /// nodes must be Visited or Current; the route includes both endpoints.
    pub fn route(&self, target: NodeId) -> Result<Vec<NodeId>> {
        let start = self.current.ok_or(Error::Routing(target))?;
        self.node(target)?;
        if start == target {
            return Ok(vec![start]);
        }
        #[derive(PartialEq)]
        struct Item(f64, NodeId);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> std::cmp::Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        let mut dist: BTreeMap<NodeId, f64> = BTreeMap::from([(start, 0.0)]);
        let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut heap = BinaryHeap::from([Item(0.0, start)]);
        while let Some(Item(d, u)) = heap.pop() {
            if d > dist[&u] {
                continue;
            }
            if u == target {
                break;
            }
            let passable = u == start || matches!(self.nodes[&u].kind, NodeKind::Visited | NodeKind::Current);
            if !passable {
                continue;
            }
            for v in self.neighbors(u) {
                let kind = self.nodes[&v].kind;
                if kind == NodeKind::Imagination {
                    continue;
                }
                let nd = d + distance(&self.nodes[&u].position, &self.nodes[&v].position);
                if dist.get(&v).is_none_or(|&old| nd < old) {
                    dist.insert(v, nd);
                    prev.insert(v, u);
                    heap.push(Item(nd, v));
                }
            }
        }
        if !prev.contains_key(&target) {
            return Err(Error::Routing(target));
        }
        let mut path = vec![target];
        let mut at = target;
        while let Some(&p) = prev.get(&at) {
            path.push(p);
            at = p;
        }
        path.reverse();
        Ok(path)
    }

    /// Structural invariants; used by tests and debug assertions.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Ok(());
        }
        let currents = self.count(NodeKind::Current);
        let stops = self.count(NodeKind::Stop);
        if currents != 1 || stops != 1 {
            return Err(format!("{currents} Current and {stops} Stop nodes"));
        }
        for n in self.nodes.values() {
            let ok = match n.kind {
                NodeKind::Visited | NodeKind::Current => n.completeness == Completeness::Full && n.last_visit_step >= 1,
                NodeKind::Navigable => n.completeness == Completeness::Partial,
                NodeKind::Imagination => n.completeness == Completeness::Imagined && n.last_visit_step == 0,
                NodeKind::Stop => true,
            };
            if !ok {
                return Err(format!("node {} has inconsistent kind/completeness/step", n.id));
            }
        }
        for (a, set) in &self.adjacency {
            for b in set {
                if !self.nodes.contains_key(a) || !self.nodes.contains_key(b) {
                    return Err(format!("edge ({a}, {b}) dangles"));
                }
                if !self.adjacency.get(b).is_some_and(|s| s.contains(a)) {
                    return Err(format!("edge ({a}, {b}) is one-sided"));
                }
            }
        }
        Ok(())
    }

    /// JSON snapshot in the world layout, with kind, last_visit_step and
    /// completeness per node. `appearance_dim`/`geometry_dim` split the feature.
    pub fn snapshot(&self, appearance_dim: usize, geometry_dim: usize) -> MemorySnapshot {
        let nodes = self
            .nodes
            .values()
            .map(|n| {
                let a = appearance_dim.min(n.feature.len());
                let g = (appearance_dim + geometry_dim).min(n.feature.len());
                SnapshotNode {
                    id: n.id,
                    position: n.position,
                    appearance: n.feature[..a].to_vec(),
                    geometry: n.feature[a..g].to_vec(),
                    semantic: n.feature[g..].to_vec(),
                    kind: n.kind,
                    last_visit_step: n.last_visit_step,
                    completeness: n.completeness,
                }
            })
            .collect();
        MemorySnapshot { nodes, edges: self.edges() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub position: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
    pub kind: NodeKind,
    pub last_visit_step: usize,
    pub completeness: Completeness,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub nodes: Vec<SnapshotNode>,
    pub edges: Vec<(NodeId, NodeId, f64)>,
}
