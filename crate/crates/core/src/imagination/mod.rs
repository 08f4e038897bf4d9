//! Recurrent imagination: a shallow tree of generated viewpoints grown from
//! the Navigable frontier, merged back into memory as Imagination nodes.
//!
//! All channels live in the absolute world frame, where heading 0 points
//! along +y; canonicalising to heading 0 is therefore the identity.

mod heatmap;
mod learned;
mod room;

pub use heatmap::{
    bin_center, bin_of, heatmap_gt, nms_peaks, waypoint_loss, Heatmap, WaypointModel, ANGULAR_BIN, ANGULAR_BINS, CELLS,
    RADIAL_BIN, RADIAL_BINS, RANGE,
};
pub use learned::{clamp_warnings, inpaint_lite_loss, LearnedImaginer, TransitionSample};
pub use room::{room_loss, room_reweight, RoomModel, RoomWeightDict};

use std::collections::VecDeque;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, heading, offset, Vec3};
use crate::memory::{MemoryMap, NodeKind};
use crate::rng::Rng;
use crate::world::{FeatureLayout, NodeId, WorldGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImaginerKind {
    Oracle,
    Learned,
    Null,
}

/// Run-config block `imaginer`: `{ "kind": "oracle", "noise": 0.1, "seed": 7 }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImaginerConfig {
    pub kind: ImaginerKind,
    /// σ_im for the oracle.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ImaginerConfig {
    fn default() -> Self {
        Self { kind: ImaginerKind::Oracle, noise: 0.1, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImaginationConfig {
    /// Expansions per step (M).
    pub depth: usize,
    /// History length (K).
    pub history: usize,
    /// Waypoints kept per generated node.
    pub max_waypoints: usize,
    /// NMS window (angular, radial) in bins.
    pub nms_window: (usize, usize),
    /// Weight on each room's prior objects in the default dictionary.
    pub room_weight: f64,
}

impl Default for ImaginationConfig {
    fn default() -> Self {
        Self { depth: 2, history: 2, max_waypoints: 4, nms_window: (5, 3), room_weight: 2.0 }
    }
}

impl ImaginationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::Config("imagination history K must be at least 1".into()));
        }
        if self.max_waypoints == 0 {
            return Err(Error::Config("max_waypoints must be at least 1".into()));
        }
        if self.nms_window.0 % 2 == 0 || self.nms_window.1 % 2 == 0 {
            return Err(Error::Config("NMS window must be odd on both axes".into()));
        }
        if !(self.room_weight >= 0.0) {
            return Err(Error::Config("room weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub history: VecDeque<HistoryEntry>,
    pub appearance: Vec<f64>,
}

/// What a generated node hangs off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parent {
    Memory(NodeId),
    Generated(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrontierEntry {
    pub position: Vec3,
    pub branch: usize,
    pub parent: Parent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedNode {
    pub position: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
    pub depth: usize,
    pub parent: Parent,
}

impl GeneratedNode {
    pub fn feature(&self) -> Vec<f64> {
        FeatureLayout::join(&self.appearance, &self.geometry, &self.semantic)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImaginationTree {
    pub step_origin: usize,
    pub depth: usize,
    pub max_depth: usize,
    pub history_len: usize,
    pub layout: FeatureLayout,
    pub branches: Vec<Branch>,
    pub frontier: Vec<FrontierEntry>,
    pub generated: Vec<GeneratedNode>,
}

/// Root branch from the last `K` visits; frontier at every Navigable node.
pub fn init_tree(map: &MemoryMap, layout: FeatureLayout, cfg: &ImaginationConfig, step: usize) -> Result<ImaginationTree> {
    let current = map.current().ok_or_else(|| Error::Domain("memory has no Current node".into()))?;
    if current.feature.len() != layout.len() {
        return Err(Error::Shape(format!("memory features have {} values, layout {}", current.feature.len(), layout.len())));
    }
    let visits = map.visits();
    let mut history = VecDeque::with_capacity(cfg.history);
    for &(id, _) in &visits[visits.len().saturating_sub(cfg.history)..] {
        let n = map.node(id)?;
        let (_, g, s) = layout.split(&n.feature);
        history.push_back(HistoryEntry { geometry: g.to_vec(), semantic: s.to_vec(), position: n.position });
    }
    let appearance = layout.split(&current.feature).0.to_vec();
    let frontier = map
        .ids_of(NodeKind::Navigable)
        .into_iter()
        .map(|id| FrontierEntry { position: map.node(id).expect("listed id").position, branch: 0, parent: Parent::Memory(id) })
        .collect();
    Ok(ImaginationTree {
        step_origin: step,
        depth: 0,
        max_depth: cfg.depth,
        history_len: cfg.history,
        layout,
        branches: vec![Branch { history, appearance }],
        frontier,
        generated: Vec::new(),
    })
}

/// Channel generator standing in for the image-space generators.
#[derive(Clone, Copy, Debug)]
pub enum Imaginer<'a> {
    /// Ground truth of the nearest world node plus Gaussian noise σ.
    Oracle { world: &'a WorldGraph, noise: f64 },
    Learned(&'a LearnedImaginer),
    Null,
}

impl Imaginer<'_> {
    /// Geometry and semantic at `target`; `None` when nothing is generated.
    pub fn structured(&self, branch: &Branch, target: &Vec3, rng: &mut Rng) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        match *self {
            Imaginer::Null => Ok(None),
            Imaginer::Learned(m) => {
                let h: Vec<HistoryEntry> = branch.history.iter().cloned().collect();
                Ok(Some(m.structured(&h, target)))
            }
            Imaginer::Oracle { world, noise } => {
                let n = world.nearest_node(target).ok_or_else(|| Error::Generation("empty world".into()))?;
                if noise == 0.0 {
                    return Ok(Some((n.geometry.clone(), n.semantic.clone())));
                }
                let normal = gaussian(noise)?;
                let geo = n.geometry.iter().map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)).collect();
                let raw: Vec<f64> = n.semantic.iter().map(|v| (v + normal.sample(rng)).max(0.0)).collect();
                let total: f64 = raw.iter().sum();
                let sem = if total > 0.0 {
                    raw.iter().map(|v| v / total).collect()
                } else {
                    vec![1.0 / raw.len() as f64; raw.len()]
                };
                Ok(Some((geo, sem)))
            }
        }
    }

    /// Appearance at `target` given the parent's appearance and the new structured channels.
    pub fn appearance(
        &self,
        parent: &[f64],
        geometry: &[f64],
        semantic: &[f64],
        target: &Vec3,
        rng: &mut Rng,
    ) -> Result<Vec<f64>> {
        match *self {
            Imaginer::Null => Err(Error::Generation("null imaginer produces no appearance".into())),
            Imaginer::Learned(m) => Ok(m.appearance(parent, geometry, semantic)),
            Imaginer::Oracle { world, noise } => {
                let n = world.nearest_node(target).ok_or_else(|| Error::Generation("empty world".into()))?;
                if noise == 0.0 {
                    return Ok(n.appearance.clone());
                }
                let normal = gaussian(noise)?;
                Ok(n.appearance.iter().map(|v| v + normal.sample(rng)).collect())
            }
        }
    }
}

fn gaussian(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::Config(format!("imaginer noise {std}: {e}")))
}

/// Where a generated node's next positions come from.
#[derive(Clone, Copy, Debug)]
pub enum WaypointSource<'a> {
    /// Heatmap model followed by NMS.
    Model(&'a WaypointModel),
    /// True neighbors of the nearest world node.
    GroundTruth(&'a WorldGraph),
    /// Uniform heading, distance in [0.5, 3] m.
    Random,
}

impl WaypointSource<'_> {
    pub fn waypoints(
        &self,
        position: &Vec3,
        appearance: &[f64],
        geometry: &[f64],
        cfg: &ImaginationConfig,
        rng: &mut Rng,
    ) -> Result<Vec<Vec3>> {
        match *self {
            WaypointSource::Model(m) => {
                let h = m.predict_heatmap(appearance, geometry)?;
                Ok(nms_peaks(&h, cfg.max_waypoints, cfg.nms_window)
                    .into_iter()
                    .map(|(hd, d)| offset(position, hd, d))
                    .collect())
            }
            WaypointSource::GroundTruth(world) => {
                let n = world.nearest_node(position).ok_or_else(|| Error::Generation("empty world".into()))?;
                let mut out = Vec::new();
                for (id, _) in world.neighbors(n.id)?.into_iter().take(cfg.max_waypoints) {
                    let p = world.node(id)?.position;
                    // keep the parent's height, as model waypoints do
                    out.push(offset(position, heading(&n.position, &p), distance(&n.position, &p)));
                }
                Ok(out)
            }
            WaypointSource::Random => Ok((0..cfg.max_waypoints)
                .map(|_| {
                    let hd = rng.random_range(0.0..std::f64::consts::TAU);
                    let d = rng.random_range(0.5..=RANGE);
                    offset(position, hd, d)
                })
                .collect()),
        }
    }
}

/// Optional room conditioning: a classifier plus the weight dictionary.
#[derive(Clone, Copy, Debug)]
pub struct RoomConditioning<'a> {
    pub model: &'a RoomModel,
    pub weights: &'a RoomWeightDict,
}

/// One expansion over the whole frontier. Waypoints are only predicted while
/// another expansion is still allowed.
pub fn expand_tree(
    tree: &mut ImaginationTree,
    imaginer: &Imaginer,
    waypoints: &WaypointSource,
    room: Option<RoomConditioning>,
    cfg: &ImaginationConfig,
    rng: &mut Rng,
) -> Result<()> {
    if tree.depth >= tree.max_depth {
        return Err(Error::ExpansionExhausted(tree.max_depth));
    }
    let frontier = std::mem::take(&mut tree.frontier);
    let mut next = Vec::new();
    let depth = tree.depth + 1;
    for entry in frontier {
        let branch = &tree.branches[entry.branch];
        let Some((geometry, mut semantic)) = imaginer.structured(branch, &entry.position, rng)? else {
            continue;
        };
        if let Some(rc) = room {
            let mut x = semantic.clone();
            x.extend_from_slice(&geometry);
            let rt = rc.model.predict(&x)?;
            semantic = room_reweight(&semantic, rt, rc.weights)?;
        }
        let appearance = imaginer.appearance(&branch.appearance, &geometry, &semantic, &entry.position, rng)?;

        let mut history = branch.history.clone();
        if history.len() == tree.history_len {
            history.pop_front();
        }
        history.push_back(HistoryEntry { geometry: geometry.clone(), semantic: semantic.clone(), position: entry.position });
        let b = tree.branches.len();
        tree.branches.push(Branch { history, appearance: appearance.clone() });

        let g = tree.generated.len();
        if depth < tree.max_depth {
            for p in waypoints.waypoints(&entry.position, &appearance, &geometry, cfg, rng)? {
                next.push(FrontierEntry { position: p, branch: b, parent: Parent::Generated(g) });
            }
        }
        tree.generated.push(GeneratedNode {
            position: entry.position,
            appearance,
            geometry,
            semantic,
            depth,
            parent: entry.parent,
        });
    }
    tree.frontier = next;
    tree.depth = depth;
    Ok(())
}

/// Expand until depth M or until the frontier empties.
pub fn grow_tree(
    tree: &mut ImaginationTree,
    imaginer: &Imaginer,
    waypoints: &WaypointSource,
    room: Option<RoomConditioning>,
    cfg: &ImaginationConfig,
    rng: &mut Rng,
) -> Result<()> {
    while tree.depth < tree.max_depth && !tree.frontier.is_empty() {
        expand_tree(tree, imaginer, waypoints, room, cfg, rng)?;
    }
    Ok(())
}

/// Add every generated node as an Imagination node linked to its parent,
/// then prune with the map's own threshold and cap. Returns the ids assigned
/// before pruning.
pub fn merge_into_memory(map: &mut MemoryMap, tree: &ImaginationTree) -> Result<Vec<NodeId>> {
    let mut ids: Vec<NodeId> = Vec::with_capacity(tree.generated.len());
    for n in &tree.generated {
        let parent = match n.parent {
            Parent::Memory(id) => map.contains(id).then_some(id),
            Parent::Generated(j) => Some(ids[j]),
        };
        ids.push(map.add_imagination(n.feature(), n.position, parent)?);
    }
    if !ids.is_empty() {
        let tau = map.config.tau;
        map.prune_imagination(tau);
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::MemoryConfig;
    use crate::rng::rng_from;
    use crate::world::{generate_world, observe, ObservationNoise, WorldConfig};

    fn start(world: &WorldGraph, cap: usize) -> MemoryMap {
        let mut map = MemoryMap::new(MemoryConfig { imagination_cap: cap, ..MemoryConfig::default() });
        let obs = observe(world, world.nodes[0].id, &ObservationNoise::default(), &mut rng_from(0)).unwrap();
        map.integrate_observation(&obs, 1).unwrap();
        map
    }

    #[test]
    fn short_history_and_frontier() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let map = start(&world, 4);
        let tree = init_tree(&map, world.layout(), &ImaginationConfig::default(), 1).unwrap();
        assert_eq!(tree.branches[0].history.len(), 1);
        assert_eq!(tree.frontier.len(), map.count(NodeKind::Navigable));
    }

    #[test]
    fn null_imaginer_generates_nothing() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let map = start(&world, 4);
        let cfg = ImaginationConfig::default();
        let mut tree = init_tree(&map, world.layout(), &cfg, 1).unwrap();
        expand_tree(&mut tree, &Imaginer::Null, &WaypointSource::Random, None, &cfg, &mut rng_from(1)).unwrap();
        assert!(tree.generated.is_empty());
        assert!(tree.frontier.is_empty());
    }

    #[test]
    fn exhausted_depth() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let map = start(&world, 4);
        let cfg = ImaginationConfig { depth: 1, ..ImaginationConfig::default() };
        let mut tree = init_tree(&map, world.layout(), &cfg, 1).unwrap();
        let im = Imaginer::Oracle { world: &world, noise: 0.0 };
        let wp = WaypointSource::GroundTruth(&world);
        expand_tree(&mut tree, &im, &wp, None, &cfg, &mut rng_from(1)).unwrap();
        assert!(matches!(
            expand_tree(&mut tree, &im, &wp, None, &cfg, &mut rng_from(1)),
            Err(Error::ExpansionExhausted(1))
        ));
    }

    #[test]
    fn zero_noise_oracle_is_exact() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let map = start(&world, 4);
        let cfg = ImaginationConfig::default();
        let mut tree = init_tree(&map, world.layout(), &cfg, 1).unwrap();
        let im = Imaginer::Oracle { world: &world, noise: 0.0 };
        expand_tree(&mut tree, &im, &WaypointSource::GroundTruth(&world), None, &cfg, &mut rng_from(1)).unwrap();
        for g in &tree.generated {
            let truth = world.nearest_node(&g.position).unwrap();
            assert_eq!(g.feature(), truth.feature());
        }
    }

    #[test]
    fn noisy_semantic_stays_a_distribution() {
        let world = generate_world(&WorldConfig::default()).unwrap();
        let map = start(&world, 4);
        let cfg = ImaginationConfig::default();
        let mut tree = init_tree(&map, world.layout(), &cfg, 1).unwrap();
        let im = Imaginer::Oracle { world: &world, noise: 0.5 };
        expand_tree(&mut tree, &im, &WaypointSource::Random, None, &cfg, &mut rng_from(2)).unwrap();
        for g in &tree.generated {
            assert!((g.semantic.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(g.semantic.iter().all(|&v| v >= 0.0));
        }
    }
}
