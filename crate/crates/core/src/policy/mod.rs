//! Decision core: cross-modal scoring of memory nodes, reality/imagination
//! score fusion, action selection and the imitation loss.

mod checkpoint;
mod gradcheck;
mod model;

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, GradCheckReport};
pub use model::{candidate_rows, Forward, GammaMode, GraphInput, Policy, PolicyConfig, HOP_BUCKETS, LOCATION_DIM};

use crate::error::{Error, Result};
use crate::geometry::distance;
use crate::memory::{MemoryMap, NodeKind, STOP_ID};
use crate::rng::Rng;
use crate::tape::{log_sum_exp, softmax, Graph};
use crate::world::NodeId;

/// Scores of one decision step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub s_r: BTreeMap<NodeId, f64>,
    pub s_i: BTreeMap<NodeId, f64>,
    pub gamma: f64,
    pub fused: BTreeMap<NodeId, f64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Stop,
    /// Move to a Navigable node; `route` starts at Current and ends at `target`.
    GoTo { target: NodeId, route: Vec<NodeId> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SelectMode {
    Greedy,
    Sample(f64),
}

impl Policy {
    /// Score a map without recording gradients.
    pub fn score(&self, map: &MemoryMap, step: usize, tokens: &[usize], gamma: GammaMode) -> Result<ScoreSet> {
        let input = GraphInput::from_map(map, step)?;
        let mut g = Graph::new(&self.params);
        let instr = self.encode_instruction(&mut g, tokens)?;
        let f = self.forward(&mut g, &input, instr, gamma)?;
        Ok(score_set(&g, &f))
    }
}

/// Read a [`Forward`] off the tape.
pub fn score_set(g: &Graph, f: &Forward) -> ScoreSet {
    let row = |v| g.value(v).data.clone();
    let s_r = f.candidates.iter().copied().zip(row(f.s_r)).collect();
    let s_i = match f.s_i {
        Some(v) => f.imagination.iter().copied().zip(row(v)).collect(),
        None => BTreeMap::new(),
    };
    let fused = f.candidates.iter().copied().zip(row(f.fused)).collect();
    ScoreSet { s_r, s_i, gamma: g.scalar(f.gamma), fused }
}

/// `ŝ(n) = s_r(n) + γ Σ_{i ∈ S(n)} s_i(i)`, where `S(n)` holds the
/// Imagination nodes whose nearest Navigable node is `n` (ties by id).
pub fn fuse_scores(
    s_r: &BTreeMap<NodeId, f64>,
    s_i: &BTreeMap<NodeId, f64>,
    gamma: f64,
    map: &MemoryMap,
) -> Result<BTreeMap<NodeId, f64>> {
    let nav = map.ids_of(NodeKind::Navigable);
    let mut expected: Vec<NodeId> = nav.clone();
    if map.contains(STOP_ID) {
        expected.push(STOP_ID);
    }
    if !s_r.keys().copied().eq(expected.iter().copied()) {
        return Err(Error::Fusion("real scores must cover exactly the Navigable nodes and Stop".into()));
    }
    if !s_i.keys().copied().eq(map.ids_of(NodeKind::Imagination)) {
        return Err(Error::Fusion("imagination scores must cover exactly the Imagination nodes".into()));
    }
    if s_i.is_empty() {
        return Ok(s_r.clone());
    }
    if nav.is_empty() {
        return Err(Error::Fusion("imagination nodes present but no navigable node".into()));
    }
    let mut sums: BTreeMap<NodeId, f64> = BTreeMap::new();
    for (&i, &s) in s_i {
        let p = map.node(i)?.position;
        let nearest = *nav
            .iter()
            .min_by(|&&a, &&b| {
                let da = distance(&p, &map.node(a).expect("navigable").position);
                let db = distance(&p, &map.node(b).expect("navigable").position);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("nonempty");
        *sums.entry(nearest).or_insert(0.0) += s;
    }
    Ok(s_r.iter().map(|(&n, &s)| (n, sums.get(&n).map_or(s, |&agg| s + gamma * agg))).collect())
}

/// Greedy argmax (ties to the lowest id) or temperature sampling over the
/// fused scores, with a route through known real edges.
pub fn select_action(fused: &BTreeMap<NodeId, f64>, map: &MemoryMap, mode: SelectMode, rng: &mut Rng) -> Result<Action> {
    if fused.is_empty() {
        return Err(Error::Domain("no candidate scores".into()));
    }
    let ids: Vec<NodeId> = fused.keys().copied().collect();
    let target = match mode {
        SelectMode::Greedy => {
            let mut best = ids[0];
            for &id in &ids[1..] {
                if fused[&id] > fused[&best] {
                    best = id;
                }
            }
            best
        }
        SelectMode::Sample(t) => {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("sampling temperature {t} must be positive")));
            }
            let logits: Vec<f64> = ids.iter().map(|id| fused[id] / t).collect();
            let probs = softmax(&logits);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = *ids.last().expect("nonempty");
            for (id, p) in ids.iter().zip(&probs) {
                acc += p;
                if u < acc {
                    pick = *id;
                    break;
                }
            }
            pick
        }
    };
    if target == STOP_ID {
        return Ok(Action::Stop);
    }
    if map.node(target)?.kind != NodeKind::Navigable {
        return Err(Error::Routing(target));
    }
    Ok(Action::GoTo { target, route: map.route(target)? })
}

/// Cross-entropy of `softmax(ŝ)` against the expert's next node.
pub fn sap_loss(fused: &BTreeMap<NodeId, f64>, expert: NodeId) -> Result<f64> {
    let target = *fused
        .get(&expert)
        .ok_or_else(|| Error::Supervision(format!("expert node {expert} is not a candidate")))?;
    let scores: Vec<f64> = fused.values().copied().collect();
    Ok(log_sum_exp(&scores) - target)
}
