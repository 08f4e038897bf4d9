//! Self-checks exposed on the command line: the policy gradient check and
//! the waypoint heatmap round trip.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::imagination::{bin_of, heatmap_gt, nms_peaks, ANGULAR_BIN, ANGULAR_BINS, RADIAL_BIN, RADIAL_BINS};
use crate::memory::{MemoryConfig, MemoryMap};
use crate::policy::{grad_check, GammaMode, GradCheckReport, GraphInput, Policy, PolicyConfig};
use crate::rng::{rng_from, Rng};
use crate::tape::{Graph, ParamStore, Tensor};
use crate::world::{NeighborStub, Observation};

fn stub(id: u64, position: [f64; 3], f: [f64; 4]) -> NeighborStub {
    NeighborStub { id, position, appearance: f[..2].to_vec(), geometry: vec![f[2]], semantic: vec![f[3]] }
}

/// Current node, two Navigable neighbors, one Imagination node and Stop,
/// with 4-wide features.
pub fn five_node_map() -> Result<MemoryMap> {
    let mut m = MemoryMap::new(MemoryConfig { imagination_cap: 4, ..MemoryConfig::default() });
    let obs = Observation {
        node_id: 0,
        position: [0.0, 0.0, 0.0],
        appearance: vec![0.6, 0.8],
        geometry: vec![0.3],
        semantic: vec![1.0],
        neighbor_stubs: vec![
            stub(1, [1.5, 0.2, 0.0], [0.9, -0.1, 0.5, 0.4]),
            stub(2, [-0.4, 1.1, 0.0], [-0.2, 0.7, 0.1, 0.8]),
        ],
    };
    m.integrate_observation(&obs, 1)?;
    m.add_imagination(vec![0.1, 0.2, 0.9, 0.3], [2.8, 0.5, 0.0], Some(1))?;
    Ok(m)
}

const CHECK_TOKENS: [usize; 6] = [0, 3, 13, 20, 7, 8];

fn sap_loss_on(policy: &Policy, params: &ParamStore, input: &GraphInput, target: usize) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new(params);
    let instr = policy.encode_instruction(&mut g, &CHECK_TOKENS)?;
    let f = policy.forward(&mut g, input, instr, GammaMode::Dynamic)?;
    let loss = g.cross_entropy(f.fused, target);
    Ok((g.scalar(loss), g.backward(loss)))
}

#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub report: GradCheckReport,
    /// Same check after inflating one analytic entry by 50%.
    pub mutated: GradCheckReport,
}

/// Central differences against the analytic SAP-loss gradient of a full
/// policy on [`five_node_map`]. Tensors larger than `max_per_tensor`
/// entries are probed at a sample of entries.
pub fn policy_gradient_check(seed: u64, max_per_tensor: Option<usize>) -> Result<GradientCheck> {
    let policy = Policy::new(PolicyConfig { feature_dim: 4, ..PolicyConfig::default() }, seed)?;
    let input = GraphInput::from_map(&five_node_map()?, 1)?;
    // expert: Navigable node 1, the first candidate
    let (_, grads) = sap_loss_on(&policy, &policy.params, &input, 0)?;
    let loss = |p: &ParamStore| sap_loss_on(&policy, p, &input, 0).map(|x| x.0);
    let report = grad_check(&policy.params, &grads, loss, 1e-5, max_per_tensor, seed)?;
    let mut corrupted = grads;
    let t = policy.params.id("gasa.1.cross.v.w").map(|id| id.0).unwrap_or(0);
    let i = (0..corrupted[t].len())
        .max_by(|&a, &b| corrupted[t].data[a].abs().total_cmp(&corrupted[t].data[b].abs()))
        .unwrap_or(0);
    corrupted[t].data[i] *= 1.5;
    let mutated = grad_check(&policy.params, &corrupted, loss, 1e-5, max_per_tensor, seed)?;
    Ok(GradientCheck { report, mutated })
}

/// Random neighbor set whose members are at least two bins apart on both
/// axes (angular distance wraps).
pub fn separated_neighbors(rng: &mut Rng, max: usize) -> Vec<(f64, f64)> {
    let target = rng.random_range(1..=max);
    let mut bins: Vec<(usize, usize)> = Vec::new();
    for _ in 0..200 {
        if bins.len() == target {
            break;
        }
        let a = rng.random_range(0..ANGULAR_BINS);
        let r = rng.random_range(0..RADIAL_BINS);
        let far = bins.iter().all(|&(b, s)| {
            let da = a.abs_diff(b).min(ANGULAR_BINS - a.abs_diff(b));
            da >= 2 && r.abs_diff(s) >= 2
        });
        if far {
            bins.push((a, r));
        }
    }
    bins.into_iter()
        .map(|(a, r)| {
            let h = (a as f64 + rng.random_range(0.05..0.95)) * ANGULAR_BIN;
            let d = (r as f64 + rng.random_range(0.05..0.95)) * RADIAL_BIN;
            (h, d)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundTrip {
    pub trials: usize,
    pub neighbors: usize,
    pub recovered: usize,
}

/// heatmap_gt then nms_peaks on `trials` random separated neighbor sets;
/// counts neighbors matched by a peak within one bin on each axis.
pub fn roundtrip_waypoints(trials: usize, seed: u64) -> Result<RoundTrip> {
    let mut rng = rng_from(seed);
    let mut out = RoundTrip { trials, neighbors: 0, recovered: 0 };
    for _ in 0..trials {
        let nb = separated_neighbors(&mut rng, 6);
        let h = heatmap_gt(&nb)?;
        let peaks: Vec<(usize, usize)> =
            nms_peaks(&h, nb.len() + 4, (5, 3)).into_iter().map(|(a, r)| bin_of(a, r)).collect();
        for &(hd, d) in &nb {
            let (a, r) = bin_of(hd, d);
            out.neighbors += 1;
            let hit = peaks.iter().any(|&(pa, pr)| {
                let da = pa.abs_diff(a).min(ANGULAR_BINS - pa.abs_diff(a));
                da <= 1 && pr.abs_diff(r) <= 1
            });
            out.recovered += usize::from(hit);
        }
    }
    Ok(out)
}
