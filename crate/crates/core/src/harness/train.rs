//! Training loops: SAP imitation for the policy, plus the waypoint, room and
//! learned-imaginer models. All use plain minibatch SGD with a fixed rate.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::benchmark::{EpisodeSpec, WorldEpisodes};
use super::config::AgentConfig;
use super::episode::{update_memory, EpisodeRngs, Models};
use crate::error::{Error, Result};
use crate::geometry::{distance, heading};
use crate::imagination::{
    heatmap_gt, HistoryEntry, Heatmap, LearnedImaginer, RoomModel, TransitionSample, WaypointModel, RANGE,
};
use crate::memory::{MemoryMap, STOP_ID};
use crate::policy::{candidate_rows, GammaMode, GraphInput, Policy};
use crate::rng::{derive_seed, rng_from};
use crate::tape::{Graph, ParamStore, Tensor};
use crate::world::WorldGraph;

/// One teacher-forced decision.
#[derive(Clone, Debug)]
pub struct ExpertStep {
    pub input: GraphInput,
    pub tokens: Vec<usize>,
    /// Index of the expert's choice among the candidates.
    pub target: usize,
    pub candidates: usize,
    /// Steps with the same episode index share their instruction.
    pub episode: usize,
}

/// Walk the expert path, building memory exactly as the agent would, and
/// record the expert's next node (then Stop) at every step.
pub fn expert_steps(
    world: &WorldGraph,
    spec: &EpisodeSpec,
    models: &Models,
    agent: &AgentConfig,
    seed: u64,
) -> Result<Vec<ExpertStep>> {
    let mut rngs = EpisodeRngs::new(seed);
    let mut map = MemoryMap::new(agent.memory_config());
    let mut out = Vec::new();
    let limit = agent.max_steps.min(spec.path.len());
    for step in 1..=limit {
        update_memory(&mut map, world, &spec.path[step - 1..step], step, models, agent, &mut rngs)?;
        let input = GraphInput::from_map(&map, step)?;
        let rows = candidate_rows(&input);
        let expert = spec.path.get(step).copied().unwrap_or(STOP_ID);
        let target = rows
            .iter()
            .position(|&r| input.ids[r] == expert)
            .ok_or_else(|| Error::Supervision(format!("expert node {expert} is not a candidate")))?;
        out.push(ExpertStep { candidates: rows.len(), input, tokens: spec.instruction.tokens.clone(), target, episode: 0 });
    }
    Ok(out)
}

/// Expert steps for every episode; episode `i` runs under variant
/// `i % variants.len()`.
pub fn collect_expert_steps(
    sets: &[WorldEpisodes],
    models: &Models,
    variants: &[AgentConfig],
    seed: u64,
) -> Result<Vec<ExpertStep>> {
    if variants.is_empty() {
        return Err(Error::Config("no agent variants to train under".into()));
    }
    let jobs: Vec<(usize, &WorldGraph, &EpisodeSpec, &AgentConfig)> = sets
        .iter()
        .flat_map(|s| s.episodes.iter().map(move |e| (s.world.as_ref(), e)))
        .enumerate()
        .map(|(i, (w, e))| (i, w, e, &variants[i % variants.len()]))
        .collect();
    let per: Vec<Result<Vec<ExpertStep>>> = jobs
        .par_iter()
        .map(|&(i, w, e, v)| {
            let mut steps = expert_steps(w, e, models, v, derive_seed(seed, i as u64))?;
            steps.iter_mut().for_each(|s| s.episode = i);
            Ok(steps)
        })
        .collect();
    let mut out = Vec::new();
    for r in per {
        out.extend(r?);
    }
    Ok(out)
}

/// Runs of consecutive steps from the same episode.
fn episode_runs<'a>(steps: &[&'a ExpertStep]) -> Vec<Vec<&'a ExpertStep>> {
    let mut runs: Vec<Vec<&ExpertStep>> = Vec::new();
    for &s in steps {
        match runs.last_mut() {
            Some(r) if r[0].episode == s.episode && r[0].tokens == s.tokens => r.push(s),
            _ => runs.push(vec![s]),
        }
    }
    runs
}

/// Summed SAP loss of one run, encoding the instruction once.
fn run_loss(policy: &Policy, run: &[&ExpertStep], with_grad: bool) -> Result<(f64, Vec<bool>, Option<Vec<Tensor>>)> {
    let mut g = Graph::new(&policy.params);
    let instr = policy.encode_instruction(&mut g, &run[0].tokens)?;
    let mut total = None;
    let mut hits = Vec::with_capacity(run.len());
    for s in run {
        let f = policy.forward(&mut g, &s.input, instr, GammaMode::Dynamic)?;
        let loss = g.cross_entropy(f.fused, s.target);
        let scores = &g.value(f.fused).data;
        let pick = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        hits.push(pick == s.target);
        total = Some(match total {
            Some(t) => g.add(t, loss),
            None => loss,
        });
    }
    let total = total.expect("runs are nonempty");
    let grads = with_grad.then(|| g.backward(total));
    Ok((g.scalar(total), hits, grads))
}

/// Mean SAP loss over `steps` and its gradient.
pub fn sap_batch(policy: &Policy, steps: &[&ExpertStep]) -> Result<(f64, Vec<Tensor>)> {
    if steps.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let per: Vec<Result<(f64, Vec<bool>, Option<Vec<Tensor>>)>> =
        episode_runs(steps).par_iter().map(|r| run_loss(policy, r, true)).collect();
    let mut total = 0.0;
    let mut grads = policy.params.zeros_like();
    for r in per {
        let (l, _, g) = r?;
        total += l;
        for (acc, g) in grads.iter_mut().zip(g.expect("gradient requested")) {
            acc.add_assign(&g);
        }
    }
    let n = steps.len() as f64;
    grads.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v /= n));
    Ok((total / n, grads))
}

/// Mean SAP loss and greedy next-action accuracy.
pub fn evaluate_steps(policy: &Policy, steps: &[ExpertStep]) -> Result<(f64, f64)> {
    if steps.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let refs: Vec<&ExpertStep> = steps.iter().collect();
    let per: Vec<Result<(f64, Vec<bool>, Option<Vec<Tensor>>)>> =
        episode_runs(&refs).par_iter().map(|r| run_loss(policy, r, false)).collect();
    let (mut loss, mut hits) = (0.0, 0usize);
    for r in per {
        let (l, h, _) = r?;
        loss += l;
        hits += h.iter().filter(|&&x| x).count();
    }
    Ok((loss / steps.len() as f64, hits as f64 / steps.len() as f64))
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainLog {
    /// Mean training loss per epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD on the SAP loss, with optional heavy-ball momentum (0 is
/// plain SGD). Minibatches are whole episodes, at least `batch` steps each.
/// On a non-finite loss the parameters are rolled back to the end of the last
/// good epoch and a divergence error is returned.
#[allow(clippy::too_many_arguments)]
pub fn train_policy(
    policy: &mut Policy,
    steps: &[ExpertStep],
    epochs: usize,
    batch: usize,
    lr: f64,
    momentum: f64,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    if steps.is_empty() && epochs > 0 {
        return Err(Error::Config("no training steps".into()));
    }
    let mut log = TrainLog::default();
    let refs: Vec<&ExpertStep> = steps.iter().collect();
    let mut runs = episode_runs(&refs);
    let mut rng = rng_from(seed);
    let mut velocity: Option<Vec<Tensor>> = None;
    for epoch in 0..epochs {
        let good = policy.params.clone();
        runs.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut start = 0;
        while start < runs.len() {
            // whole episodes until at least `batch` steps
            let mut b: Vec<&ExpertStep> = Vec::new();
            while start < runs.len() && b.len() < batch.max(1) {
                b.extend(&runs[start]);
                start += 1;
            }
            let (loss, grads) = sap_batch(policy, &b)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                policy.params = good;
                return Err(Error::Divergence { epoch });
            }
            sum += loss * b.len() as f64;
            if momentum == 0.0 {
                policy.params.sgd_step(&grads, lr);
                continue;
            }
            let v = velocity.get_or_insert_with(|| grads.iter().map(|g| Tensor::zeros(g.rows, g.cols)).collect());
            for (v, g) in v.iter_mut().zip(&grads) {
                for (x, d) in v.data.iter_mut().zip(&g.data) {
                    *x = momentum * *x + d;
                }
            }
            policy.params.sgd_step(v, lr);
        }
        if !policy.params.all_finite() {
            policy.params = good;
            return Err(Error::Divergence { epoch });
        }
        let mean = sum / steps.len() as f64;
        log.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(log)
}

/// `(appearance ++ geometry, heatmap of in-range neighbors)` for every node
/// of the given worlds, up to `limit`.
pub fn waypoint_samples(worlds: &[&WorldGraph], limit: usize) -> Result<(Vec<Vec<f64>>, Vec<Heatmap>)> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    'outer: for w in worlds {
        for n in &w.nodes {
            if xs.len() >= limit {
                break 'outer;
            }
            let mut nb = Vec::new();
            for (id, _) in w.neighbors(n.id)? {
                let p = w.node(id)?.position;
                let d = distance(&n.position, &p);
                if d > 0.0 && d <= RANGE {
                    nb.push((heading(&n.position, &p), d));
                }
            }
            let mut x = n.appearance.clone();
            x.extend_from_slice(&n.geometry);
            xs.push(x);
            ys.push(heatmap_gt(&nb)?);
        }
    }
    Ok((xs, ys))
}

/// `([semantic, geometry], room type)` for every node.
pub fn room_samples(worlds: &[&WorldGraph]) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for w in worlds {
        for n in &w.nodes {
            let mut x = n.semantic.clone();
            x.extend_from_slice(&n.geometry);
            xs.push(x);
            ys.push(n.room_type);
        }
    }
    (xs, ys)
}

/// Consecutive expert-path transitions with a `k`-long history.
pub fn transition_samples(sets: &[WorldEpisodes], k: usize) -> Result<Vec<TransitionSample>> {
    let mut out = Vec::new();
    for s in sets {
        for e in &s.episodes {
            let mut history: VecDeque<HistoryEntry> = VecDeque::new();
            for w in e.path.windows(2) {
                let a = s.world.node(w[0])?;
                let b = s.world.node(w[1])?;
                if history.len() == k {
                    history.pop_front();
                }
                history.push_back(HistoryEntry { geometry: a.geometry.clone(), semantic: a.semantic.clone(), position: a.position });
                out.push(TransitionSample {
                    history: history.iter().cloned().collect(),
                    parent_appearance: a.appearance.clone(),
                    target: b.position,
                    appearance: b.appearance.clone(),
                    geometry: b.geometry.clone(),
                    semantic: b.semantic.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// Shared minibatch SGD driver over any model with a public parameter store.
fn sgd_epochs<M>(
    model: &mut M,
    params: fn(&mut M) -> &mut ParamStore,
    n: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
    batch_loss: impl Fn(&M, &[usize]) -> (f64, Vec<Tensor>),
) -> Result<Vec<f64>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from(seed);
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch.max(1)) {
            let (loss, grads) = batch_loss(model, chunk);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            sum += loss * chunk.len() as f64;
            params(model).sgd_step(&grads, lr);
        }
        losses.push(sum / n.max(1) as f64);
    }
    Ok(losses)
}

pub fn train_waypoint(
    model: &mut WaypointModel,
    inputs: &[Vec<f64>],
    targets: &[Heatmap],
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    sgd_epochs(model, |m| &mut m.params, inputs.len(), epochs, batch, lr, seed, |m, idx| {
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| inputs[i].clone()).collect();
        let y: Vec<Heatmap> = idx.iter().map(|&i| targets[i].clone()).collect();
        m.batch_loss(&x, &y)
    })
}

pub fn train_room(
    model: &mut RoomModel,
    inputs: &[Vec<f64>],
    labels: &[usize],
    epochs: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    sgd_epochs(model, |m| &mut m.params, inputs.len(), epochs, batch, lr, seed, |m, idx| {
        let x: Vec<Vec<f64>> = idx.iter().map(|&i| inputs[i].clone()).collect();
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        m.batch_loss(&x, &y)
    })
}

/// Returns the per-epoch inpaint loss (structured channels only).
pub fn train_imaginer(
    model: &mut LearnedImaginer,
    samples: &[TransitionSample],
    epochs: usize,
    batch: usize,
    lr: f64,
    lambda: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    sgd_epochs(model, |m| &mut m.params, samples.len(), epochs, batch, lr, seed, |m, idx| {
        let b: Vec<TransitionSample> = idx.iter().map(|&i| samples[i].clone()).collect();
        let (inpaint, _, grads) = m.batch_loss(&b, lambda);
        (inpaint, grads)
    })
}
