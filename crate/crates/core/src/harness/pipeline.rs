//! End-to-end training and model files.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::benchmark::{flatten, train_benchmark, WorldEpisodes};
use super::config::{AgentConfig, MemoryMode, RunConfig};
use super::episode::Models;
use super::train::{
    collect_expert_steps, evaluate_steps, room_samples, train_imaginer, train_policy, train_room, train_waypoint,
    transition_samples, waypoint_samples, TrainLog,
};
use crate::error::{Error, Result};
use crate::imagination::{LearnedImaginer, RoomModel, RoomWeightDict, WaypointModel};
use crate::policy::{read_checkpoint, write_checkpoint, Policy, PolicyConfig};
use crate::rng::derive_seed;
use crate::tape::ParamStore;
use crate::world::{FeatureLayout, WorldGraph};

const WAYPOINT_SAMPLES: usize = 500;
const AUX_BATCH: usize = 16;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub policy: TrainLog,
    pub waypoint_losses: Vec<f64>,
    pub room_losses: Vec<f64>,
    pub imaginer_losses: Vec<f64>,
    pub expert_steps: usize,
    pub train_accuracy: f64,
    pub seconds: f64,
}

/// Agent variants the policy is trained under: the configured agent, its
/// reality-only version and its transient-memory version, so one checkpoint
/// serves every ablation row.
pub fn training_variants(agent: &AgentConfig) -> Vec<AgentConfig> {
    let full = AgentConfig { memory: MemoryMode::Persistent, ..agent.clone() };
    let transient = AgentConfig { memory: MemoryMode::Transient, ..agent.clone() };
    vec![full.clone(), full.reality_only(), transient]
}

fn layout_of(cfg: &RunConfig) -> FeatureLayout {
    FeatureLayout { appearance: cfg.world.appearance_dim, geometry: cfg.world.geometry_dim, semantic: cfg.world.object_vocab }
}

/// Untrained models for a configuration.
pub fn fresh_models(cfg: &RunConfig) -> Result<Models> {
    let layout = layout_of(cfg);
    let seed = cfg.seed;
    Ok(Models {
        policy: Policy::new(cfg.policy.clone(), derive_seed(seed, 10))?,
        waypoint: Some(WaypointModel::new(layout.appearance, layout.geometry, derive_seed(seed, 11))),
        room: Some(RoomModel::new(layout.semantic + layout.geometry, cfg.world.room_vocab, derive_seed(seed, 12))),
        imaginer: Some(LearnedImaginer::new(layout, cfg.agent.imagination.history, derive_seed(seed, 13))),
        room_weights: RoomWeightDict::from_priors(cfg.world.room_vocab, cfg.world.object_vocab, cfg.agent.imagination.room_weight),
    })
}

/// Train the auxiliary models on the training worlds.
pub fn train_auxiliary(cfg: &RunConfig, sets: &[WorldEpisodes], models: &mut Models, summary: &mut TrainingSummary) -> Result<()> {
    let t = &cfg.training;
    let worlds: Vec<&WorldGraph> = sets.iter().map(|s| s.world.as_ref()).collect();
    if let Some(m) = models.waypoint.as_mut() {
        let (x, y) = waypoint_samples(&worlds, WAYPOINT_SAMPLES)?;
        summary.waypoint_losses =
            train_waypoint(m, &x, &y, t.waypoint_epochs, AUX_BATCH, t.waypoint_lr, derive_seed(cfg.seed, 21))?;
    }
    if let Some(m) = models.room.as_mut() {
        let (x, y) = room_samples(&worlds);
        summary.room_losses = train_room(m, &x, &y, t.room_epochs, AUX_BATCH, t.room_lr, derive_seed(cfg.seed, 22))?;
    }
    if let Some(m) = models.imaginer.as_mut() {
        let samples = transition_samples(sets, cfg.agent.imagination.history)?;
        summary.imaginer_losses = train_imaginer(
            m,
            &samples,
            t.imaginer_epochs,
            AUX_BATCH,
            t.imaginer_lr,
            t.lambda,
            derive_seed(cfg.seed, 23),
        )?;
    }
    Ok(())
}

/// Auxiliary models, then SAP teacher forcing on the training benchmark.
/// On divergence `models` keeps the last good parameters.
pub fn train_models(
    cfg: &RunConfig,
    models: &mut Models,
    summary: &mut TrainingSummary,
    mut progress: impl FnMut(&str),
) -> Result<()> {
    let start = Instant::now();
    let sets = train_benchmark(cfg)?;
    progress(&format!("training benchmark: {} episodes", flatten(&sets, None, None).len()));
    train_auxiliary(cfg, &sets, models, summary)?;
    progress(&format!(
        "auxiliary models: waypoint loss {:.5}, room loss {:.4}, imaginer loss {:.4}",
        summary.waypoint_losses.last().copied().unwrap_or(f64::NAN),
        summary.room_losses.last().copied().unwrap_or(f64::NAN),
        summary.imaginer_losses.last().copied().unwrap_or(f64::NAN),
    ));
    let steps = collect_expert_steps(&sets, models, &training_variants(&cfg.agent), derive_seed(cfg.seed, 30))?;
    summary.expert_steps = steps.len();
    progress(&format!("{} expert steps", steps.len()));
    let t = &cfg.training;
    let result = train_policy(&mut models.policy, &steps, t.epochs, t.batch, t.lr, t.momentum, derive_seed(cfg.seed, 31), |e, l| {
        progress(&format!("epoch {e}: SAP loss {l:.4}"))
    });
    summary.seconds = start.elapsed().as_secs_f64();
    summary.policy = result?;
    summary.train_accuracy = evaluate_steps(&models.policy, &steps)?.1;
    summary.seconds = start.elapsed().as_secs_f64();
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    policy: PolicyConfig,
    layout: FeatureLayout,
    history: usize,
    rooms: usize,
    room_weights: RoomWeightDict,
}

fn split(params: &ParamStore, prefix: &str) -> ParamStore {
    let mut out = ParamStore::new();
    for (n, t) in params.names.iter().zip(&params.tensors) {
        if n.starts_with(prefix) {
            out.push(n.clone(), t.clone());
        }
    }
    out
}

pub fn save_models(path: &Path, models: &Models) -> Result<()> {
    let mut all = models.policy.params.clone();
    let mut layout = FeatureLayout { appearance: 0, geometry: 0, semantic: 0 };
    let mut history = 1;
    let mut rooms = 0;
    for (name, store) in [
        ("waypoint", models.waypoint.as_ref().map(|m| &m.params)),
        ("room", models.room.as_ref().map(|m| &m.params)),
        ("imaginer", models.imaginer.as_ref().map(|m| &m.params)),
    ] {
        let Some(store) = store else {
            return Err(Error::Checkpoint(format!("{name} model missing")));
        };
        for (n, t) in store.names.iter().zip(&store.tensors) {
            all.push(n.clone(), t.clone());
        }
    }
    if let Some(m) = &models.imaginer {
        layout = m.layout;
        history = m.history_len;
    }
    if let Some(m) = &models.room {
        rooms = m.rooms;
    }
    let header = ModelHeader {
        policy: models.policy.config.clone(),
        layout,
        history,
        rooms,
        room_weights: models.room_weights.clone(),
    };
    write_checkpoint(path, &all, &serde_json::to_value(&header)?)
}

pub fn load_models(path: &Path) -> Result<Models> {
    let (all, header) = read_checkpoint(path)?;
    let h: ModelHeader =
        serde_json::from_value(header).map_err(|e| Error::Checkpoint(format!("model header: {e}")))?;
    let mut policy_params = ParamStore::new();
    for (n, t) in all.names.iter().zip(&all.tensors) {
        if !(n.starts_with("waypoint.") || n.starts_with("room.") || n.starts_with("imaginer.")) {
            policy_params.push(n.clone(), t.clone());
        }
    }
    Ok(Models {
        policy: Policy::from_params(h.policy, policy_params)?,
        waypoint: Some(WaypointModel::from_params(h.layout.appearance, h.layout.geometry, split(&all, "waypoint."))?),
        room: Some(RoomModel::from_params(h.layout.semantic + h.layout.geometry, h.rooms, split(&all, "room."))?),
        imaginer: Some(LearnedImaginer::from_params(h.layout, h.history, split(&all, "imaginer."))?),
        room_weights: h.room_weights,
    })
}

/// Check that a loaded model bundle fits a run configuration.
pub fn check_models(models: &Models, cfg: &RunConfig) -> Result<()> {
    if models.policy.config != cfg.policy {
        return Err(Error::Config("checkpoint policy configuration differs from the run configuration".into()));
    }
    if let Some(m) = &models.imaginer {
        if m.layout != layout_of(cfg) {
            return Err(Error::Config("checkpoint channel layout differs from the world configuration".into()));
        }
    }
    Ok(())
}
