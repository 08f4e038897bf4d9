//! The per-episode loop and the per-step memory update shared with training.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::benchmark::EpisodeSpec;
use super::config::{AgentConfig, MemoryMode, WaypointKind};
use crate::error::{Error, Result};
use crate::imagination::{
    grow_tree, init_tree, merge_into_memory, Imaginer, ImaginerKind, LearnedImaginer, RoomConditioning, RoomModel,
    RoomWeightDict, WaypointModel, WaypointSource,
};
use crate::memory::{MemoryMap, NodeKind, STOP_ID};
use crate::metrics::{episode_metrics, EpisodeRecord, MetricsSummary};
use crate::policy::{select_action, Action, Policy, SelectMode};
use crate::rng::{derive_seed, derived_rng, Rng};
use crate::world::{observe, Category, NodeId, ObservationNoise, WorldGraph};

/// Every trained component an agent may consult.
#[derive(Clone, Debug)]
pub struct Models {
    pub policy: Policy,
    pub waypoint: Option<WaypointModel>,
    pub room: Option<RoomModel>,
    pub imaginer: Option<LearnedImaginer>,
    pub room_weights: RoomWeightDict,
}

/// Independent random streams of one episode, so that configurations that
/// imagine and ones that do not see identical observation noise.
pub struct EpisodeRngs {
    pub observe: Rng,
    pub imagine: Rng,
}

impl EpisodeRngs {
    pub fn new(seed: u64) -> Self {
        Self { observe: derived_rng(seed, 0), imagine: derived_rng(seed, 1) }
    }
}

/// Fold the observations at `arrived` into `map`, then imagine.
pub fn update_memory(
    map: &mut MemoryMap,
    world: &WorldGraph,
    arrived: &[NodeId],
    step: usize,
    models: &Models,
    agent: &AgentConfig,
    rngs: &mut EpisodeRngs,
) -> Result<()> {
    if agent.memory == MemoryMode::Transient {
        *map = MemoryMap::new(agent.memory_config());
    }
    let noise = ObservationNoise::uniform(agent.observation_noise);
    let arrived = if agent.memory == MemoryMode::Transient { &arrived[arrived.len().saturating_sub(1)..] } else { arrived };
    for &n in arrived {
        let obs = observe(world, n, &noise, &mut rngs.observe)?;
        map.integrate_observation(&obs, step)?;
    }
    if agent.imagines() {
        imagine(map, world, step, models, agent, &mut rngs.imagine)?;
    }
    Ok(())
}

fn imagine(
    map: &mut MemoryMap,
    world: &WorldGraph,
    step: usize,
    models: &Models,
    agent: &AgentConfig,
    rng: &mut Rng,
) -> Result<()> {
    let cfg = &agent.imagination;
    let mut tree = init_tree(map, world.layout(), cfg, step)?;
    let imaginer = match agent.imaginer.kind {
        ImaginerKind::Oracle => Imaginer::Oracle { world, noise: agent.imaginer.noise },
        ImaginerKind::Learned => Imaginer::Learned(
            models.imaginer.as_ref().ok_or_else(|| Error::Config("learned imaginer requested but not trained".into()))?,
        ),
        ImaginerKind::Null => Imaginer::Null,
    };
    let waypoints = match agent.waypoints {
        WaypointKind::Model => WaypointSource::Model(
            models.waypoint.as_ref().ok_or_else(|| Error::Config("waypoint model requested but not trained".into()))?,
        ),
        WaypointKind::GroundTruth => WaypointSource::GroundTruth(world),
        WaypointKind::Random => WaypointSource::Random,
    };
    let room = if agent.room_conditioning {
        let model =
            models.room.as_ref().ok_or_else(|| Error::Config("room conditioning requested but no room model".into()))?;
        Some(RoomConditioning { model, weights: &models.room_weights })
    } else {
        None
    };
    grow_tree(&mut tree, &imaginer, &waypoints, room, cfg, rng)?;
    merge_into_memory(map, &tree)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub node: NodeId,
    pub gamma: f64,
    pub visited: usize,
    pub navigable: usize,
    pub imagination: usize,
    pub s_r: BTreeMap<NodeId, f64>,
    pub s_i: BTreeMap<NodeId, f64>,
    pub fused: BTreeMap<NodeId, f64>,
    /// Chosen node, `STOP_ID` for Stop.
    pub action: NodeId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub id: String,
    pub category: Category,
    pub record: EpisodeRecord,
    pub metrics: MetricsSummary,
    pub steps: Vec<StepLog>,
    /// Set when a module error cut the episode short.
    pub error: Option<String>,
}

/// Seed of episode `index` under a run's base seed.
pub fn episode_seed(base: u64, index: usize) -> u64 {
    derive_seed(base, index as u64)
}

pub fn run_episode(
    world: &WorldGraph,
    spec: &EpisodeSpec,
    models: &Models,
    agent: &AgentConfig,
    seed: u64,
) -> Result<EpisodeOutcome> {
    let mut rngs = EpisodeRngs::new(seed);
    let mut select_rng = derived_rng(seed, 2);
    let mut map = MemoryMap::new(agent.memory_config());
    let mut trajectory = vec![spec.start];
    let mut arrived = vec![spec.start];
    let mut steps = Vec::new();
    let mut error = None;
    for step in 1..=agent.max_steps {
        let node = *trajectory.last().expect("nonempty trajectory");
        let decided = (|| -> Result<(StepLog, Action)> {
            update_memory(&mut map, world, &arrived, step, models, agent, &mut rngs)?;
            let scores = models.policy.score(&map, step, &spec.instruction.tokens, agent.gamma)?;
            let action = select_action(&scores.fused, &map, SelectMode::Greedy, &mut select_rng)?;
            let log = StepLog {
                step,
                node,
                gamma: scores.gamma,
                visited: map.count(NodeKind::Visited) + map.count(NodeKind::Current),
                navigable: map.count(NodeKind::Navigable),
                imagination: map.count(NodeKind::Imagination),
                s_r: scores.s_r,
                s_i: scores.s_i,
                fused: scores.fused,
                action: match &action {
                    Action::Stop => STOP_ID,
                    Action::GoTo { target, .. } => *target,
                },
            };
            Ok((log, action))
        })();
        match decided {
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
            Ok((log, action)) => {
                steps.push(log);
                match action {
                    Action::Stop => break,
                    Action::GoTo { route, .. } => {
                        arrived = route[1..].to_vec();
                        trajectory.extend_from_slice(&arrived);
                    }
                }
            }
        }
    }
    let last = *trajectory.last().expect("nonempty trajectory");
    let record = EpisodeRecord {
        trajectory,
        stop_position: world.node(last)?.position,
        goal_node_id: spec.instruction.goal_node_id,
    };
    let metrics = episode_metrics(world, &record)?;
    Ok(EpisodeOutcome { id: spec.id.clone(), category: spec.instruction.category, record, metrics, steps, error })
}
