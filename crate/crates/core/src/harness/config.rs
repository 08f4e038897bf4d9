use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagination::{ImaginationConfig, ImaginerConfig};
use crate::memory::MemoryConfig;
use crate::policy::{GammaMode, PolicyConfig};
use crate::world::{Category, WorldConfig};

/// How long-term reality memory is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryMode {
    /// One map for the whole episode.
    Persistent,
    /// A fresh map every step: only the current observation plus imagination.
    Transient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaypointKind {
    Model,
    GroundTruth,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub imagination: ImaginationConfig,
    /// N̄.
    pub imagination_cap: usize,
    pub tau: f64,
    pub position_scale: f64,
    pub memory: MemoryMode,
    pub gamma: GammaMode,
    pub imaginer: ImaginerConfig,
    pub waypoints: WaypointKind,
    pub room_conditioning: bool,
    pub max_steps: usize,
    /// Std of the Gaussian noise on neighbor stubs.
    pub observation_noise: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            imagination: ImaginationConfig::default(),
            imagination_cap: 4,
            tau: 0.9,
            position_scale: 1.0,
            memory: MemoryMode::Persistent,
            gamma: GammaMode::Dynamic,
            imaginer: ImaginerConfig::default(),
            waypoints: WaypointKind::Model,
            room_conditioning: true,
            max_steps: 15,
            observation_noise: 0.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        self.imagination.validate()?;
        if let GammaMode::Fixed(g) = self.gamma {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("fixed gamma {g} outside [0, 1]")));
            }
        }
        if !(self.tau.is_finite()) || !(self.position_scale > 0.0) {
            return Err(Error::Config("tau must be finite and position_scale positive".into()));
        }
        if !(self.observation_noise >= 0.0) || !(self.imaginer.noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn memory_config(&self) -> MemoryConfig {
        MemoryConfig { imagination_cap: self.imagination_cap, tau: self.tau, position_scale: self.position_scale }
    }

    /// Reality-only: no expansion and no Imagination slots.
    pub fn reality_only(&self) -> Self {
        let mut c = self.clone();
        c.imagination.depth = 0;
        c.imagination_cap = 0;
        c
    }

    pub fn imagines(&self) -> bool {
        self.imagination.depth > 0 && self.imagination_cap > 0
    }
}

/// Which worlds and instructions make up a benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub eval_seed_start: u64,
    pub eval_worlds: usize,
    pub train_seed_start: u64,
    pub train_worlds: usize,
    /// Episodes per category on each training world.
    pub train_episodes: usize,
    pub categories: Vec<Category>,
    /// Expert path length bounds in hops.
    pub min_hops: usize,
    pub max_hops: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            eval_seed_start: 1000,
            eval_worlds: 100,
            train_seed_start: 0,
            train_worlds: 50,
            train_episodes: 16,
            categories: vec![Category::S1, Category::S2, Category::S3],
            min_hops: 3,
            max_hops: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Heavy-ball momentum for the policy; 0 is plain SGD.
    pub momentum: f64,
    pub batch: usize,
    pub waypoint_epochs: usize,
    pub waypoint_lr: f64,
    pub room_epochs: usize,
    pub room_lr: f64,
    pub imaginer_epochs: usize,
    pub imaginer_lr: f64,
    /// Inpaint loss weight λ.
    pub lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 0.15,
            momentum: 0.0,
            batch: 16,
            waypoint_epochs: 40,
            waypoint_lr: 0.5,
            room_epochs: 60,
            room_lr: 0.2,
            imaginer_epochs: 30,
            imaginer_lr: 0.1,
            lambda: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldConfig,
    /// Load a single world file instead of generating the benchmark.
    pub world_path: Option<PathBuf>,
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
    pub agent: AgentConfig,
    pub policy: PolicyConfig,
    pub training: TrainConfig,
    pub checkpoint: Option<PathBuf>,
    /// Evaluate only the first `episodes` benchmark episodes.
    pub episodes: Option<usize>,
    pub out: PathBuf,
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let policy = PolicyConfig {
            feature_dim: world.appearance_dim + world.geometry_dim + world.object_vocab,
            room_vocab: world.room_vocab,
            object_vocab: world.object_vocab,
            ..PolicyConfig::default()
        };
        Self {
            world,
            world_path: None,
            benchmark: BenchmarkConfig::default(),
            seed: 0,
            agent: AgentConfig::default(),
            policy,
            training: TrainConfig::default(),
            checkpoint: None,
            episodes: None,
            out: PathBuf::from("out"),
            jobs: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.agent.validate()?;
        self.policy.validate()?;
        let w = &self.world;
        if self.policy.feature_dim != w.appearance_dim + w.geometry_dim + w.object_vocab {
            return Err(Error::Config(format!(
                "policy feature_dim {} does not match world channels {}",
                self.policy.feature_dim,
                w.appearance_dim + w.geometry_dim + w.object_vocab
            )));
        }
        if self.policy.room_vocab != w.room_vocab || self.policy.object_vocab != w.object_vocab {
            return Err(Error::Config("policy vocabulary does not match the world".into()));
        }
        let b = &self.benchmark;
        if b.min_hops == 0 || b.min_hops > b.max_hops {
            return Err(Error::Config("need 1 <= min_hops <= max_hops".into()));
        }
        if b.train_episodes == 0 {
            return Err(Error::Config("train_episodes must be at least 1".into()));
        }
        if b.categories.is_empty() {
            return Err(Error::Config("no instruction categories".into()));
        }
        let train = b.train_seed_start..b.train_seed_start + b.train_worlds as u64;
        let eval = b.eval_seed_start..b.eval_seed_start + b.eval_worlds as u64;
        if train.start < eval.end && eval.start < train.end {
            return Err(Error::Config("training and evaluation world seeds overlap".into()));
        }
        let t = &self.training;
        if !(t.lr >= 0.0 && t.waypoint_lr >= 0.0 && t.room_lr >= 0.0 && t.imaginer_lr >= 0.0) || t.batch == 0 {
            return Err(Error::Config("learning rates must be non-negative and batch positive".into()));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config("momentum outside [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&t.lambda) {
            return Err(Error::Config("lambda outside [0, 1]".into()));
        }
        Ok(())
    }
}
