//! Episode generation: expert paths and their instructions.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{BenchmarkConfig, RunConfig};
use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::world::{generate_instruction, generate_world, Category, Instruction, NodeId, Vocabulary, WorldGraph};

const PATH_ATTEMPTS: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    /// `<world seed>-<index>`.
    pub id: String,
    pub world_seed: u64,
    pub start: NodeId,
    /// Expert shortest path, start to goal.
    pub path: Vec<NodeId>,
    pub instruction: Instruction,
}

/// A world together with its episodes.
#[derive(Clone, Debug)]
pub struct WorldEpisodes {
    pub seed: u64,
    pub world: Arc<WorldGraph>,
    pub episodes: Vec<EpisodeSpec>,
}

/// Shortest path between a random pair, `min..=max` hops, crossing at least
/// two rooms; cut at the first node of its last room so that "arrive in the
/// named room" and "stop" coincide.
pub fn sample_path(world: &WorldGraph, cfg: &BenchmarkConfig, rng: &mut crate::rng::Rng) -> Result<Vec<NodeId>> {
    let n = world.len();
    if n < 2 {
        return Err(Error::Generation("world too small for an episode".into()));
    }
    for _ in 0..PATH_ATTEMPTS {
        let a = world.nodes[rng.random_range(0..n)].id;
        let b = world.nodes[rng.random_range(0..n)].id;
        if a == b {
            continue;
        }
        let (mut path, _) = world.shortest_path(a, b)?;
        let last_room = world.node(b)?.room_type;
        let first_in_last = path
            .iter()
            .rposition(|&id| world.node(id).map(|x| x.room_type != last_room).unwrap_or(true))
            .map(|i| i + 1);
        let Some(cut) = first_in_last else { continue };
        path.truncate(cut + 1);
        let hops = path.len() - 1;
        if hops >= cfg.min_hops && hops <= cfg.max_hops {
            return Ok(path);
        }
    }
    Err(Error::Generation("no path satisfies the length and room constraints".into()))
}

/// `per_category` episodes per category (categories that cannot be phrased
/// after many attempts are skipped).
pub fn episodes_for_world(
    world: &WorldGraph,
    world_seed: u64,
    vocab: &Vocabulary,
    cfg: &BenchmarkConfig,
    per_category: usize,
) -> Result<Vec<EpisodeSpec>> {
    let mut rng = derived_rng(world_seed, 0xE915);
    let mut out = Vec::new();
    for &category in cfg.categories.iter().flat_map(|c| std::iter::repeat_n(c, per_category)) {
        for _ in 0..200 {
            let path = sample_path(world, cfg, &mut rng)?;
            if let Ok(instruction) = generate_instruction(world, vocab, &path, category) {
                out.push(EpisodeSpec {
                    id: format!("{world_seed}-{}", out.len()),
                    world_seed,
                    start: path[0],
                    path,
                    instruction,
                });
                break;
            }
        }
    }
    Ok(out)
}

fn build(cfg: &RunConfig, seeds: impl Iterator<Item = u64>, per_category: usize) -> Result<Vec<WorldEpisodes>> {
    let vocab = Vocabulary::new(cfg.world.room_vocab, cfg.world.object_vocab);
    seeds
        .map(|seed| {
            let world = generate_world(&cfg.world.with_seed(seed))?;
            let episodes = episodes_for_world(&world, seed, &vocab, &cfg.benchmark, per_category)?;
            Ok(WorldEpisodes { seed, world: Arc::new(world), episodes })
        })
        .collect()
}

pub fn eval_benchmark(cfg: &RunConfig) -> Result<Vec<WorldEpisodes>> {
    if let Some(path) = &cfg.world_path {
        let world = crate::world::load_world(path)?;
        let vocab = Vocabulary::new(world.room_vocab_size, world.object_vocab_size);
        let episodes = episodes_for_world(&world, cfg.benchmark.eval_seed_start, &vocab, &cfg.benchmark, 1)?;
        return Ok(vec![WorldEpisodes { seed: cfg.benchmark.eval_seed_start, world: Arc::new(world), episodes }]);
    }
    let b = &cfg.benchmark;
    build(cfg, b.eval_seed_start..b.eval_seed_start + b.eval_worlds as u64, 1)
}

pub fn train_benchmark(cfg: &RunConfig) -> Result<Vec<WorldEpisodes>> {
    let b = &cfg.benchmark;
    build(cfg, b.train_seed_start..b.train_seed_start + b.train_worlds as u64, b.train_episodes)
}

/// Flattened `(world, episode)` list, optionally truncated and filtered.
pub fn flatten(sets: &[WorldEpisodes], category: Option<Category>, limit: Option<usize>) -> Vec<(Arc<WorldGraph>, EpisodeSpec)> {
    let mut out: Vec<(Arc<WorldGraph>, EpisodeSpec)> = sets
        .iter()
        .flat_map(|s| s.episodes.iter().map(move |e| (s.world.clone(), e.clone())))
        .filter(|(_, e)| category.is_none_or(|c| e.instruction.category == c))
        .collect();
    if let Some(n) = limit {
        out.truncate(n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn paths_end_on_entering_the_last_room() {
        let cfg = BenchmarkConfig::default();
        let world = generate_world(&crate::world::WorldConfig { seed: 3, ..Default::default() }).unwrap();
        let mut rng = rng_from(1);
        for _ in 0..50 {
            let p = sample_path(&world, &cfg, &mut rng).unwrap();
            let rooms: Vec<usize> = p.iter().map(|&id| world.node(id).unwrap().room_type).collect();
            let last = *rooms.last().unwrap();
            assert_ne!(rooms[rooms.len() - 2], last);
            assert!((cfg.min_hops..=cfg.max_hops).contains(&(p.len() - 1)));
            assert_eq!(world.geodesic(p[0], *p.last().unwrap()).unwrap() > 0.0, true);
        }
    }
}
