//! Parallel evaluation, report files and ablation suites.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::benchmark::EpisodeSpec;
use super::config::{AgentConfig, MemoryMode, WaypointKind};
use super::episode::{episode_seed, run_episode, EpisodeOutcome, Models};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, summaries_to_csv, Aggregate, MetricsSummary};
use crate::policy::GammaMode;
use crate::world::{Category, WorldGraph};

pub type EpisodeList = [(Arc<WorldGraph>, EpisodeSpec)];

/// Run every episode on a pool of `jobs` workers. Episode `i` always uses
/// seed `episode_seed(seed, i)` and results come back in input order, so the
/// output does not depend on `jobs`.
pub fn evaluate(episodes: &EpisodeList, models: &Models, agent: &AgentConfig, seed: u64, jobs: usize) -> Result<Vec<EpisodeOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        episodes
            .par_iter()
            .enumerate()
            .map(|(i, (w, spec))| run_episode(w, spec, models, agent, episode_seed(seed, i)))
            .collect()
    })
}

pub fn summarize(outcomes: &[EpisodeOutcome]) -> Result<Aggregate> {
    let rows: Vec<(Category, MetricsSummary)> = outcomes.iter().map(|o| (o.category, o.metrics)).collect();
    aggregate(&rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub aggregate: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    /// One CSV line per row and per category within the row.
    pub fn to_csv(&self) -> Result<String> {
        let mut lines: Vec<(String, MetricsSummary)> = Vec::new();
        for r in &self.rows {
            lines.push((r.label.clone(), r.aggregate.overall));
            for (c, m) in &r.aggregate.by_category {
                lines.push((format!("{}/{c}", r.label), *m));
            }
        }
        summaries_to_csv(lines.iter().map(|(l, m)| (l.as_str(), m)))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// `episodes/<id>.json` for each outcome (ids prefixed by `prefix` when set).
pub fn write_episodes(dir: &Path, prefix: Option<&str>, outcomes: &[EpisodeOutcome]) -> Result<()> {
    let ep = dir.join("episodes");
    std::fs::create_dir_all(&ep)?;
    for o in outcomes {
        let name = match prefix {
            Some(p) => format!("{p}-{}.json", o.id),
            None => format!("{}.json", o.id),
        };
        std::fs::write(ep.join(name), serde_json::to_string(o)?)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    MemoryType,
    ImaginationRange,
    AuxiliaryModels,
    DecisionWeight,
    InstructionSplit,
}

impl Suite {
    pub const ALL: [Suite; 5] =
        [Suite::MemoryType, Suite::ImaginationRange, Suite::AuxiliaryModels, Suite::DecisionWeight, Suite::InstructionSplit];

    pub fn name(self) -> &'static str {
        match self {
            Suite::MemoryType => "memory_type",
            Suite::ImaginationRange => "imagination_range",
            Suite::AuxiliaryModels => "auxiliary_models",
            Suite::DecisionWeight => "decision_weight",
            Suite::InstructionSplit => "instruction_split",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub agent: AgentConfig,
    /// Restrict the episodes to one instruction category.
    pub category: Option<Category>,
}

/// Configuration rows of a suite, derived from `base`.
pub fn suite_rows(suite: Suite, base: &AgentConfig) -> Vec<AblationRow> {
    let row = |label: &str, agent: AgentConfig| AblationRow { label: label.into(), agent, category: None };
    let full = AgentConfig { memory: MemoryMode::Persistent, ..base.clone() };
    match suite {
        Suite::MemoryType => vec![
            row("reality", full.reality_only()),
            row("imagination", AgentConfig { memory: MemoryMode::Transient, ..full.clone() }),
            row("reality+imagination", full),
        ],
        Suite::ImaginationRange => [(0, 0), (1, 4), (2, 4), (2, 8)]
            .into_iter()
            .map(|(m, cap)| {
                let mut a = full.clone();
                a.imagination.depth = m;
                a.imagination_cap = cap;
                row(&format!("M={m},N={cap}"), a)
            })
            .collect(),
        Suite::AuxiliaryModels => [("none", false, false), ("room", true, false), ("waypoint", false, true), ("room+waypoint", true, true)]
            .into_iter()
            .map(|(label, room, wp)| {
                let a = AgentConfig {
                    room_conditioning: room,
                    waypoints: if wp { WaypointKind::Model } else { WaypointKind::Random },
                    ..full.clone()
                };
                row(label, a)
            })
            .collect(),
        Suite::DecisionWeight => vec![
            row("dynamic", AgentConfig { gamma: GammaMode::Dynamic, ..full.clone() }),
            row("fixed 0.5", AgentConfig { gamma: GammaMode::Fixed(0.5), ..full }),
        ],
        Suite::InstructionSplit => Category::SPLITS
            .into_iter()
            .map(|c| AblationRow { label: c.label().into(), agent: full.clone(), category: Some(c) })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTiming {
    pub label: String,
    pub seconds: f64,
}

pub struct AblationResult {
    pub report: Report,
    pub outcomes: Vec<Vec<EpisodeOutcome>>,
    pub timings: Vec<AblationTiming>,
}

/// Evaluate every row of `suite` on the same episodes and seed.
pub fn run_ablation(
    suite: Suite,
    base: &AgentConfig,
    models: &Models,
    episodes: &EpisodeList,
    seed: u64,
    jobs: usize,
) -> Result<AblationResult> {
    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    let mut timings = Vec::new();
    for r in suite_rows(suite, base) {
        let start = std::time::Instant::now();
        let subset: Vec<(Arc<WorldGraph>, EpisodeSpec)> = episodes
            .iter()
            .filter(|(_, e)| r.category.is_none_or(|c| e.instruction.category == c))
            .cloned()
            .collect();
        let out = evaluate(&subset, models, &r.agent, seed, jobs)?;
        rows.push(ReportRow { label: r.label.clone(), aggregate: summarize(&out)? });
        timings.push(AblationTiming { label: r.label, seconds: start.elapsed().as_secs_f64() });
        outcomes.push(out);
    }
    Ok(AblationResult { report: Report { rows }, outcomes, timings })
}
