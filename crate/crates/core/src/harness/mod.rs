//! Episode runner, training loops, evaluation reports and ablation suites.

mod benchmark;
mod checks;
mod config;
mod episode;
mod eval;
mod pipeline;
mod stats;
mod train;

pub use checks::{five_node_map, policy_gradient_check, roundtrip_waypoints, separated_neighbors, GradientCheck, RoundTrip};
pub use benchmark::{episodes_for_world, eval_benchmark, flatten, sample_path, train_benchmark, EpisodeSpec, WorldEpisodes};
pub use config::{AgentConfig, BenchmarkConfig, MemoryMode, RunConfig, TrainConfig, WaypointKind};
pub use episode::{episode_seed, run_episode, update_memory, EpisodeOutcome, EpisodeRngs, Models, StepLog};
pub use eval::{
    evaluate, run_ablation, suite_rows, summarize, write_episodes, AblationResult, AblationRow, AblationTiming, Report,
    ReportRow, Suite,
};
pub use pipeline::{
    check_models, fresh_models, load_models, save_models, train_auxiliary, train_models, training_variants,
    TrainingSummary,
};
pub use stats::{average_ranks, bootstrap_confidence, spearman};
pub use train::{
    collect_expert_steps, evaluate_steps, expert_steps, room_samples, sap_batch, train_imaginer, train_policy,
    train_room, train_waypoint, transition_samples, waypoint_samples, ExpertStep, TrainLog,
};
