use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use imagnav::harness::{
    check_models, eval_benchmark, evaluate, flatten, fresh_models, load_models, policy_gradient_check, roundtrip_waypoints,
    run_ablation, save_models, summarize, train_benchmark, train_models, write_episodes, Models, Report, ReportRow, RunConfig,
    Suite, TrainingSummary, WorldEpisodes,
};
use imagnav::world::save_world;
use imagnav::Error;

#[derive(Parser)]
#[command(name = "imagnav", version, about = "Instruction-following navigation with imagined memory")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Model bundle written by `train`, read by `eval` and `ablate`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training and evaluation worlds plus their episodes.
    GenWorlds,
    /// Train the auxiliary models and the policy.
    Train,
    /// Evaluate a checkpoint on the evaluation benchmark.
    Eval,
    /// Run an ablation suite: memory_type, imagination_range,
    /// auxiliary_models, decision_weight or instruction_split.
    Ablate { suite: String },
    /// Policy gradients against central finite differences.
    Gradcheck {
        /// Entries probed per tensor (0 = all).
        #[arg(long, default_value_t = 24)]
        per_tensor: usize,
    },
    /// Ground-truth heatmaps through peak extraction.
    RoundtripWaypoints {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
}

/// A self-check that ran but did not pass.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct CheckFailed(String);

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<RunConfig>(&text).map_err(Error::from).context("parsing the run configuration")?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(c) = &cli.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join("model.ckpt"))
}

fn load_checkpoint(cfg: &RunConfig) -> Result<Models> {
    let path = checkpoint_path(cfg);
    if !path.exists() {
        return Err(Error::Config(format!("checkpoint {} not found; run `train` first", path.display())).into());
    }
    let models = load_models(&path).with_context(|| format!("loading {}", path.display()))?;
    check_models(&models, cfg)?;
    Ok(models)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn gen_worlds(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out.join("worlds");
    std::fs::create_dir_all(&dir)?;
    let mut manifest = Vec::new();
    let mut dump = |split: &str, sets: &[WorldEpisodes]| -> Result<()> {
        for s in sets {
            let name = format!("{split}-{}.json", s.seed);
            save_world(&s.world, &dir.join(&name))?;
            manifest.push(serde_json::json!({ "split": split, "world": name, "episodes": s.episodes }));
        }
        Ok(())
    };
    dump("train", &train_benchmark(cfg)?)?;
    dump("eval", &eval_benchmark(cfg)?)?;
    write_json(&dir.join("episodes.json"), &manifest)?;
    eprintln!("wrote {} worlds to {}", manifest.len(), dir.display());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out)?;
    let mut models = fresh_models(cfg)?;
    let mut summary = TrainingSummary::default();
    let result = train_models(cfg, &mut models, &mut summary, |m| eprintln!("{m}"));
    let path = checkpoint_path(cfg);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    // on divergence the models hold the last good epoch; keep them
    save_models(&path, &models)?;
    write_json(&cfg.out.join("training.json"), &summary)?;
    result?;
    eprintln!(
        "trained in {:.1} s, train accuracy {:.3}; checkpoint {}",
        summary.seconds,
        summary.train_accuracy,
        path.display()
    );
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let models = load_checkpoint(cfg)?;
    let sets = eval_benchmark(cfg)?;
    let episodes = flatten(&sets, None, cfg.episodes);
    let outcomes = evaluate(&episodes, &models, &cfg.agent, cfg.seed, cfg.jobs)?;
    let report = Report { rows: vec![ReportRow { label: "eval".into(), aggregate: summarize(&outcomes)? }] };
    report.write(&cfg.out)?;
    write_episodes(&cfg.out, None, &outcomes)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn file_label(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

fn ablate(cfg: &RunConfig, suite: &str) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let models = load_checkpoint(cfg)?;
    let sets = eval_benchmark(cfg)?;
    let episodes = flatten(&sets, None, cfg.episodes);
    let result = run_ablation(suite, &cfg.agent, &models, &episodes, cfg.seed, cfg.jobs)?;
    result.report.write(&cfg.out)?;
    for (row, outcomes) in result.report.rows.iter().zip(&result.outcomes) {
        write_episodes(&cfg.out, Some(&file_label(&row.label)), outcomes)?;
    }
    write_json(&cfg.out.join("timings.json"), &result.timings)?;
    print!("{}", result.report.to_csv()?);
    Ok(())
}

fn gradcheck(cfg: &RunConfig, per_tensor: usize) -> Result<()> {
    let limit = (per_tensor > 0).then_some(per_tensor);
    let check = policy_gradient_check(cfg.seed, limit)?;
    println!(
        "max relative error {:.3e} over {} entries (worst {}[{}])",
        check.report.max_rel_error, check.report.checked, check.report.worst_tensor, check.report.worst_index
    );
    println!("corrupted gradient: max relative error {:.3e}", check.mutated.max_rel_error);
    if check.report.max_rel_error >= 1e-4 {
        bail!(CheckFailed("analytic and numeric gradients disagree".into()));
    }
    if check.mutated.max_rel_error <= 1e-2 {
        bail!(CheckFailed("a corrupted gradient went undetected".into()));
    }
    Ok(())
}

fn roundtrip(cfg: &RunConfig, trials: usize) -> Result<()> {
    let r = roundtrip_waypoints(trials, cfg.seed)?;
    println!("{} of {} neighbors recovered over {} trials", r.recovered, r.neighbors, r.trials);
    if r.recovered != r.neighbors {
        bail!(CheckFailed("some neighbors were not recovered".into()));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::GenWorlds => gen_worlds(&cfg),
        Command::Train => train(&cfg),
        Command::Eval => eval(&cfg),
        Command::Ablate { suite } => ablate(&cfg, suite),
        Command::Gradcheck { per_tensor } => gradcheck(&cfg, *per_tensor),
        Command::RoundtripWaypoints { trials } => roundtrip(&cfg, *trials),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 3,
        Some(
            Error::Config(_)
            | Error::WorldValidation { .. }
            | Error::Checkpoint(_)
            | Error::Json(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
