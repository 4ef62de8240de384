//! Command-line front end: run training experiments, check gradients
//! against finite differences, summarize trained models, and dump episode
//! scripts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use bohp::fd::{run_suite, FdConfig, SuiteConfig, DEFAULT_SUITE_SEED};
use bohp::grad::VectorLoss;
use bohp::io::{
    curve_path, manifest_path, model_path, read_json, write_curve_csv, write_json, Manifest,
    ModelDoc,
};
use bohp::summary::summarize_network;
use bohp::tasks::{generate_episode, TaskConfig, TaskKind};
use bohp::trainer::{multi_run_with_seeds, Optimizer, TrainConfig};

#[derive(Parser)]
#[command(
    name = "bohp",
    version,
    about = "Train and inspect networks with gradient-trained Hebbian plasticity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed training experiment and write its artifacts.
    Train(TrainArgs),
    /// Check analytical gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Classify the connections of a trained model.
    Summarize(SummarizeArgs),
    /// Generate one episode script and print it as JSON.
    DumpEpisode(DumpEpisodeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "lower")]
enum TaskArg {
    Completion,
    OneShot,
    Reversal,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Completion => TaskKind::Completion,
            TaskArg::OneShot => TaskKind::OneShot,
            TaskArg::Reversal => TaskKind::Reversal,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "lower")]
enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "lower")]
enum LossArg {
    L1,
    Mse,
}

#[derive(Args)]
#[command(after_help = "Recommended settings:
  completion          defaults (SGD, --lr 0.01, --gamma 0.5, --episodes 50500)
  oneshot / reversal  --optimizer adam --lr 0.04 --gamma 0.02 --episodes 10500")]
struct TrainArgs {
    /// Task to train on.
    #[arg(long, value_enum, default_value = "completion")]
    task: TaskArg,
    /// Pattern length N.
    #[arg(long, default_value_t = 8)]
    n: usize,
    /// Total episodes per run, including the frozen tail.
    #[arg(long, default_value_t = 50_500)]
    episodes: usize,
    /// Evaluation-only episodes at the end of each run.
    #[arg(long, default_value_t = 500)]
    freeze_last: usize,
    /// Learning rate.
    #[arg(long = "lr", default_value_t = 0.01)]
    learning_rate: f64,
    #[arg(long, value_enum, default_value = "sgd")]
    optimizer: OptimizerArg,
    /// Hebbian trace decay constant in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Parameters start uniform in (-init-scale, init-scale).
    #[arg(long, default_value_t = 0.1)]
    init_scale: f64,
    /// Loss for vector targets.
    #[arg(long, value_enum, default_value = "l1")]
    loss: LossArg,
    /// Clamp plasticity coefficients to >= 0 after every update.
    #[arg(long)]
    clip_alpha_nonnegative: bool,
    /// Independent runs; run i uses seed + i.
    #[arg(long, default_value_t = 20)]
    runs: usize,
    /// Base seed.
    #[arg(long, env = "BOHP_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Random layer/episode instances to check.
    #[arg(long, default_value_t = 100)]
    instances: usize,
    /// Suite seed.
    #[arg(long, env = "BOHP_SEED", default_value_t = DEFAULT_SUITE_SEED)]
    seed: u64,
    /// Central-difference step size.
    #[arg(long, default_value_t = 1e-4)]
    epsilon: f64,
    /// Maximum allowed relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Optional directory for the full JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Trained model JSON.
    model: PathBuf,
    /// Optional directory for the summary JSON (the table always prints).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpEpisodeArgs {
    #[arg(long, value_enum, default_value = "completion")]
    task: TaskArg,
    /// Pattern length N.
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, env = "BOHP_SEED", default_value_t = 0)]
    seed: u64,
    /// Optional output file (defaults to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    // Exit quietly when the consumer of a pipe goes away (`bohp ... | head`);
    // Rust's default turns the resulting broken pipe into a panic.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Summarize(args) => cmd_summarize(args),
        Command::DumpEpisode(args) => cmd_dump_episode(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<ExitCode> {
    let cfg = TrainConfig {
        task: args.task.into(),
        n: args.n,
        episodes_total: args.episodes,
        freeze_last: args.freeze_last,
        learning_rate: args.learning_rate,
        optimizer: match args.optimizer {
            OptimizerArg::Sgd => Optimizer::Sgd,
            OptimizerArg::Adam => Optimizer::Adam,
        },
        gamma: args.gamma,
        init_scale: args.init_scale,
        clip_alpha_nonnegative: args.clip_alpha_nonnegative,
        completion_loss: match args.loss {
            LossArg::L1 => VectorLoss::L1,
            LossArg::Mse => VectorLoss::Mse,
        },
        seed: args.seed,
    };
    if args.runs == 0 {
        anyhow::bail!("--runs must be at least 1");
    }
    let seeds: Vec<u64> = (0..args.runs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let stats = multi_run_with_seeds::<f64>(&cfg, &seeds)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;
    write_curve_csv(&curve_path(&args.out), &stats)?;
    for run in &stats.runs {
        let index = seeds
            .iter()
            .position(|&s| s == run.seed)
            .expect("completed run seed comes from the seed list");
        let doc = ModelDoc::from_network(&run.network, cfg.task, run.seed);
        write_json(&model_path(&args.out, index), &doc)?;
    }
    let manifest = Manifest::new(&cfg, &seeds, &stats);
    write_json(&manifest_path(&args.out), &manifest)?;

    println!(
        "{} task: {}/{} runs completed, artifacts in {}",
        cfg.task,
        stats.runs.len(),
        seeds.len(),
        args.out.display()
    );
    if let Some(median) = manifest.frozen_error_median {
        println!("frozen-phase error median: {median}");
    }
    for d in &stats.diverged {
        eprintln!("run {} (seed {}) diverged: {}", d.run_index, d.seed, d.message);
    }
    Ok(if stats.diverged.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let suite = SuiteConfig {
        instances: args.instances,
        seed: args.seed,
    };
    let fd = FdConfig {
        epsilon: args.epsilon,
        tolerance: args.tolerance,
    };
    let report = run_suite::<f64>(&suite, &fd)?;
    let s = &report.summary;
    println!(
        "gradient check: {} instances, {} parameters, max rel err {:.3e}, mean rel err {:.3e}: {}",
        args.instances,
        s.params_checked,
        s.max_rel_err,
        s.mean_rel_err,
        if s.pass { "PASS" } else { "FAIL" }
    );
    if !s.pass {
        let mut offenders: Vec<_> = report
            .entries
            .iter()
            .filter(|e| e.rel_err > fd.tolerance)
            .collect();
        offenders.sort_by(|a, b| b.rel_err.partial_cmp(&a.rel_err).expect("finite errors"));
        println!("{} parameters over tolerance; worst:", offenders.len());
        for e in offenders.iter().take(10) {
            println!(
                "  instance {} {}: analytical {:.6e}, finite-difference {:.6e}, rel err {:.3e}",
                e.instance, e.param, e.analytical, e.fd, e.rel_err
            );
        }
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        write_json(&dir.join("gradcheck.json"), &report)?;
    }
    Ok(if s.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_summarize(args: SummarizeArgs) -> anyhow::Result<ExitCode> {
    let doc: ModelDoc = read_json(&args.model)?;
    let net = doc.to_network::<f64>()?;
    let summary = summarize_network(&net, doc.task);
    print!("{}", summary.render_table());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_dump_episode(args: DumpEpisodeArgs) -> anyhow::Result<ExitCode> {
    let cfg = TaskConfig {
        kind: args.task.into(),
        n: args.n,
        seed: args.seed,
    };
    let script = generate_episode::<f64>(&cfg)?;
    if let Some(path) = &args.out {
        write_json(path, &script)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&script)?);
    }
    Ok(ExitCode::SUCCESS)
}
