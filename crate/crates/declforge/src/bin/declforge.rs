//! Command-line front end: train, transfer, evaluate, and report.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use declforge::apnnet::{ApnNet, Checkpoint};
use declforge::config::{load_config, resolve, Overrides};
use declforge::report::{write_report, ReportError};
use declforge::trainer::{evaluate, run, MetricsRow, Mode, TrainError};

#[derive(Parser)]
#[command(
    name = "declforge",
    version,
    about = "Multi-task cooperative RL with a transferable shared decision layer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train several tasks jointly and save the shared decision layer.
    Pretrain(RunArgs),
    /// Train one new task around a saved decision layer.
    Transfer(RunArgs),
    /// Train one task from scratch.
    Train(RunArgs),
    /// Greedily evaluate a saved full checkpoint.
    Eval(EvalArgs),
    /// Summarize metrics CSVs into a table and a chart.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run description; `[transfer].checkpoint` locates the full checkpoint.
    #[arg(long)]
    config: PathBuf,
    /// Override the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics CSVs from finished runs.
    #[arg(required = true)]
    csv: Vec<PathBuf>,
    /// Where to write summary.csv and winrate.svg.
    #[arg(long)]
    out: PathBuf,
}

/// Exit code 1 for bad invocations and configs, 2 for failures at runtime.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Pretrain(args) => run_mode(Mode::Pretrain, &args),
        Command::Transfer(args) => run_mode(Mode::Transfer, &args),
        Command::Train(args) => run_mode(Mode::Scratch, &args),
        Command::Eval(args) => eval_cmd(&args),
        Command::Report(args) => report_cmd(&args),
    };
    match result {
        Ok(()) => {}
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn run_mode(mode: Mode, args: &RunArgs) -> Result<(), Failure> {
    let file = load_config(&args.config).map_err(usage)?;
    let overrides = Overrides {
        seed: args.seed,
        out: args.out.clone(),
        env_out: std::env::var_os("DECLFORGE_OUT").map(PathBuf::from),
    };
    let resolved = resolve(&file, mode, &overrides).map_err(usage)?;
    let cfg = &resolved.train;

    std::fs::create_dir_all(&resolved.out_dir)
        .with_context(|| format!("creating {}", resolved.out_dir.display()))
        .map_err(runtime)?;
    let csv_path = resolved.out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path)
        .with_context(|| format!("creating {}", csv_path.display()))
        .map_err(runtime)?;
    writeln!(csv, "{}", MetricsRow::CSV_HEADER).map_err(runtime)?;

    eprintln!(
        "{}: {} on {} task(s), {} env steps, d={}",
        cfg.run_id(),
        mode.as_str(),
        cfg.tasks.len(),
        cfg.total_env_steps,
        cfg.d
    );
    let mut stream_error: Option<std::io::Error> = None;
    let output = run(cfg, &mut |row| {
        eprintln!(
            "  [{}] env_steps={} train_steps={} win_rate={:.3} return={:.3} loss={:.5} omega={:.3} eps={:.3}",
            row.task,
            row.env_steps,
            row.train_steps,
            row.eval_win_rate,
            row.eval_return,
            row.loss,
            row.omega,
            row.epsilon
        );
        if stream_error.is_none() {
            stream_error = writeln!(csv, "{}", row.csv_line()).err();
        }
    })
    .map_err(|e| match e {
        TrainError::Setup(_) => usage(e),
        other => runtime(other),
    })?;
    if let Some(e) = stream_error {
        return Err(runtime(anyhow!(e).context("writing metrics rows")));
    }
    csv.flush().map_err(runtime)?;
    eprintln!("metrics: {}", csv_path.display());

    match mode {
        Mode::Pretrain => {
            let path = resolved.out_dir.join("decl.apnc");
            let single = cfg.tasks.len() == 1;
            output
                .decl_checkpoint(single)
                .save(&path)
                .map_err(runtime)?;
            eprintln!("decision layer: {}", path.display());
        }
        Mode::Scratch | Mode::Transfer => {
            let path = resolved.out_dir.join("net_full.apnc");
            output.full_checkpoint().save(&path).map_err(runtime)?;
            eprintln!("full checkpoint: {}", path.display());
        }
    }
    Ok(())
}

fn eval_cmd(args: &EvalArgs) -> Result<(), Failure> {
    let file = load_config(&args.config).map_err(usage)?;
    let section = file
        .transfer
        .as_ref()
        .ok_or_else(|| usage(anyhow!("eval needs [transfer].checkpoint pointing at a full checkpoint")))?;
    let ckpt = Checkpoint::load(&section.checkpoint).map_err(usage)?;
    let net = ApnNet::from_full_checkpoint(&ckpt).map_err(usage)?;
    let seed = args.seed.unwrap_or(file.run.seed);
    let episodes = file.train.eval_episodes;
    for task in &net.task_order {
        let result = evaluate(&net, task, episodes, seed).map_err(runtime)?;
        println!(
            "{task}: win_rate={:.4} mean_return={:.4} over {episodes} episodes",
            result.win_rate(),
            result.mean_return
        );
    }
    Ok(())
}

fn report_cmd(args: &ReportArgs) -> Result<(), Failure> {
    let summary = write_report(&args.csv, &args.out).map_err(|e| match &e {
        ReportError::Io { path, .. } if args.csv.contains(path) => usage(e),
        ReportError::Parse { .. } | ReportError::Empty => usage(e),
        ReportError::Io { .. } => runtime(e),
    })?;
    println!(
        "{:<36} {:<24} {:>4} {:>10} {:>10} {:>10} {:>12}",
        "group", "task", "runs", "final", "min", "max", "auc_norm"
    );
    for row in &summary {
        println!(
            "{:<36} {:<24} {:>4} {:>10.4} {:>10.4} {:>10.4} {:>12.4}",
            row.group,
            row.task,
            row.runs,
            row.final_win_rate_mean,
            row.final_win_rate_min,
            row.final_win_rate_max,
            row.auc_normalized_mean
        );
    }
    eprintln!(
        "report: {} and {}",
        args.out.join("summary.csv").display(),
        args.out.join("winrate.svg").display()
    );
    Ok(())
}
