//! `flowmot` binary: collect | train | eval | bench over a shared flat
//! config file. Exit codes: 0 success, 2 user/config error, 3 artifact
//! mismatch, 4 numerical abort.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bench::{bench_forward_backward, BenchConfig};
use crate::config::RunConfig;
use crate::data::io::{save_episodes, write_manifest, Manifest};
use crate::env::{expert::collect_demonstrations, tasks, EnvParams};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, run_trial, write_report_csv, write_report_json, write_trial_log, MotPolicy,
    TrialOptions, TrialResult,
};
use crate::model::load_checkpoint;
use crate::train::{norm_stats_from_tensors, train};

#[derive(Parser)]
#[command(name = "flowmot", version, about = "desk-scale flow-matching policy stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct RunArgs {
    /// Flat key=value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Episode subsampling fraction in (0, 1].
    #[arg(long)]
    data_fraction: Option<f64>,
    /// Checkpoint to evaluate or to resume training from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Collect scripted-expert demonstrations.
    Collect(RunArgs),
    /// Train the policy on collected episodes.
    Train(RunArgs),
    /// Evaluate a checkpoint with the SR/PS protocol.
    Eval(RunArgs),
    /// Benchmark dense vs block-structured attention training throughput.
    Bench(RunArgs),
}

fn resolve_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(f) = args.data_fraction {
        cfg.data_fraction = f;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn write_outputs_manifest(out_dir: &Path, command: &str, files: &[PathBuf]) -> Result<()> {
    let listing: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
    let mut doc = BTreeMap::new();
    doc.insert("command".to_string(), serde_json::json!(command));
    doc.insert("outputs".to_string(), serde_json::json!(listing));
    let path = out_dir.join(format!("manifest_{command}.json"));
    fs::write(
        &path,
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    Ok(())
}

pub fn cmd_collect(config: &RunConfig) -> Result<()> {
    let task = tasks::by_name(&config.task)?;
    let params = EnvParams::default();
    let episodes = collect_demonstrations(
        &task,
        &params,
        config.demos,
        config.seed,
        config.model.image_size,
        config.demo_action_noise,
    )?;
    let dir = config.episodes_dir();
    fs::create_dir_all(&dir)?;
    let files = save_episodes(&dir, &episodes)?;
    let manifest = Manifest {
        task_id: task.name.clone(),
        n_episodes: episodes.len(),
        total_frames: episodes.iter().map(|e| e.len()).sum(),
        seeds: episodes.iter().map(|e| e.seed).collect(),
    };
    let manifest_path = write_manifest(&dir, &manifest)?;
    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir)?;
    let mut outputs = files;
    outputs.push(manifest_path);
    write_outputs_manifest(out_dir, "collect", &outputs)?;
    println!(
        "collected {} episodes ({} frames) for task {} under {}",
        manifest.n_episodes,
        manifest.total_frames,
        task.name,
        dir.display()
    );
    Ok(())
}

pub fn cmd_train(config: &RunConfig, resume: Option<&Path>) -> Result<()> {
    let episodes = crate::data::io::load_task_episodes(&config.episodes_dir(), &config.task)?;
    let out_dir = Path::new(&config.out_dir);
    let outcome = train(config, episodes, out_dir, resume)?;
    write_outputs_manifest(
        out_dir,
        "train",
        &[outcome.checkpoint_path.clone(), outcome.best_path.clone(), outcome.log_path.clone()],
    )?;
    println!(
        "trained {} steps ({} parameters): fm {:.6} distill {:.6} -> {}",
        outcome.steps_run,
        outcome.num_params,
        outcome.final_losses.fm,
        outcome.final_losses.distill,
        outcome.checkpoint_path.display()
    );
    Ok(())
}

pub fn cmd_eval(config: &RunConfig, checkpoint: Option<&Path>) -> Result<()> {
    let out_dir = Path::new(&config.out_dir);
    let ckpt_path = match checkpoint {
        Some(p) => p.to_path_buf(),
        None => out_dir.join("checkpoint.bin"),
    };
    let ckpt = load_checkpoint(&ckpt_path)?;
    if ckpt.config != config.model {
        return Err(Error::Checkpoint(format!(
            "checkpoint at {} does not match the run config",
            ckpt_path.display()
        )));
    }
    let (params, extra) = ckpt.into_params()?;
    let norm = norm_stats_from_tensors(&extra)?;

    let eval_dir = out_dir.join("eval");
    let trials_dir = eval_dir.join("trials");
    fs::create_dir_all(&trials_dir)?;

    let env_params = EnvParams::default();
    let opts = TrialOptions {
        failure_window: config.failure_window,
        max_consecutive_failures: 3,
        image_size: config.model.image_size,
    };

    let mut results: BTreeMap<String, Vec<TrialResult>> = BTreeMap::new();
    let mut outputs = Vec::new();
    for task_name in config.eval_task_list() {
        let task = tasks::by_name(&task_name)?;
        let mut trials = Vec::with_capacity(config.trials_per_task);
        for i in 0..config.trials_per_task {
            let seed = config.eval_seed_base + i as u64;
            let mut policy = MotPolicy::new(&params, norm.clone(), config.execution_horizon);
            let mut log = Vec::new();
            let result =
                run_trial(&mut policy, &task, &env_params, seed, &opts, Some(&mut log))?;
            let log_path = trials_dir.join(format!("{}_{}.jsonl", task.name, seed));
            write_trial_log(&log_path, &log)?;
            outputs.push(log_path);
            trials.push(result);
        }
        results.insert(task.name.clone(), trials);
    }
    let report = aggregate(&results)?;
    let csv_path = eval_dir.join("report.csv");
    let json_path = eval_dir.join("report.json");
    write_report_csv(&csv_path, &report)?;
    write_report_json(&json_path, &report)?;
    outputs.push(csv_path);
    outputs.push(json_path);
    write_outputs_manifest(out_dir, "eval", &outputs)?;
    for t in &report.per_task {
        println!("task {}: SR {:.4} PS {:.4} over {} trials", t.task_id, t.sr, t.ps, t.n_trials);
    }
    println!("overall: SR {:.4} PS {:.4}", report.overall_sr, report.overall_ps);
    Ok(())
}

pub fn cmd_bench(config: &RunConfig) -> Result<()> {
    let bench_config = BenchConfig {
        model: config.model.clone(),
        batch_size: config.bench_batch_size,
        warmup_iters: config.bench_warmup_iters,
        measured_iters: config.bench_measured_iters,
        lambda_distill: config.lambda_distill,
        seed: config.seed,
        replicas: config.bench_replicas,
        variant: config.bench_variant,
    };
    let report = bench_forward_backward(&bench_config)?;
    let out_dir = Path::new(&config.out_dir);
    fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("bench.json");
    let txt_path = out_dir.join("bench.txt");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))? + "\n",
    )?;
    fs::write(&txt_path, report.to_table())?;
    write_outputs_manifest(out_dir, "bench", &[json_path, txt_path])?;
    print!("{}", report.to_table());
    Ok(())
}

fn run_command(command: Command) -> Result<()> {
    match command {
        Command::Collect(args) => cmd_collect(&resolve_config(&args)?),
        Command::Train(args) => {
            let cfg = resolve_config(&args)?;
            cmd_train(&cfg, args.checkpoint.as_deref())
        }
        Command::Eval(args) => {
            let cfg = resolve_config(&args)?;
            cmd_eval(&cfg, args.checkpoint.as_deref())
        }
        Command::Bench(args) => cmd_bench(&resolve_config(&args)?),
    }
}

/// Run the CLI against explicit argv (first element is the program name).
/// Used by the integration tests.
pub fn run_from_args<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Config(e.to_string()))?;
    run_command(cli.command)
}

/// Binary entry point; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run_command(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
