use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use magcn_core::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use magcn_core::experiment::{
    ablate, evaluate_checkpoint, history_csv, prepare_data, render_ablation_table, run, to_jsonl, write_run_outputs,
    AblationGrid, RunConfig,
};
use magcn_core::model::{init_params, load_checkpoint};
use magcn_core::par::Execution;
use magcn_core::training::gradcheck_model;

#[derive(Parser)]
#[command(
    name = "magcn",
    version,
    about = "Multimodal sentiment analysis with attentive graph convolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run config and write checkpoint and metrics
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset file
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sequential: bool,
    },
    /// Train every variant of an ablation grid and tabulate the results
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_grid)]
        grid: AblationGrid,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full model gradient on one sample
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Truncate the sample to this many steps
        #[arg(long, default_value_t = 4)]
        steps: usize,
    },
    /// Write a synthetic dataset described by a TOML spec
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> std::result::Result<AblationGrid, String> {
    s.parse().map_err(|e: magcn_core::Error| e.to_string())
}

fn cmd_train(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut rc = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(seed) = seed {
        rc.run.seed = seed;
    }
    if out.is_some() {
        rc.run.out = out;
    }
    let outcome = run(&rc, "train")?;
    let r = &outcome.report;
    println!(
        "{} samples  acc {:.4}  f1 {:.4}  macro-f1 {:.4}  loss {:.6}{}",
        r.samples,
        r.accuracy,
        r.f1_positive,
        r.macro_f1,
        r.mean_loss,
        if r.degenerate_f1 {
            "  (positive class absent)"
        } else {
            ""
        }
    );
    println!(
        "best epoch {} of {}",
        outcome.training.best_epoch,
        outcome.training.history.len()
    );
    if let Some(dir) = &rc.run.out {
        write_run_outputs(dir, &rc, &outcome)?;
        let csv = dir.join("history.csv");
        fs::write(&csv, history_csv(&outcome.training.history))
            .with_context(|| format!("writing {}", csv.display()))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_eval(checkpoint: PathBuf, data: PathBuf, sequential: bool) -> Result<()> {
    let ckp = load_checkpoint(&checkpoint)?;
    let dataset = load_dataset(&data)?;
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = evaluate_checkpoint(&ckp, &dataset, exec)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn cmd_ablate(config: PathBuf, grid: AblationGrid, out: Option<PathBuf>) -> Result<()> {
    let rc = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let rows = ablate(&rc, grid)?;
    print!("{}", render_ablation_table(&rows));
    let records = to_jsonl(&rows)?;
    match out.or(rc.run.out) {
        Some(dir) => {
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(format!("ablation-{grid}.jsonl"));
            fs::write(&path, records).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
        }
        None => print!("{records}"),
    }
    Ok(())
}

fn cmd_gradcheck(config: PathBuf, eps: f64, tolerance: f64, steps: usize) -> Result<bool> {
    let rc = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
    let data = prepare_data(&rc)?;
    let Some(sample) = data.train.samples.first().or(data.test.samples.first()) else {
        bail!("dataset is empty");
    };
    let sample = sample.truncated(steps);
    let params = init_params(&rc.model, rc.run.seed)?;
    let report = gradcheck_model(
        rc.run.execution,
        &rc.model,
        &params,
        &data.lexicon,
        &sample,
        eps,
        tolerance,
    )?;
    for e in &report.entries {
        println!(
            "{:<40} {:>10.3e}  {}",
            e.name,
            e.max_rel_error,
            if e.max_rel_error < tolerance { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} tensors, {} scalars, max relative error {:.3e} (tolerance {tolerance:e})",
        report.entries.len(),
        params.scalar_count(),
        report.max_rel_error()
    );
    Ok(report.passed())
}

fn cmd_gen_data(spec: PathBuf, out: PathBuf) -> Result<()> {
    let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: SyntheticSpec = toml::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let dataset = generate_synthetic(&spec)?;
    save_dataset(&dataset, &out)?;
    println!("wrote {} samples to {}", dataset.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => cmd_train(config, seed, out).map(|_| true),
        Command::Eval {
            checkpoint,
            data,
            sequential,
        } => cmd_eval(checkpoint, data, sequential).map(|_| true),
        Command::Ablate { config, grid, out } => cmd_ablate(config, grid, out).map(|_| true),
        Command::Gradcheck {
            config,
            eps,
            tolerance,
            steps,
        } => cmd_gradcheck(config, eps, tolerance, steps),
        Command::GenData { spec, out } => cmd_gen_data(spec, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
