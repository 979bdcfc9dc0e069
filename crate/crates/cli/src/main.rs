//! `snlab`: signal-noise contrastive learning laboratory.
//!
//! Exit codes: 0 success, 1 stage error, 2 configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use snlab_cli::config::ExperimentConfig;
use snlab_cli::harness::{check_condition41, run_experiment, run_sweep, write_sweep_csv, RunScope};

#[derive(Parser)]
#[command(name = "snlab", version, about = "signal-noise contrastive learning laboratory")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the linear CNN and write the checkpoint plus loss history.
    Pretrain,
    /// Run the SimCLR pipeline end to end (pre-train, decompose, fine-tune).
    Finetune,
    /// Run the direct supervised baseline only.
    Baseline,
    /// Build the contrast kernel and write the spectral report.
    Spectral,
    /// Pre-train, then decompose the filters against the fine-tuning basis.
    Decompose,
    /// Full pipeline per the configured `pipeline` value, all analyses.
    Run,
    /// Grid sweep over the [sweep] section.
    Sweep,
    /// Evaluate the resource conditions and print warnings.
    CheckConditions,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--config PATH is required for this subcommand"))?;
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::CheckConditions => {
            let cfg = load_config(cli).map_err(config_error)?;
            let (params, _) = cfg.build_params().map_err(config_error)?;
            let warnings = check_condition41(&cfg, &params)?;
            if warnings.is_empty() {
                println!("all resource conditions satisfied (constant-1 proxies)");
            } else {
                for w in &warnings {
                    println!("warning: {w}");
                }
            }
            Ok(0)
        }
        Command::Sweep => {
            let cfg = load_config(cli).map_err(config_error)?;
            let (lines, cells) = run_sweep(&cfg)?;
            let dir = cfg
                .output_dir
                .clone()
                .ok_or_else(|| config_error(anyhow::anyhow!("sweep requires an output_dir")))?;
            let path = write_sweep_csv(&lines, &dir)?;
            println!("{} cells, {} rows -> {}", cells.len(), lines.len() - 1, path.display());
            Ok(0)
        }
        other => {
            let mut cfg = load_config(cli).map_err(config_error)?;
            let scope = match other {
                Command::Pretrain => RunScope::PretrainOnly,
                Command::Spectral => RunScope::SpectralOnly,
                Command::Decompose => RunScope::DecomposeOnly,
                Command::Finetune => {
                    cfg.pipeline = snlab_cli::config::Pipeline::SimclrFinetune;
                    RunScope::Full
                }
                Command::Baseline => {
                    cfg.pipeline = snlab_cli::config::Pipeline::Baseline;
                    RunScope::Full
                }
                _ => RunScope::Full,
            };
            let out_dir = cfg.output_dir.clone();
            let outcome = run_experiment(&cfg, out_dir.as_deref(), scope)?;
            for w in &outcome.condition41_warnings {
                eprintln!("condition warning: {w}");
            }
            for w in &outcome.concentration_warnings {
                eprintln!("concentration warning: {w}");
            }
            if let Some(s) = &outcome.spectral {
                println!(
                    "spectral: lambda1 {:.6e}, eps_hat {:.4}, mu_alignment {:.4}, lemma52 {}",
                    s.eigenvalues.first().copied().unwrap_or(f64::NAN),
                    s.eps_hat,
                    s.mu_alignment,
                    if s.lemma52_degenerate {
                        "degenerate"
                    } else if s.lemma52_all_pass {
                        "pass"
                    } else {
                        "flagged"
                    }
                );
            }
            if let Some(t) = &outcome.theorem53 {
                println!(
                    "structure: ratio+ {:.4e} ratio- {:.4e} (threshold {:.4e}) perp {:.4e} gamma0 {:.4e}",
                    t.ratio_plus, t.ratio_minus, t.ratio_threshold, t.max_perp_norm, t.gamma0
                );
            }
            if let Some(s) = &outcome.simclr {
                println!(
                    "simclr_finetune: steps {} train {:.6} test_loss {:.6} test_error {:.4}",
                    s.steps_run, s.final_train_loss, s.final_test_loss, s.final_test_error
                );
            }
            if let Some(s) = &outcome.baseline {
                println!(
                    "baseline: steps {} train {:.6} test_loss {:.6} test_error {:.4}",
                    s.steps_run, s.final_train_loss, s.final_test_loss, s.final_test_error
                );
            }
            if let Some(dir) = &out_dir {
                println!("outputs in {}: {}", dir.display(), outcome.outputs.join(", "));
            }
            Ok(0)
        }
    }
}

/// Tag an error as a configuration error (exit code 2).
fn config_error(e: anyhow::Error) -> anyhow::Error {
    e.context("configuration error")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_config = format!("{e:#}").contains("configuration error")
                || format!("{e:#}").contains("stage config");
            ExitCode::from(if is_config { 2 } else { 1 })
        }
    }
}
