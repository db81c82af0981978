//! Experiment runner for few-shot GAN adaptation: configs, resumable jobs,
//! sweeps, diagnostics and reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod jobs;
pub mod manifest;
pub mod report;
pub mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, Overrides};
use crate::error::{exit, CliError, Result};
use crate::manifest::Status;

#[derive(Debug, Parser)]
#[command(name = "ewcgan", version, about = "Few-shot GAN adaptation with a Fisher-weighted anchor")]
pub struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use this single seed everywhere.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sweeps and pretraining; 0 = one per CPU.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Reuse outputs of jobs that already finished.
    #[arg(long, global = true)]
    pub resume: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a source GAN per pretraining seed and select the best.
    Pretrain,
    /// Estimate the diagonal Fisher of the selected source generator.
    Fisher,
    /// One adaptation run at the config's λ, shots and seed.
    Adapt {
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        shots: Option<usize>,
    },
    /// Score a checkpoint against the target (or the source) distribution.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Measure memorization against the few-shot set drawn with this seed.
        #[arg(long)]
        fewshot_seed: Option<u64>,
        /// Score against the source distribution instead of the target.
        #[arg(long)]
        source: bool,
    },
    /// Run every cell of the config's sweep grid.
    Sweep,
    /// Paired source/adapted outputs for each finished sweep cell.
    Correspondence,
    /// Per-layer weight change and Fisher profiles.
    AnalyzeWeights,
    /// Figures and report.md for a run directory.
    Report {
        /// Run directory; the config's output_dir when omitted.
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Rerun a job from its manifest and compare output digests.
    Replay {
        manifest: PathBuf,
        /// Where to write the reproduced outputs.
        #[arg(long)]
        into: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        workers: cli.workers,
    });
    cfg.validate()?;
    Ok(cfg)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let resume = cli.resume;
    match &cli.command {
        Command::Pretrain => {
            let cfg = load_config(&cli)?;
            let out = commands::pretrain(&cfg, resume)?;
            for s in &out.summaries {
                println!(
                    "seed {}: fd {:.4} coverage {:.3} hq {:.3} diversity {:.3}",
                    s.seed, s.fd, s.coverage, s.hq_fraction, s.diversity
                );
            }
            println!("selected seed {} -> {}", out.selected, out.source.display());
        }
        Command::Fisher => {
            let cfg = load_config(&cli)?;
            let f = commands::fisher(&cfg, resume)?;
            println!("fisher: {} parameters from {} samples", f.len(), f.samples);
        }
        Command::Adapt { lambda, shots } => {
            let mut cfg = load_config(&cli)?;
            if let Some(l) = lambda {
                cfg.adapt.lambda = *l;
            }
            if let Some(k) = shots {
                cfg.shots = *k;
            }
            cfg.validate()?;
            let row = commands::adapt(&cfg, resume)?;
            println!("{}", json(&row));
        }
        Command::Eval {
            checkpoint,
            fewshot_seed,
            source,
        } => {
            let cfg = load_config(&cli)?;
            let m = commands::eval(&cfg, checkpoint, *fewshot_seed, *source)?;
            println!("{}", json(&m));
        }
        Command::Sweep => {
            let cfg = load_config(&cli)?;
            let out = commands::sweep(&cfg, resume)?;
            let ok = out.rows.iter().filter(|r| r.status == Status::Ok).count();
            println!("sweep {}: {ok}/{} cells ok -> {}", cfg.name, out.rows.len(), out.dir.display());
            match out.worst_status() {
                Status::Ok => {}
                Status::Diverged => return Ok(exit::DIVERGENCE),
                Status::Failed => return Ok(exit::FAILURE),
            }
        }
        Command::Correspondence => {
            let cfg = load_config(&cli)?;
            for r in commands::correspondence(&cfg)? {
                println!("{}: mean paired distance {:.4}", r.run_id, r.mean_paired_distance);
            }
        }
        Command::AnalyzeWeights => {
            let cfg = load_config(&cli)?;
            let a = commands::analyze_weights(&cfg)?;
            println!("{} layer-change rows, {} layer-Fisher rows", a.delta.len(), a.fisher.len());
        }
        Command::Report { run } => {
            let dir = match run {
                Some(d) => d.clone(),
                None => load_config(&cli)?.output_dir,
            };
            let r = report::report(&dir)?;
            for o in &r.observations {
                println!("{}: {} [{}]", o.subject, o.statement, if o.holds { "holds" } else { "does not hold" });
            }
            println!("report -> {}", r.dir.join("report.md").display());
        }
        Command::Replay { manifest, into } => {
            let out_dir = match into {
                Some(d) => d.clone(),
                None => {
                    let parent = manifest.parent().unwrap_or(std::path::Path::new("."));
                    let name = parent.file_name().and_then(|n| n.to_str()).unwrap_or("run");
                    parent.with_file_name(format!("{name}.replay"))
                }
            };
            let r = jobs::replay(manifest, &out_dir)?;
            for (path, want, got) in &r.files {
                let verdict = if want == got { "identical" } else { "DIFFERENT" };
                println!("{}: {verdict}", path.display());
            }
            if !r.identical() {
                return Err(CliError::Failed("replay did not reproduce the recorded outputs".into()));
            }
        }
    }
    Ok(exit::OK)
}
