//! Self-contained, fully seeded units of work. Each job serializes into its
//! manifest so it can be rerun from that record alone.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ewcgan_core::adapt::{adapt, mean_paired_distance, paired_generate, AdaptConfig};
use ewcgan_core::datasets::{apply_transform, draw_few_shot};
use ewcgan_core::fisher::{estimate_fisher, per_layer_mean, write_layer_csv, FisherConfig};
use ewcgan_core::gan::{pretrain, TrainConfig};
use ewcgan_core::metrics::{evaluate, EvalConfig, MetricsReport};
use ewcgan_core::{latent_batch, stream_rng, streams, Checkpoint, FisherDiagonal};
use ewcgan_core::{GaussianMixtureSpec, TargetTransform};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{execute, FileDigest, Manifest, MANIFEST_FILE};

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

pub fn require(path: &Path, hint: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Dependency {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        })
    }
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainJob {
    pub source: GaussianMixtureSpec,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub seed: u64,
    pub fd: f64,
    pub coverage: f64,
    pub hq_fraction: f64,
    pub diversity: f64,
}

impl PretrainJob {
    pub const OUTPUTS: [&'static str; 3] = ["checkpoint.bin", "train_log.csv", "final_metrics.json"];

    fn run(&self, dir: &Path) -> Result<PretrainSummary> {
        let out = pretrain(&self.train, &self.source)?;
        out.checkpoint.save(&dir.join("checkpoint.bin"))?;
        let mut w = csv::Writer::from_writer(create(&dir.join("train_log.csv"))?);
        w.write_record(["iteration", "d_loss", "g_loss", "fd", "diversity", "coverage", "hq_fraction"])?;
        for r in &out.log {
            w.write_record([
                r.iteration.to_string(),
                r.d_loss.to_string(),
                r.g_loss.to_string(),
                r.eval.frechet_distance.to_string(),
                r.eval.diversity.to_string(),
                r.eval.mode_coverage.to_string(),
                r.eval.high_quality_fraction.to_string(),
            ])?;
        }
        w.flush().map_err(|e| CliError::io(dir, e))?;
        let eval = EvalConfig {
            seed: self.train.seed,
            ..self.eval.clone()
        };
        let m = evaluate(&out.checkpoint.generator, &out.checkpoint.g, &self.source, None, &eval)?;
        let path = dir.join("final_metrics.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m).expect("report serializes") + "\n")
            .map_err(|e| CliError::io(path, e))?;
        Ok(PretrainSummary {
            seed: self.train.seed,
            fd: m.frechet_distance,
            coverage: m.mode_coverage,
            hq_fraction: m.high_quality_fraction,
            diversity: m.diversity,
        })
    }

    pub fn execute(&self, dir: &Path) -> Result<PretrainSummary> {
        let id = format!("pretrain_s{}", self.train.seed);
        execute(dir, &id, "pretrain", self, &[], |d| {
            Ok((self.run(d)?, PretrainJob::OUTPUTS.to_vec()))
        })
        .map(|(v, _)| v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherJob {
    pub source_checkpoint: PathBuf,
    pub fisher: FisherConfig,
}

impl FisherJob {
    pub const OUTPUTS: [&'static str; 2] = ["fisher.bin", "fisher_layers.csv"];

    fn run(&self, dir: &Path) -> Result<FisherDiagonal> {
        let ck = Checkpoint::load(&self.source_checkpoint)?;
        let f = estimate_fisher(&ck, &self.fisher)?;
        f.save(&dir.join("fisher.bin"))?;
        let layout = match self.fisher.network {
            ewcgan_core::fisher::Network::Generator => ck.g.layout(),
            ewcgan_core::fisher::Network::Discriminator => ck.d.layout(),
        };
        let mut w = create(&dir.join("fisher_layers.csv"))?;
        write_layer_csv(&mut w, &per_layer_mean(&f, layout)?)?;
        w.flush().map_err(|e| CliError::io(dir, e))?;
        Ok(f)
    }

    pub fn execute(&self, dir: &Path) -> Result<FisherDiagonal> {
        execute(dir, "fisher", "fisher", self, &[self.source_checkpoint.clone()], |d| {
            Ok((self.run(d)?, FisherJob::OUTPUTS.to_vec()))
        })
        .map(|(v, _)| v)
    }
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub lambda: f64,
    pub shots: usize,
    pub seed: u64,
    pub fd: f64,
    pub diversity: f64,
    pub coverage: f64,
    pub hq_fraction: f64,
    pub memorization: f64,
    /// Index into the sweep's target ladder.
    pub target: usize,
    pub delta: f64,
    pub paired_distance: f64,
    pub ewc_penalty: f64,
    pub status: crate::manifest::Status,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellJob {
    pub run_id: String,
    pub lambda: f64,
    pub shots: usize,
    pub seed: u64,
    pub target_index: usize,
    pub transform: TargetTransform,
    pub source: GaussianMixtureSpec,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub correspondence_samples: usize,
    pub source_checkpoint: PathBuf,
    pub fisher: PathBuf,
}

pub fn run_id(target: usize, shots: usize, lambda: f64, seed: u64) -> String {
    format!("t{target}_k{shots}_l{lambda}_s{seed}")
}

impl CellJob {
    pub const OUTPUTS: [&'static str; 3] = ["checkpoint.bin", "drift.csv", "metrics.csv"];

    pub fn target_spec(&self) -> Result<GaussianMixtureSpec> {
        Ok(apply_transform(&self.source, &self.transform)?)
    }

    fn run(&self, dir: &Path) -> Result<SweepRow> {
        let source = Checkpoint::load(&self.source_checkpoint)?;
        let fisher = FisherDiagonal::load(&self.fisher)?;
        let target = self.target_spec()?;
        let fewshot = draw_few_shot(&target, self.shots, self.seed)?;
        let cfg = AdaptConfig {
            lambda: self.lambda,
            seed: self.seed,
            ..self.adapt.clone()
        };
        let out = adapt(&source, &fisher, None, &fewshot, &cfg)?;
        out.checkpoint.save(&dir.join("checkpoint.bin"))?;
        let mut w = create(&dir.join("drift.csv"))?;
        out.drift.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(dir, e))?;

        let eval = EvalConfig {
            seed: self.seed,
            ..self.eval.clone()
        };
        let m: MetricsReport = evaluate(
            &out.checkpoint.generator,
            &out.checkpoint.g,
            &target,
            Some(&fewshot.samples),
            &eval,
        )?;
        let z = latent_batch(
            &mut stream_rng(self.seed, streams::EVAL_LATENT),
            self.correspondence_samples,
            source.latent_dim(),
        );
        let (a, b) = paired_generate(&source, &out.checkpoint, &z)?;
        let last = out.drift.last();
        let row = SweepRow {
            run_id: self.run_id.clone(),
            lambda: self.lambda,
            shots: self.shots,
            seed: self.seed,
            fd: m.frechet_distance,
            diversity: m.diversity,
            coverage: m.mode_coverage,
            hq_fraction: m.high_quality_fraction,
            memorization: m.memorization_fraction.unwrap_or(f64::NAN),
            target: self.target_index,
            delta: last.map_or(0.0, |r| r.delta_overall),
            paired_distance: mean_paired_distance(&a, &b)?,
            ewc_penalty: last.map_or(0.0, |r| r.ewc_penalty),
            status: crate::manifest::Status::Ok,
        };
        let mut w = csv::Writer::from_writer(create(&dir.join("metrics.csv"))?);
        w.serialize(&row)?;
        w.flush().map_err(|e| CliError::io(dir, e))?;
        Ok(row)
    }

    pub fn execute(&self, dir: &Path) -> Result<SweepRow> {
        let inputs = [self.source_checkpoint.clone(), self.fisher.clone()];
        execute(dir, &self.run_id, "cell", self, &inputs, |d| {
            Ok((self.run(d)?, CellJob::OUTPUTS.to_vec()))
        })
        .map(|(v, _)| v)
    }

    /// Row recorded by an earlier successful run in `dir`.
    pub fn completed_row(dir: &Path) -> Option<SweepRow> {
        Manifest::completed(dir)?;
        let mut r = csv::Reader::from_path(dir.join("metrics.csv")).ok()?;
        r.deserialize().next()?.ok()
    }

    /// Placeholder row for a cell that did not finish.
    pub fn failed_row(&self, status: crate::manifest::Status) -> SweepRow {
        SweepRow {
            run_id: self.run_id.clone(),
            lambda: self.lambda,
            shots: self.shots,
            seed: self.seed,
            fd: f64::NAN,
            diversity: f64::NAN,
            coverage: f64::NAN,
            hq_fraction: f64::NAN,
            memorization: f64::NAN,
            target: self.target_index,
            delta: f64::NAN,
            paired_distance: f64::NAN,
            ewc_penalty: f64::NAN,
            status,
        }
    }
}

/// Outcome of rerunning a job from its manifest.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub out_dir: PathBuf,
    /// (file, recorded digest, reproduced digest)
    pub files: Vec<(PathBuf, String, String)>,
}

impl Replay {
    pub fn identical(&self) -> bool {
        !self.files.is_empty() && self.files.iter().all(|(_, a, b)| a == b)
    }
}

/// Reruns the job recorded at `manifest_path` into `out_dir` and compares
/// every output digest against the record.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<Replay> {
    let m = Manifest::load(manifest_path)?;
    for input in &m.inputs {
        require(&input.path, "the manifest refers to an input that is gone")?;
        if FileDigest::of(&input.path)?.digest != input.digest {
            return Err(CliError::Dependency {
                path: input.path.clone(),
                hint: "input changed since the run was recorded".into(),
            });
        }
    }
    let bad_job = |e: serde_json::Error| CliError::Failed(format!("manifest job: {e}"));
    match m.command.as_str() {
        "pretrain" => {
            let job: PretrainJob = serde_json::from_value(m.job.clone()).map_err(bad_job)?;
            job.execute(out_dir)?;
        }
        "fisher" => {
            let job: FisherJob = serde_json::from_value(m.job.clone()).map_err(bad_job)?;
            job.execute(out_dir)?;
        }
        "cell" => {
            let job: CellJob = serde_json::from_value(m.job.clone()).map_err(bad_job)?;
            job.execute(out_dir)?;
        }
        other => return Err(CliError::Failed(format!("cannot replay command {other:?}"))),
    }
    let fresh = Manifest::load(&out_dir.join(MANIFEST_FILE))?;
    let files = m
        .outputs
        .iter()
        .map(|o| {
            let got = fresh
                .outputs
                .iter()
                .find(|f| f.path == o.path)
                .map_or_else(String::new, |f| f.digest.clone());
            (o.path.clone(), o.digest.clone(), got)
        })
        .collect();
    Ok(Replay {
        out_dir: out_dir.to_path_buf(),
        files,
    })
}
