//! Experiment configuration file and the on-disk layout of a run directory.

use std::path::{Path, PathBuf};

use ewcgan_core::adapt::AdaptConfig;
use ewcgan_core::datasets::{ring_spec, Component};
use ewcgan_core::fisher::FisherConfig;
use ewcgan_core::gan::TrainConfig;
use ewcgan_core::metrics::EvalConfig;
use ewcgan_core::{GaussianMixtureSpec, TargetTransform};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Ring {
        n_modes: usize,
        radius: f64,
        sigma: f64,
    },
    /// A mixture spec stored as its own TOML file.
    File { path: PathBuf },
    Mixture { components: Vec<Component> },
}

impl Default for SourceConfig {
    fn default() -> Self {
        SourceConfig::Ring {
            n_modes: 8,
            radius: 2.0,
            sigma: 0.05,
        }
    }
}

impl SourceConfig {
    pub fn spec(&self) -> Result<GaussianMixtureSpec> {
        Ok(match self {
            SourceConfig::Ring {
                n_modes,
                radius,
                sigma,
            } => ring_spec(*n_modes, *radius, *sigma)?,
            SourceConfig::File { path } => {
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "source spec {} does not exist",
                        path.display()
                    )));
                }
                GaussianMixtureSpec::load(path)?
            }
            SourceConfig::Mixture { components } => GaussianMixtureSpec::new(components.clone())?,
        })
    }
}

/// Axes of a sweep. Absent axes collapse to the single value in the base
/// sections of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub lambdas: Option<Vec<f64>>,
    pub shots: Option<Vec<usize>>,
    pub ladder: Option<Vec<TargetTransform>>,
    pub seeds: Vec<u64>,
    /// Name of an earlier sweep whose lowest mean Fréchet distance picks a
    /// λ that is appended to `lambdas`.
    pub lambda_star_from: Option<String>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        Self {
            lambdas: None,
            shots: None,
            ladder: None,
            seeds: vec![0, 1, 2],
            lambda_star_from: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Study name; sweep outputs land in `<output_dir>/sweeps/<name>`.
    pub name: String,
    pub output_dir: PathBuf,
    /// Sweep worker threads; 0 means one per CPU.
    pub workers: usize,
    /// Few-shot examples for single adaptation runs.
    pub shots: usize,
    /// Pretraining seeds; the best resulting model becomes the source.
    pub pretrain_seeds: Vec<u64>,
    /// Latent codes used for paired source/adapted outputs.
    pub correspondence_samples: usize,
    pub source: SourceConfig,
    pub target: TargetTransform,
    pub pretrain: TrainConfig,
    pub fisher: FisherConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub sweep: SweepAxes,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            output_dir: PathBuf::from("runs/standard"),
            workers: 0,
            shots: 10,
            pretrain_seeds: vec![0, 1, 2],
            correspondence_samples: 1000,
            source: SourceConfig::default(),
            target: standard_target(),
            pretrain: TrainConfig::default(),
            fisher: FisherConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepAxes::default(),
        }
    }
}

/// The standard few-shot task: the source ring shifted by half a unit.
pub fn standard_target() -> TargetTransform {
    TargetTransform::translate(0.5, 0.0)
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                CliError::Usage(format!("config {} does not exist", path.display()))
            }
            _ => CliError::io(path, e),
        })?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.pretrain_seeds = vec![seed];
            self.pretrain.seed = seed;
            self.fisher.seed = seed;
            self.adapt.seed = seed;
            self.sweep.seeds = vec![seed];
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |msg: String| Err(CliError::Usage(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return usage(format!("name {:?} is not a plain directory name", self.name));
        }
        if self.shots == 0 {
            return usage("shots must be ≥ 1".into());
        }
        if self.pretrain_seeds.is_empty() {
            return usage("pretrain_seeds is empty".into());
        }
        if self.correspondence_samples == 0 {
            return usage("correspondence_samples must be ≥ 1".into());
        }
        if self.sweep.seeds.is_empty() {
            return usage("sweep.seeds is empty".into());
        }
        if self.sweep.lambdas.as_ref().is_some_and(Vec::is_empty) && self.sweep.lambda_star_from.is_none() {
            return usage("sweep.lambdas is empty".into());
        }
        if self.sweep.shots.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
            return usage("sweep.shots must be a non-empty list of positive counts".into());
        }
        if self.sweep.ladder.as_ref().is_some_and(Vec::is_empty) {
            return usage("sweep.ladder is empty".into());
        }
        let core = |r: ewcgan_core::Result<()>| r.map_err(|e| CliError::Usage(e.to_string()));
        core(self.pretrain.validate())?;
        core(self.adapt.validate())?;
        for l in self.sweep.lambdas.iter().flatten() {
            core(AdaptConfig { lambda: *l, ..self.adapt.clone() }.validate())?;
        }
        if self.fisher.samples == 0 {
            return usage("fisher.samples must be ≥ 1".into());
        }
        if self.eval.samples < 2 || self.eval.pairs == 0 || !(self.eval.r_sigmas > 0.0) {
            return usage("eval needs samples ≥ 2, pairs ≥ 1 and r_sigmas > 0".into());
        }
        Ok(())
    }

    pub fn layout(&self) -> RunLayout {
        RunLayout::new(&self.output_dir)
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn pretrain_dir(&self) -> PathBuf {
        self.root.join("pretrain")
    }

    pub fn pretrain_seed_dir(&self, seed: u64) -> PathBuf {
        self.pretrain_dir().join(format!("seed_{seed}"))
    }

    pub fn source_checkpoint(&self) -> PathBuf {
        self.pretrain_dir().join("source.bin")
    }

    pub fn selection_csv(&self) -> PathBuf {
        self.pretrain_dir().join("selection.csv")
    }

    pub fn fisher_dir(&self) -> PathBuf {
        self.root.join("fisher")
    }

    pub fn fisher_file(&self) -> PathBuf {
        self.fisher_dir().join("fisher.bin")
    }

    pub fn adapt_dir(&self) -> PathBuf {
        self.root.join("adapt")
    }

    pub fn sweeps_dir(&self) -> PathBuf {
        self.root.join("sweeps")
    }

    pub fn sweep_dir(&self, name: &str) -> PathBuf {
        self.sweeps_dir().join(name)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}
