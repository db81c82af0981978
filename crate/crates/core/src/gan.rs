//! Adversarial training: discriminator/generator losses, the alternating
//! Adam step, source-domain pretraining and plain few-shot fine-tuning.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::checkpoint::Checkpoint;
use crate::datasets::{GaussianMixtureSpec, MixtureSampler};
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::ewc::EwcTerm;
use crate::metrics::{self, EvalConfig, MetricsReport};
use crate::models::{forward, MlpSpec, ParamVector, DEFAULT_LEAKY_ALPHA};
use crate::optim::{Adam, AdamConfig};
use crate::{latent_batch, stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// `−E[log(1 − D(G(z)))]` minimized by G, written as `−bce(D(G(z)), 0)`.
    Minimax,
    /// `−E[log D(G(z))]`, i.e. `bce(D(G(z)), 1)`.
    NonSaturating,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub latent_dim: usize,
    pub g_hidden: Vec<usize>,
    pub d_hidden: Vec<usize>,
    pub leaky_alpha: f64,
    pub seed: u64,
    pub loss: LossVariant,
    pub d_steps_per_g: usize,
    /// Iterations between log records and intermediate checkpoints.
    pub checkpoint_interval: u64,
    /// Generated samples scored at each log record.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 20_000,
            batch_size: 128,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            latent_dim: 4,
            g_hidden: vec![64, 64],
            d_hidden: vec![64, 64],
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
            seed: 0,
            loss: LossVariant::NonSaturating,
            d_steps_per_g: 1,
            checkpoint_interval: 1000,
            eval_samples: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Input(format!("{name} must be positive, got {v}")))
            }
        };
        if self.iterations == 0 {
            return Err(Error::Input("iterations must be ≥ 1".into()));
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.d_steps_per_g == 0 {
            return Err(Error::Input(
                "batch size, latent dim and D steps per G step must be ≥ 1".into(),
            ));
        }
        if self.checkpoint_interval == 0 || self.eval_samples < 2 {
            return Err(Error::Input(
                "checkpoint interval must be ≥ 1 and eval samples ≥ 2".into(),
            ));
        }
        positive("lr_g", self.lr_g)?;
        positive("lr_d", self.lr_d)?;
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Input(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        self.generator_spec().validate()?;
        self.discriminator_spec().validate()
    }

    pub fn generator_spec(&self) -> MlpSpec {
        let mut s = MlpSpec::generator(self.latent_dim, &self.g_hidden);
        s.leaky_alpha = self.leaky_alpha;
        s
    }

    pub fn discriminator_spec(&self) -> MlpSpec {
        let mut s = MlpSpec::discriminator(&self.d_hidden);
        s.leaky_alpha = self.leaky_alpha;
        s
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

fn require_rows(name: &str, a: &Array) -> Result<()> {
    if a.shape().len() != 2 || a.rows() == 0 {
        return Err(Error::Input(format!("{name} batch is empty")));
    }
    Ok(())
}

/// `bce(D(real), 1) + bce(D(fake), 0)` recorded on `tape`.
pub fn d_loss_on_tape(
    tape: &mut Tape,
    d_spec: &MlpSpec,
    d_params: Var,
    real: Var,
    fake: Var,
) -> Result<Var> {
    let (nr, nf) = (tape.value(real).rows(), tape.value(fake).rows());
    if tape.value(real).cols() != tape.value(fake).cols() {
        return Err(Error::Dimension("real and fake batches differ in width".into()));
    }
    let lr = forward(tape, d_spec, d_params, real)?;
    let lf = forward(tape, d_spec, d_params, fake)?;
    let a = tape.bce_with_logits(lr, &vec![1.0; nr])?;
    let b = tape.bce_with_logits(lf, &vec![0.0; nf])?;
    tape.add(a, b)
}

/// Generator loss for logits `D(G(z))` already on `tape`.
pub fn g_loss_from_logits(tape: &mut Tape, logits: Var, variant: LossVariant) -> Result<Var> {
    let n = tape.value(logits).len();
    match variant {
        LossVariant::NonSaturating => tape.bce_with_logits(logits, &vec![1.0; n]),
        LossVariant::Minimax => {
            let b = tape.bce_with_logits(logits, &vec![0.0; n])?;
            tape.scale(b, -1.0)
        }
    }
}

pub fn g_loss_on_tape(
    tape: &mut Tape,
    g_spec: &MlpSpec,
    g_params: Var,
    d_spec: &MlpSpec,
    d_params: Var,
    z: Var,
    variant: LossVariant,
) -> Result<Var> {
    let x = forward(tape, g_spec, g_params, z)?;
    let logits = forward(tape, d_spec, d_params, x)?;
    g_loss_from_logits(tape, logits, variant)
}

/// Discriminator loss value.
pub fn d_loss(d_spec: &MlpSpec, d: &ParamVector, real: &Array, fake: &Array) -> Result<f64> {
    require_rows("real", real)?;
    require_rows("fake", fake)?;
    let mut tape = Tape::new();
    let p = tape.constant(Array::vector(d.values().to_vec()))?;
    let r = tape.constant(real.clone())?;
    let f = tape.constant(fake.clone())?;
    let l = d_loss_on_tape(&mut tape, d_spec, p, r, f)?;
    tape.value(l).item()
}

/// Generator loss value.
pub fn g_loss(
    g_spec: &MlpSpec,
    g: &ParamVector,
    d_spec: &MlpSpec,
    d: &ParamVector,
    z: &Array,
    variant: LossVariant,
) -> Result<f64> {
    require_rows("latent", z)?;
    let mut tape = Tape::new();
    let gp = tape.constant(Array::vector(g.values().to_vec()))?;
    let dp = tape.constant(Array::vector(d.values().to_vec()))?;
    let zv = tape.constant(z.clone())?;
    let l = g_loss_on_tape(&mut tape, g_spec, gp, d_spec, dp, zv, variant)?;
    tape.value(l).item()
}

/// Losses observed during one generator update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GStep {
    pub g_loss: f64,
    /// Unweighted penalty value (0 when no penalty term was supplied).
    pub penalty: f64,
    /// Objective actually differentiated: `g_loss + λ·penalty`.
    pub total: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub d_loss: f64,
    pub g: GStep,
}

/// Mutable state of one adversarial training run.
#[derive(Clone, Debug)]
pub struct GanState {
    pub g_spec: MlpSpec,
    pub d_spec: MlpSpec,
    pub g: ParamVector,
    pub d: ParamVector,
    opt_g: Adam,
    opt_d: Adam,
    latent_rng: ChaCha8Rng,
    pub loss: LossVariant,
    /// Generated samples per D and G update.
    pub fake_batch: usize,
    pub iteration: u64,
}

fn divergence(iteration: u64, what: &str, err: Error) -> Error {
    match err {
        Error::NonFinite { .. } | Error::Numeric(_) => Error::Divergence {
            iteration,
            detail: format!("{what}: {err}"),
        },
        other => other,
    }
}

impl GanState {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        g_spec: MlpSpec,
        d_spec: MlpSpec,
        g: ParamVector,
        d: ParamVector,
        opt_g: AdamConfig,
        opt_d: AdamConfig,
        latent_seed: u64,
        loss: LossVariant,
        fake_batch: usize,
    ) -> Result<Self> {
        if g.len() != g_spec.param_count() || d.len() != d_spec.param_count() {
            return Err(Error::Dimension("parameter vectors do not match specs".into()));
        }
        if g_spec.output_width() != d_spec.input_width() {
            return Err(Error::Dimension(format!(
                "generator emits {} values, discriminator reads {}",
                g_spec.output_width(),
                d_spec.input_width()
            )));
        }
        if fake_batch == 0 {
            return Err(Error::Input("fake batch must be ≥ 1".into()));
        }
        Ok(Self {
            opt_g: Adam::new(g.len(), opt_g),
            opt_d: Adam::new(d.len(), opt_d),
            latent_rng: stream_rng(latent_seed, streams::LATENT),
            g_spec,
            d_spec,
            g,
            d,
            loss,
            fake_batch,
            iteration: 0,
        })
    }

    fn latent(&mut self) -> Array {
        latent_batch(&mut self.latent_rng, self.fake_batch, self.g_spec.input_width())
    }

    /// One discriminator update on `real` against fresh fakes. An optional
    /// penalty anchors the discriminator parameters.
    pub fn d_step(&mut self, real: &Array, ewc: Option<&EwcTerm>) -> Result<f64> {
        require_rows("real", real)?;
        let z = self.latent();
        let it = self.iteration;
        let (loss, grad) = (|| {
            let mut tape = Tape::new();
            let gp = tape.constant(Array::vector(self.g.values().to_vec()))?;
            let zv = tape.constant(z)?;
            let fake = forward(&mut tape, &self.g_spec, gp, zv)?;
            let fake = tape.constant(tape.value(fake).clone())?;
            let dp = tape.param(Array::vector(self.d.values().to_vec()))?;
            let rv = tape.constant(real.clone())?;
            let loss = d_loss_on_tape(&mut tape, &self.d_spec, dp, rv, fake)?;
            let root = match ewc {
                Some(t) if t.lambda > 0.0 => {
                    let p = t.record(&mut tape, dp)?;
                    let wp = tape.scale(p, t.lambda)?;
                    tape.add(loss, wp)?
                }
                _ => loss,
            };
            let value = tape.value(loss).item()?;
            Ok::<_, Error>((value, tape.backward(root)?.wrt(dp)))
        })()
        .map_err(|e| divergence(it, "discriminator step", e))?;
        self.opt_d
            .step(self.d.values_mut(), &grad)
            .map_err(|e| divergence(it, "discriminator update", e))?;
        Ok(loss)
    }

    /// One generator update with fresh latents. With a penalty term the
    /// differentiated objective is `g_loss + λ·penalty`; at `λ = 0` the
    /// penalty is only measured.
    pub fn g_step(&mut self, ewc: Option<&EwcTerm>) -> Result<GStep> {
        let z = self.latent();
        let it = self.iteration;
        let (step, grad) = (|| {
            let mut tape = Tape::new();
            let gp = tape.param(Array::vector(self.g.values().to_vec()))?;
            let dp = tape.constant(Array::vector(self.d.values().to_vec()))?;
            let zv = tape.constant(z)?;
            let loss = g_loss_on_tape(&mut tape, &self.g_spec, gp, &self.d_spec, dp, zv, self.loss)?;
            let g_loss = tape.value(loss).item()?;
            let (root, penalty, total) = match ewc {
                Some(t) => {
                    let p = t.record(&mut tape, gp)?;
                    let pv = tape.value(p).item()?;
                    if t.lambda > 0.0 {
                        let wp = tape.scale(p, t.lambda)?;
                        let total = tape.add(loss, wp)?;
                        (total, pv, tape.value(total).item()?)
                    } else {
                        (loss, pv, g_loss)
                    }
                }
                None => (loss, 0.0, g_loss),
            };
            let grad = tape.backward(root)?.wrt(gp);
            Ok::<_, Error>((
                GStep {
                    g_loss,
                    penalty,
                    total,
                },
                grad,
            ))
        })()
        .map_err(|e| divergence(it, "generator step", e))?;
        self.opt_g
            .step(self.g.values_mut(), &grad)
            .map_err(|e| divergence(it, "generator update", e))?;
        Ok(step)
    }

    /// One D update followed by one G update.
    pub fn train_step(&mut self, real: &Array) -> Result<StepStats> {
        let d_loss = self.d_step(real, None)?;
        let g = self.g_step(None)?;
        self.iteration += 1;
        Ok(StepStats { d_loss, g })
    }

    pub fn to_checkpoint(&self, config_digest: &str, seed: u64) -> Checkpoint {
        Checkpoint {
            generator: self.g_spec.clone(),
            discriminator: self.d_spec.clone(),
            g: self.g.clone(),
            d: self.d.clone(),
            config_digest: config_digest.to_string(),
            seed,
            iteration: self.iteration,
        }
    }
}

/// Source of "real" batches.
pub trait RealSource {
    fn next_batch(&mut self) -> Array;
}

/// Fresh i.i.d. draws from a mixture.
pub struct MixtureStream<'a> {
    sampler: MixtureSampler<'a>,
    rng: ChaCha8Rng,
    batch: usize,
}

impl<'a> MixtureStream<'a> {
    pub fn new(spec: &'a GaussianMixtureSpec, seed: u64, batch: usize) -> Self {
        Self {
            sampler: MixtureSampler::new(spec),
            rng: stream_rng(seed, streams::DATA),
            batch,
        }
    }
}

impl RealSource for MixtureStream<'_> {
    fn next_batch(&mut self) -> Array {
        self.sampler.batch(&mut self.rng, self.batch)
    }
}

/// Batches from a fixed few-shot set: the whole set when `batch == k`,
/// otherwise rows drawn uniformly with replacement.
pub struct FewShotStream<'a> {
    samples: &'a Array,
    rng: ChaCha8Rng,
    batch: usize,
}

impl<'a> FewShotStream<'a> {
    pub fn new(samples: &'a Array, seed: u64, batch: usize) -> Result<Self> {
        require_rows("few-shot", samples)?;
        if batch == 0 {
            return Err(Error::Input("batch must be ≥ 1".into()));
        }
        Ok(Self {
            samples,
            rng: stream_rng(seed, streams::FEW_SHOT_BATCH),
            batch,
        })
    }
}

impl RealSource for FewShotStream<'_> {
    fn next_batch(&mut self) -> Array {
        let k = self.samples.rows();
        if self.batch == k {
            return self.samples.clone();
        }
        let c = self.samples.cols();
        let mut data = Vec::with_capacity(self.batch * c);
        for _ in 0..self.batch {
            let i = self.rng.random_range(0..k);
            data.extend_from_slice(self.samples.row(i));
        }
        Array::matrix(self.batch, c, data).expect("batch×cols")
    }
}

/// One row of the pretraining log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    pub eval: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct Pretrained {
    pub checkpoint: Checkpoint,
    pub log: Vec<TrainRecord>,
}

/// Untrained networks for `config`, initialized from its seed.
pub fn initial_checkpoint(config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    Ok(fresh_state(config)?.to_checkpoint(&config.digest(), config.seed))
}

fn fresh_state(config: &TrainConfig) -> Result<GanState> {
    let g_spec = config.generator_spec();
    let d_spec = config.discriminator_spec();
    let g = crate::models::init_params_with(&g_spec, &mut stream_rng(config.seed, streams::INIT_G))?;
    let d = crate::models::init_params_with(&d_spec, &mut stream_rng(config.seed, streams::INIT_D))?;
    GanState::new(
        g_spec,
        d_spec,
        g,
        d,
        AdamConfig::new(config.lr_g, config.beta1, config.beta2),
        AdamConfig::new(config.lr_d, config.beta1, config.beta2),
        config.seed,
        config.loss,
        config.batch_size,
    )
}

/// Trains from scratch on `spec`. `on_checkpoint` sees every intermediate
/// checkpoint at the configured interval (and the final one).
pub fn pretrain_with(
    config: &TrainConfig,
    spec: &GaussianMixtureSpec,
    mut on_checkpoint: impl FnMut(&Checkpoint, &TrainRecord) -> Result<()>,
) -> Result<Pretrained> {
    config.validate()?;
    spec.validate()?;
    let mut state = fresh_state(config)?;
    let mut source = MixtureStream::new(spec, config.seed, config.batch_size);
    run(&mut state, &mut source, config, spec, config.iterations, &mut on_checkpoint)
}

pub fn pretrain(config: &TrainConfig, spec: &GaussianMixtureSpec) -> Result<Pretrained> {
    pretrain_with(config, spec, |_, _| Ok(()))
}

/// Continues source training from `checkpoint` for `extra` iterations with a
/// fresh optimizer. Random streams are keyed by `(seed, checkpoint.iteration)`.
pub fn continue_training(
    checkpoint: &Checkpoint,
    config: &TrainConfig,
    spec: &GaussianMixtureSpec,
    extra: u64,
) -> Result<Pretrained> {
    config.validate()?;
    let key = config.seed ^ checkpoint.iteration.rotate_left(32);
    let mut state = GanState::new(
        checkpoint.generator.clone(),
        checkpoint.discriminator.clone(),
        checkpoint.g.clone(),
        checkpoint.d.clone(),
        AdamConfig::new(config.lr_g, config.beta1, config.beta2),
        AdamConfig::new(config.lr_d, config.beta1, config.beta2),
        key,
        config.loss,
        config.batch_size,
    )?;
    state.iteration = checkpoint.iteration;
    let mut source = MixtureStream::new(spec, key, config.batch_size);
    run(&mut state, &mut source, config, spec, extra, &mut |_, _| Ok(()))
}

fn run(
    state: &mut GanState,
    source: &mut dyn RealSource,
    config: &TrainConfig,
    spec: &GaussianMixtureSpec,
    iterations: u64,
    on_checkpoint: &mut dyn FnMut(&Checkpoint, &TrainRecord) -> Result<()>,
) -> Result<Pretrained> {
    let digest = config.digest();
    let eval_cfg = EvalConfig {
        samples: config.eval_samples,
        pairs: config.eval_samples,
        seed: config.seed,
        ..EvalConfig::default()
    };
    let mut log = Vec::new();
    let end = state.iteration + iterations;
    while state.iteration < end {
        let mut d_loss = 0.0;
        for _ in 0..config.d_steps_per_g {
            let real = source.next_batch();
            d_loss = state.d_step(&real, None)?;
        }
        let g = state.g_step(None)?;
        state.iteration += 1;
        if state.iteration % config.checkpoint_interval == 0 || state.iteration == end {
            let eval = metrics::evaluate(&state.g_spec, &state.g, spec, None, &eval_cfg)?;
            let record = TrainRecord {
                iteration: state.iteration,
                d_loss,
                g_loss: g.g_loss,
                eval,
            };
            on_checkpoint(&state.to_checkpoint(&digest, config.seed), &record)?;
            log.push(record);
        }
    }
    Ok(Pretrained {
        checkpoint: state.to_checkpoint(&digest, config.seed),
        log,
    })
}

/// Optimizer and batching settings for continuing adversarial training on a
/// few-shot set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub iterations: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Real rows per D step; `None` uses the whole few-shot set.
    pub batch_size: Option<usize>,
    pub fake_batch_size: usize,
    pub seed: u64,
    pub loss: LossVariant,
    pub d_steps_per_g: usize,
}

/// Adversarial fine-tuning state shared by plain fine-tuning and penalized
/// adaptation; both drive [`FineTuner::step`].
pub struct FineTuner<'a> {
    pub state: GanState,
    source: FewShotStream<'a>,
    d_steps: usize,
}

impl<'a> FineTuner<'a> {
    pub fn new(source: &Checkpoint, reals: &'a Array, cfg: &FineTuneConfig) -> Result<Self> {
        let batch = cfg.batch_size.unwrap_or(reals.rows());
        let state = GanState::new(
            source.generator.clone(),
            source.discriminator.clone(),
            source.g.clone(),
            source.d.clone(),
            AdamConfig::new(cfg.lr_g, cfg.beta1, cfg.beta2),
            AdamConfig::new(cfg.lr_d, cfg.beta1, cfg.beta2),
            cfg.seed,
            cfg.loss,
            cfg.fake_batch_size,
        )?;
        if cfg.d_steps_per_g == 0 {
            return Err(Error::Input("D steps per G step must be ≥ 1".into()));
        }
        Ok(Self {
            state,
            source: FewShotStream::new(reals, cfg.seed, batch)?,
            d_steps: cfg.d_steps_per_g,
        })
    }

    pub fn step(&mut self, ewc_g: Option<&EwcTerm>, ewc_d: Option<&EwcTerm>) -> Result<StepStats> {
        let mut d_loss = 0.0;
        for _ in 0..self.d_steps {
            let real = self.source.next_batch();
            d_loss = self.state.d_step(&real, ewc_d)?;
        }
        let g = self.state.g_step(ewc_g)?;
        self.state.iteration += 1;
        Ok(StepStats { d_loss, g })
    }
}

/// Unregularized fine-tuning of `source` on `reals`.
pub fn fine_tune(source: &Checkpoint, reals: &Array, cfg: &FineTuneConfig) -> Result<Checkpoint> {
    let mut tuner = FineTuner::new(source, reals, cfg)?;
    for _ in 0..cfg.iterations {
        tuner.step(None, None)?;
    }
    let mut out = tuner.state.to_checkpoint(&json_digest(cfg), cfg.seed);
    out.iteration = source.iteration + cfg.iterations;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::datasets::ring_spec;
    use crate::models::init_params;

    fn small_config() -> TrainConfig {
        TrainConfig {
            iterations: 100,
            batch_size: 32,
            g_hidden: vec![16, 16],
            d_hidden: vec![16, 16],
            checkpoint_interval: 50,
            eval_samples: 200,
            ..TrainConfig::default()
        }
    }

    fn batch(seed: u64, n: usize, d: usize) -> Array {
        latent_batch(&mut stream_rng(seed, 99), n, d)
    }

    #[test]
    fn zero_discriminator_loss_is_two_ln2() {
        let spec = MlpSpec::discriminator(&[8]);
        let l = d_loss(&spec, &ParamVector::zeros(&spec), &batch(0, 5, 2), &batch(1, 7, 2)).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn perfect_discriminator_loss_is_zero() {
        // D(x) = 50·sign-ish via a single linear unit on x₀ with reals at +1, fakes at −1
        let spec = MlpSpec::new(vec![2, 1], 0.2).unwrap();
        let d = ParamVector::from_values(&spec, vec![50.0, 0.0, 0.0]).unwrap();
        let real = Array::from_points(&[[1.0, 0.0], [1.0, 3.0]]);
        let fake = Array::from_points(&[[-1.0, 0.0]]);
        assert!(d_loss(&spec, &d, &real, &fake).unwrap() < 1e-20);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let spec = MlpSpec::discriminator(&[8]);
        let empty = Array::zeros(vec![0, 2]);
        assert!(matches!(
            d_loss(&spec, &ParamVector::zeros(&spec), &empty, &batch(0, 3, 2)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn generator_loss_cases() {
        let g_spec = MlpSpec::generator(4, &[8]);
        let d_spec = MlpSpec::discriminator(&[8]);
        let g = init_params(&g_spec, 0).unwrap();
        let z = batch(2, 6, 4);
        let zero_d = ParamVector::zeros(&d_spec);
        let ns = g_loss(&g_spec, &g, &d_spec, &zero_d, &z, LossVariant::NonSaturating).unwrap();
        assert!((ns - std::f64::consts::LN_2).abs() < 1e-12);
        let mm = g_loss(&g_spec, &g, &d_spec, &zero_d, &z, LossVariant::Minimax).unwrap();
        assert!((mm + std::f64::consts::LN_2).abs() < 1e-12);

        // a discriminator whose output bias alone says +50: fully fooled
        let lin = MlpSpec::new(vec![2, 1], 0.2).unwrap();
        let fooled = ParamVector::from_values(&lin, vec![0.0, 0.0, 50.0]).unwrap();
        let l = g_loss(&g_spec, &g, &lin, &fooled, &z, LossVariant::NonSaturating).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn loss_gradients_pass_grad_check() {
        let g_spec = MlpSpec::generator(3, &[6, 6]);
        let d_spec = MlpSpec::discriminator(&[6, 6]);
        let g = init_params(&g_spec, 1).unwrap();
        let d = init_params(&d_spec, 2).unwrap();
        let z = batch(3, 5, 3);
        let real = batch(4, 5, 2);
        let fake = batch(5, 4, 2);
        let d_err = grad_check(
            |t, th| {
                let r = t.constant(real.clone())?;
                let f = t.constant(fake.clone())?;
                d_loss_on_tape(t, &d_spec, th, r, f)
            },
            d.values(),
            1e-5,
        )
        .unwrap();
        assert!(d_err < 1e-4, "{d_err}");
        for variant in [LossVariant::NonSaturating, LossVariant::Minimax] {
            let err = grad_check(
                |t, th| {
                    let dp = t.constant(Array::vector(d.values().to_vec()))?;
                    let zv = t.constant(z.clone())?;
                    g_loss_on_tape(t, &g_spec, th, &d_spec, dp, zv, variant)
                },
                g.values(),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }

    #[test]
    fn zero_learning_rates_freeze_parameters() {
        let cfg = small_config();
        let mut state = fresh_state(&cfg).unwrap();
        state.opt_g = Adam::new(state.g.len(), AdamConfig::new(0.0, 0.5, 0.999));
        state.opt_d = Adam::new(state.d.len(), AdamConfig::new(0.0, 0.5, 0.999));
        let (g0, d0) = (state.g.clone(), state.d.clone());
        let spec = ring_spec(8, 2.0, 0.05).unwrap();
        let mut src = MixtureStream::new(&spec, 0, 32);
        for _ in 0..5 {
            state.train_step(&src.next_batch()).unwrap();
        }
        assert_eq!(state.g, g0);
        assert_eq!(state.d, d0);
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let spec = ring_spec(8, 2.0, 0.05).unwrap();
        let a = pretrain(&small_config(), &spec).unwrap();
        let b = pretrain(&small_config(), &spec).unwrap();
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
    }

    #[test]
    fn loss_variants_share_discriminator_updates() {
        let spec = ring_spec(8, 2.0, 0.05).unwrap();
        let mut ns = fresh_state(&small_config()).unwrap();
        let mut mm = fresh_state(&TrainConfig {
            loss: LossVariant::Minimax,
            ..small_config()
        })
        .unwrap();
        let mut src = MixtureStream::new(&spec, 0, 32);
        let real = src.next_batch();
        // the first D step sees identical parameters and fakes
        assert_eq!(ns.d_step(&real, None).unwrap(), mm.d_step(&real, None).unwrap());
        assert_eq!(ns.d, mm.d);
    }

    #[test]
    fn zero_extra_iterations_keep_parameters() {
        let spec = ring_spec(8, 2.0, 0.05).unwrap();
        let cfg = small_config();
        let base = pretrain(&cfg, &spec).unwrap().checkpoint;
        let same = continue_training(&base, &cfg, &spec, 0).unwrap().checkpoint;
        assert_eq!(same.g, base.g);
        assert_eq!(same.d, base.d);
        let more = continue_training(&base, &cfg, &spec, 3).unwrap().checkpoint;
        assert_eq!(more.iteration, base.iteration + 3);
        assert_ne!(more.g, base.g);
    }

    #[test]
    fn divergence_is_reported_not_applied() {
        let cfg = small_config();
        let mut state = fresh_state(&cfg).unwrap();
        let g_before = state.g.clone();
        let d_before = state.d.clone();
        let poisoned = Array::from_points(&[[f64::INFINITY, 0.0]]);
        let err = state.train_step(&poisoned).unwrap_err();
        assert!(matches!(err, Error::Divergence { iteration: 0, .. }), "{err}");
        assert_eq!(state.g, g_before);
        assert_eq!(state.d, d_before);
    }

    #[test]
    fn few_shot_stream_batches() {
        let shots = Array::from_points(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let mut full = FewShotStream::new(&shots, 0, 3).unwrap();
        assert_eq!(full.next_batch(), shots);
        let mut resampled = FewShotStream::new(&shots, 0, 8).unwrap();
        let b = resampled.next_batch();
        assert_eq!(b.rows(), 8);
        for i in 0..8 {
            assert!((0..3).any(|j| shots.row(j) == b.row(i)));
        }
    }
}
