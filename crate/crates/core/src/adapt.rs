//! Few-shot adaptation with a Fisher-weighted anchor on the source weights,
//! weight-drift diagnostics and paired source/adapted generation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::checkpoint::Checkpoint;
use crate::datasets::FewShotSet;
use crate::digest::json_digest;
use crate::error::{Error, Result};
use crate::ewc::{self, EwcTerm};
use crate::fisher::{FisherDiagonal, Network};
use crate::gan::{FineTuneConfig, FineTuner, LossVariant};
use crate::models::{generate, layer_slices, ParamKind, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EwcTarget {
    GeneratorOnly,
    GeneratorAndDiscriminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub lambda: f64,
    pub iterations: u64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Real rows per D step; `None` uses all k examples.
    pub batch_size: Option<usize>,
    pub fake_batch_size: usize,
    pub seed: u64,
    pub ewc_target: EwcTarget,
    pub drift_interval: u64,
    pub loss: LossVariant,
    pub d_steps_per_g: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            iterations: 4000,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: None,
            fake_batch_size: 64,
            seed: 0,
            ewc_target: EwcTarget::GeneratorOnly,
            drift_interval: 100,
            loss: LossVariant::NonSaturating,
            d_steps_per_g: 1,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Input(format!("lambda must be finite and ≥ 0, got {}", self.lambda)));
        }
        if self.drift_interval == 0 || self.fake_batch_size == 0 || self.d_steps_per_g == 0 {
            return Err(Error::Input(
                "drift interval, fake batch and D steps per G step must be ≥ 1".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::Input("batch size must be ≥ 1".into()));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Input(format!("{name} must be finite and ≥ 0, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn fine_tune_config(&self) -> FineTuneConfig {
        FineTuneConfig {
            iterations: self.iterations,
            lr_g: self.lr_g,
            lr_d: self.lr_d,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            fake_batch_size: self.fake_batch_size,
            seed: self.seed,
            loss: self.loss,
            d_steps_per_g: self.d_steps_per_g,
        }
    }
}

/// `Σ_i F_i (θ_i − θ_S,i)²`.
pub fn ewc_penalty(theta: &ParamVector, source: &ParamVector, fisher: &FisherDiagonal) -> Result<f64> {
    if theta.layout() != source.layout() || fisher.len() != theta.len() {
        return Err(Error::Contract("parameter layouts differ".into()));
    }
    Ok(ewc::penalty_with_grad(theta.values(), source.values(), &fisher.values)?.0)
}

/// Mean relative change `|θ′_i − θ_i| / max(|θ_i|, ε)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightChange {
    /// Over all weight entries (biases excluded).
    pub overall: f64,
    /// One value per layer, weights only.
    pub per_layer: Vec<f64>,
    /// Over all bias entries.
    pub bias_overall: f64,
    pub per_layer_bias: Vec<f64>,
}

pub fn weight_change_rate(before: &ParamVector, after: &ParamVector, eps: f64) -> Result<WeightChange> {
    if before.layout() != after.layout() {
        return Err(Error::Contract("parameter layouts differ".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::Input(format!("ε must be positive, got {eps}")));
    }
    let (a, b) = (before.values(), after.values());
    let rel = |i: usize| (b[i] - a[i]).abs() / a[i].abs().max(eps);
    let mut out = WeightChange {
        overall: 0.0,
        per_layer: Vec::new(),
        bias_overall: 0.0,
        per_layer_bias: Vec::new(),
    };
    let (mut w_sum, mut w_n, mut b_sum, mut b_n) = (0.0, 0usize, 0.0, 0usize);
    for s in layer_slices(before.layout()) {
        let sum: f64 = s.range.clone().map(rel).sum();
        let n = s.range.len();
        match s.kind {
            ParamKind::Weight => {
                out.per_layer.push(sum / n as f64);
                w_sum += sum;
                w_n += n;
            }
            ParamKind::Bias => {
                out.per_layer_bias.push(sum / n as f64);
                b_sum += sum;
                b_n += n;
            }
        }
    }
    out.overall = w_sum / w_n as f64;
    out.bias_overall = b_sum / b_n as f64;
    Ok(out)
}

pub const DRIFT_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRecord {
    pub iteration: u64,
    pub delta_overall: f64,
    pub delta_layers: Vec<f64>,
    /// Unweighted penalty at the logged G step.
    pub ewc_penalty: f64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// `g_loss + λ·ewc_penalty` as differentiated.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DriftLog {
    pub records: Vec<DriftRecord>,
}

impl DriftLog {
    pub fn last(&self) -> Option<&DriftRecord> {
        self.records.last()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let layers = self.records.first().map_or(0, |r| r.delta_layers.len());
        let mut header = vec!["iteration".to_string(), "delta_overall".to_string()];
        header.extend((0..layers).map(|i| format!("delta_layer_{i}")));
        header.extend(["ewc_penalty", "d_loss", "g_loss"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.delta_overall.to_string()];
            row.extend(r.delta_layers.iter().map(f64::to_string));
            row.extend([r.ewc_penalty, r.d_loss, r.g_loss].map(|v| v.to_string()));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Adapted {
    pub checkpoint: Checkpoint,
    pub drift: DriftLog,
}

/// Adversarial fine-tuning of `source` on `fewshot` with the generator step
/// minimizing `g_loss + λ·Σ F_i (θ_i − θ_S,i)²`.
///
/// `fisher_d` is required when the penalty also covers the discriminator.
pub fn adapt(
    source: &Checkpoint,
    fisher: &FisherDiagonal,
    fisher_d: Option<&FisherDiagonal>,
    fewshot: &FewShotSet,
    cfg: &AdaptConfig,
) -> Result<Adapted> {
    cfg.validate()?;
    if fisher.network != Network::Generator || fisher.len() != source.g.len() {
        return Err(Error::Contract(format!(
            "generator importance must have {} entries, got {}",
            source.g.len(),
            fisher.len()
        )));
    }
    let fisher_d = match (cfg.ewc_target, fisher_d) {
        (EwcTarget::GeneratorOnly, _) => None,
        (EwcTarget::GeneratorAndDiscriminator, Some(f))
            if f.network == Network::Discriminator && f.len() == source.d.len() =>
        {
            Some(f)
        }
        (EwcTarget::GeneratorAndDiscriminator, _) => {
            return Err(Error::Contract(
                "discriminator penalty needs a discriminator importance of matching length".into(),
            ))
        }
    };

    let anchor_g = source.g.values().to_vec();
    let anchor_d = source.d.values().to_vec();
    let ewc_g = EwcTerm::new(&anchor_g, &fisher.values, cfg.lambda)?;
    let ewc_d = fisher_d
        .map(|f| EwcTerm::new(&anchor_d, &f.values, cfg.lambda))
        .transpose()?;

    let mut tuner = FineTuner::new(source, &fewshot.samples, &cfg.fine_tune_config())?;
    let mut drift = DriftLog::default();
    for it in 1..=cfg.iterations {
        let stats = tuner.step(Some(&ewc_g), ewc_d.as_ref())?;
        if it % cfg.drift_interval == 0 || it == cfg.iterations {
            let change = weight_change_rate(&source.g, &tuner.state.g, DRIFT_EPS)?;
            drift.records.push(DriftRecord {
                iteration: it,
                delta_overall: change.overall,
                delta_layers: change.per_layer,
                ewc_penalty: stats.g.penalty,
                d_loss: stats.d_loss,
                g_loss: stats.g.g_loss,
                total: stats.g.total,
            });
        }
    }
    let mut checkpoint = tuner.state.to_checkpoint(&json_digest(cfg), cfg.seed);
    checkpoint.iteration = source.iteration + cfg.iterations;
    Ok(Adapted { checkpoint, drift })
}

/// Both generators evaluated on the same latent rows.
pub fn paired_generate(source: &Checkpoint, adapted: &Checkpoint, z: &Array) -> Result<(Array, Array)> {
    if source.generator != adapted.generator {
        return Err(Error::Contract("generator specs differ".into()));
    }
    Ok((
        generate(&source.generator, &source.g, z)?,
        generate(&adapted.generator, &adapted.g, z)?,
    ))
}

/// Mean row-wise Euclidean distance between aligned outputs.
pub fn mean_paired_distance(a: &Array, b: &Array) -> Result<f64> {
    if a.shape() != b.shape() || a.rows() == 0 {
        return Err(Error::Dimension("paired outputs must share a non-empty shape".into()));
    }
    let total: f64 = (0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    Ok(total / a.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{draw_few_shot, ring_spec};
    use crate::gan::fine_tune;
    use crate::models::{init_params, MlpSpec};
    use crate::{latent_batch, stream_rng};

    fn source() -> Checkpoint {
        let generator = MlpSpec::generator(4, &[16, 16]);
        let discriminator = MlpSpec::discriminator(&[16, 16]);
        Checkpoint {
            g: init_params(&generator, 1).unwrap(),
            d: init_params(&discriminator, 2).unwrap(),
            generator,
            discriminator,
            config_digest: String::new(),
            seed: 0,
            iteration: 500,
        }
    }

    fn shots() -> FewShotSet {
        draw_few_shot(&ring_spec(8, 2.0, 0.05).unwrap(), 10, 3).unwrap()
    }

    fn short(lambda: f64) -> AdaptConfig {
        AdaptConfig {
            lambda,
            iterations: 40,
            drift_interval: 10,
            lr_g: 1e-3,
            lr_d: 1e-3,
            ..AdaptConfig::default()
        }
    }

    #[test]
    fn penalty_cases() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 1.0);
        assert_eq!(ewc_penalty(&src.g, &src.g, &f).unwrap(), 0.0);
        let mut moved = src.g.clone();
        for v in moved.values_mut() {
            *v += 0.5;
        }
        let p = ewc_penalty(&moved, &src.g, &f).unwrap();
        assert!((p - 0.25 * src.g.len() as f64).abs() < 1e-9);
        assert!(ewc_penalty(&src.d, &src.g, &f).is_err());
    }

    #[test]
    fn change_rate_cases() {
        let spec = MlpSpec::generator(4, &[8]);
        let a = init_params(&spec, 0).unwrap();
        assert_eq!(weight_change_rate(&a, &a, DRIFT_EPS).unwrap().overall, 0.0);
        let doubled =
            ParamVector::from_values(&spec, a.values().iter().map(|v| 2.0 * v).collect()).unwrap();
        let c = weight_change_rate(&a, &doubled, DRIFT_EPS).unwrap();
        assert!((c.overall - 1.0).abs() < 1e-12);
        assert!(c.per_layer.iter().all(|v| (v - 1.0).abs() < 1e-12));
        // zero biases: guarded division stays finite
        let mut shifted = a.clone();
        for v in shifted.values_mut() {
            *v += 1e-3;
        }
        let c = weight_change_rate(&a, &shifted, DRIFT_EPS).unwrap();
        assert!(c.bias_overall.is_finite());
        assert!((c.bias_overall - 1e-3 / DRIFT_EPS).abs() < 1e-3);
        assert!(weight_change_rate(&a, &a, 0.0).is_err());
    }

    #[test]
    fn zero_iterations_return_the_source() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 1.0);
        let out = adapt(&src, &f, None, &shots(), &AdaptConfig { iterations: 0, ..short(0.0) }).unwrap();
        assert_eq!(out.checkpoint.g, src.g);
        assert_eq!(out.checkpoint.d, src.d);
        assert!(out.drift.records.is_empty());
    }

    #[test]
    fn zero_lambda_matches_plain_fine_tuning() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 3.0);
        let fs = shots();
        let cfg = short(0.0);
        let a = adapt(&src, &f, None, &fs, &cfg).unwrap().checkpoint;
        let b = fine_tune(&src, &fs.samples, &cfg.fine_tune_config()).unwrap();
        assert_eq!(a.g.values(), b.g.values());
        assert_eq!(a.d.values(), b.d.values());
    }

    #[test]
    fn drift_log_decomposes_objective() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 0.7);
        let lambda = 3.0;
        let out = adapt(&src, &f, None, &shots(), &short(lambda)).unwrap();
        let iters: Vec<u64> = out.drift.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![10, 20, 30, 40]);
        for r in &out.drift.records {
            assert!(r.delta_overall >= 0.0);
            assert!((r.total - (r.g_loss + lambda * r.ewc_penalty)).abs() < 1e-12);
        }
        let mut buf = Vec::new();
        out.drift.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "iteration,delta_overall,delta_layer_0,delta_layer_1,delta_layer_2,ewc_penalty,d_loss,g_loss\n"
        ));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn strong_anchor_holds_important_weights() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 1.0);
        let fs = shots();
        let free = adapt(&src, &f, None, &fs, &short(0.0)).unwrap().checkpoint;
        let held = adapt(&src, &f, None, &fs, &short(1e9)).unwrap().checkpoint;
        let dist = |c: &Checkpoint| {
            c.g.values()
                .iter()
                .zip(src.g.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        assert!(dist(&held) < 0.01 * dist(&free), "{} {}", dist(&held), dist(&free));
    }

    #[test]
    fn discriminator_anchor_requires_matching_importance() {
        let src = source();
        let f = FisherDiagonal::uniform(src.g.len(), 1.0);
        let cfg = AdaptConfig {
            ewc_target: EwcTarget::GeneratorAndDiscriminator,
            ..short(1.0)
        };
        assert!(matches!(adapt(&src, &f, None, &shots(), &cfg), Err(Error::Contract(_))));
        let mut fd = FisherDiagonal::uniform(src.d.len(), 1.0);
        fd.network = Network::Discriminator;
        let held = adapt(&src, &f, Some(&fd), &shots(), &AdaptConfig { lambda: 1e9, ..cfg })
            .unwrap()
            .checkpoint;
        let moved: f64 = held
            .d
            .values()
            .iter()
            .zip(src.d.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved < 1e-3, "{moved}");
    }

    #[test]
    fn paired_outputs() {
        let src = source();
        let z = latent_batch(&mut stream_rng(0, 0), 50, 4);
        let (a, b) = paired_generate(&src, &src, &z).unwrap();
        assert_eq!(a, b);
        assert_eq!(mean_paired_distance(&a, &b).unwrap(), 0.0);
        let mut other = src.clone();
        other.generator = MlpSpec::generator(4, &[16]);
        other.g = init_params(&other.generator, 0).unwrap();
        assert!(matches!(paired_generate(&src, &other, &z), Err(Error::Contract(_))));
        let x = Array::from_points(&[[0.0, 0.0], [1.0, 1.0]]);
        let y = Array::from_points(&[[3.0, 4.0], [1.0, 1.0]]);
        assert_eq!(mean_paired_distance(&x, &y).unwrap(), 2.5);
    }
}
