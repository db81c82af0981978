//! Diagonal Fisher information of generator parameters, with the frozen
//! source discriminator standing in for the log-likelihood.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::checkpoint::{bytes_to_f64s, f64s_to_bytes, Checkpoint, Container};
use crate::error::{Error, Result};
use crate::models::{forward, layer_slices, ParamKind, ParamLayout};
use crate::{latent_batch, stream_rng, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Network {
    Generator,
    Discriminator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisherConfig {
    pub samples: usize,
    pub seed: u64,
    /// Multiplier on the per-sample proxy loss.
    pub loss_scale: f64,
    pub network: Network,
}

impl Default for FisherConfig {
    fn default() -> Self {
        Self {
            samples: 5000,
            seed: 0,
            loss_scale: 1.0,
            network: Network::Generator,
        }
    }
}

/// Per-parameter importance aligned with one network's flat parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherDiagonal {
    pub values: Vec<f64>,
    pub network: Network,
    pub samples: usize,
    pub seed: u64,
    pub source_digest: String,
    pub loss_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct FisherMeta {
    kind: String,
    network: Network,
    samples: usize,
    seed: u64,
    source_digest: String,
    loss_scale: f64,
    len: usize,
}

impl FisherDiagonal {
    pub fn validate(&self) -> Result<()> {
        if let Some((i, v)) = self
            .values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Estimation(format!("entry {i} is {v}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = FisherMeta {
            kind: "fisher".into(),
            network: self.network,
            samples: self.samples,
            seed: self.seed,
            source_digest: self.source_digest.clone(),
            loss_scale: self.loss_scale,
            len: self.values.len(),
        };
        let mut c = Container::default();
        c.push(b"META", serde_json::to_vec(&meta).expect("metadata serializes"));
        c.push(b"FISH", f64s_to_bytes(&self.values));
        c.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        let meta: FisherMeta = serde_json::from_slice(c.section(b"META")?)
            .map_err(|e| Error::Format(format!("fisher metadata: {e}")))?;
        if meta.kind != "fisher" {
            return Err(Error::Format(format!("expected a fisher file, found {}", meta.kind)));
        }
        let values = bytes_to_f64s(c.section(b"FISH")?)?;
        if values.len() != meta.len {
            return Err(Error::Format(format!(
                "fisher section holds {} values, metadata says {}",
                values.len(),
                meta.len
            )));
        }
        let f = Self {
            values,
            network: meta.network,
            samples: meta.samples,
            seed: meta.seed,
            source_digest: meta.source_digest,
            loss_scale: meta.loss_scale,
        };
        f.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Same shape, every entry `c`. Used as a uniform-importance baseline.
    pub fn uniform(len: usize, c: f64) -> Self {
        Self {
            values: vec![c; len],
            network: Network::Generator,
            samples: 0,
            seed: 0,
            source_digest: String::new(),
            loss_scale: 1.0,
        }
    }
}

/// `F_i = (1/M) Σ_m (∂L_m/∂θ_i)²` where `proxy(tape, θ, m)` records `L_m`.
/// Squared gradients are summed in sample order.
pub fn fisher_from_proxy<F>(theta: &[f64], samples: usize, mut proxy: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut Tape, Var, usize) -> Result<Var>,
{
    if samples == 0 {
        return Err(Error::Input("sample count must be ≥ 1".into()));
    }
    let mut acc = vec![0.0; theta.len()];
    for m in 0..samples {
        let mut tape = Tape::new();
        let th = tape.param(Array::vector(theta.to_vec()))?;
        let grad = proxy(&mut tape, th, m)
            .and_then(|l| tape.backward(l))
            .map_err(|e| Error::Estimation(format!("sample {m}: {e}")))?
            .wrt(th);
        for (a, g) in acc.iter_mut().zip(&grad) {
            *a += g * g;
        }
    }
    let inv = 1.0 / samples as f64;
    let values: Vec<f64> = acc.into_iter().map(|a| a * inv).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("non-finite Fisher entry".into()));
    }
    Ok(values)
}

/// Per-sample proxy `L = −c·bce(D(G(z)), 1)` for a single latent row.
pub fn proxy_loss(
    tape: &mut Tape,
    checkpoint: &Checkpoint,
    g_params: Var,
    d_params: Var,
    z: &[f64],
    loss_scale: f64,
) -> Result<Var> {
    let zv = tape.constant(Array::matrix(1, z.len(), z.to_vec())?)?;
    let x = forward(tape, &checkpoint.generator, g_params, zv)?;
    let logit = forward(tape, &checkpoint.discriminator, d_params, x)?;
    let bce = tape.bce_with_logits(logit, &[1.0])?;
    tape.scale(bce, -loss_scale)
}

/// Fisher diagonal of the chosen network's parameters at `checkpoint`,
/// with latents drawn from the Fisher stream of `cfg.seed`.
pub fn estimate_fisher(checkpoint: &Checkpoint, cfg: &FisherConfig) -> Result<FisherDiagonal> {
    if cfg.samples == 0 {
        return Err(Error::Input("sample count must be ≥ 1".into()));
    }
    if !cfg.loss_scale.is_finite() {
        return Err(Error::Input("loss scale must be finite".into()));
    }
    let dz = checkpoint.latent_dim();
    let z = latent_batch(&mut stream_rng(cfg.seed, streams::FISHER), cfg.samples, dz);
    let g = Array::vector(checkpoint.g.values().to_vec());
    let d = Array::vector(checkpoint.d.values().to_vec());
    let values = match cfg.network {
        Network::Generator => fisher_from_proxy(checkpoint.g.values(), cfg.samples, |t, th, m| {
            let dp = t.constant(d.clone())?;
            proxy_loss(t, checkpoint, th, dp, z.row(m), cfg.loss_scale)
        })?,
        Network::Discriminator => {
            fisher_from_proxy(checkpoint.d.values(), cfg.samples, |t, th, m| {
                let gp = t.constant(g.clone())?;
                proxy_loss(t, checkpoint, gp, th, z.row(m), cfg.loss_scale)
            })?
        }
    };
    Ok(FisherDiagonal {
        values,
        network: cfg.network,
        samples: cfg.samples,
        seed: cfg.seed,
        source_digest: checkpoint.digest(),
        loss_scale: cfg.loss_scale,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerFisher {
    pub layer: String,
    pub kind: ParamKind,
    pub mean: f64,
    pub max: f64,
    /// Share of `Σ_i F_i` held by this slice.
    pub fraction_of_total: f64,
}

/// Mean, max and share of F over each weight slice, then each bias slice.
pub fn per_layer_mean(fisher: &FisherDiagonal, layout: &ParamLayout) -> Result<Vec<LayerFisher>> {
    if fisher.len() != layout.total_len() {
        return Err(Error::Contract(format!(
            "importance has {} entries, layout {}",
            fisher.len(),
            layout.total_len()
        )));
    }
    let total: f64 = fisher.values.iter().sum();
    Ok(layer_slices(layout)
        .into_iter()
        .map(|s| {
            let v = &fisher.values[s.range.clone()];
            let sum: f64 = v.iter().sum();
            LayerFisher {
                layer: s.layer,
                kind: s.kind,
                mean: sum / v.len() as f64,
                max: v.iter().copied().fold(0.0, f64::max),
                fraction_of_total: if total > 0.0 { sum / total } else { 0.0 },
            }
        })
        .collect())
}

pub fn write_layer_csv<W: Write>(mut w: W, rows: &[LayerFisher]) -> Result<()> {
    writeln!(w, "layer,kind,mean,max,fraction_of_total")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{}",
            r.layer,
            r.kind.as_str(),
            r.mean,
            r.max,
            r.fraction_of_total
        )?;
    }
    Ok(())
}
