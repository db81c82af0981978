//! MLP generator/discriminator and flat parameter bookkeeping.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape, Var};
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_ALPHA: f64 = 0.2;

/// Fully connected network: `widths[0]` inputs, `widths.last()` outputs,
/// leaky-ReLU between hidden layers and an identity output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub leaky_alpha: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, leaky_alpha: f64) -> Result<Self> {
        let spec = Self {
            widths,
            leaky_alpha,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::input(format!(
                "an MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::input(format!(
                "layer widths must be positive, got {:?}",
                self.widths
            )));
        }
        if !self.leaky_alpha.is_finite() {
            return Err(Error::input("leaky_relu slope must be finite"));
        }
        Ok(())
    }

    /// `[latent_dim, hidden.., 2]`
    pub fn generator(latent_dim: usize, hidden: &[usize]) -> Self {
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(2);
        Self {
            widths,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
        }
    }

    /// `[2, hidden.., 1]`
    pub fn discriminator(hidden: &[usize]) -> Self {
        let mut widths = vec![2];
        widths.extend_from_slice(hidden);
        widths.push(1);
        Self {
            widths,
            leaky_alpha: DEFAULT_LEAKY_ALPHA,
        }
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut entries = Vec::with_capacity(2 * self.num_layers());
        let mut offset = 0;
        for (i, w) in self.widths.windows(2).enumerate() {
            let name = format!("fc{i}");
            entries.push(LayoutEntry {
                layer: name.clone(),
                kind: ParamKind::Weight,
                offset,
                len: w[0] * w[1],
                shape: (w[0], w[1]),
            });
            offset += w[0] * w[1];
            entries.push(LayoutEntry {
                layer: name,
                kind: ParamKind::Bias,
                offset,
                len: w[1],
                shape: (1, w[1]),
            });
            offset += w[1];
        }
        ParamLayout { entries }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        }
    }
}

/// One contiguous block of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub layer: String,
    pub kind: ParamKind,
    pub offset: usize,
    pub len: usize,
    /// `(rows, cols)`; weights are stored `fan_in × fan_out`, row-major.
    pub shape: (usize, usize),
}

impl LayoutEntry {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
}

impl ParamLayout {
    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.len).sum()
    }

    pub fn weights(&self) -> impl Iterator<Item = &LayoutEntry> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Weight)
    }

    pub fn biases(&self) -> impl Iterator<Item = &LayoutEntry> {
        self.entries.iter().filter(|e| e.kind == ParamKind::Bias)
    }
}

/// Named index range of one layer's weights or biases.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSlice {
    pub layer: String,
    pub kind: ParamKind,
    pub range: std::ops::Range<usize>,
}

/// Weight slices first (one per linear layer), then bias slices.
pub fn layer_slices(layout: &ParamLayout) -> Vec<LayerSlice> {
    layout
        .weights()
        .chain(layout.biases())
        .map(|e| LayerSlice {
            layer: e.layer.clone(),
            kind: e.kind,
            range: e.range(),
        })
        .collect()
}

/// Flat parameter vector plus the layout it was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

/// Per-layer dense view of a [`ParamVector`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Array,
    pub bias: Array,
}

impl ParamVector {
    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let layout = spec.layout();
        if values.len() != layout.total_len() {
            return Err(Error::dim(format!(
                "spec {:?} needs {} parameters, got {}",
                spec.widths,
                layout.total_len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(spec: &MlpSpec) -> Self {
        let layout = spec.layout();
        Self {
            values: vec![0.0; layout.total_len()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unflatten(&self) -> Vec<LayerParams> {
        let entries = self.layout.entries();
        entries
            .chunks(2)
            .map(|pair| {
                let (w, b) = (&pair[0], &pair[1]);
                LayerParams {
                    weight: Array::matrix(w.shape.0, w.shape.1, self.values[w.range()].to_vec())
                        .expect("layout shapes are consistent"),
                    bias: Array::vector(self.values[b.range()].to_vec()),
                }
            })
            .collect()
    }

    pub fn flatten(spec: &MlpSpec, layers: &[LayerParams]) -> Result<Self> {
        if layers.len() != spec.num_layers() {
            return Err(Error::dim(format!(
                "spec has {} layers, got {}",
                spec.num_layers(),
                layers.len()
            )));
        }
        let mut values = Vec::with_capacity(spec.param_count());
        for (l, w) in layers.iter().zip(spec.widths.windows(2)) {
            if l.weight.shape() != [w[0], w[1]] || l.bias.len() != w[1] {
                return Err(Error::dim(format!(
                    "layer {}→{} got weight {:?}, bias {}",
                    w[0],
                    w[1],
                    l.weight.shape(),
                    l.bias.len()
                )));
            }
            values.extend_from_slice(l.weight.data());
            values.extend_from_slice(l.bias.data());
        }
        Self::from_values(spec, values)
    }
}

/// He-style init scaled for leaky-ReLU: weights `N(0, 2 / ((1+α²)·fan_in))`,
/// biases zero.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamVector> {
    init_params_with(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn init_params_with<R: Rng>(spec: &MlpSpec, rng: &mut R) -> Result<ParamVector> {
    spec.validate()?;
    let mut params = ParamVector::zeros(spec);
    let gain = 2.0 / (1.0 + spec.leaky_alpha * spec.leaky_alpha);
    let entries: Vec<LayoutEntry> = params.layout.weights().cloned().collect();
    for e in entries {
        let std = (gain / e.shape.0 as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::Numeric(e.to_string()))?;
        for v in &mut params.values[e.range()] {
            *v = normal.sample(rng);
        }
    }
    Ok(params)
}

/// Records the forward pass of `spec` on `tape`.
///
/// `params` is a flat node (leaf or constant) laid out as `spec.layout()`;
/// `input` is `batch × input_width`.
pub fn forward(tape: &mut Tape, spec: &MlpSpec, params: Var, input: Var) -> Result<Var> {
    let in_shape = tape.value(input).shape().to_vec();
    if in_shape.len() != 2 || in_shape[1] != spec.input_width() {
        return Err(Error::dim(format!(
            "network expects batch×{}, got {:?}",
            spec.input_width(),
            in_shape
        )));
    }
    if tape.value(params).len() != spec.param_count() {
        return Err(Error::dim(format!(
            "network expects {} parameters, got {}",
            spec.param_count(),
            tape.value(params).len()
        )));
    }
    let layout = spec.layout();
    let last = spec.num_layers() - 1;
    let mut h = input;
    for (i, pair) in layout.entries().chunks(2).enumerate() {
        let (w, b) = (&pair[0], &pair[1]);
        let wv = tape.slice(params, w.offset, vec![w.shape.0, w.shape.1])?;
        let bv = tape.slice(params, b.offset, vec![b.len])?;
        let z = tape.matmul(h, wv)?;
        h = tape.add_bias(z, bv)?;
        if i < last {
            h = tape.leaky_relu(h, spec.leaky_alpha)?;
        }
    }
    Ok(h)
}

fn check_params(spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::dim(format!(
            "spec {:?} needs {} parameters, got {}",
            spec.widths,
            spec.param_count(),
            params.len()
        )));
    }
    Ok(())
}

/// Generator samples `G(z)`, `batch × 2`.
pub fn generate(spec: &MlpSpec, params: &ParamVector, z: &Array) -> Result<Array> {
    check_params(spec, params)?;
    let mut tape = Tape::new();
    let p = tape.constant(Array::vector(params.values().to_vec()))?;
    let x = tape.constant(z.clone())?;
    let out = forward(&mut tape, spec, p, x)?;
    Ok(tape.value(out).clone())
}

/// Raw discriminator logits, one per row of `x`.
pub fn discriminate(spec: &MlpSpec, params: &ParamVector, x: &Array) -> Result<Array> {
    check_params(spec, params)?;
    if spec.output_width() != 1 {
        return Err(Error::dim("a discriminator must have a single output"));
    }
    let mut tape = Tape::new();
    let p = tape.constant(Array::vector(params.values().to_vec()))?;
    let xv = tape.constant(x.clone())?;
    let out = forward(&mut tape, spec, p, xv)?;
    Ok(Array::vector(tape.value(out).data().to_vec()))
}
