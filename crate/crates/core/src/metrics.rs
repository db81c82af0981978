//! Sample-quality metrics on 2-D point clouds: Fréchet distance between
//! Gaussian fits, mean pairwise distance, mode coverage and memorization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::datasets::{eig_sym, GaussianMixtureSpec, Mat2};
use crate::error::{Error, Result};
use crate::models::{generate, MlpSpec, ParamVector};
use crate::{latent_batch, stream_rng, streams};

/// Tolerance below zero tolerated (and clamped) for eigenvalues and the
/// squared distance.
const NEG_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub mean: [f64; 2],
    pub cov: Mat2,
    pub n: usize,
    /// Set when the covariance is singular (zero smallest eigenvalue).
    pub degenerate: bool,
}

impl GaussianFit {
    pub fn from_moments(mean: [f64; 2], cov: Mat2, n: usize) -> Self {
        let degenerate = eig_sym(&cov).0[0] <= 0.0;
        Self {
            mean,
            cov,
            n,
            degenerate,
        }
    }

    /// Exact mean and covariance of a mixture.
    pub fn of_mixture(spec: &GaussianMixtureSpec) -> Self {
        let (mean, cov) = spec.moments();
        Self::from_moments(mean, cov, usize::MAX)
    }
}

fn check_points(samples: &Array, min: usize) -> Result<usize> {
    if samples.shape().len() != 2 || samples.cols() != 2 {
        return Err(Error::Dimension(format!(
            "expected n×2 samples, got {:?}",
            samples.shape()
        )));
    }
    let n = samples.rows();
    if n < min {
        return Err(Error::Input(format!("need at least {min} samples, got {n}")));
    }
    Ok(n)
}

/// Sample mean and unbiased sample covariance.
pub fn fit_gaussian(samples: &Array) -> Result<GaussianFit> {
    let n = check_points(samples, 2)?;
    let mut mean = [0.0; 2];
    for i in 0..n {
        let r = samples.row(i);
        mean[0] += r[0];
        mean[1] += r[1];
    }
    mean[0] /= n as f64;
    mean[1] /= n as f64;
    let mut cov = [[0.0; 2]; 2];
    for i in 0..n {
        let r = samples.row(i);
        let d = [r[0] - mean[0], r[1] - mean[1]];
        cov[0][0] += d[0] * d[0];
        cov[0][1] += d[0] * d[1];
        cov[1][1] += d[1] * d[1];
    }
    let denom = (n - 1) as f64;
    cov[0][0] /= denom;
    cov[0][1] /= denom;
    cov[1][1] /= denom;
    cov[1][0] = cov[0][1];
    Ok(GaussianFit::from_moments(mean, cov, n))
}

fn psd_eig(name: &str, m: &Mat2) -> Result<([f64; 2], [[f64; 2]; 2])> {
    let (mut vals, vecs) = eig_sym(m);
    let scale = 1.0 + vals[1].abs();
    for v in &mut vals {
        if *v < -NEG_TOL * scale {
            return Err(Error::Numeric(format!(
                "{name} covariance is not positive semi-definite (eigenvalue {v})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok((vals, vecs))
}

fn apply_eig(vals: [f64; 2], vecs: [[f64; 2]; 2], f: impl Fn(f64) -> f64) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for k in 0..2 {
        let fv = f(vals[k]);
        let v = vecs[k];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] += fv * v[i] * v[j];
            }
        }
    }
    out
}

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Principal square root of a symmetric PSD 2×2 matrix.
pub fn sqrtm_psd(m: &Mat2) -> Result<Mat2> {
    let (vals, vecs) = psd_eig("input", m)?;
    Ok(apply_eig(vals, vecs, f64::sqrt))
}

fn mean_sq_dist(a: &GaussianFit, b: &GaussianFit) -> f64 {
    let dx = a.mean[0] - b.mean[0];
    let dy = a.mean[1] - b.mean[1];
    dx * dx + dy * dy
}

fn finish(d2: f64) -> Result<f64> {
    if !d2.is_finite() {
        return Err(Error::Numeric("Fréchet distance is not finite".into()));
    }
    if d2 < -NEG_TOL {
        return Err(Error::Numeric(format!("squared Fréchet distance {d2} < 0")));
    }
    Ok(d2.max(0.0).sqrt())
}

/// Fréchet (2-Wasserstein) distance between two Gaussians:
/// `√(‖μa−μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½))`.
///
/// The trace term equals `min_U ‖Σa^½ − Σb^½ U‖_F²` over orthogonal `U`, and
/// is evaluated in that form: a sum of squares stays accurate when the two
/// fits nearly coincide, where the trace form loses digits to cancellation.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let sa = sqrtm_psd(&a.cov)?;
    let sb = sqrtm_psd(&b.cov)?;
    // U = Pᵀ for the orthogonal polar factor P of Σa^½ Σb^½ (det ≥ 0)
    let y = mat_mul(&sa, &sb);
    let det_y = y[0][0] * y[1][1] - y[0][1] * y[1][0];
    let norm = (y.iter().flatten().map(|v| v * v).sum::<f64>() + 2.0 * det_y.max(0.0)).sqrt();
    let u = if norm > 0.0 {
        [
            [(y[0][0] + y[1][1]) / norm, (y[1][0] - y[0][1]) / norm],
            [(y[0][1] - y[1][0]) / norm, (y[1][1] + y[0][0]) / norm],
        ]
    } else {
        [[1.0, 0.0], [0.0, 1.0]]
    };
    let sbu = mat_mul(&sb, &u);
    let fro: f64 = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (sa[i][j] - sbu[i][j]).powi(2))
        .sum();
    finish(mean_sq_dist(a, b) + fro)
}

/// Same distance without matrix square roots: for 2×2 PSD `M` with real
/// non-negative spectrum, `Tr √M = √(Tr M + 2√det M)`, applied to `M = Σa·Σb`.
pub fn frechet_distance_trace_identity(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    psd_eig("first", &a.cov)?;
    psd_eig("second", &b.cov)?;
    let m = mat_mul(&a.cov, &b.cov);
    let tr_m = m[0][0] + m[1][1];
    let det = |x: &Mat2| x[0][0] * x[1][1] - x[0][1] * x[1][0];
    let det_m = (det(&a.cov) * det(&b.cov)).max(0.0);
    let tr_cross = (tr_m + 2.0 * det_m.sqrt()).max(0.0).sqrt();
    let tr = a.cov[0][0] + a.cov[1][1] + b.cov[0][0] + b.cov[1][1];
    finish(mean_sq_dist(a, b) + tr - 2.0 * tr_cross)
}

/// Reduction valid when `Σa` and `Σb` commute:
/// `‖μa−μb‖² + ‖Σa^½ − Σb^½‖_F²`.
pub fn frechet_distance_commuting(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    let sa = sqrtm_psd(&a.cov)?;
    let sb = sqrtm_psd(&b.cov)?;
    let fro: f64 = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (sa[i][j] - sb[i][j]).powi(2))
        .sum();
    finish(mean_sq_dist(a, b) + fro)
}

/// Mean Euclidean distance over `n_pairs` seeded random pairs of distinct
/// indices. The pair set depends only on `(n, n_pairs, seed)`.
pub fn diversity(samples: &Array, n_pairs: usize, seed: u64) -> Result<f64> {
    let n = check_points(samples, 2)?;
    if n_pairs == 0 {
        return Err(Error::Input("need at least one pair".into()));
    }
    let mut rng = stream_rng(seed, streams::PAIRS);
    let mut total = 0.0;
    for _ in 0..n_pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (samples.row(i), samples.row(j));
        total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    }
    Ok(total / n_pairs as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Covered modes over total modes.
    pub coverage: f64,
    pub high_quality_fraction: f64,
    /// High-quality samples assigned to each mode.
    pub per_mode: Vec<usize>,
}

/// Assigns every sample to its nearest mode in Mahalanobis distance. A sample
/// is high quality when that distance is at most `r_sigmas`; a mode is
/// covered when it receives at least `max(1, n / (10·modes))` of them.
pub fn mode_coverage(samples: &Array, spec: &GaussianMixtureSpec, r_sigmas: f64) -> Result<Coverage> {
    let n = check_points(samples, 1)?;
    if !(r_sigmas > 0.0) {
        return Err(Error::Input(format!("r_sigmas must be > 0, got {r_sigmas}")));
    }
    let inverses: Vec<Mat2> = spec
        .components
        .iter()
        .map(|c| {
            let m = c.covariance;
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
        })
        .collect();
    let mut per_mode = vec![0usize; spec.num_modes()];
    let mut hq = 0usize;
    let r2 = r_sigmas * r_sigmas;
    for i in 0..n {
        let p = samples.row(i);
        let (best, d2) = spec
            .components
            .iter()
            .zip(&inverses)
            .map(|(c, inv)| {
                let d = [p[0] - c.center[0], p[1] - c.center[1]];
                d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])
            })
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (k, d2)| if d2 < acc.1 { (k, d2) } else { acc });
        if d2 <= r2 {
            hq += 1;
            per_mode[best] += 1;
        }
    }
    let threshold = (n as f64 / (10.0 * spec.num_modes() as f64)).max(1.0);
    let covered = per_mode.iter().filter(|&&c| c as f64 >= threshold).count();
    Ok(Coverage {
        coverage: covered as f64 / spec.num_modes() as f64,
        high_quality_fraction: hq as f64 / n as f64,
        per_mode,
    })
}

/// Fraction of samples whose nearest few-shot example lies within `eps`.
pub fn memorization(samples: &Array, examples: &Array, eps: f64) -> Result<f64> {
    let n = check_points(samples, 1)?;
    check_points(examples, 1)?;
    if !(eps > 0.0) {
        return Err(Error::Input(format!("memorization radius must be > 0, got {eps}")));
    }
    let eps2 = eps * eps;
    let hits = (0..n)
        .filter(|&i| {
            let p = samples.row(i);
            (0..examples.rows()).any(|j| {
                let e = examples.row(j);
                (p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2) <= eps2
            })
        })
        .count();
    Ok(hits as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub samples: usize,
    pub pairs: usize,
    pub r_sigmas: f64,
    /// Defaults to three mode standard deviations of the target.
    pub memorization_eps: Option<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 5000,
            pairs: 5000,
            r_sigmas: 3.0,
            memorization_eps: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frechet_distance: f64,
    pub diversity: f64,
    pub mode_coverage: f64,
    pub high_quality_fraction: f64,
    /// `None` when no few-shot set was supplied.
    pub memorization_fraction: Option<f64>,
    pub samples: usize,
    pub seed: u64,
}

/// Scores a generator against `target` (analytic moments for the Fréchet
/// term) and, optionally, against the few-shot examples it was tuned on.
pub fn evaluate(
    spec: &MlpSpec,
    params: &ParamVector,
    target: &GaussianMixtureSpec,
    examples: Option<&Array>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let mut rng = stream_rng(cfg.seed, streams::EVAL_LATENT);
    let z = latent_batch(&mut rng, cfg.samples, spec.input_width());
    let x = generate(spec, params, &z)?;
    evaluate_samples(&x, target, examples, cfg)
}

pub fn evaluate_samples(
    x: &Array,
    target: &GaussianMixtureSpec,
    examples: Option<&Array>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let fd = frechet_distance(&fit_gaussian(x)?, &GaussianFit::of_mixture(target))?;
    let div = diversity(x, cfg.pairs, cfg.seed)?;
    let cov = mode_coverage(x, target, cfg.r_sigmas)?;
    let eps = cfg
        .memorization_eps
        .unwrap_or_else(|| 3.0 * target.mode_sigma());
    let mem = examples.map(|e| memorization(x, e, eps)).transpose()?;
    Ok(MetricsReport {
        frechet_distance: fd,
        diversity: div,
        mode_coverage: cov.coverage,
        high_quality_fraction: cov.high_quality_fraction,
        memorization_fraction: mem,
        samples: x.rows(),
        seed: cfg.seed,
    })
}
