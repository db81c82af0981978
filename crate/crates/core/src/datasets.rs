//! Synthetic 2-D Gaussian-mixture domains and few-shot draws.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Array;
use crate::digest::json_digest;
use crate::error::{Error, Result};

pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub center: [f64; 2],
    pub covariance: Mat2,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub components: Vec<Component>,
}

const WEIGHT_TOL: f64 = 1e-9;

pub fn is_spd(m: &Mat2) -> bool {
    let sym = (m[0][1] - m[1][0]).abs() <= 1e-12 * (1.0 + m[0][1].abs());
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    sym && m[0][0] > 0.0 && det > 0.0 && m.iter().flatten().all(|v| v.is_finite())
}

impl GaussianMixtureSpec {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        let spec = Self { components };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::input("a mixture needs at least one component"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !is_spd(&c.covariance) {
                return Err(Error::input(format!(
                    "component {i} covariance {:?} is not symmetric positive-definite",
                    c.covariance
                )));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::input(format!("component {i} weight must be positive")));
            }
            if !c.center.iter().all(|v| v.is_finite()) {
                return Err(Error::input(format!("component {i} center is not finite")));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(Error::input(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.components.len()
    }

    /// Analytic mixture mean and covariance.
    pub fn moments(&self) -> ([f64; 2], Mat2) {
        let mut mean = [0.0; 2];
        for c in &self.components {
            mean[0] += c.weight * c.center[0];
            mean[1] += c.weight * c.center[1];
        }
        let mut cov = [[0.0; 2]; 2];
        for c in &self.components {
            let d = [c.center[0] - mean[0], c.center[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += c.weight * (c.covariance[i][j] + d[i] * d[j]);
                }
            }
        }
        (mean, cov)
    }

    /// Root-mean of the per-mode largest standard deviations.
    pub fn mode_sigma(&self) -> f64 {
        let mean_var = self
            .components
            .iter()
            .map(|c| eig_sym(&c.covariance).0[1])
            .sum::<f64>()
            / self.components.len() as f64;
        mean_var.sqrt()
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// Eigenvalues (ascending) and unit eigenvectors of a symmetric 2×2 matrix.
pub(crate) fn eig_sym(m: &Mat2) -> ([f64; 2], [[f64; 2]; 2]) {
    let (a, b, d) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (lo, hi) = (half_tr - disc, half_tr + disc);
    if b.abs() <= 1e-300 {
        return if a <= d {
            ([a, d], [[1.0, 0.0], [0.0, 1.0]])
        } else {
            ([d, a], [[0.0, 1.0], [1.0, 0.0]])
        };
    }
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    let (s, c) = theta.sin_cos();
    ([lo, hi], [[-s, c], [c, s]])
}

/// `n_modes` equal-weight isotropic modes spaced evenly on a circle.
pub fn ring_spec(n_modes: usize, radius: f64, sigma: f64) -> Result<GaussianMixtureSpec> {
    if n_modes == 0 {
        return Err(Error::input("ring needs at least one mode"));
    }
    if !(radius >= 0.0) {
        return Err(Error::input(format!("ring radius must be ≥ 0, got {radius}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::input(format!("ring sigma must be > 0, got {sigma}")));
    }
    let var = sigma * sigma;
    let components = (0..n_modes)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / n_modes as f64;
            Component {
                center: [radius * angle.cos(), radius * angle.sin()],
                covariance: [[var, 0.0], [0.0, var]],
                weight: 1.0 / n_modes as f64,
            }
        })
        .collect();
    GaussianMixtureSpec::new(components)
}

/// Geometric change of a source mixture used to build targets of graded
/// dissimilarity. Centers map to `scale·R·c + translation`; covariances map
/// to `cov_multiplier·R·Σ·Rᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetTransform {
    pub rotation: f64,
    pub scale: f64,
    pub translation: [f64; 2],
    /// Indices of modes to keep; `None` keeps all of them.
    pub keep_modes: Option<Vec<usize>>,
    pub cov_multiplier: f64,
}

impl Default for TargetTransform {
    fn default() -> Self {
        Self {
            rotation: 0.0,
            scale: 1.0,
            translation: [0.0, 0.0],
            keep_modes: None,
            cov_multiplier: 1.0,
        }
    }
}

impl TargetTransform {
    pub fn translate(dx: f64, dy: f64) -> Self {
        Self {
            translation: [dx, dy],
            ..Self::default()
        }
    }

    /// The default four-rung dissimilarity ladder, nearest target first.
    pub fn default_ladder() -> Vec<TargetTransform> {
        vec![
            Self::translate(0.25, 0.0),
            Self {
                rotation: PI / 8.0,
                scale: 1.2,
                ..Self::default()
            },
            Self {
                scale: 2.0,
                cov_multiplier: 4.0,
                ..Self::default()
            },
            Self::translate(6.0, 0.0),
        ]
    }
}

pub fn apply_transform(
    spec: &GaussianMixtureSpec,
    t: &TargetTransform,
) -> Result<GaussianMixtureSpec> {
    if !(t.scale > 0.0 && t.scale.is_finite()) {
        return Err(Error::input(format!("transform scale must be > 0, got {}", t.scale)));
    }
    if !(t.cov_multiplier > 0.0 && t.cov_multiplier.is_finite()) {
        return Err(Error::input(format!(
            "covariance multiplier must be > 0, got {}",
            t.cov_multiplier
        )));
    }
    let keep: Vec<usize> = match &t.keep_modes {
        None => (0..spec.num_modes()).collect(),
        Some(k) if k.is_empty() => return Err(Error::input("mode mask selects no modes")),
        Some(k) => {
            if let Some(bad) = k.iter().find(|&&i| i >= spec.num_modes()) {
                return Err(Error::input(format!(
                    "mode mask index {bad} out of range for {} modes",
                    spec.num_modes()
                )));
            }
            let mut k = k.clone();
            k.sort_unstable();
            k.dedup();
            k
        }
    };
    let (s, c) = t.rotation.sin_cos();
    let rot = [[c, -s], [s, c]];
    let total: f64 = keep.iter().map(|&i| spec.components[i].weight).sum();
    let components = keep
        .iter()
        .map(|&i| {
            let comp = &spec.components[i];
            let p = comp.center;
            let rp = [
                rot[0][0] * p[0] + rot[0][1] * p[1],
                rot[1][0] * p[0] + rot[1][1] * p[1],
            ];
            let center = [
                t.scale * rp[0] + t.translation[0],
                t.scale * rp[1] + t.translation[1],
            ];
            let mut covariance = [[0.0; 2]; 2];
            for a in 0..2 {
                for b in 0..2 {
                    let mut acc = 0.0;
                    for k in 0..2 {
                        for l in 0..2 {
                            acc += rot[a][k] * comp.covariance[k][l] * rot[b][l];
                        }
                    }
                    covariance[a][b] = t.cov_multiplier * acc;
                }
            }
            // exact symmetry after floating-point conjugation
            let off = 0.5 * (covariance[0][1] + covariance[1][0]);
            covariance[0][1] = off;
            covariance[1][0] = off;
            Component {
                center,
                covariance,
                weight: comp.weight / total,
            }
        })
        .collect();
    GaussianMixtureSpec::new(components)
}

fn cholesky(m: &Mat2) -> Mat2 {
    let l11 = m[0][0].sqrt();
    let l21 = m[1][0] / l11;
    let l22 = (m[1][1] - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

/// Endless i.i.d. sampler over a mixture. Each draw consumes one uniform for
/// the component and two standard normals, so any run of `n` draws is a
/// prefix of a longer run from the same seed.
pub struct MixtureSampler<'a> {
    spec: &'a GaussianMixtureSpec,
    chol: Vec<Mat2>,
    cumulative: Vec<f64>,
}

impl<'a> MixtureSampler<'a> {
    pub fn new(spec: &'a GaussianMixtureSpec) -> Self {
        let mut acc = 0.0;
        let cumulative = spec
            .components
            .iter()
            .map(|c| {
                acc += c.weight;
                acc
            })
            .collect();
        Self {
            spec,
            chol: spec.components.iter().map(|c| cholesky(&c.covariance)).collect(),
            cumulative,
        }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> ([f64; 2], usize) {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1);
        let n0: f64 = rng.sample(StandardNormal);
        let n1: f64 = rng.sample(StandardNormal);
        let l = &self.chol[k];
        let c = self.spec.components[k].center;
        ([c[0] + l[0][0] * n0, c[1] + l[1][0] * n0 + l[1][1] * n1], k)
    }

    pub fn batch<R: Rng>(&self, rng: &mut R, n: usize) -> Array {
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let (p, _) = self.draw(rng);
            data.extend_from_slice(&p);
        }
        Array::matrix(n, 2, data).expect("n×2")
    }
}

/// `n` samples with their component ids.
pub fn sample_labeled(
    spec: &GaussianMixtureSpec,
    n: usize,
    seed: u64,
) -> Result<(Array, Vec<usize>)> {
    if n == 0 {
        return Err(Error::input("sample count must be ≥ 1"));
    }
    let sampler = MixtureSampler::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let (p, k) = sampler.draw(&mut rng);
        data.extend_from_slice(&p);
        ids.push(k);
    }
    Ok((Array::matrix(n, 2, data)?, ids))
}

pub fn sample(spec: &GaussianMixtureSpec, n: usize, seed: u64) -> Result<Array> {
    Ok(sample_labeled(spec, n, seed)?.0)
}

/// Writes `x,y,component_id` rows.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &Array, ids: &[usize]) -> Result<()> {
    if ids.len() != samples.rows() {
        return Err(Error::dim("one component id per sample row"));
    }
    writeln!(w, "x,y,component_id")?;
    for (i, id) in ids.iter().enumerate() {
        let r = samples.row(i);
        writeln!(w, "{},{},{}", r[0], r[1], id)?;
    }
    Ok(())
}

/// The handful of target examples an adaptation run sees.
#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSet {
    pub samples: Array,
    pub spec_id: String,
    pub seed: u64,
    pub k: usize,
}

pub fn draw_few_shot(spec: &GaussianMixtureSpec, k: usize, seed: u64) -> Result<FewShotSet> {
    if k == 0 {
        return Err(Error::input("few-shot set needs k ≥ 1"));
    }
    Ok(FewShotSet {
        samples: sample(spec, k, seed)?,
        spec_id: spec.digest(),
        seed,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: [f64; 2], b: [f64; 2]) -> bool {
        (a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12
    }

    #[test]
    fn ring_geometry() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        assert!(close(s.components[0].center, [2.0, 0.0]));
        assert!(close(s.components[2].center, [0.0, 2.0]));
        assert!(s.components.iter().all(|c| c.weight == 1.0 / 8.0));
        let single = ring_spec(1, 0.0, 0.3).unwrap();
        assert_eq!(single.num_modes(), 1);
        assert!(close(single.components[0].center, [0.0, 0.0]));
    }

    #[test]
    fn ring_rejects_bad_arguments() {
        assert!(ring_spec(0, 1.0, 0.1).is_err());
        assert!(ring_spec(3, -1.0, 0.1).is_err());
        assert!(ring_spec(3, 1.0, 0.0).is_err());
    }

    #[test]
    fn identity_transform_is_noop() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        assert_eq!(apply_transform(&s, &TargetTransform::default()).unwrap(), s);
    }

    #[test]
    fn half_turn_negates_centers() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        let t = TargetTransform {
            rotation: PI,
            ..Default::default()
        };
        let r = apply_transform(&s, &t).unwrap();
        for (a, b) in s.components.iter().zip(&r.components) {
            assert!(close(b.center, [-a.center[0], -a.center[1]]));
        }
    }

    #[test]
    fn mask_renormalizes_weights() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        let t = TargetTransform {
            keep_modes: Some(vec![0, 2, 4, 6]),
            ..Default::default()
        };
        let r = apply_transform(&s, &t).unwrap();
        assert_eq!(r.num_modes(), 4);
        assert!(r.components.iter().all(|c| (c.weight - 0.25).abs() < 1e-15));

        let empty = TargetTransform {
            keep_modes: Some(vec![]),
            ..Default::default()
        };
        assert!(matches!(apply_transform(&s, &empty), Err(Error::Input(_))));
    }

    #[test]
    fn sampling_is_seeded() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        assert_eq!(sample(&s, 50, 3).unwrap(), sample(&s, 50, 3).unwrap());
        assert_ne!(sample(&s, 50, 3).unwrap(), sample(&s, 50, 4).unwrap());
    }

    #[test]
    fn sample_mean_converges_to_analytic_mean() {
        let s = apply_transform(
            &ring_spec(8, 2.0, 0.05).unwrap(),
            &TargetTransform {
                translation: [0.7, -0.3],
                keep_modes: Some(vec![0, 1, 2]),
                ..Default::default()
            },
        )
        .unwrap();
        let n = 100_000;
        let x = sample(&s, n, 12).unwrap();
        let (mu, cov) = s.moments();
        for d in 0..2 {
            let m: f64 = (0..n).map(|i| x.row(i)[d]).sum::<f64>() / n as f64;
            let tol = 3.0 * cov[d][d].sqrt() / (n as f64).sqrt();
            assert!((m - mu[d]).abs() < tol, "dim {d}: {m} vs {}", mu[d]);
        }
    }

    #[test]
    fn tiny_variance_clusters_at_center() {
        let s = ring_spec(1, 0.0, 1e-9).unwrap();
        let s = apply_transform(&s, &TargetTransform::translate(1.5, -2.0)).unwrap();
        let x = sample(&s, 100, 1).unwrap();
        for i in 0..100 {
            assert!((x.row(i)[0] - 1.5).abs() < 1e-6 && (x.row(i)[1] + 2.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empirical_covariance_matches_spec() {
        let cov = [[0.5, 0.2], [0.2, 0.3]];
        let s = GaussianMixtureSpec::new(vec![Component {
            center: [1.0, 2.0],
            covariance: cov,
            weight: 1.0,
        }])
        .unwrap();
        let n = 100_000;
        let x = sample(&s, n, 77).unwrap();
        let mean = [0, 1].map(|d| (0..n).map(|i| x.row(i)[d]).sum::<f64>() / n as f64);
        for a in 0..2 {
            for b in 0..2 {
                let c = (0..n)
                    .map(|i| (x.row(i)[a] - mean[a]) * (x.row(i)[b] - mean[b]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                assert!(((c - cov[a][b]) / cov[a][b]).abs() < 0.05, "{a}{b}: {c}");
            }
        }
    }

    #[test]
    fn few_shot_is_prefix_of_sample() {
        let s = ring_spec(8, 2.0, 0.05).unwrap();
        let one = draw_few_shot(&s, 1, 5).unwrap();
        assert_eq!(one.samples.rows(), 1);
        let ten = draw_few_shot(&s, 10, 5).unwrap();
        assert_eq!(ten, draw_few_shot(&s, 10, 5).unwrap());
        let long = sample(&s, 40, 5).unwrap();
        assert_eq!(ten.samples, long.slice_rows(0, 10).unwrap());
        assert_eq!(one.samples, long.slice_rows(0, 1).unwrap());
    }

    #[test]
    fn spec_file_round_trip() {
        let dir = std::env::temp_dir().join(format!("ewcgan-spec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ring.toml");
        let s = ring_spec(5, 1.5, 0.1).unwrap();
        s.save(&path).unwrap();
        assert_eq!(GaussianMixtureSpec::load(&path).unwrap(), s);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn samples_csv_has_header_and_rows() {
        let s = ring_spec(2, 1.0, 0.1).unwrap();
        let (x, ids) = sample_labeled(&s, 3, 0).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&mut buf, &x, &ids).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("x,y,component_id\n"));
    }

    proptest! {
        #[test]
        fn eigenvectors_are_orthonormal_and_reconstruct(a in 0.0f64..5.0, d in 0.0f64..5.0, b in -2.0f64..2.0, tiny in -1e-15f64..1e-15, iso in any::<bool>()) {
            let m = if iso { [[a, tiny], [tiny, a]] } else { [[a, b], [b, d]] };
            let (vals, v) = eig_sym(&m);
            prop_assert!(vals[0] <= vals[1]);
            let dot = v[0][0] * v[1][0] + v[0][1] * v[1][1];
            prop_assert!(dot.abs() < 1e-12);
            for k in 0..2 {
                prop_assert!((v[k][0].hypot(v[k][1]) - 1.0).abs() < 1e-12);
            }
            for i in 0..2 {
                for j in 0..2 {
                    let r = vals[0] * v[0][i] * v[0][j] + vals[1] * v[1][i] * v[1][j];
                    prop_assert!((r - m[i][j]).abs() < 1e-12 * (1.0 + a.abs() + d.abs()), "{m:?}");
                }
            }
        }
        #[test]
        fn transforms_preserve_weights_and_spd(
            rotation in -6.3f64..6.3,
            scale in 0.1f64..5.0,
            tx in -10.0f64..10.0,
            ty in -10.0f64..10.0,
            mult in 0.1f64..10.0,
            keep in prop::collection::btree_set(0usize..8, 1..8),
        ) {
            let s = ring_spec(8, 2.0, 0.05).unwrap();
            let t = TargetTransform {
                rotation,
                scale,
                translation: [tx, ty],
                keep_modes: Some(keep.into_iter().collect()),
                cov_multiplier: mult,
            };
            let r = apply_transform(&s, &t).unwrap();
            let total: f64 = r.components.iter().map(|c| c.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for c in &r.components {
                let (eig, _) = eig_sym(&c.covariance);
                prop_assert!(eig[0] > 0.0);
            }
        }
    }
}
