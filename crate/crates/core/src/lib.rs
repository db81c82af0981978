//! Few-shot adaptation of small adversarial generators on 2-D Gaussian
//! mixtures, regularized by a Fisher-weighted elastic penalty that anchors
//! important generator weights to their source-domain values.
//!
//! Pipeline: [`gan::pretrain`] on an abundant source mixture,
//! [`fisher::estimate_fisher`] through the frozen source discriminator, then
//! [`adapt::adapt`] to a few-shot target under the penalized loss, scored
//! with [`metrics`].

pub mod adapt;
pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod digest;
pub mod error;
pub mod ewc;
pub mod fisher;
pub mod gan;
pub mod metrics;
pub mod models;
pub mod optim;

pub use autodiff::{grad_check, Array, Tape, Var};
pub use checkpoint::Checkpoint;
pub use datasets::{FewShotSet, GaussianMixtureSpec, TargetTransform};
pub use error::{Error, Result};
pub use fisher::FisherDiagonal;
pub use metrics::MetricsReport;
pub use models::{MlpSpec, ParamVector};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Independent ChaCha streams carved out of one user seed.
pub mod streams {
    pub const INIT_G: u64 = 1;
    pub const INIT_D: u64 = 2;
    pub const DATA: u64 = 3;
    pub const LATENT: u64 = 4;
    pub const FISHER: u64 = 5;
    pub const EVAL_LATENT: u64 = 6;
    pub const PAIRS: u64 = 7;
    pub const FEW_SHOT_BATCH: u64 = 8;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n × dim` standard-normal latent codes.
pub fn latent_batch<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Array {
    let data = (0..n * dim).map(|_| rng.sample(StandardNormal)).collect();
    Array::matrix(n, dim, data).expect("n×dim")
}
