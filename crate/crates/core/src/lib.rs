//! Construction, numerical verification and refutation of finite-dimensional
//! linearizing embeddings `F . Phi^t = e^{Bt} . F` of continuous-time flows.
//!
//! Module map:
//! - [`linalg`]: matrix exponential, center/stable spectral splitting, bounded
//!   rational-independence search.
//! - [`flows`]: charts, closed-form and vector-field flows, adaptive RK 5(4).
//! - [`catalog`]: example systems with exact flows, actions, embeddings and
//!   expected verdicts.
//! - [`phase`]: asymptotic phase estimation and phase-map checks.
//! - [`embed`]: impact times, topological and smooth embedding builders,
//!   linearization and embedding-quality verification.
//! - [`obstruct`]: planar Hopf indices, the necessary-condition verdict engine,
//!   and the quasiperiodic factor certificate.
//! - [`pinched`]: quasiperiodic pinched torus families.
//! - [`edmd`]: extended dynamic mode decomposition with failure diagnostics.

pub mod catalog;
pub mod edmd;
pub mod embed;
pub mod flows;
pub mod linalg;
pub mod obstruct;
pub mod phase;
pub mod pinched;
pub mod report;
pub mod stats;

use std::sync::Arc;

pub use rand_chacha::ChaCha8Rng as Rng;

/// Map between chart points or into a Euclidean space.
pub type StateFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
/// Scalar function of a chart point.
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// Draws a random chart point.
pub type Sampler = Arc<dyn Fn(&mut Rng) -> Vec<f64> + Send + Sync>;

pub fn state_fn<F>(f: F) -> StateFn
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
{
    Arc::new(f)
}

pub fn scalar_fn<F>(f: F) -> ScalarFn
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    Arc::new(f)
}

pub fn sampler<F>(f: F) -> Sampler
where
    F: Fn(&mut Rng) -> Vec<f64> + Send + Sync + 'static,
{
    Arc::new(f)
}

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub(crate) fn euclid_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
