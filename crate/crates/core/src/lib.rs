//! Adversarial training laboratory on patch-structured synthetic data.
//!
//! The crate covers the whole experimental pipeline:
//!
//! - [`data`]: the patch distribution (one signal patch `alpha * y * w_star`,
//!   Gaussian noise patches orthogonal to `w_star`) and the default scalings.
//! - [`model`]: the one-hidden-layer cubic-activation CNN with analytic
//!   gradients in weights and inputs.
//! - [`attack`]: the closed-form transferable attack used during training and
//!   a projected-gradient attack used for evaluation.
//! - [`train`]: full-batch gradient descent on the mixed clean/adversarial
//!   logistic objective.
//! - [`telemetry`]: signal/noise components, exact projected-update checks
//!   and scalar tensor-power recursions.
//! - [`eval`]: Monte Carlo clean/robust error estimates.
//! - [`flatness`]: input-space loss landscape probes and the generalization
//!   gap ledger.
//! - [`construct`]: an explicit ReLU network that memorizes training balls on
//!   top of a clean classifier.
//!
//! All randomness is derived from explicit seeds (see [`rng`]) so every result
//! is reproducible and independent of the number of worker threads.

pub mod attack;
pub mod construct;
pub mod data;
pub mod error;
pub mod eval;
pub mod flatness;
pub mod json;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod telemetry;
pub mod train;

pub use error::{LabError, Result};

/// Runs `f` on a dedicated rayon pool with `threads` workers (0 means the
/// rayon default). Results never depend on the worker count.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("failed to build rayon thread pool");
    pool.install(f)
}
