//! Estimation-noise correction for the predicted risk of minimum-variance
//! portfolios built on compound Wishart covariance estimators.
//!
//! The crate layers as follows:
//!
//! - [`combinat`]: permutations of `[2k]`, pair partitions, coset-types.
//! - [`weingarten`]: orthogonal Weingarten functions and the ♯-product.
//! - [`sampling`]: Gaussian, compound Wishart and Haar samplers plus dense
//!   linear-algebra helpers.
//! - [`invmoments`]: closed-form Haar and inverse compound Wishart moments.
//! - [`portfolio`]: minimum-variance weights, risks and the ratio `Q`.
//! - [`estimators`]: weighting matrices `B` and `Σ̂ = YᵗBY / Tr(B)`.
//! - [`correction`]: the bias factor `E(Q)`, `Var(Q)` and asymptotic limits.
//! - [`simlab`]: Monte Carlo experiments with histogram and JSON export.
//! - [`ingest`]: return-panel CSV input and the subsampling risk study.
//! - [`validate`]: self-checks shared by the test suite and the CLI.

pub mod combinat;
pub mod error;
pub mod estimators;
pub mod correction;
pub mod ingest;
pub mod invmoments;
pub mod portfolio;
pub mod sampling;
pub mod simlab;
pub mod validate;
pub mod weingarten;

pub use error::{Error, ErrorClass, Result};

pub use rayon::ThreadPool;

/// A dedicated pool of `k` worker threads.
pub fn thread_pool(k: usize) -> Result<ThreadPool> {
    if k == 0 {
        return Err(Error::Parameter("worker count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot build worker pool: {e}")))
}
