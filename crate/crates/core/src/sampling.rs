//! Random matrix generation and the dense linear-algebra helpers it needs.
//!
//! Every sampler is a pure function of its parameters and a `u64` seed. Monte
//! Carlo loops that draw many samples use the `*_with` variants and thread a
//! single generator through; experiment runners derive one independent
//! ChaCha stream per trial with [`trial_rng`].

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::WeightMatrix;

/// Relative cut for singular values in [`pseudo_inverse`].
pub const PINV_RTOL: f64 = 1e-12;

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under `master_seed`.
pub fn trial_rng(master_seed: u64, stream: u64) -> Rng64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Moore-Penrose pseudo-inverse via SVD. Singular values below
/// `PINV_RTOL * σ_max` are treated as zero.
pub fn pseudo_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = PINV_RTOL * smax;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(c, r);
    for (idx, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            let vi = v_t.row(idx).transpose();
            let ui = u.column(idx);
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

/// Numerical rank with the same cut as [`pseudo_inverse`].
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let cut = PINV_RTOL * sv.max();
    sv.iter().filter(|&&s| s > cut && s > 0.0).count()
}

fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.amax().max(1.0);
    let asym = (a - a.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Domain(format!(
            "{what} is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn spd_eigen(sigma: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_symmetric(sigma, "covariance")?;
    let eig = SymmetricEigen::new(sigma.clone());
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.min();
    if min.is_nan() || min <= 1e-14 * max.max(f64::MIN_POSITIVE) {
        return Err(Error::Domain(format!(
            "matrix is not positive definite (smallest eigenvalue {min:e})"
        )));
    }
    Ok(eig)
}

/// `Q Λ^{1/2} Qᵗ` for a symmetric positive definite input.
pub fn symmetric_root(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = spd_eigen(sigma)?;
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "cannot invert a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("matrix is not positive definite".into()))?;
    // A singular input can survive the factorization with pivots at rounding level.
    let scale = a.diagonal().amax();
    let min_pivot = chol.l_dirty().diagonal().map(|d| d * d).min();
    if min_pivot.is_nan() || min_pivot <= 10.0 * a.nrows() as f64 * f64::EPSILON * scale {
        return Err(Error::Domain(format!(
            "matrix is numerically singular (smallest pivot {min_pivot:e}, scale {scale:e})"
        )));
    }
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// The true return covariance together with the factors every workflow
/// needs.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    sigma: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    sigma_root: DMatrix<f64>,
}

impl CovarianceModel {
    pub fn new(sigma: DMatrix<f64>) -> Result<Self> {
        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let sigma_root = symmetric_root(&sigma)?;
        let sigma_inv = spd_inverse(&sigma)?;
        Ok(CovarianceModel {
            sigma,
            sigma_inv,
            sigma_root,
        })
    }

    pub fn identity(n: usize) -> Self {
        CovarianceModel {
            sigma: DMatrix::identity(n, n),
            sigma_inv: DMatrix::identity(n, n),
            sigma_root: DMatrix::identity(n, n),
        }
    }

    pub fn n(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn sigma_root(&self) -> &DMatrix<f64> {
        &self.sigma_root
    }

    /// Same model with Σ multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        CovarianceModel {
            sigma: &self.sigma * c,
            sigma_inv: &self.sigma_inv / c,
            sigma_root: &self.sigma_root * c.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SpdScheme {
    /// `G Gᵗ / m + 0.01 I` with `G` an `n x 2n` standard Gaussian.
    #[default]
    WishartLike,
    /// Uniform diagonal in `[0.5, 1.5]` plus a rank-3 Gaussian factor.
    DiagPlusLowrank,
}

impl FromStr for SpdScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wishart-like" | "wishart" => Ok(SpdScheme::WishartLike),
            "diag-plus-lowrank" | "lowrank" => Ok(SpdScheme::DiagPlusLowrank),
            other => Err(Error::Parameter(format!(
                "unknown sigma scheme `{other}` (expected wishart-like | diag-plus-lowrank)"
            ))),
        }
    }
}

impl std::fmt::Display for SpdScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpdScheme::WishartLike => "wishart-like",
            SpdScheme::DiagPlusLowrank => "diag-plus-lowrank",
        })
    }
}

pub fn random_spd(n: usize, seed: u64, scheme: SpdScheme) -> CovarianceModel {
    random_spd_with(n, scheme, &mut seeded_rng(seed))
}

pub fn random_spd_with<R: Rng + ?Sized>(n: usize, scheme: SpdScheme, rng: &mut R) -> CovarianceModel {
    assert!(n >= 1, "dimension must be positive");
    let sigma = match scheme {
        SpdScheme::WishartLike => {
            let m = 2 * n;
            let g = standard_normal_matrix(n, m, rng);
            (&g * g.transpose()) / m as f64 + DMatrix::identity(n, n) * 0.01
        }
        SpdScheme::DiagPlusLowrank => {
            let d = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
            let v = standard_normal_matrix(n, 3, rng) / 3f64.sqrt();
            DMatrix::from_diagonal(&d) + &v * v.transpose()
        }
    };
    CovarianceModel::new(sigma).expect("construction is positive definite")
}

/// A `T x n` matrix of i.i.d. `N(0, 1)` entries.
#[derive(Debug, Clone)]
pub struct GaussianSample {
    pub x: DMatrix<f64>,
    pub seed: u64,
}

pub fn sample_gaussian(t: usize, n: usize, seed: u64) -> GaussianSample {
    GaussianSample {
        x: standard_normal_matrix(t, n, &mut seeded_rng(seed)),
        seed,
    }
}

/// Returns drawn as `Y = X Σ^{1/2}`, rows i.i.d. `N(0, Σ)`.
pub fn sample_returns_with<R: Rng + ?Sized>(model: &CovarianceModel, t: usize, rng: &mut R) -> DMatrix<f64> {
    standard_normal_matrix(t, model.n(), rng) * model.sigma_root()
}

/// `W = Σ^{1/2} Xᵗ B X Σ^{1/2}`.
pub fn sample_compound_wishart(model: &CovarianceModel, b: &WeightMatrix, seed: u64) -> DMatrix<f64> {
    sample_compound_wishart_with(model, b, &mut seeded_rng(seed))
}

pub fn sample_compound_wishart_with<R: Rng + ?Sized>(
    model: &CovarianceModel,
    b: &WeightMatrix,
    rng: &mut R,
) -> DMatrix<f64> {
    if b.rank() < model.n() {
        log::warn!(
            "weight matrix rank {} < dimension {}: the sample will be singular",
            b.rank(),
            model.n()
        );
    }
    let x = standard_normal_matrix(b.t(), model.n(), rng);
    let inner = b.sandwich(&x);
    let root = model.sigma_root();
    let w = root * inner * root;
    (&w + w.transpose()) * 0.5
}

/// Haar-distributed orthogonal matrix by sign-corrected QR.
pub fn sample_haar_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    sample_haar_orthogonal_with(n, &mut seeded_rng(seed))
}

pub fn sample_haar_orthogonal_with<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let g = standard_normal_matrix(n, n, rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
