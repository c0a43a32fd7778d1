//! Minimum-variance portfolio weights, true and predicted risk, and the
//! ratio `Q = (true risk)² / (predicted risk)²`.
//!
//! Everything here works from inverse covariances; short positions are
//! allowed.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(DVector<f64>);

impl WeightVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `wᵗ Σ w`.
    pub fn variance_under(&self, sigma: &DMatrix<f64>) -> f64 {
        (sigma * &self.0).dot(&self.0)
    }
}

fn grand_sum(a: &DMatrix<f64>) -> f64 {
    a.iter().sum()
}

fn check_square(a: &DMatrix<f64>) -> Result<()> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn min_variance_weights(sigma_inv: &DMatrix<f64>) -> Result<WeightVector> {
    check_square(sigma_inv)?;
    let total = grand_sum(sigma_inv);
    if total.abs() < DEGENERATE_TOL {
        return Err(Error::Domain(format!("degenerate portfolio: grand sum of Σ⁻¹ is {total:e}")));
    }
    let rows = DVector::from_iterator(sigma_inv.nrows(), sigma_inv.row_iter().map(|r| r.sum()));
    Ok(WeightVector(rows / total))
}

/// `σ_P = 1 / sqrt(Σ_ij σ⁽⁻¹⁾_ij)`.
pub fn portfolio_risk(sigma_inv: &DMatrix<f64>) -> Result<f64> {
    check_square(sigma_inv)?;
    let total = grand_sum(sigma_inv);
    if total <= 0.0 || !total.is_finite() {
        return Err(Error::Domain(format!(
            "grand sum of the inverse covariance is {total:e}; input is not SPD"
        )));
    }
    Ok(total.sqrt().recip())
}

pub fn q_ratio(sigma_inv_true: &DMatrix<f64>, sigma_inv_est: &DMatrix<f64>) -> Result<f64> {
    if sigma_inv_true.shape() != sigma_inv_est.shape() {
        return Err(Error::Dimension(format!(
            "true inverse is {:?}, estimate is {:?}",
            sigma_inv_true.shape(),
            sigma_inv_est.shape()
        )));
    }
    let t = portfolio_risk(sigma_inv_true)?;
    let p = portfolio_risk(sigma_inv_est)?;
    Ok((t / p).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskReport {
    pub true_risk: f64,
    pub predicted_risk: f64,
    pub q: f64,
    pub bias_factor: f64,
    pub corrected_risk: f64,
}

impl RiskReport {
    pub fn new(sigma_inv_true: &DMatrix<f64>, sigma_inv_est: &DMatrix<f64>, bias_factor: f64) -> Result<Self> {
        let true_risk = portfolio_risk(sigma_inv_true)?;
        let predicted_risk = portfolio_risk(sigma_inv_est)?;
        if bias_factor <= 0.0 {
            return Err(Error::Domain(format!("bias factor must be positive, got {bias_factor}")));
        }
        Ok(RiskReport {
            true_risk,
            predicted_risk,
            q: (true_risk / predicted_risk).powi(2),
            bias_factor,
            corrected_risk: predicted_risk * bias_factor.sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_spd, spd_inverse, SpdScheme};
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(v))
    }

    #[test]
    fn identity_and_diagonal_examples() {
        let w = min_variance_weights(&DMatrix::identity(4, 4)).unwrap();
        assert!(w.as_vector().iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert!((portfolio_risk(&DMatrix::identity(4, 4)).unwrap() - 0.5).abs() < 1e-15);

        let inv = diag(&[1.0, 0.25]);
        let w = min_variance_weights(&inv).unwrap();
        assert!((w.as_vector()[0] - 0.8).abs() < 1e-15 && (w.as_vector()[1] - 0.2).abs() < 1e-15);
        assert!((portfolio_risk(&inv).unwrap() - 1.25f64.sqrt().recip()).abs() < 1e-15);
    }

    #[test]
    fn weights_match_kkt_solution() {
        for seed in 0..5 {
            let n = 5;
            let model = random_spd(n, seed, SpdScheme::WishartLike);
            // [2Σ e; eᵗ 0] [w; λ] = [0; 1]
            let mut kkt = DMatrix::zeros(n + 1, n + 1);
            kkt.view_mut((0, 0), (n, n)).copy_from(&(model.sigma() * 2.0));
            for i in 0..n {
                kkt[(i, n)] = 1.0;
                kkt[(n, i)] = 1.0;
            }
            let mut rhs = DVector::zeros(n + 1);
            rhs[n] = 1.0;
            let sol = kkt.lu().solve(&rhs).unwrap();
            let w = min_variance_weights(model.sigma_inv()).unwrap();
            for i in 0..n {
                assert!((w.as_vector()[i] - sol[i]).abs() < 1e-8 * sol[i].abs().max(1e-3));
            }
            assert!((w.as_vector().sum() - 1.0).abs() < 1e-10);
            let risk = portfolio_risk(model.sigma_inv()).unwrap();
            let direct = w.variance_under(model.sigma()).sqrt();
            assert!((risk - direct).abs() < 1e-10 * risk);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let zero_sum = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert!(matches!(min_variance_weights(&zero_sum), Err(Error::Domain(_))));
        assert!(matches!(portfolio_risk(&zero_sum), Err(Error::Domain(_))));
        assert!(matches!(portfolio_risk(&DMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
        assert!(q_ratio(&DMatrix::identity(2, 2), &DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn q_examples_and_report() {
        let model = random_spd(6, 4, SpdScheme::DiagPlusLowrank);
        let a = model.sigma_inv();
        assert!((q_ratio(a, a).unwrap() - 1.0).abs() < 1e-14);
        assert!((q_ratio(a, &(a * 2.0)).unwrap() - 2.0).abs() < 1e-14);

        let est = spd_inverse(&random_spd(6, 5, SpdScheme::WishartLike).sigma().clone()).unwrap();
        let r = RiskReport::new(a, &est, 1.7).unwrap();
        let q = q_ratio(a, &est).unwrap();
        assert!((r.q - q).abs() < 1e-12 * q);
        assert!((r.corrected_risk - r.predicted_risk * 1.7f64.sqrt()).abs() < 1e-15);
        assert!(RiskReport::new(a, &est, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn weights_invariant_under_rescaling(seed in 0u64..200, c in 0.01f64..100.0) {
            let model = random_spd(4, seed, SpdScheme::WishartLike);
            let w1 = min_variance_weights(model.sigma_inv()).unwrap();
            let w2 = min_variance_weights(model.scaled(c).sigma_inv()).unwrap();
            prop_assert!((w1.as_vector() - w2.as_vector()).amax() < 1e-10);
        }

        #[test]
        fn q_is_homogeneous(seed in 0u64..200, c in 0.01f64..100.0) {
            let a = random_spd(4, seed, SpdScheme::DiagPlusLowrank).sigma_inv().clone();
            let q = q_ratio(&a, &(&a * c)).unwrap();
            prop_assert!((q - c).abs() < 1e-12 * c);
        }
    }
}
