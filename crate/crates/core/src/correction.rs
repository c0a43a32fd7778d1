//! The bias factor `E(Q)`, the finite-sample `Var(Q)`, asymptotic limits of
//! `Q`, and the rescaling of predicted risk.
//!
//! Rank-deficient `B` enter through the traces of the pseudo-inverse.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{WeightKind, WeightMatrix};

fn q_of(n: usize, t: usize) -> i64 {
    t as i64 - n as i64 - 1
}

/// `E(Q) = Tr(B) Tr(B⁻) / (T q)`.
pub fn bias_factor(b: &WeightMatrix, n: usize) -> Result<f64> {
    let t = b.t();
    let q = q_of(n, t);
    if q < 1 {
        return Err(Error::Regime(format!("bias factor needs T > n + 1 (n = {n}, T = {t})")));
    }
    Ok(b.trace() * b.pinv_trace() / (t as f64 * q as f64))
}

/// The coefficients `(a₁, a₂)` of `(Tr B⁻)²` and `Tr(B⁻²)` in `Var(Q)`.
pub fn variance_coefficients(t: f64, q: f64) -> (f64, f64) {
    let a1 = 2.0 * t * t * q - 2.0 * t * q * q + 2.0 * t * t + 2.0 * t + 2.0 * q * q - 2.0 * q - 4.0;
    let a2 = t * q * (2.0 * t - 2.0 * q + 2.0 * t * q - 2.0);
    (a1, a2)
}

/// `Var(Q)` for arbitrary coefficients; [`variance_of_q`] plugs in the
/// exact ones.
pub fn variance_from_coefficients(b: &WeightMatrix, n: usize, a1: f64, a2: f64) -> Result<f64> {
    let t = b.t();
    let q = q_of(n, t);
    if q <= 2 {
        return Err(Error::Regime(format!("Var(Q) needs q > 2, got q = {q} (n = {n}, T = {t})")));
    }
    let (t, q) = (t as f64, q as f64);
    let num = b.trace().powi(2) * (a1 * b.pinv_trace().powi(2) + a2 * b.pinv_sq_trace());
    let den = t * t * (t + 2.0) * (t - 1.0) * q * q * (q - 2.0) * (q + 1.0);
    Ok(num / den)
}

pub fn variance_of_q(b: &WeightMatrix, n: usize) -> Result<f64> {
    let q = q_of(n, b.t());
    let (a1, a2) = variance_coefficients(b.t() as f64, q as f64);
    variance_from_coefficients(b, n, a1, a2)
}

/// Proportional-growth regimes with `n / T → r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum AsymptoticRegime {
    Mle { r: f64 },
    /// `rank_fraction` is the limit of `m / T`.
    Idempotent { r: f64, rank_fraction: f64 },
    /// `(1 - λ) T → c`.
    Ewma { r: f64, c: f64 },
}

impl AsymptoticRegime {
    pub fn label(&self) -> &'static str {
        match self {
            AsymptoticRegime::Mle { .. } => "mle",
            AsymptoticRegime::Idempotent { .. } => "idempotent",
            AsymptoticRegime::Ewma { .. } => "ewma",
        }
    }

    /// The regime a finite `(kind, n, T)` is a member of, if any.
    pub fn for_kind(kind: &WeightKind, n: usize, t: usize) -> Option<Self> {
        let r = n as f64 / t as f64;
        match kind {
            WeightKind::Mle => Some(AsymptoticRegime::Mle { r }),
            WeightKind::SampleCov => Some(AsymptoticRegime::Idempotent {
                r,
                rank_fraction: (t - 1) as f64 / t as f64,
            }),
            WeightKind::Idempotent { rank } => Some(AsymptoticRegime::Idempotent {
                r,
                rank_fraction: *rank as f64 / t as f64,
            }),
            WeightKind::Ewma { lambda } => Some(AsymptoticRegime::Ewma {
                r,
                c: (1.0 - lambda) * t as f64,
            }),
            WeightKind::CustomDiagonal { .. } => None,
        }
    }
}

/// `(e^c - 1)² / (c² e^c)`, with a series near 0 to avoid cancellation.
fn ewma_shape(c: f64) -> f64 {
    if c < 1e-4 {
        1.0 + c * c / 12.0
    } else {
        (c.exp_m1() / c).powi(2) * (-c).exp()
    }
}

pub fn asymptotic_limit(regime: &AsymptoticRegime) -> Result<f64> {
    let r = match *regime {
        AsymptoticRegime::Mle { r } | AsymptoticRegime::Idempotent { r, .. } | AsymptoticRegime::Ewma { r, .. } => r,
    };
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Regime(format!("asymptotic limits need 0 < r < 1, got r = {r}")));
    }
    match *regime {
        AsymptoticRegime::Mle { r } => Ok(1.0 / (1.0 - r)),
        AsymptoticRegime::Idempotent { r, rank_fraction } => {
            if !(rank_fraction > 0.0 && rank_fraction <= 1.0) {
                return Err(Error::Parameter(format!("rank fraction must lie in (0, 1], got {rank_fraction}")));
            }
            Ok(rank_fraction.powi(2) / (1.0 - r))
        }
        AsymptoticRegime::Ewma { r, c } => {
            if c <= 0.0 {
                return Err(Error::Parameter(format!("EWMA constant c must be positive, got {c}")));
            }
            Ok(ewma_shape(c) / (1.0 - r))
        }
    }
}

/// `predicted × sqrt(factor)`.
pub fn scale_predicted_risk(predicted: f64, factor: f64) -> Result<f64> {
    if factor.is_nan() || factor <= 0.0 || factor.is_infinite() {
        return Err(Error::Domain(format!("scaling factor must be positive, got {factor}")));
    }
    Ok(predicted * factor.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionFactor {
    pub n: usize,
    pub t: usize,
    pub q: i64,
    pub eq_mean: f64,
    pub var_q: Option<f64>,
    pub asymptotic: Option<AsymptoticRegime>,
    pub asymptotic_limit: Option<f64>,
}

impl CorrectionFactor {
    pub fn new(b: &WeightMatrix, n: usize) -> Result<Self> {
        let t = b.t();
        let eq_mean = bias_factor(b, n)?;
        let q = q_of(n, t);
        let var_q = if q > 2 { Some(variance_of_q(b, n)?) } else { None };
        let asymptotic = AsymptoticRegime::for_kind(b.kind(), n, t);
        let asymptotic_limit = asymptotic.as_ref().and_then(|a| asymptotic_limit(a).ok());
        Ok(CorrectionFactor {
            n,
            t,
            q,
            eq_mean,
            var_q,
            asymptotic,
            asymptotic_limit,
        })
    }

    pub fn sqrt_factor(&self) -> f64 {
        self.eq_mean.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::build_weight_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mle(t: usize) -> WeightMatrix {
        build_weight_matrix(&WeightKind::Mle, t).unwrap()
    }

    #[test]
    fn bias_factor_examples() {
        assert!((bias_factor(&mle(250), 200).unwrap() - 250.0 / 49.0).abs() < 1e-12);
        assert!(matches!(bias_factor(&mle(3), 2), Err(Error::Regime(_))));

        let (t, m, n) = (40, 30, 10);
        let idem = build_weight_matrix(&WeightKind::Idempotent { rank: m }, t).unwrap();
        let expected = (m * m) as f64 / (t * (t - n - 1)) as f64;
        assert!((bias_factor(&idem, n).unwrap() - expected).abs() < 1e-12);

        let (lambda, t, n) = (0.99f64, 200usize, 100usize);
        let ewma = build_weight_matrix(&WeightKind::Ewma { lambda }, t).unwrap();
        let q = (t - n - 1) as f64;
        let expected =
            (1.0 - lambda.powi(t as i32)).powi(2) / (lambda.powi(t as i32 - 1) * (1.0 - lambda).powi(2) * t as f64 * q);
        assert!((bias_factor(&ewma, n).unwrap() - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn mle_variance_example() {
        let v = variance_of_q(&mle(50), 20).unwrap();
        assert!((v - 5000.0 / (841.0 * 27.0)).abs() < 1e-12);
        assert!(matches!(variance_of_q(&mle(13), 10), Err(Error::Regime(_))));
    }

    #[test]
    fn variance_reduces_to_white_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(1..60usize);
            let t = n + rng.random_range(4..80usize);
            let q = (t - n - 1) as f64;
            let expected = 2.0 * (t * t) as f64 / (q * q * (q - 2.0));
            let got = variance_of_q(&mle(t), n).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected, "n={n} T={t}");
            // the identity behind it
            let (a1, a2) = variance_coefficients(t as f64, q);
            let tf = t as f64;
            let rhs = 2.0 * tf * (tf + 2.0) * (tf - 1.0) * (q + 1.0);
            assert!((a1 * tf + a2 - rhs).abs() < 1e-12 * rhs);
        }
    }

    #[test]
    fn variance_decreases_along_proportional_growth() {
        let vals: Vec<f64> = (1..=8).map(|s| variance_of_q(&mle(40 * s), 10 * s).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }

    #[test]
    fn asymptotic_examples() {
        assert!((asymptotic_limit(&AsymptoticRegime::Mle { r: 0.8 }).unwrap() - 5.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        let expected = (e - 1.0).powi(2) / (0.5 * e);
        let got = asymptotic_limit(&AsymptoticRegime::Ewma { r: 0.5, c: 1.0 }).unwrap();
        assert!((got - expected).abs() < 1e-12 && (got - 2.17232).abs() < 1e-5);
        for c in [1e-3, 1e-5, 1e-8] {
            let v = asymptotic_limit(&AsymptoticRegime::Ewma { r: 0.5, c }).unwrap();
            assert!((v - 2.0).abs() < 1e-6, "c={c}: {v}");
        }
        let idem = AsymptoticRegime::Idempotent { r: 0.5, rank_fraction: 0.9 };
        assert!((asymptotic_limit(&idem).unwrap() - 1.62).abs() < 1e-12);
        assert!(matches!(asymptotic_limit(&AsymptoticRegime::Mle { r: 1.0 }), Err(Error::Regime(_))));
        assert!(asymptotic_limit(&AsymptoticRegime::Ewma { r: 0.5, c: 0.0 }).is_err());
    }

    #[test]
    fn ewma_shape_is_continuous_at_switch() {
        let below = ewma_shape(0.999_999e-4);
        let above = ewma_shape(1.000_001e-4);
        assert!((below - above).abs() < 1e-12);
    }

    #[test]
    fn finite_factor_approaches_asymptotic_limit() {
        let n = 2000;
        let t = 2500;
        let finite = bias_factor(&mle(t), n).unwrap();
        let limit = asymptotic_limit(&AsymptoticRegime::Mle { r: 0.8 }).unwrap();
        assert!((finite - limit).abs() / limit < 1e-2);
    }

    #[test]
    fn scaling() {
        assert_eq!(scale_predicted_risk(0.3, 1.0).unwrap(), 0.3);
        let f = bias_factor(&mle(250), 200).unwrap();
        assert!((scale_predicted_risk(0.3, f).unwrap() - 0.3 * (250.0f64 / 49.0).sqrt()).abs() < 1e-15);
        assert!((scale_predicted_risk(0.3, 1.0 / 0.2).unwrap() - 0.3 / 0.2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(scale_predicted_risk(0.3, 0.0), Err(Error::Domain(_))));
        assert!(scale_predicted_risk(0.3, -1.0).is_err());
    }

    #[test]
    fn correction_factor_record() {
        let cf = CorrectionFactor::new(&mle(250), 200).unwrap();
        assert_eq!(cf.q, 49);
        assert!(cf.var_q.unwrap() > 0.0);
        assert!((cf.asymptotic_limit.unwrap() - 5.0).abs() < 1e-12);
        let tight = CorrectionFactor::new(&mle(12), 10).unwrap();
        assert!(tight.var_q.is_none());
    }
}
