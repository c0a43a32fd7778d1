//! Closed-form local moments: Haar orthogonal entries and entries of the
//! inverse of a compound Wishart matrix `W ∈ W(Σ, B)` at orders `k = 1, 2`.
//!
//! Matrix indices are 0-based. `q = T - n - 1` throughout.

use nalgebra::DMatrix;

use crate::combinat::{delta_product, power_trace};
use crate::error::{Error, Result};
use crate::estimators::WeightMatrix;
use crate::sampling::{pseudo_inverse, CovarianceModel};
use crate::weingarten::{PairingBasis, WeingartenCache};

pub const MAX_HAAR_K: usize = 3;
pub const MAX_INVERSE_K: usize = 2;

/// Validated inputs for an inverse compound Wishart moment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentQuery {
    pub k: usize,
    pub indices: Vec<usize>,
    pub n: usize,
    pub t: usize,
}

impl MomentQuery {
    pub fn new(indices: &[usize], n: usize, t: usize) -> Result<Self> {
        if indices.is_empty() || !indices.len().is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "moment indices must have even positive length, got {}",
                indices.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Dimension(format!("index {bad} out of range for n = {n}")));
        }
        let k = indices.len() / 2;
        if k > MAX_INVERSE_K {
            return Err(Error::UnsupportedSize {
                what: "k",
                got: k,
                supported: "1..=2",
            });
        }
        Ok(MomentQuery {
            k,
            indices: indices.to_vec(),
            n,
            t,
        })
    }

    /// `q = T - n - 1`, possibly negative.
    pub fn q(&self) -> i64 {
        self.t as i64 - self.n as i64 - 1
    }

    /// `n >= k` and `q >= 2k - 1`.
    pub fn check_regime(&self) -> Result<()> {
        let q = self.q();
        if self.n < self.k || q < 2 * self.k as i64 - 1 {
            return Err(Error::Regime(format!(
                "order-{} inverse moments need n >= {} and q >= {} (n = {}, T = {}, q = {q})",
                self.k,
                self.k,
                2 * self.k - 1,
                self.n,
                self.t
            )));
        }
        Ok(())
    }
}

/// `E[o_{i1 j1} ... o_{i2k j2k}]` for Haar `O ∈ O(n)`.
pub fn haar_moment(i: &[usize], j: &[usize], n: usize, k: usize) -> Result<f64> {
    if i.len() != 2 * k || j.len() != 2 * k {
        return Err(Error::Dimension(format!(
            "Haar moment of order {k} needs two {}-tuples, got {} and {}",
            2 * k,
            i.len(),
            j.len()
        )));
    }
    if k == 0 || k > MAX_HAAR_K {
        return Err(Error::UnsupportedSize {
            what: "k",
            got: k,
            supported: "1..=3",
        });
    }
    let basis = PairingBasis::get(k)?;
    let wg = WeingartenCache::global().single(k, n as f64)?;
    let di: Vec<u8> = basis.perms().iter().map(|s| delta_product(s, i)).collect::<Result<_>>()?;
    let dj: Vec<u8> = basis.perms().iter().map(|s| delta_product(s, j)).collect::<Result<_>>()?;
    let mut total = 0.0;
    for (a, &da) in di.iter().enumerate() {
        if da == 0 {
            continue;
        }
        for (b, &db) in dj.iter().enumerate() {
            if db == 1 {
                total += wg.at_type(basis.relative_type(a, b));
            }
        }
    }
    Ok(total)
}

/// Shared ingredients of the inverse-moment formulas for one `(Σ, B)`.
#[derive(Debug, Clone)]
pub struct InverseMomentContext {
    pub n: usize,
    pub t: usize,
    pub sigma_inv: DMatrix<f64>,
    pub b_pinv: DMatrix<f64>,
    /// `Tr(B⁻)`.
    pub tr_pinv: f64,
    /// `Tr((B⁻)²)`.
    pub tr_pinv_sq: f64,
}

impl InverseMomentContext {
    pub fn new(model: &CovarianceModel, b: &WeightMatrix) -> Self {
        let b_pinv = pseudo_inverse(b.matrix());
        let tr_pinv = b_pinv.trace();
        let tr_pinv_sq = (&b_pinv * &b_pinv).trace();
        InverseMomentContext {
            n: model.n(),
            t: b.t(),
            sigma_inv: model.sigma_inv().clone(),
            b_pinv,
            tr_pinv,
            tr_pinv_sq,
        }
    }

    pub fn q(&self) -> i64 {
        self.t as i64 - self.n as i64 - 1
    }

    fn s(&self, a: usize, b: usize) -> f64 {
        self.sigma_inv[(a, b)]
    }

    /// `E[w⁽⁻¹⁾_ij] = Tr(B⁻) σ⁽⁻¹⁾_ij / (T q)`.
    pub fn mean(&self, i: usize, j: usize) -> Result<f64> {
        let query = MomentQuery::new(&[i, j], self.n, self.t)?;
        if query.q() < 1 {
            return Err(Error::Regime(format!("first inverse moment needs q >= 1, got q = {}", query.q())));
        }
        let q = query.q() as f64;
        Ok(self.tr_pinv * self.s(i, j) / (self.t as f64 * q))
    }

    /// `E[w⁽⁻¹⁾_{i1 i2} w⁽⁻¹⁾_{i3 i4}]` in the collected closed form.
    pub fn second_moment(&self, i1: usize, i2: usize, i3: usize, i4: usize) -> Result<f64> {
        let query = MomentQuery::new(&[i1, i2, i3, i4], self.n, self.t)?;
        if query.q() <= 2 {
            return Err(Error::Regime(format!("second inverse moment needs q > 2, got q = {}", query.q())));
        }
        let t = self.t as f64;
        let q = query.q() as f64;
        let p12 = self.s(i1, i2) * self.s(i3, i4);
        let p13 = self.s(i1, i3) * self.s(i2, i4);
        let p14 = self.s(i1, i4) * self.s(i2, i3);
        let i_1 = ((t + 1.0) * (q - 1.0) - 2.0) * p12 + (t - q + 1.0) * p13 + (t - q + 1.0) * p14;
        let i_2 = 2.0 * (t - q + 1.0) * p12 + (t * q - 2.0) * p13 + (t * q - 2.0) * p14;
        let denom = t * (t + 2.0) * (t - 1.0) * q * (q - 2.0) * (q + 1.0);
        Ok((self.tr_pinv.powi(2) * i_1 + self.tr_pinv_sq * i_2) / denom)
    }

    /// The literal double sum over `M_2k` with the double Weingarten
    /// function at `(T, -q)`.
    pub fn general(&self, indices: &[usize]) -> Result<f64> {
        let query = MomentQuery::new(indices, self.n, self.t)?;
        query.check_regime()?;
        let k = query.k;
        let basis = PairingBasis::get(k)?;
        let wg = WeingartenCache::global().double(k, self.t as f64, -(query.q() as f64))?;
        let traces: Vec<f64> = basis
            .perms()
            .iter()
            .map(|s| power_trace(s, &self.b_pinv))
            .collect::<Result<_>>()?;
        let products: Vec<f64> = basis
            .perms()
            .iter()
            .map(|rho| {
                rho.images()
                    .chunks_exact(2)
                    .map(|c| self.s(indices[c[0]], indices[c[1]]))
                    .product()
            })
            .collect();
        let mut total = 0.0;
        for (a, tr) in traces.iter().enumerate() {
            for (b, prod) in products.iter().enumerate() {
                total += tr * wg.at_type(basis.relative_type(a, b)) * prod;
            }
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        Ok(sign * total)
    }
}

pub fn inv_wishart_mean(i: usize, j: usize, model: &CovarianceModel, b: &WeightMatrix) -> Result<f64> {
    InverseMomentContext::new(model, b).mean(i, j)
}

pub fn inv_wishart_second_moment(
    (i1, i2, i3, i4): (usize, usize, usize, usize),
    model: &CovarianceModel,
    b: &WeightMatrix,
) -> Result<f64> {
    InverseMomentContext::new(model, b).second_moment(i1, i2, i3, i4)
}

pub fn inv_wishart_moment_general(indices: &[usize], model: &CovarianceModel, b: &WeightMatrix, k: usize) -> Result<f64> {
    if k == 0 || k > MAX_INVERSE_K {
        return Err(Error::UnsupportedSize {
            what: "k",
            got: k,
            supported: "1..=2",
        });
    }
    if indices.len() != 2 * k {
        return Err(Error::Dimension(format!(
            "order-{k} moment needs {} indices, got {}",
            2 * k,
            indices.len()
        )));
    }
    InverseMomentContext::new(model, b).general(indices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinat::{coset_type, PairPartition, Perm2k};
    use crate::estimators::{build_weight_matrix, WeightKind};
    use crate::sampling::{random_spd, sample_haar_orthogonal_with, seeded_rng, SpdScheme};
    use crate::weingarten::wg_double;
    use nalgebra::DVector;
    use rand::Rng;

    fn tuples(len: usize, alphabet: usize) -> Vec<Vec<usize>> {
        (0..alphabet.pow(len as u32))
            .map(|code| (0..len).map(|d| (code / alphabet.pow(d as u32)) % alphabet).collect())
            .collect()
    }

    #[test]
    fn haar_k1_examples() {
        assert!((haar_moment(&[0, 0], &[1, 1], 4, 1).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(haar_moment(&[0, 1], &[1, 1], 4, 1).unwrap(), 0.0);
        assert!(matches!(haar_moment(&[0, 0, 0], &[1, 1], 4, 1), Err(Error::Dimension(_))));
        assert!(haar_moment(&[0; 8], &[0; 8], 4, 4).is_err());
    }

    #[test]
    fn haar_fourth_moment_of_an_entry() {
        // E[o_11^4] = 3 / (n (n + 2))
        for n in [3usize, 4, 7] {
            let v = haar_moment(&[0; 4], &[0; 4], n, 2).unwrap();
            assert!((v - 3.0 / (n * (n + 2)) as f64).abs() < 1e-14, "n={n}");
        }
        // E[o_11^6] = 15 / (n (n + 2) (n + 4))
        let v = haar_moment(&[0; 6], &[0; 6], 5, 3).unwrap();
        assert!((v - 15.0 / (5.0 * 7.0 * 9.0)).abs() < 1e-13);
    }

    #[test]
    fn haar_moments_vanish_without_pairings() {
        let n = 3;
        for k in 1..=2 {
            for i in tuples(2 * k, 3) {
                let mut counts = [0usize; 3];
                i.iter().for_each(|&v| counts[v] += 1);
                let pairable = counts.iter().all(|c| c % 2 == 0);
                if !pairable {
                    for j in tuples(2 * k, 3) {
                        assert_eq!(haar_moment(&i, &j, n, k).unwrap(), 0.0);
                        assert_eq!(haar_moment(&j, &i, n, k).unwrap(), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn haar_k2_agrees_with_monte_carlo() {
        let n = 3;
        let draws = 100_000;
        let mut rng = seeded_rng(31);
        let (i, j) = ([0, 0, 1, 1], [0, 1, 0, 1]);
        let vals: Vec<f64> = (0..draws)
            .map(|_| {
                let o = sample_haar_orthogonal_with(n, &mut rng);
                (0..4).map(|s| o[(i[s], j[s])]).product()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / draws as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64).sqrt();
        let exact = haar_moment(&i, &j, n, 2).unwrap();
        assert!((mean - exact).abs() < 3.5 * sd / (draws as f64).sqrt(), "{mean} vs {exact}");
    }

    fn random_diag_b(t: usize, seed: u64) -> WeightMatrix {
        let mut rng = seeded_rng(seed);
        let entries: Vec<f64> = (0..t).map(|_| 0.2 + rng.random::<f64>()).collect();
        build_weight_matrix(&WeightKind::CustomDiagonal { entries }, t).unwrap()
    }

    #[test]
    fn mean_examples() {
        let (n, t) = (5, 30);
        let model = CovarianceModel::identity(n);
        let b = build_weight_matrix(&WeightKind::Mle, t).unwrap();
        let q = (t - n - 1) as f64;
        assert!((inv_wishart_mean(2, 2, &model, &b).unwrap() - 1.0 / q).abs() < 1e-15);
        assert_eq!(inv_wishart_mean(1, 2, &model, &b).unwrap(), 0.0);

        let diag = CovarianceModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]))).unwrap();
        assert_eq!(inv_wishart_mean(0, 2, &diag, &build_weight_matrix(&WeightKind::Mle, 10).unwrap()).unwrap(), 0.0);

        let short = build_weight_matrix(&WeightKind::Mle, 6).unwrap();
        assert!(matches!(inv_wishart_mean(0, 0, &model, &short), Err(Error::Regime(_))));
    }

    #[test]
    fn second_moment_regime_and_degenerate_cases() {
        let model = CovarianceModel::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5]))).unwrap();
        let b = build_weight_matrix(&WeightKind::Mle, 20).unwrap();
        assert_eq!(inv_wishart_second_moment((0, 1, 0, 2), &model, &b).unwrap(), 0.0);
        let tight = build_weight_matrix(&WeightKind::Mle, 6).unwrap(); // q = 2
        assert!(matches!(inv_wishart_second_moment((0, 0, 0, 0), &model, &tight), Err(Error::Regime(_))));
    }

    #[test]
    fn general_sum_reduces_to_closed_forms() {
        for seed in 0..10u64 {
            let n = 3 + (seed as usize % 3);
            let t = n + 5 + seed as usize;
            let model = random_spd(n, seed, SpdScheme::DiagPlusLowrank);
            let b = random_diag_b(t, 100 + seed);
            let ctx = InverseMomentContext::new(&model, &b);
            for (i, j) in [(0, 0), (0, 1), (n - 1, 1)] {
                let closed = ctx.mean(i, j).unwrap();
                let general = ctx.general(&[i, j]).unwrap();
                assert!((closed - general).abs() <= 1e-12 * closed.abs().max(1e-300), "seed {seed}");
            }
            let idx = [0, 1, n - 1, 0];
            let closed = ctx.second_moment(idx[0], idx[1], idx[2], idx[3]).unwrap();
            let general = ctx.general(&idx).unwrap();
            assert!((closed - general).abs() <= 1e-10 * closed.abs(), "seed {seed}: {closed} vs {general}");
        }
    }

    #[test]
    fn first_moment_on_the_diagonal_is_positive() {
        let model = random_spd(4, 3, SpdScheme::WishartLike);
        let b = random_diag_b(20, 2);
        for i in 0..4 {
            assert!(inv_wishart_moment_general(&[i, i], &model, &b, 1).unwrap() > 0.0);
        }
        assert!(inv_wishart_moment_general(&[0, 0, 0, 0, 0, 0], &model, &b, 3).is_err());
    }

    #[test]
    fn general_sum_is_symmetric_under_pair_swap() {
        let model = random_spd(4, 8, SpdScheme::WishartLike);
        let b = build_weight_matrix(&WeightKind::Ewma { lambda: 0.9 }, 25).unwrap();
        let ctx = InverseMomentContext::new(&model, &b);
        let a = ctx.general(&[0, 1, 2, 3]).unwrap();
        let c = ctx.general(&[2, 3, 0, 1]).unwrap();
        assert!((a - c).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn general_sum_rejects_small_samples() {
        let model = CovarianceModel::identity(4);
        let b = build_weight_matrix(&WeightKind::Mle, 7).unwrap(); // q = 2 < 3
        assert!(matches!(InverseMomentContext::new(&model, &b).general(&[0, 0, 1, 1]), Err(Error::Regime(_))));
    }

    /// Coefficients of `Σ_ρ Wg(π ρ; T, -q) Π_ρ` for π ∈ {id, π1, π2⁻¹} against
    /// the printed closed forms over `D = T(T+2)(T-1) q (2-q)(q+1)`.
    #[test]
    fn double_table_reproduces_printed_wg_sums() {
        let pi1 = PairPartition::from_pairs(&[(1, 3), (2, 4)]).unwrap().to_perm();
        let pi2 = PairPartition::from_pairs(&[(1, 4), (2, 3)]).unwrap().to_perm();
        let rhos: Vec<Perm2k> = PairingBasis::get(2).unwrap().perms().to_vec();
        for &(t, q) in &[(40.0f64, 29.0f64), (60.0, 49.0), (12.0, 5.0)] {
            let wg = wg_double(2, t, -q).unwrap();
            let d = t * (t + 2.0) * (t - 1.0) * q * (2.0 - q) * (q + 1.0);
            let diag = (t + 1.0) * (1.0 - q) + 2.0;
            let off = q - t - 1.0;
            let coeffs = |pi: &Perm2k| -> Vec<f64> {
                rhos.iter().map(|rho| wg.at_type(&coset_type(&pi.compose(rho))) * d).collect()
            };
            let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-8 * y.abs().max(1.0));
            assert!(close(&coeffs(&Perm2k::identity(2)), &[diag, off, off]));
            assert!(close(&coeffs(&pi2.inverse()), &[off, off, diag]));
            // The printed second sum carries an extra (T+1) on its first
            // coefficient; the collected I_2 term only works out without it.
            let second = coeffs(&pi1);
            assert!(close(&second, &[off, diag, off]));
            assert!((second[0] - (t + 1.0) * off).abs() > 1.0);
        }
    }
}
