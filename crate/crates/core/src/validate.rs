//! Self-checks of the closed forms against independent computations: the
//! Weingarten defining relations, and Monte Carlo oracles for Haar moments,
//! inverse moments, the trace-ratio identity and `Var(Q)`.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::combinat::Perm2k;
use crate::correction::{variance_coefficients, variance_from_coefficients};
use crate::error::{Error, Result};
use crate::estimators::{build_weight_matrix, WeightKind};
use crate::invmoments::{haar_moment, InverseMomentContext};
use crate::sampling::{
    random_spd, sample_compound_wishart_with, sample_haar_orthogonal_with, spd_inverse, trial_rng, Rng64, SpdScheme,
};
use crate::simlab::{run_experiment, summarize, ExperimentConfig};
use crate::weingarten::{sharp_convolve, BiinvariantFn, PairingBasis, WeingartenTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationLevel {
    Fast,
    Full,
}

impl std::str::FromStr for ValidationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(ValidationLevel::Fast),
            "full" => Ok(ValidationLevel::Full),
            other => Err(Error::Parameter(format!("unknown level `{other}` (expected fast | full)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub level: ValidationLevel,
    pub checks: Vec<CheckOutcome>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

/// Per-component sample means and standard errors.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    /// Unbiased sample variances.
    pub var: Vec<f64>,
}

impl McEstimate {
    /// `|mean_i - expected_i| <= k se_i`, with a floor for exact zeros.
    pub fn within(&self, i: usize, expected: f64, k: f64) -> bool {
        (self.mean[i] - expected).abs() <= k * self.se[i] + 1e-15
    }
}

const MC_CHUNK: usize = 5_000;

/// Draws `samples` vectors of length `dim` in parallel chunks; chunk `c` uses
/// stream `c + 1` of `seed`, so the result is independent of thread count.
pub fn monte_carlo<F>(samples: usize, seed: u64, dim: usize, draw: F) -> McEstimate
where
    F: Fn(&mut Rng64, &mut [f64]) + Sync,
{
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = trial_rng(seed, c as u64 + 1);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut sum = vec![0.0; dim];
            let mut sq = vec![0.0; dim];
            let mut buf = vec![0.0; dim];
            for _ in 0..count {
                draw(&mut rng, &mut buf);
                for d in 0..dim {
                    sum[d] += buf[d];
                    sq[d] += buf[d] * buf[d];
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    for (s, q) in &partial {
        for d in 0..dim {
            sum[d] += s[d];
            sq[d] += q[d];
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let var: Vec<f64> = (0..dim).map(|d| ((sq[d] - n * mean[d] * mean[d]) / (n - 1.0)).max(0.0)).collect();
    let se = var.iter().map(|v| (v / n).sqrt()).collect();
    McEstimate {
        samples,
        mean,
        se,
        var,
    }
}

/// Max deviation in `z^κ ♯ Wg ♯ z^κ = z^κ` and `Wg ♯ z^κ ♯ Wg = Wg`.
pub fn weingarten_relation_error(table: &WeingartenTable) -> Result<f64> {
    let k = table.k;
    let zk = BiinvariantFn::z_kappa(k, table.z)?;
    let wg = BiinvariantFn::from_fn(k, |eta| table.at_type(eta))?;
    let a = sharp_convolve(&sharp_convolve(&zk, &wg)?, &zk)?;
    let b = sharp_convolve(&sharp_convolve(&wg, &zk)?, &wg)?;
    Ok(a.max_abs_diff(&zk).max(b.max_abs_diff(&wg)))
}

pub fn check_weingarten_relations() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for k in 1..=3 {
        for z in [7.0, 10.0, 13.5] {
            let t = crate::weingarten::wg_single(k, z)?;
            worst = worst.max(weingarten_relation_error(&t)?);
        }
    }
    Ok((worst < 1e-9, format!("max deviation {worst:.3e} (k <= 3, z in {{7, 10, 13.5}})")))
}

/// Every `(i, j)` pair of `2k`-tuples over `{0, .., alphabet-1}`.
pub fn index_queries(k: usize, alphabet: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let len = 2 * k;
    let tuples: Vec<Vec<usize>> = (0..alphabet.pow(len as u32))
        .map(|code| (0..len).map(|d| (code / alphabet.pow(d as u32)) % alphabet).collect())
        .collect();
    let mut out = Vec::new();
    for i in &tuples {
        for j in &tuples {
            out.push((i.clone(), j.clone()));
        }
    }
    out
}

/// Haar moments at `n`, `k = 1, 2`, all indices in `{0, 1}`. Returns the
/// number of queries outside `k_se` standard errors and the total.
pub fn haar_mc_check(n: usize, samples: usize, seed: u64, k_se: f64) -> Result<(usize, usize, f64)> {
    let queries: Vec<_> = index_queries(1, 2).into_iter().chain(index_queries(2, 2)).collect();
    let expected: Vec<f64> = queries
        .iter()
        .map(|(i, j)| haar_moment(i, j, n, i.len() / 2))
        .collect::<Result<_>>()?;
    let est = monte_carlo(samples, seed, queries.len(), |rng, out| {
        let o = sample_haar_orthogonal_with(n, rng);
        for (slot, (i, j)) in out.iter_mut().zip(&queries) {
            *slot = i.iter().zip(j).map(|(&a, &b)| o[(a, b)]).product();
        }
    });
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for (q, &e) in expected.iter().enumerate() {
        let z = (est.mean[q] - e).abs() / est.se[q].max(1e-300);
        worst = worst.max(z);
        if !est.within(q, e, k_se) {
            bad += 1;
        }
    }
    Ok((bad, queries.len(), worst))
}

/// Mean and second-moment entries of `W⁻¹` under MLE weights.
pub fn inverse_moment_mc_check(n: usize, t: usize, samples: usize, seed: u64) -> Result<(bool, String)> {
    let model = random_spd(n, seed, SpdScheme::WishartLike);
    let b = build_weight_matrix(&WeightKind::Mle, t)?;
    let ctx = InverseMomentContext::new(&model, &b);
    let firsts = [(0, 0), (0, 1), (1, 2)];
    let seconds = [(0, 0, 0, 0), (0, 1, 0, 1), (0, 0, 1, 1), (0, 1, 2, 0)];
    let mut expected = Vec::new();
    for &(i, j) in &firsts {
        expected.push(ctx.mean(i, j)?);
    }
    for &(a, bb, c, d) in &seconds {
        expected.push(ctx.second_moment(a, bb, c, d)?);
    }
    let est = monte_carlo(samples, seed, expected.len(), |rng, out| {
        let w = sample_compound_wishart_with(&model, &b, rng);
        let inv = spd_inverse(&w).expect("T > n gives an invertible Wishart draw");
        for (slot, &(i, j)) in out.iter_mut().zip(&firsts) {
            *slot = inv[(i, j)];
        }
        for (slot, &(a, bb, c, d)) in out[firsts.len()..].iter_mut().zip(&seconds) {
            *slot = inv[(a, bb)] * inv[(c, d)];
        }
    });
    let z: Vec<f64> = (0..expected.len()).map(|q| (est.mean[q] - expected[q]).abs() / est.se[q]).collect();
    let worst = z.iter().cloned().fold(0.0, f64::max);
    Ok((worst <= 3.0, format!("n={n} T={t} {samples} draws, worst |z| = {worst:.2}")))
}

/// `E(Tr W⁻¹) / E(Σ_ij w⁽⁻¹⁾_ij)` by Monte Carlo against
/// `Tr(Σ⁻¹) / Σ_ij σ⁽⁻¹⁾_ij`. Returns `(estimate, se, exact)`.
pub fn trace_ratio_mc(n: usize, t: usize, samples: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let model = random_spd(n, seed, SpdScheme::WishartLike);
    let mut rng = trial_rng(seed, 0);
    let entries: Vec<f64> = (0..t).map(|_| 0.2 + rand::Rng::random::<f64>(&mut rng)).collect();
    let b = build_weight_matrix(&WeightKind::CustomDiagonal { entries }, t)?;
    let exact = model.sigma_inv().trace() / model.sigma_inv().sum();
    let est = monte_carlo(samples, seed, 4, |rng, out| {
        let w = sample_compound_wishart_with(&model, &b, rng);
        let inv = spd_inverse(&w).expect("T > n gives an invertible draw");
        let (a, s) = (inv.trace(), inv.sum());
        out.copy_from_slice(&[a, s, a * s, 0.0]);
    });
    let (ma, ms) = (est.mean[0], est.mean[1]);
    let ratio = ma / ms;
    // delta method: Var(A - R S) / (N E[S]²)
    let nn = samples as f64;
    let cov = (est.mean[2] - ma * ms) * nn / (nn - 1.0);
    let var_lin = est.var[0] - 2.0 * ratio * cov + ratio * ratio * est.var[1];
    let se = (var_lin.max(0.0) / nn).sqrt() / ms;
    Ok((ratio, se, exact))
}

/// Empirical `Var(Q)` under MLE weights against the formula built from
/// `coefficients(T, q)`. Returns `(empirical, formula)`.
pub fn variance_mc_with<F>(n: usize, t: usize, trials: usize, seed: u64, coefficients: F) -> Result<(f64, f64)>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let mut cfg = ExperimentConfig::new(n, t, WeightKind::Mle, trials, seed);
    cfg.report_variance = true;
    let exp = run_experiment(&cfg)?;
    let s = summarize(&exp.records, exp.failures)?;
    let b = build_weight_matrix(&WeightKind::Mle, t)?;
    let (a1, a2) = coefficients(t as f64, (t - n - 1) as f64);
    Ok((s.var_q_empirical, variance_from_coefficients(&b, n, a1, a2)?))
}

pub fn variance_check_with<F>(trials: usize, seed: u64, coefficients: F) -> Result<(bool, String)>
where
    F: Fn(f64, f64) -> (f64, f64),
{
    let (emp, formula) = variance_mc_with(10, 40, trials, seed, coefficients)?;
    let rel = (emp - formula).abs() / formula;
    Ok((rel < 0.10, format!("empirical {emp:.5} vs formula {formula:.5} (rel {rel:.3})")))
}

/// The first seed used by the fixed checks.
pub const VALIDATION_SEED: u64 = 20261014;

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_validation(level: ValidationLevel) -> ValidationReport {
    let full = level == ValidationLevel::Full;
    let seed = VALIDATION_SEED;
    let mut checks = vec![timed("weingarten-relations", check_weingarten_relations)];
    checks.push(timed("haar-moments", || {
        let samples = if full { 1_000_000 } else { 100_000 };
        let (bad, total, worst) = haar_mc_check(4, samples, seed, 3.0)?;
        Ok((bad == 0, format!("n=4 {samples} draws: {bad}/{total} queries beyond 3 SE, worst |z| = {worst:.2}")))
    }));
    checks.push(timed("inverse-moments", || {
        inverse_moment_mc_check(4, 20, if full { 20_000 } else { 5_000 }, seed + 1)
    }));
    checks.push(timed("trace-ratio", || {
        let samples = if full { 20_000 } else { 5_000 };
        let (r, se, exact) = trace_ratio_mc(8, 40, samples, seed + 2)?;
        let z = (r - exact).abs() / se;
        Ok((z <= 3.0, format!("ratio {r:.5} ± {se:.5} vs {exact:.5} (|z| = {z:.2})")))
    }));
    checks.push(timed("variance-of-q", || {
        variance_check_with(if full { 30_000 } else { 10_000 }, seed + 3, variance_coefficients)
    }));
    ValidationReport { level, checks }
}

/// A `Perm2k` of each coset-type represented by the basis, for callers that
/// want to spot-check tables.
pub fn coset_representatives(k: usize) -> Result<Vec<Perm2k>> {
    let basis = PairingBasis::get(k)?;
    Ok(basis
        .partitions()
        .iter()
        .filter_map(|eta| basis.representative(eta).cloned())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weingarten::wg_single;

    #[test]
    fn relation_error_detects_a_wrong_table() {
        let mut t = wg_single(2, 7.0).unwrap();
        assert!(weingarten_relation_error(&t).unwrap() < 1e-12);
        let values = t.values.clone();
        t.values = BiinvariantFn::from_fn(2, |eta| values.at_type(eta) * 1.01).unwrap();
        assert!(weingarten_relation_error(&t).unwrap() > 1e-6);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_correct() {
        let draw = |rng: &mut Rng64, out: &mut [f64]| {
            let u: f64 = rand::Rng::random(rng);
            out[0] = u;
            out[1] = u * u;
        };
        let a = monte_carlo(12_345, 3, 2, draw);
        let b = monte_carlo(12_345, 3, 2, draw);
        assert_eq!(a.mean, b.mean);
        assert!(a.within(0, 0.5, 4.0) && a.within(1, 1.0 / 3.0, 4.0));
        assert!((a.var[0] - 1.0 / 12.0).abs() < 5e-3);
    }

    #[test]
    fn query_enumeration() {
        assert_eq!(index_queries(1, 2).len(), 16);
        assert_eq!(index_queries(2, 2).len(), 256);
    }

    #[test]
    fn variance_check_catches_tampered_coefficient() {
        let (ok, _) = variance_check_with(4_000, 5, variance_coefficients).unwrap();
        assert!(ok);
        let tampered = |t: f64, q: f64| {
            let (a1, a2) = variance_coefficients(t, q);
            (a1 * 1.5, a2)
        };
        let (ok, detail) = variance_check_with(4_000, 5, tampered).unwrap();
        assert!(!ok, "{detail}");
    }

    #[test]
    fn representatives_cover_every_type() {
        assert_eq!(coset_representatives(3).unwrap().len(), 3);
    }
}
