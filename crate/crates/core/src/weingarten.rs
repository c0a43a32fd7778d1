//! Orthogonal Weingarten functions on `H_k`-biinvariant functions.
//!
//! `Wg^O(·; z)` is read off the pseudo-inverse of the Gram matrix
//! `G_{στ} = z^{κ(σ⁻¹τ)}` indexed by pair partitions. For integer parameters
//! and `k <= 2` the [`exact`] submodule repeats the computation over the
//! rationals.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::combinat::{coset_type, enumerate_pair_partitions, partitions_of, CosetType, Perm2k, MAX_PAIRING_K};
use crate::error::{Error, Result};
use crate::sampling::{pseudo_inverse, PINV_RTOL};

/// The embedded pair partitions of `[2k]` together with the coset-type of
/// every `σ⁻¹τ`. Built once per `k`.
#[derive(Debug)]
pub struct PairingBasis {
    k: usize,
    perms: Vec<Perm2k>,
    inverses: Vec<Perm2k>,
    partitions: Vec<CosetType>,
    /// `relative[a][b]` indexes `partitions` with the type of `perms[a]⁻¹ perms[b]`.
    relative: Vec<Vec<usize>>,
    /// One pair partition per coset-type.
    representatives: Vec<usize>,
}

impl PairingBasis {
    fn build(k: usize) -> Result<Self> {
        let perms: Vec<Perm2k> = enumerate_pair_partitions(k)?.iter().map(|p| p.to_perm()).collect();
        let inverses: Vec<Perm2k> = perms.iter().map(Perm2k::inverse).collect();
        let partitions = partitions_of(k);
        let lookup: HashMap<&CosetType, usize> = partitions.iter().enumerate().map(|(i, p)| (p, i)).collect();
        let relative: Vec<Vec<usize>> = inverses
            .iter()
            .map(|inv| perms.iter().map(|p| lookup[&coset_type(&inv.compose(p))]).collect())
            .collect();
        let representatives = (0..partitions.len())
            .map(|ti| relative[0].iter().position(|&t| t == ti).expect("every coset-type occurs in M_2k"))
            .collect();
        Ok(PairingBasis {
            k,
            perms,
            inverses,
            partitions,
            relative,
            representatives,
        })
    }

    pub fn get(k: usize) -> Result<&'static PairingBasis> {
        static BASES: [OnceLock<PairingBasis>; MAX_PAIRING_K] =
            [OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new(), OnceLock::new()];
        if !(1..=MAX_PAIRING_K).contains(&k) {
            return Err(Error::UnsupportedSize {
                what: "k",
                got: k,
                supported: "1..=5",
            });
        }
        let cell = &BASES[k - 1];
        if let Some(b) = cell.get() {
            return Ok(b);
        }
        let built = PairingBasis::build(k)?;
        Ok(cell.get_or_init(|| built))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn perms(&self) -> &[Perm2k] {
        &self.perms
    }

    pub fn partitions(&self) -> &[CosetType] {
        &self.partitions
    }

    pub fn relative_type(&self, a: usize, b: usize) -> &CosetType {
        &self.partitions[self.relative[a][b]]
    }

    /// A pair partition (as a permutation) of the given coset-type.
    pub fn representative(&self, eta: &CosetType) -> Option<&Perm2k> {
        let ti = self.partitions.iter().position(|p| p == eta)?;
        Some(&self.perms[self.representatives[ti]])
    }
}

/// A function on `S_{2k}` that is constant on `H_k`-double cosets, stored by
/// coset-type.
#[derive(Debug, Clone, PartialEq)]
pub struct BiinvariantFn {
    k: usize,
    values: BTreeMap<CosetType, f64>,
}

impl BiinvariantFn {
    pub fn from_fn(k: usize, f: impl Fn(&CosetType) -> f64) -> Result<Self> {
        let basis = PairingBasis::get(k)?;
        Ok(BiinvariantFn {
            k,
            values: basis.partitions.iter().map(|p| (p.clone(), f(p))).collect(),
        })
    }

    /// `σ ↦ z^{κ(σ)}`.
    pub fn z_kappa(k: usize, z: f64) -> Result<Self> {
        Self::from_fn(k, |eta| z.powi(eta.len() as i32))
    }

    /// The ♯-identity `1_{H_k}`: one on coset-type `(1, .., 1)`.
    pub fn identity(k: usize) -> Result<Self> {
        Self::from_fn(k, |eta| if eta.len() == k { 1.0 } else { 0.0 })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at_type(&self, eta: &CosetType) -> f64 {
        self.values.get(eta).copied().unwrap_or(0.0)
    }

    pub fn eval(&self, sigma: &Perm2k) -> f64 {
        self.at_type(&coset_type(sigma))
    }

    pub fn values(&self) -> impl Iterator<Item = (&CosetType, f64)> {
        self.values.iter().map(|(k, v)| (k, *v))
    }

    pub fn max_abs_diff(&self, other: &BiinvariantFn) -> f64 {
        self.values
            .iter()
            .map(|(eta, v)| (v - other.at_type(eta)).abs())
            .fold(0.0, f64::max)
    }
}

/// `(f1 ♯ f2)(σ) = Σ_{τ ∈ M_2k} f1(στ) f2(τ⁻¹)` evaluated at one σ.
pub fn sharp_convolve_at(f1: &BiinvariantFn, f2: &BiinvariantFn, sigma: &Perm2k) -> Result<f64> {
    if f1.k != f2.k || sigma.k() != f1.k {
        return Err(Error::Dimension(format!(
            "♯-product needs a common k (got {}, {}, and σ on [{}])",
            f1.k,
            f2.k,
            sigma.len()
        )));
    }
    let basis = PairingBasis::get(f1.k)?;
    Ok(basis
        .perms
        .iter()
        .zip(&basis.inverses)
        .map(|(tau, tau_inv)| f1.eval(&sigma.compose(tau)) * f2.eval(tau_inv))
        .sum())
}

pub fn sharp_convolve(f1: &BiinvariantFn, f2: &BiinvariantFn) -> Result<BiinvariantFn> {
    if f1.k != f2.k {
        return Err(Error::Dimension(format!(
            "♯-product needs a common k (got {} and {})",
            f1.k, f2.k
        )));
    }
    let basis = PairingBasis::get(f1.k)?;
    let mut values = BTreeMap::new();
    for (eta, &rep) in basis.partitions.iter().zip(&basis.representatives) {
        values.insert(eta.clone(), sharp_convolve_at(f1, f2, &basis.perms[rep])?);
    }
    Ok(BiinvariantFn { k: f1.k, values })
}

/// A Weingarten function at fixed parameter(s).
#[derive(Debug, Clone, PartialEq)]
pub struct WeingartenTable {
    pub k: usize,
    pub z: f64,
    /// Second parameter for the double function.
    pub w: Option<f64>,
    pub values: BiinvariantFn,
}

impl WeingartenTable {
    pub fn at_type(&self, eta: &CosetType) -> f64 {
        self.values.at_type(eta)
    }

    pub fn eval(&self, sigma: &Perm2k) -> f64 {
        self.values.eval(sigma)
    }

    /// `coset_type,value` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("coset_type,value\n");
        for (eta, v) in self.values.values() {
            out.push_str(&format!("{eta},{v:e}\n"));
        }
        out
    }
}

/// `G_{ab} = z^{κ(π_a⁻¹ π_b)}` over embedded pair partitions.
pub fn gram_matrix(k: usize, z: f64) -> Result<DMatrix<f64>> {
    let basis = PairingBasis::get(k)?;
    let n = basis.len();
    Ok(DMatrix::from_fn(n, n, |a, b| z.powi(basis.relative_type(a, b).len() as i32)))
}

pub fn wg_single(k: usize, z: f64) -> Result<WeingartenTable> {
    let basis = PairingBasis::get(k)?;
    let g = gram_matrix(k, z)?;
    let sv = g.clone().svd(false, false).singular_values;
    let (smin, smax) = (sv.min(), sv.max());
    if !(smax > 0.0 && smin > PINV_RTOL * smax) {
        return Err(Error::SingularParameter { k, z });
    }
    let inv = pseudo_inverse(&g);
    let scale = inv.amax();
    let mut values: BTreeMap<CosetType, f64> = BTreeMap::new();
    for a in 0..basis.len() {
        for b in 0..basis.len() {
            let eta = basis.relative_type(a, b);
            let v = inv[(a, b)];
            match values.get(eta) {
                None => {
                    values.insert(eta.clone(), v);
                }
                Some(&prev) if (prev - v).abs() > 1e-8 * scale => {
                    return Err(Error::Domain(format!(
                        "Gram inverse is not constant on coset-type {eta} at k = {k}, z = {z}"
                    )));
                }
                Some(_) => {}
            }
        }
    }
    Ok(WeingartenTable {
        k,
        z,
        w: None,
        values: BiinvariantFn { k, values },
    })
}

/// `Wg^O(·; z, w) = Wg^O(·; z) ♯ Wg^O(·; w)`.
pub fn wg_double(k: usize, z: f64, w: f64) -> Result<WeingartenTable> {
    let left = wg_single(k, z)?;
    let right = wg_single(k, w)?;
    Ok(WeingartenTable {
        k,
        z,
        w: Some(w),
        values: sharp_convolve(&left.values, &right.values)?,
    })
}

type CacheKey = (usize, u64, Option<u64>);

/// Memoizes tables by `(k, z, w)`; safe to share between threads.
#[derive(Debug, Default)]
pub struct WeingartenCache {
    tables: Mutex<HashMap<CacheKey, Arc<WeingartenTable>>>,
}

impl WeingartenCache {
    pub fn global() -> &'static WeingartenCache {
        static CACHE: OnceLock<WeingartenCache> = OnceLock::new();
        CACHE.get_or_init(WeingartenCache::default)
    }

    fn get_or(&self, key: CacheKey, build: impl FnOnce() -> Result<WeingartenTable>) -> Result<Arc<WeingartenTable>> {
        if let Some(t) = self.tables.lock().unwrap().get(&key) {
            return Ok(Arc::clone(t));
        }
        let table = Arc::new(build()?);
        self.tables.lock().unwrap().insert(key, Arc::clone(&table));
        Ok(table)
    }

    pub fn single(&self, k: usize, z: f64) -> Result<Arc<WeingartenTable>> {
        self.get_or((k, z.to_bits(), None), || wg_single(k, z))
    }

    pub fn double(&self, k: usize, z: f64, w: f64) -> Result<Arc<WeingartenTable>> {
        self.get_or((k, z.to_bits(), Some(w.to_bits())), || {
            let left = self.single(k, z)?;
            let right = self.single(k, w)?;
            Ok(WeingartenTable {
                k,
                z,
                w: Some(w),
                values: sharp_convolve(&left.values, &right.values)?,
            })
        })
    }
}

/// Exact rational Weingarten values for integer parameters, `k <= 2`.
pub mod exact {
    use std::collections::BTreeMap;

    use num_rational::BigRational;
    use num_traits::{One, Signed, Zero};

    use super::PairingBasis;
    use crate::combinat::CosetType;
    use crate::error::{Error, Result};

    pub type Rational = BigRational;

    pub const MAX_EXACT_K: usize = 2;

    fn int(v: i64) -> Rational {
        Rational::from_integer(v.into())
    }

    fn invert(mut m: Vec<Vec<Rational>>) -> Option<Vec<Vec<Rational>>> {
        let n = m.len();
        let mut inv: Vec<Vec<Rational>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { Rational::one() } else { Rational::zero() }).collect())
            .collect();
        for col in 0..n {
            let pivot = (col..n).find(|&r| !m[r][col].is_zero())?;
            m.swap(col, pivot);
            inv.swap(col, pivot);
            let p = m[col][col].clone();
            for j in 0..n {
                m[col][j] = &m[col][j] / &p;
                inv[col][j] = &inv[col][j] / &p;
            }
            for r in 0..n {
                if r != col && !m[r][col].is_zero() {
                    let f = m[r][col].clone();
                    for j in 0..n {
                        let a = &m[col][j] * &f;
                        m[r][j] = &m[r][j] - a;
                        let b = &inv[col][j] * &f;
                        inv[r][j] = &inv[r][j] - b;
                    }
                }
            }
        }
        Some(inv)
    }

    fn check(k: usize) -> Result<&'static PairingBasis> {
        if !(1..=MAX_EXACT_K).contains(&k) {
            return Err(Error::UnsupportedSize {
                what: "k (exact path)",
                got: k,
                supported: "1..=2",
            });
        }
        PairingBasis::get(k)
    }

    pub fn wg_single_exact(k: usize, z: i64) -> Result<BTreeMap<CosetType, Rational>> {
        let basis = check(k)?;
        let n = basis.len();
        let zr = int(z);
        let pow = |e: usize| (0..e).fold(Rational::one(), |acc, _| acc * &zr);
        let g: Vec<Vec<Rational>> = (0..n)
            .map(|a| (0..n).map(|b| pow(basis.relative_type(a, b).len())).collect())
            .collect();
        let inv = invert(g).ok_or(Error::SingularParameter { k, z: z as f64 })?;
        let mut out = BTreeMap::new();
        for (a, row) in inv.iter().enumerate() {
            for (b, value) in row.iter().enumerate() {
                let eta = basis.relative_type(a, b).clone();
                if let Some(prev) = out.get(&eta) {
                    if prev != value {
                        return Err(Error::Domain(format!("Gram inverse not constant on {eta}")));
                    }
                } else {
                    out.insert(eta, value.clone());
                }
            }
        }
        Ok(out)
    }

    /// The literal ♯-sum of two exact tables.
    pub fn wg_double_exact(k: usize, z: i64, w: i64) -> Result<BTreeMap<CosetType, Rational>> {
        let basis = check(k)?;
        let left = wg_single_exact(k, z)?;
        let right = wg_single_exact(k, w)?;
        let mut out = BTreeMap::new();
        for eta in basis.partitions() {
            let sigma = basis.representative(eta).expect("every type has a representative");
            let mut acc = Rational::zero();
            for (tau, tau_inv) in basis.perms.iter().zip(&basis.inverses) {
                let l = &left[&crate::combinat::coset_type(&sigma.compose(tau))];
                let r = &right[&crate::combinat::coset_type(tau_inv)];
                acc += l * r;
            }
            out.insert(eta.clone(), acc);
        }
        Ok(out)
    }

    pub fn to_f64(r: &Rational) -> f64 {
        use num_traits::ToPrimitive;
        r.to_f64().unwrap_or_else(|| if r.is_negative() { f64::NEG_INFINITY } else { f64::INFINITY })
    }
}
