//! Permutations of `[2k]`, pair partitions, and the coset-type statistics
//! that index orthogonal Weingarten calculus.
//!
//! Everything is stored 0-based. Constructors that take user input
//! (`Perm2k::from_one_line`, `PairPartition::from_pairs`) accept the usual
//! 1-based notation and convert.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest `k` for which pair partitions are enumerated; `(2k-1)!! = 945`.
pub const MAX_PAIRING_K: usize = 5;

/// A permutation of `{0, .., 2k-1}` in one-line form.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Perm2k {
    images: Vec<usize>,
}

impl Perm2k {
    pub fn identity(k: usize) -> Self {
        Perm2k {
            images: (0..2 * k).collect(),
        }
    }

    /// Builds a permutation from 1-based one-line notation `(σ(1), .., σ(2k))`.
    pub fn from_one_line(images: &[usize]) -> Result<Self> {
        Self::from_zero_based(images.iter().map(|&v| v.wrapping_sub(1)).collect())
    }

    pub fn from_zero_based(images: Vec<usize>) -> Result<Self> {
        let m = images.len();
        if m == 0 || !m.is_multiple_of(2) {
            return Err(Error::Dimension(format!(
                "a permutation of [2k] needs an even, positive length; got {m}"
            )));
        }
        let mut seen = vec![false; m];
        for &v in &images {
            if v >= m || seen[v] {
                return Err(Error::Domain(format!(
                    "one-line form is not a bijection of [{m}]"
                )));
            }
            seen[v] = true;
        }
        Ok(Perm2k { images })
    }

    pub fn k(&self) -> usize {
        self.images.len() / 2
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    #[inline]
    pub fn apply(&self, x: usize) -> usize {
        self.images[x]
    }

    pub fn images(&self) -> &[usize] {
        &self.images
    }

    /// `self ∘ other`, i.e. `x ↦ self(other(x))`.
    pub fn compose(&self, other: &Perm2k) -> Perm2k {
        debug_assert_eq!(self.len(), other.len());
        Perm2k {
            images: other.images.iter().map(|&x| self.images[x]).collect(),
        }
    }

    pub fn inverse(&self) -> Perm2k {
        let mut inv = vec![0; self.images.len()];
        for (x, &y) in self.images.iter().enumerate() {
            inv[y] = x;
        }
        Perm2k { images: inv }
    }
}

impl fmt::Display for Perm2k {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.images.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{}", v + 1)?;
        }
        write!(f, ")")
    }
}

/// A perfect matching of `[2k]` held in canonical form: pairs `(a, b)` with
/// `a < b`, sorted by first element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairPartition {
    pairs: Vec<(usize, usize)>,
}

impl PairPartition {
    /// Builds a pair partition from 1-based pairs in any order.
    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        let m = 2 * pairs.len();
        if m == 0 {
            return Err(Error::Dimension("a pair partition needs k >= 1".into()));
        }
        let mut seen = vec![false; m];
        let mut canon = Vec::with_capacity(pairs.len());
        for &(a, b) in pairs {
            let (a, b) = (a.wrapping_sub(1), b.wrapping_sub(1));
            for v in [a, b] {
                if v >= m || seen[v] {
                    return Err(Error::Domain(format!(
                        "pairs do not cover [{m}] exactly once"
                    )));
                }
                seen[v] = true;
            }
            canon.push((a.min(b), a.max(b)));
        }
        canon.sort_unstable();
        Ok(PairPartition { pairs: canon })
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    /// 0-based pairs in canonical order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// The embedding `M_{2k} → S_{2k}`: `2i-1 ↦ a_i`, `2i ↦ b_i`.
    pub fn to_perm(&self) -> Perm2k {
        let images = self.pairs.iter().flat_map(|&(a, b)| [a, b]).collect();
        Perm2k { images }
    }

    /// Reads a pair partition back out of a permutation by pairing
    /// `σ(2i-1)` with `σ(2i)`.
    pub fn from_perm(sigma: &Perm2k) -> PairPartition {
        let mut pairs: Vec<_> = sigma
            .images
            .chunks_exact(2)
            .map(|c| (c[0].min(c[1]), c[0].max(c[1])))
            .collect();
        pairs.sort_unstable();
        PairPartition { pairs }
    }
}

impl fmt::Display for PairPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{{},{}}}", a + 1, b + 1)?;
        }
        write!(f, "}}")
    }
}

/// A partition of `k` in weakly decreasing order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CosetType(Vec<usize>);

impl CosetType {
    /// Accepts parts in any order; zero parts are rejected.
    pub fn new(mut parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() || parts.contains(&0) {
            return Err(Error::Domain(
                "a coset-type needs at least one positive part".into(),
            ));
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(CosetType(parts))
    }

    pub fn parts(&self) -> &[usize] {
        &self.0
    }

    /// κ, the number of connected components of Γ(σ).
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn k(&self) -> usize {
        self.0.iter().sum()
    }
}

impl fmt::Display for CosetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(" "))
    }
}

fn check_k(k: usize) -> Result<()> {
    if (1..=MAX_PAIRING_K).contains(&k) {
        Ok(())
    } else {
        Err(Error::UnsupportedSize {
            what: "k",
            got: k,
            supported: "1..=5",
        })
    }
}

/// All `(2k-1)!!` pair partitions of `[2k]`, lexicographic in canonical form.
pub fn enumerate_pair_partitions(k: usize) -> Result<Vec<PairPartition>> {
    check_k(k)?;
    fn rec(unused: &mut Vec<usize>, acc: &mut Vec<(usize, usize)>, out: &mut Vec<PairPartition>) {
        if unused.is_empty() {
            out.push(PairPartition { pairs: acc.clone() });
            return;
        }
        let first = unused.remove(0);
        for idx in 0..unused.len() {
            let partner = unused.remove(idx);
            acc.push((first, partner));
            rec(unused, acc, out);
            acc.pop();
            unused.insert(idx, partner);
        }
        unused.insert(0, first);
    }
    let mut out = Vec::new();
    rec(&mut (0..2 * k).collect(), &mut Vec::with_capacity(k), &mut out);
    Ok(out)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Component half-sizes of Γ(σ), the graph on `[2k]` with edges
/// `{2i-1, 2i}` and `{σ(2i-1), σ(2i)}`.
pub fn coset_type(sigma: &Perm2k) -> CosetType {
    let m = sigma.len();
    let mut parent: Vec<usize> = (0..m).collect();
    for i in 0..sigma.k() {
        for (a, b) in [(2 * i, 2 * i + 1), (sigma.apply(2 * i), sigma.apply(2 * i + 1))] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
    }
    let mut sizes = vec![0usize; m];
    for v in 0..m {
        let r = find(&mut parent, v);
        sizes[r] += 1;
    }
    let mut parts: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).map(|s| s / 2).collect();
    parts.sort_unstable_by(|a, b| b.cmp(a));
    CosetType(parts)
}

/// κ(σ).
pub fn kappa(sigma: &Perm2k) -> usize {
    coset_type(sigma).len()
}

/// `δ_σ(i) = Π_s δ(i_{σ(2s-1)}, i_{σ(2s)})`.
pub fn delta_product(sigma: &Perm2k, indices: &[usize]) -> Result<u8> {
    if indices.len() != sigma.len() {
        return Err(Error::Dimension(format!(
            "index tuple has length {}, permutation acts on [{}]",
            indices.len(),
            sigma.len()
        )));
    }
    let all = sigma
        .images
        .chunks_exact(2)
        .all(|c| indices[c[0]] == indices[c[1]]);
    Ok(all as u8)
}

/// `Tr_σ(A) = Π_j Tr(A^{η_j})` over the coset-type of σ.
pub fn power_trace(sigma: &Perm2k, a: &DMatrix<f64>) -> Result<f64> {
    power_trace_of_type(&coset_type(sigma), a)
}

pub fn power_trace_of_type(eta: &CosetType, a: &DMatrix<f64>) -> Result<f64> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "power trace needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let top = eta.parts()[0];
    let mut traces = Vec::with_capacity(top);
    let mut power = a.clone();
    traces.push(power.trace());
    for _ in 1..top {
        power = &power * a;
        traces.push(power.trace());
    }
    Ok(eta.parts().iter().map(|&p| traces[p - 1]).product())
}

/// Membership in the hyperoctahedral group `H_k`: σ maps the trivial
/// matching `{{1,2},{3,4},..}` onto itself.
pub fn is_hyperoctahedral(sigma: &Perm2k) -> bool {
    sigma
        .images
        .chunks_exact(2)
        .all(|c| c[0] / 2 == c[1] / 2)
}

/// All `2^k k!` elements of `H_k`.
pub fn hyperoctahedral_elements(k: usize) -> Vec<Perm2k> {
    let mut out = Vec::new();
    for blocks in permutations(k) {
        for flips in 0..(1usize << k) {
            let mut images = vec![0; 2 * k];
            for (i, &b) in blocks.iter().enumerate() {
                let flip = (flips >> i) & 1;
                images[2 * i] = 2 * b + flip;
                images[2 * i + 1] = 2 * b + 1 - flip;
            }
            out.push(Perm2k { images });
        }
    }
    out
}

/// Every permutation of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..m).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..m).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..m).rev().find(|&j| current[j] > current[i - 1]).unwrap();
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

/// Partitions of `k` in reverse lexicographic order, `(k)` first.
pub fn partitions_of(k: usize) -> Vec<CosetType> {
    fn rec(rem: usize, cap: usize, acc: &mut Vec<usize>, out: &mut Vec<CosetType>) {
        if rem == 0 {
            out.push(CosetType(acc.clone()));
            return;
        }
        for p in (1..=rem.min(cap)).rev() {
            acc.push(p);
            rec(rem - p, p, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(k, k, &mut Vec::new(), &mut out);
    out
}
