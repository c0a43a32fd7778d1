//! Weighting matrices `B` and the covariance estimator `Σ̂ = YᵗBY / Tr(B)`.
//!
//! Diagonal and projector kinds keep a structure tag so traces and the
//! sandwich product `YᵗBY` cost O(T) and O(Tn²) instead of going through the
//! dense `T x T` matrix.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{numerical_rank, pseudo_inverse, PINV_RTOL};

/// Row `j` (0-based) of the data gets EWMA weight `λ^j`, so row 0 must be the
/// most recent observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightKind {
    Mle,
    SampleCov,
    Ewma { lambda: f64 },
    Idempotent { rank: usize },
    CustomDiagonal { entries: Vec<f64> },
}

impl WeightKind {
    pub fn label(&self) -> String {
        match self {
            WeightKind::Mle => "mle".into(),
            WeightKind::SampleCov => "sample".into(),
            WeightKind::Ewma { lambda } => format!("ewma:{lambda}"),
            WeightKind::Idempotent { rank } => format!("idem:{rank}"),
            WeightKind::CustomDiagonal { entries } => format!("diag[{}]", entries.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Structure {
    Identity,
    Diagonal(DVector<f64>),
    /// `I - eeᵗ/T`.
    CenteringProjector,
}

#[derive(Debug, Clone)]
pub struct WeightMatrix {
    t: usize,
    kind: WeightKind,
    structure: Structure,
    matrix: DMatrix<f64>,
    tr_b: f64,
    tr_b_pinv: f64,
    tr_b_pinv_sq: f64,
    rank: usize,
}

fn diagonal_traces(d: &DVector<f64>) -> (f64, f64, f64, usize) {
    let max = d.amax();
    let cut = PINV_RTOL * max;
    let mut tr = 0.0;
    let mut tr_inv = 0.0;
    let mut tr_inv_sq = 0.0;
    let mut rank = 0;
    for &b in d.iter() {
        tr += b;
        if b.abs() > cut && b != 0.0 {
            tr_inv += 1.0 / b;
            tr_inv_sq += 1.0 / (b * b);
            rank += 1;
        }
    }
    (tr, tr_inv, tr_inv_sq, rank)
}

pub fn build_weight_matrix(kind: &WeightKind, t: usize) -> Result<WeightMatrix> {
    if t < 2 {
        return Err(Error::Parameter(format!("weight matrices need T >= 2, got {t}")));
    }
    let diag = |d: DVector<f64>| {
        let (tr_b, tr_b_pinv, tr_b_pinv_sq, rank) = diagonal_traces(&d);
        WeightMatrix {
            t,
            kind: kind.clone(),
            matrix: DMatrix::from_diagonal(&d),
            structure: Structure::Diagonal(d),
            tr_b,
            tr_b_pinv,
            tr_b_pinv_sq,
            rank,
        }
    };
    let wm = match kind {
        WeightKind::Mle => {
            let tf = t as f64;
            WeightMatrix {
                t,
                kind: kind.clone(),
                structure: Structure::Identity,
                matrix: DMatrix::identity(t, t),
                tr_b: tf,
                tr_b_pinv: tf,
                tr_b_pinv_sq: tf,
                rank: t,
            }
        }
        WeightKind::SampleCov => {
            let tf = t as f64;
            let m = DMatrix::identity(t, t) - DMatrix::from_element(t, t, 1.0 / tf);
            WeightMatrix {
                t,
                kind: kind.clone(),
                structure: Structure::CenteringProjector,
                matrix: m,
                tr_b: tf - 1.0,
                tr_b_pinv: tf - 1.0,
                tr_b_pinv_sq: tf - 1.0,
                rank: t - 1,
            }
        }
        WeightKind::Ewma { lambda } => {
            if !(*lambda > 0.0 && *lambda < 1.0) {
                return Err(Error::Parameter(format!(
                    "EWMA decay must lie in (0, 1), got {lambda}"
                )));
            }
            diag(DVector::from_fn(t, |j, _| lambda.powi(j as i32)))
        }
        WeightKind::Idempotent { rank } => {
            if *rank < 1 || *rank > t {
                return Err(Error::Parameter(format!(
                    "idempotent rank must lie in 1..={t}, got {rank}"
                )));
            }
            diag(DVector::from_fn(t, |j, _| if j < *rank { 1.0 } else { 0.0 }))
        }
        WeightKind::CustomDiagonal { entries } => {
            if entries.len() != t {
                return Err(Error::Parameter(format!(
                    "diagonal weights have {} entries but T = {t}",
                    entries.len()
                )));
            }
            if entries.iter().any(|b| !b.is_finite() || *b < 0.0) {
                return Err(Error::Parameter(
                    "diagonal weights must be finite and nonnegative".into(),
                ));
            }
            if entries.iter().all(|&b| b == 0.0) {
                return Err(Error::Parameter("diagonal weights are all zero".into()));
            }
            diag(DVector::from_column_slice(entries))
        }
    };
    Ok(wm)
}

impl WeightMatrix {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `Tr(B)`.
    pub fn trace(&self) -> f64 {
        self.tr_b
    }

    /// `Tr(B⁻)`.
    pub fn pinv_trace(&self) -> f64 {
        self.tr_b_pinv
    }

    /// `Tr((B⁻)²)`.
    pub fn pinv_sq_trace(&self) -> f64 {
        self.tr_b_pinv_sq
    }

    /// Normalized trace `tr(B) = Tr(B)/T`.
    pub fn norm_trace(&self) -> f64 {
        self.tr_b / self.t as f64
    }

    pub fn norm_pinv_trace(&self) -> f64 {
        self.tr_b_pinv / self.t as f64
    }

    pub fn norm_pinv_sq_trace(&self) -> f64 {
        self.tr_b_pinv_sq / self.t as f64
    }

    pub fn is_diagonal(&self) -> bool {
        !matches!(self.structure, Structure::CenteringProjector)
    }

    /// Dense `B⁻` via SVD.
    pub fn pinv(&self) -> DMatrix<f64> {
        match &self.structure {
            Structure::Identity | Structure::CenteringProjector => self.matrix.clone(),
            Structure::Diagonal(d) => {
                let cut = PINV_RTOL * d.amax();
                DMatrix::from_diagonal(&d.map(|b| if b.abs() > cut && b != 0.0 { 1.0 / b } else { 0.0 }))
            }
        }
    }

    /// `YᵗBY` for a `T x n` matrix `Y`, exactly symmetric.
    pub fn sandwich(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.t, "row count must equal T");
        let m = match &self.structure {
            Structure::Identity => y.tr_mul(y),
            Structure::Diagonal(d) => {
                let mut scaled = y.clone();
                for (mut row, &b) in scaled.row_iter_mut().zip(d.iter()) {
                    row *= b;
                }
                y.tr_mul(&scaled)
            }
            Structure::CenteringProjector => {
                let col_sums = y.row_sum();
                y.tr_mul(y) - col_sums.tr_mul(&col_sums) / self.t as f64
            }
        };
        (&m + m.transpose()) * 0.5
    }
}

/// `Σ̂ = YᵗBY / Tr(B)`.
pub fn estimate_covariance(y: &DMatrix<f64>, b: &WeightMatrix) -> Result<DMatrix<f64>> {
    if y.nrows() != b.t() {
        return Err(Error::Dimension(format!(
            "returns have {} rows but B is {}x{}",
            y.nrows(),
            b.t(),
            b.t()
        )));
    }
    let tr = b.trace();
    if tr.abs() < 1e-300 {
        return Err(Error::Domain("degenerate weighting: Tr(B) = 0".into()));
    }
    Ok(b.sandwich(y) / tr)
}

/// Command-line grammar for `B`: `mle | sample | ewma:LAMBDA | idem:RANK | diag:FILE`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BSpec {
    Mle,
    Sample,
    Ewma(f64),
    Idem(usize),
    DiagFile(PathBuf),
}

impl FromStr for BSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |msg: String| Error::Parameter(format!("bad B spec `{s}`: {msg}"));
        match s.split_once(':') {
            None => match s {
                "mle" => Ok(BSpec::Mle),
                "sample" => Ok(BSpec::Sample),
                _ => Err(bad("expected mle | sample | ewma:LAMBDA | idem:RANK | diag:FILE".into())),
            },
            Some(("ewma", v)) => {
                let lambda: f64 = v.parse().map_err(|_| bad(format!("`{v}` is not a number")))?;
                if !(lambda > 0.0 && lambda < 1.0) {
                    return Err(bad("lambda must lie in (0, 1)".into()));
                }
                Ok(BSpec::Ewma(lambda))
            }
            Some(("idem", v)) => {
                let rank: usize = v.parse().map_err(|_| bad(format!("`{v}` is not a rank")))?;
                if rank == 0 {
                    return Err(bad("rank must be positive".into()));
                }
                Ok(BSpec::Idem(rank))
            }
            Some(("diag", path)) if !path.is_empty() => Ok(BSpec::DiagFile(PathBuf::from(path))),
            Some(_) => Err(bad("unknown kind".into())),
        }
    }
}

impl fmt::Display for BSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BSpec::Mle => write!(f, "mle"),
            BSpec::Sample => write!(f, "sample"),
            BSpec::Ewma(l) => write!(f, "ewma:{l}"),
            BSpec::Idem(m) => write!(f, "idem:{m}"),
            BSpec::DiagFile(p) => write!(f, "diag:{}", p.display()),
        }
    }
}

impl BSpec {
    /// Resolves the spec to a concrete kind; reads the diagonal file if any.
    pub fn to_kind(&self) -> Result<WeightKind> {
        Ok(match self {
            BSpec::Mle => WeightKind::Mle,
            BSpec::Sample => WeightKind::SampleCov,
            BSpec::Ewma(lambda) => WeightKind::Ewma { lambda: *lambda },
            BSpec::Idem(rank) => WeightKind::Idempotent { rank: *rank },
            BSpec::DiagFile(path) => WeightKind::CustomDiagonal {
                entries: read_diagonal_file(path)?,
            },
        })
    }

    pub fn build(&self, t: usize) -> Result<WeightMatrix> {
        build_weight_matrix(&self.to_kind()?, t)
    }
}

/// One diagonal entry per line; blank lines and `#` comments are skipped.
pub fn read_diagonal_file(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| Error::Parse {
            row: lineno + 1,
            col: 1,
            msg: format!("`{line}` is not a number"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Diagonal families used to probe the noise condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiagonalRule {
    /// `b_ii = e^{-rate * i}`, `i = 1..T`.
    ExpDecay { rate: f64 },
    /// `b_ii = i^exponent`.
    Power { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightFamily {
    Mle,
    SampleCov,
    Ewma { lambda: f64 },
    Idempotent { rank_fraction: f64 },
    Diagonal(DiagonalRule),
}

impl WeightFamily {
    pub fn build(&self, t: usize) -> Result<WeightMatrix> {
        let kind = match self {
            WeightFamily::Mle => WeightKind::Mle,
            WeightFamily::SampleCov => WeightKind::SampleCov,
            WeightFamily::Ewma { lambda } => WeightKind::Ewma { lambda: *lambda },
            WeightFamily::Idempotent { rank_fraction } => WeightKind::Idempotent {
                rank: ((rank_fraction * t as f64).round() as usize).clamp(1, t),
            },
            WeightFamily::Diagonal(rule) => WeightKind::CustomDiagonal {
                entries: (1..=t).map(|i| rule.entry(i)).collect(),
            },
        };
        build_weight_matrix(&kind, t)
    }

    fn log_entries(&self, t: usize) -> Option<Vec<f64>> {
        match self {
            WeightFamily::Diagonal(rule) => Some((1..=t).map(|i| rule.log_entry(i)).collect()),
            WeightFamily::Ewma { lambda } => Some((0..t).map(|j| j as f64 * lambda.ln()).collect()),
            _ => None,
        }
    }
}

impl DiagonalRule {
    fn log_entry(&self, i: usize) -> f64 {
        match *self {
            DiagonalRule::ExpDecay { rate } => -rate * i as f64,
            DiagonalRule::Power { exponent } => exponent * (i as f64).ln(),
        }
    }

    fn entry(&self, i: usize) -> f64 {
        self.log_entry(i).exp()
    }
}

/// `(tr B)² tr(B⁻²)` at a single `T`, with normalized traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseDiagnostic {
    pub t: usize,
    pub value: f64,
    pub ln_value: f64,
    /// `value / T`; the condition asks for this to vanish.
    pub value_over_t: f64,
}

impl NoiseDiagnostic {
    fn from_ln(t: usize, ln_value: f64) -> Self {
        let ln_over_t = ln_value - (t as f64).ln();
        NoiseDiagnostic {
            t,
            value: ln_value.exp(),
            ln_value,
            value_over_t: ln_over_t.exp(),
        }
    }

    pub fn ln_value_over_t(&self) -> f64 {
        self.ln_value - (self.t as f64).ln()
    }
}

pub fn check_noise_condition(b: &WeightMatrix) -> NoiseDiagnostic {
    let value = b.norm_trace().powi(2) * b.norm_pinv_sq_trace();
    NoiseDiagnostic::from_ln(b.t(), value.ln())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log-space evaluation for diagonal families whose traces overflow.
fn family_diagnostic(family: &WeightFamily, t: usize) -> Result<NoiseDiagnostic> {
    match family.log_entries(t) {
        Some(logs) => {
            let ln_t = (t as f64).ln();
            let ln_tr = log_sum_exp(logs.iter().copied()) - ln_t;
            let ln_tr_inv_sq = log_sum_exp(logs.iter().map(|l| -2.0 * l)) - ln_t;
            Ok(NoiseDiagnostic::from_ln(t, 2.0 * ln_tr + ln_tr_inv_sq))
        }
        None => Ok(check_noise_condition(&family.build(t)?)),
    }
}

pub const NOISE_SWEEP: [usize; 5] = [50, 100, 200, 400, 800];

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSweep {
    pub points: Vec<NoiseDiagnostic>,
    /// `value / T` strictly decreasing along the sweep. A finite-T heuristic
    /// for an asymptotic condition, not a proof.
    pub satisfied_hint: bool,
}

pub fn check_noise_condition_sweep(family: &WeightFamily) -> Result<NoiseSweep> {
    let points = NOISE_SWEEP
        .iter()
        .map(|&t| family_diagnostic(family, t))
        .collect::<Result<Vec<_>>>()?;
    let satisfied_hint = points
        .windows(2)
        .all(|w| w[1].ln_value_over_t() < w[0].ln_value_over_t());
    Ok(NoiseSweep {
        points,
        satisfied_hint,
    })
}

/// Dense recomputation of the cached traces, for cross-checks.
pub fn dense_traces(b: &WeightMatrix) -> (f64, f64, f64, usize) {
    let p = pseudo_inverse(b.matrix());
    (b.matrix().trace(), p.trace(), (&p * &p).trace(), numerical_rank(b.matrix()))
}
