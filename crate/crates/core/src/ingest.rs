//! Return panels from CSV and the subsampling risk study: true risk from the
//! whole panel, predicted risk from short subsamples.
//!
//! Rows are observations with the most recent FIRST, which is the order EWMA
//! weights assume.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{build_weight_matrix, estimate_covariance, WeightKind, WeightMatrix};
use crate::portfolio::portfolio_risk;
use crate::sampling::{sample_returns_with, spd_inverse, trial_rng, CovarianceModel};
use crate::simlab::{in_pool, scaling_factor, summarize, Scaling, Summary, TrialRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub assets: Vec<String>,
    /// `T_total x n`.
    pub observations: DMatrix<f64>,
    pub centered: bool,
}

impl ReturnPanel {
    pub fn new(assets: Vec<String>, observations: DMatrix<f64>) -> Result<Self> {
        if assets.len() != observations.ncols() {
            return Err(Error::Dimension(format!(
                "{} labels for {} columns",
                assets.len(),
                observations.ncols()
            )));
        }
        Ok(ReturnPanel {
            assets,
            observations,
            centered: false,
        })
    }

    pub fn n(&self) -> usize {
        self.observations.ncols()
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    /// Subtracts column means.
    pub fn center(&self) -> ReturnPanel {
        let mut obs = self.observations.clone();
        for mut col in obs.column_iter_mut() {
            let mean = col.mean();
            col.add_scalar_mut(-mean);
        }
        ReturnPanel {
            assets: self.assets.clone(),
            observations: obs,
            centered: true,
        }
    }

    fn rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.observations.select_rows(idx)
    }
}

/// Header of asset labels, then one numeric row per observation. Error rows
/// are 1-based file lines, columns 1-based fields.
pub fn read_returns_csv(path: &Path) -> Result<ReturnPanel> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(file);
    let parse_err = |row: usize, col: usize, msg: String| Error::Parse { row, col, msg };
    let header = reader.headers().map_err(|e| parse_err(1, 0, e.to_string()))?.clone();
    let assets: Vec<String> = header.iter().map(str::to_string).collect();
    if assets.is_empty() || assets.iter().all(String::is_empty) {
        return Err(parse_err(1, 0, "missing header of asset labels".into()));
    }
    let mut seen = HashSet::new();
    for (c, label) in assets.iter().enumerate() {
        if label.is_empty() {
            return Err(parse_err(1, c + 1, "empty asset label".into()));
        }
        if !seen.insert(label.as_str()) {
            return Err(parse_err(1, c + 1, format!("duplicate asset label `{label}`")));
        }
    }
    let n = assets.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, 0, e.to_string()))?;
        if rec.len() != n {
            return Err(parse_err(line, rec.len().min(n) + 1, format!("expected {n} fields, found {}", rec.len())));
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, c + 1, format!("non-finite value `{cell}`")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("{}: no observations after the header", path.display())));
    }
    ReturnPanel::new(assets, DMatrix::from_row_slice(rows, n, &values))
}

/// Values are written in shortest round-trip form, so reading back is exact.
pub fn write_returns_csv(panel: &ReturnPanel, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    w.write_record(&panel.assets).map_err(csv_io)?;
    for row in panel.observations.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// `T_total` rows drawn from `N(0, Σ)`, labelled `A1..An`.
pub fn synthetic_panel(model: &CovarianceModel, t_total: usize, seed: u64) -> ReturnPanel {
    let obs = sample_returns_with(model, t_total, &mut trial_rng(seed, 0));
    let assets = (1..=model.n()).map(|i| format!("A{i}")).collect();
    ReturnPanel::new(assets, obs).expect("labels match columns")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyConfig {
    pub t_sub: usize,
    pub weight: WeightKind,
    pub repeats: usize,
    pub seed: u64,
    /// Use a random contiguous window instead of scattered rows.
    pub contiguous: bool,
    pub scaling: Scaling,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl StudyConfig {
    pub fn new(t_sub: usize, weight: WeightKind, repeats: usize, seed: u64) -> Self {
        StudyConfig {
            t_sub,
            weight,
            repeats,
            seed,
            contiguous: false,
            scaling: Scaling::FiniteSample,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Study {
    pub true_risk: f64,
    pub factor: f64,
    pub records: Vec<TrialRecord>,
    pub failures: usize,
    /// `None` with fewer than two successful repeats.
    pub summary: Option<Summary>,
}

/// Row indices for one repeat, in panel order.
pub fn subsample_rows<R: Rng + ?Sized>(total: usize, t_sub: usize, contiguous: bool, rng: &mut R) -> Vec<usize> {
    if contiguous {
        let start = rng.random_range(0..=total - t_sub);
        (start..start + t_sub).collect()
    } else {
        let mut idx = index::sample(rng, total, t_sub).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn study_repeat(panel: &ReturnPanel, cfg: &StudyConfig, b: &WeightMatrix, true_risk: f64, factor: f64, r: usize) -> Option<TrialRecord> {
    let mut rng = trial_rng(cfg.seed, r as u64 + 1);
    let idx = subsample_rows(panel.len(), cfg.t_sub, cfg.contiguous, &mut rng);
    let est = estimate_covariance(&panel.rows(&idx), b).ok()?;
    let predicted = portfolio_risk(&spd_inverse(&est).ok()?).ok()?;
    Some(TrialRecord::new(r, true_risk, predicted, factor))
}

pub fn real_data_risk_study(panel: &ReturnPanel, cfg: &StudyConfig) -> Result<Study> {
    let n = panel.n();
    if cfg.repeats == 0 {
        return Err(Error::Parameter("repeats must be positive".into()));
    }
    if cfg.t_sub <= n + 3 {
        return Err(Error::Regime(format!("need T_sub > n + 3 (n = {n}, T_sub = {})", cfg.t_sub)));
    }
    if panel.len() < cfg.t_sub {
        return Err(Error::Data(format!(
            "panel has {} rows, fewer than T_sub = {}",
            panel.len(),
            cfg.t_sub
        )));
    }
    let full = build_weight_matrix(&WeightKind::Mle, panel.len())?;
    let true_inv = spd_inverse(&estimate_covariance(&panel.observations, &full)?)
        .map_err(|e| Error::Data(format!("full-panel covariance is not invertible: {e}")))?;
    let true_risk = portfolio_risk(&true_inv)?;
    let b = build_weight_matrix(&cfg.weight, cfg.t_sub)?;
    let factor = scaling_factor(&b, n, cfg.scaling)?;
    let job = || -> Vec<Option<TrialRecord>> {
        (0..cfg.repeats)
            .into_par_iter()
            .map(|r| study_repeat(panel, cfg, &b, true_risk, factor, r))
            .collect()
    };
    let outcomes = in_pool(cfg.workers, job)?;
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    let records: Vec<TrialRecord> = outcomes.into_iter().flatten().collect();
    if records.is_empty() {
        return Err(Error::EmptyExperiment(format!("all {} repeats failed", cfg.repeats)));
    }
    let summary = summarize(&records, failures).ok();
    Ok(Study {
        true_risk,
        factor,
        records,
        failures,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{random_spd, seeded_rng, SpdScheme};
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_small_panel() {
        let f = write_tmp("AAA,BBB\n0.01,-0.02\n0.0,0.03\n-0.015,0.005\n");
        let p = read_returns_csv(f.path()).unwrap();
        assert_eq!(p.assets, vec!["AAA", "BBB"]);
        assert_eq!(p.observations.shape(), (3, 2));
        assert_eq!(p.observations[(2, 0)], -0.015);
        assert!(!p.centered);
    }

    #[test]
    fn parse_errors_carry_locations() {
        let header_only = write_tmp("A,B\n");
        assert!(matches!(read_returns_csv(header_only.path()), Err(Error::Data(_))));
        let ragged = write_tmp("A,B\n1,2\n3\n");
        assert!(matches!(read_returns_csv(ragged.path()), Err(Error::Parse { row: 3, .. })));
        let text = write_tmp("A,B\n1,2\n3,x\n");
        assert!(matches!(read_returns_csv(text.path()), Err(Error::Parse { row: 3, col: 2, .. })));
        let dup = write_tmp("A,A\n1,2\n");
        assert!(matches!(read_returns_csv(dup.path()), Err(Error::Parse { row: 1, col: 2, .. })));
        let gap = write_tmp("A,B\n1,\n");
        assert!(matches!(read_returns_csv(gap.path()), Err(Error::Parse { row: 2, col: 2, .. })));
        assert!(matches!(read_returns_csv(Path::new("/nonexistent/x.csv")), Err(Error::Io(_))));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let panel = synthetic_panel(&random_spd(4, 2, SpdScheme::WishartLike), 25, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_returns_csv(&panel, &path).unwrap();
        let back = read_returns_csv(&path).unwrap();
        assert_eq!(back, panel);
    }

    #[test]
    fn centering_is_idempotent() {
        let panel = synthetic_panel(&random_spd(3, 1, SpdScheme::DiagPlusLowrank), 40, 1);
        let c = panel.center();
        for col in c.observations.column_iter() {
            assert!(col.mean().abs() < 1e-12);
        }
        let cc = c.center();
        assert!((cc.observations - &c.observations).amax() < 1e-15);
    }

    #[test]
    fn subsamples_are_distinct_rows() {
        let mut rng = seeded_rng(4);
        for _ in 0..50 {
            let idx = subsample_rows(100, 30, false, &mut rng);
            assert_eq!(idx.len(), 30);
            assert!(idx.windows(2).all(|w| w[0] < w[1]) && idx[29] < 100);
            let win = subsample_rows(100, 30, true, &mut rng);
            assert!(win.windows(2).all(|w| w[1] == w[0] + 1) && win[29] < 100);
        }
    }

    #[test]
    fn study_preconditions() {
        let panel = synthetic_panel(&CovarianceModel::identity(5), 30, 1);
        let cfg = |t_sub| StudyConfig::new(t_sub, WeightKind::Mle, 5, 1);
        assert!(matches!(real_data_risk_study(&panel, &cfg(8)), Err(Error::Regime(_))));
        assert!(matches!(real_data_risk_study(&panel, &cfg(31)), Err(Error::Data(_))));
        let one = real_data_risk_study(&panel, &StudyConfig::new(15, WeightKind::Mle, 1, 2)).unwrap();
        assert_eq!(one.records.len(), 1);
        assert!(one.summary.is_none());
    }

    #[test]
    fn study_is_deterministic() {
        let panel = synthetic_panel(&random_spd(5, 1, SpdScheme::WishartLike), 80, 6);
        let cfg = StudyConfig::new(20, WeightKind::Ewma { lambda: 0.97 }, 20, 11);
        let a = real_data_risk_study(&panel, &cfg).unwrap();
        let b = real_data_risk_study(&panel, &StudyConfig { workers: Some(2), ..cfg.clone() }).unwrap();
        assert_eq!(a.records, b.records);
        let c = real_data_risk_study(&panel, &StudyConfig { contiguous: true, ..cfg }).unwrap();
        assert_ne!(a.records, c.records);
    }
}
