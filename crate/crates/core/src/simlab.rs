//! Monte Carlo experiments: draw one `Σ`, then per trial sample returns,
//! estimate, and compare predicted with true risk before and after scaling.
//!
//! `Σ` comes from stream 0 of the master seed and trial `i` from stream
//! `i + 1`, so results do not depend on the number of workers.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::correction::{asymptotic_limit, bias_factor, variance_of_q, AsymptoticRegime};
use crate::error::{Error, Result};
use crate::estimators::{build_weight_matrix, estimate_covariance, BSpec, WeightKind, WeightMatrix};
use crate::portfolio::portfolio_risk;
use crate::sampling::{random_spd_with, sample_returns_with, spd_inverse, trial_rng, CovarianceModel, SpdScheme};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// `sqrt(Tr(B) Tr(B⁻) / (T q))`.
    #[default]
    FiniteSample,
    /// The proportional-growth limit for the weight kind.
    Asymptotic,
}

impl FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "finite" | "finite-sample" | "finite_sample" => Ok(Scaling::FiniteSample),
            "asymptotic" => Ok(Scaling::Asymptotic),
            other => Err(Error::Parameter(format!(
                "unknown scaling `{other}` (expected finite-sample | asymptotic)"
            ))),
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scaling::FiniteSample => "finite-sample",
            Scaling::Asymptotic => "asymptotic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub t: usize,
    pub weight: WeightKind,
    pub trials: usize,
    pub master_seed: u64,
    pub sigma_scheme: SpdScheme,
    pub scaling: Scaling,
    /// Draw a fresh `Σ` for every trial instead of one per experiment.
    pub redraw_sigma: bool,
    /// `None` uses the global rayon pool.
    #[serde(skip)]
    pub workers: Option<usize>,
    pub report_variance: bool,
}

impl ExperimentConfig {
    pub fn new(n: usize, t: usize, weight: WeightKind, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            n,
            t,
            weight,
            trials,
            master_seed,
            sigma_scheme: SpdScheme::default(),
            scaling: Scaling::default(),
            redraw_sigma: false,
            workers: None,
            report_variance: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.t == 0 {
            return Err(Error::Parameter("n and T must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Parameter("workers must be positive".into()));
        }
        if self.t <= self.n + 1 {
            return Err(Error::Regime(format!("need T > n + 1 (n = {}, T = {})", self.n, self.t)));
        }
        if self.report_variance && self.t <= self.n + 3 {
            return Err(Error::Regime(format!(
                "variance reporting needs T > n + 3 (n = {}, T = {})",
                self.n, self.t
            )));
        }
        Ok(())
    }

    /// Parses a flat `key = value` file. Recognised keys: `n`, `T`, `b`,
    /// `trials`, `seed`, `sigma`, `scaling`, `redraw_sigma`, `workers`,
    /// `report_variance`. `n`, `T` and `seed` are required.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("config line {}: expected key = value", lineno + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        fn take<T: FromStr>(map: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
            map.remove(key)
                .map(|v| v.parse::<T>().map_err(|_| Error::Parameter(format!("config key `{key}`: bad value `{v}`"))))
                .transpose()
        }
        let required = |v: Option<usize>, key: &str| v.ok_or_else(|| Error::Parameter(format!("config key `{key}` is required")));
        let n = required(take(&mut map, "n")?, "n")?;
        let t = required(take::<usize>(&mut map, "T")?.or(take(&mut map, "t")?), "T")?;
        let seed = take::<u64>(&mut map, "seed")?.ok_or_else(|| Error::Parameter("config key `seed` is required".into()))?;
        let weight = match map.remove("b") {
            Some(v) => v.parse::<BSpec>()?.to_kind()?,
            None => WeightKind::Mle,
        };
        let mut cfg = ExperimentConfig::new(n, t, weight, take(&mut map, "trials")?.unwrap_or(1000), seed);
        if let Some(v) = map.remove("sigma") {
            cfg.sigma_scheme = v.parse()?;
        }
        if let Some(v) = map.remove("scaling") {
            cfg.scaling = v.parse()?;
        }
        cfg.redraw_sigma = take(&mut map, "redraw_sigma")?.unwrap_or(false);
        cfg.workers = take(&mut map, "workers")?;
        cfg.report_variance = take(&mut map, "report_variance")?.unwrap_or(false);
        if let Some(key) = map.keys().next() {
            return Err(Error::Parameter(format!("unknown config key `{key}`")));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub true_risk: f64,
    pub predicted_risk: f64,
    /// `predicted / true`.
    pub ratio_before: f64,
    pub ratio_after: f64,
    pub q: f64,
}

impl TrialRecord {
    /// `factor` is the variance-scale correction applied to predicted risk.
    pub fn new(trial_index: usize, true_risk: f64, predicted_risk: f64, factor: f64) -> Self {
        let ratio_before = predicted_risk / true_risk;
        TrialRecord {
            trial_index,
            true_risk,
            predicted_risk,
            ratio_before,
            ratio_after: ratio_before * factor.sqrt(),
            q: (true_risk / predicted_risk).powi(2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    /// The factor `E(Q)` (or its limit) used for scaling.
    pub factor: f64,
    pub records: Vec<TrialRecord>,
    pub failures: usize,
}

/// The scaling factor for a weight matrix under the chosen rule.
pub fn scaling_factor(b: &WeightMatrix, n: usize, scaling: Scaling) -> Result<f64> {
    match scaling {
        Scaling::FiniteSample => bias_factor(b, n),
        Scaling::Asymptotic => {
            let regime = AsymptoticRegime::for_kind(b.kind(), n, b.t()).ok_or_else(|| {
                Error::Parameter(format!("no asymptotic regime for weight kind {}", b.kind().label()))
            })?;
            asymptotic_limit(&regime)
        }
    }
}

pub(crate) fn in_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(k) => Ok(crate::thread_pool(k)?.install(job)),
    }
}

fn run_trial(
    config: &ExperimentConfig,
    shared: &CovarianceModel,
    shared_true_risk: f64,
    b: &WeightMatrix,
    factor: f64,
    index: usize,
) -> Option<TrialRecord> {
    let mut rng = trial_rng(config.master_seed, index as u64 + 1);
    let redrawn;
    let (model, true_risk) = if config.redraw_sigma {
        redrawn = random_spd_with(config.n, config.sigma_scheme, &mut rng);
        let risk = portfolio_risk(redrawn.sigma_inv()).ok()?;
        (&redrawn, risk)
    } else {
        (shared, shared_true_risk)
    };
    let y = sample_returns_with(model, config.t, &mut rng);
    let est = estimate_covariance(&y, b).ok()?;
    let inv = spd_inverse(&est).ok()?;
    let predicted = portfolio_risk(&inv).ok()?;
    Some(TrialRecord::new(index, true_risk, predicted, factor))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let b = build_weight_matrix(&config.weight, config.t)?;
    let factor = scaling_factor(&b, config.n, config.scaling)?;
    let model = random_spd_with(config.n, config.sigma_scheme, &mut trial_rng(config.master_seed, 0));
    let true_risk = portfolio_risk(model.sigma_inv())?;
    let outcomes: Vec<Option<TrialRecord>> = in_pool(config.workers, || {
        (0..config.trials)
            .into_par_iter()
            .map(|i| run_trial(config, &model, true_risk, &b, factor, i))
            .collect()
    })?;
    let failures = outcomes.iter().filter(|o| o.is_none()).count();
    if failures > 0 {
        log::warn!("{failures} of {} trials had a singular estimate and were dropped", config.trials);
    }
    Ok(Experiment {
        config: config.clone(),
        factor,
        records: outcomes.into_iter().flatten().collect(),
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub trials: usize,
    pub failures: usize,
    pub mean_before: f64,
    pub mean_after: f64,
    pub sd_before: f64,
    pub sd_after: f64,
    pub mean_q: f64,
    /// Standard error of `mean_q`.
    pub se_q: f64,
    pub var_q_empirical: f64,
}

/// Unbiased mean and variance.
pub fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    let mean = sum / n as f64;
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (mean, ss / (n as f64 - 1.0))
}

pub fn summarize(records: &[TrialRecord], failures: usize) -> Result<Summary> {
    if records.len() < 2 {
        return Err(Error::EmptyExperiment(format!(
            "{} successful trials ({failures} failed); at least 2 are needed",
            records.len()
        )));
    }
    let (mean_before, var_before) = mean_var(records.iter().map(|r| r.ratio_before));
    let (mean_after, var_after) = mean_var(records.iter().map(|r| r.ratio_after));
    let (mean_q, var_q) = mean_var(records.iter().map(|r| r.q));
    Ok(Summary {
        trials: records.len(),
        failures,
        mean_before,
        mean_after,
        sd_before: var_before.sqrt(),
        sd_after: var_after.sqrt(),
        mean_q,
        se_q: (var_q / records.len() as f64).sqrt(),
        var_q_empirical: var_q,
    })
}

/// Summary plus the closed-form values it should be compared with.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub weight: String,
    pub scaling_factor: f64,
    pub bias_factor: f64,
    pub var_q_formula: Option<f64>,
    pub summary: Summary,
}

impl Experiment {
    pub fn summary(&self) -> Result<Summary> {
        summarize(&self.records, self.failures)
    }

    pub fn report(&self) -> Result<ExperimentReport> {
        let b = build_weight_matrix(&self.config.weight, self.config.t)?;
        let n = self.config.n;
        Ok(ExperimentReport {
            config: self.config.clone(),
            weight: self.config.weight.label(),
            scaling_factor: self.factor,
            bias_factor: bias_factor(&b, n)?,
            var_q_formula: variance_of_q(&b, n).ok(),
            summary: self.summary()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistogramField {
    RatioBefore,
    RatioAfter,
    Q,
}

impl HistogramField {
    pub fn extract(&self, r: &TrialRecord) -> f64 {
        match self {
            HistogramField::RatioBefore => r.ratio_before,
            HistogramField::RatioAfter => r.ratio_after,
            HistogramField::Q => r.q,
        }
    }
}

/// `bin_left,bin_right,count` rows plus a `# mean=..,sd=..` trailer. The
/// range defaults to the data's span; values outside it are not counted.
pub fn histogram_csv(values: &[f64], bins: usize, range: Option<(f64, f64)>) -> Result<String> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyExperiment("no values to histogram".into()));
    }
    let (lo, hi) = match range {
        Some((lo, hi)) if lo < hi => (lo, hi),
        Some((lo, hi)) => return Err(Error::Parameter(format!("empty histogram range [{lo}, {hi}]"))),
        None => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo == hi {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        }
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, c) in counts.iter().enumerate() {
        let left = lo + width * i as f64;
        let right = if i + 1 == bins { hi } else { lo + width * (i + 1) as f64 };
        out.push_str(&format!("{left},{right},{c}\n"));
    }
    let (mean, var) = if values.len() > 1 {
        mean_var(values.iter().copied())
    } else {
        (values[0], 0.0)
    };
    out.push_str(&format!("# mean={mean},sd={}\n", var.sqrt()));
    Ok(out)
}

pub fn export_histogram(records: &[TrialRecord], field: HistogramField, bins: usize, path: &Path) -> Result<()> {
    let values: Vec<f64> = records.iter().map(|r| field.extract(r)).collect();
    std::fs::write(path, histogram_csv(&values, bins, None)?)?;
    Ok(())
}
