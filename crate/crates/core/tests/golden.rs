use std::path::PathBuf;

use wishart_risk::estimators::WeightKind;
use wishart_risk::simlab::{export_histogram, run_experiment, ExperimentConfig, HistogramField};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/hist_mle_n10_t40_seed42.csv")
}

/// Set `UPDATE_GOLDEN=1` to regenerate the frozen file after an intended
/// change to the sampling pipeline.
#[test]
fn histogram_matches_golden_file() {
    let exp = run_experiment(&ExperimentConfig::new(10, 40, WeightKind::Mle, 100, 42)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hist.csv");
    export_histogram(&exp.records, HistogramField::RatioAfter, 20, &out).unwrap();
    let got = std::fs::read_to_string(&out).unwrap();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(golden_path(), &got).unwrap();
    }
    let want = std::fs::read_to_string(golden_path()).expect("golden file present");
    assert_eq!(got, want);
    assert_eq!(got.lines().filter(|l| !l.starts_with('#')).count(), 21);
}
