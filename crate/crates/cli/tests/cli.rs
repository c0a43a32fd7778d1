use std::fs;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wishart-risk"))
        .args(args)
        .env_remove("WISHART_RISK_WORKERS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn correct_prints_record() {
    let o = run(&["correct", "--n", "200", "--T", "250", "--b", "mle", "--header"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n,T,q,bias_factor,sqrt_factor,var_q,asymptotic_limit");
    let fields: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&fields[..3], &["200", "250", "49"]);
    let bias: f64 = fields[3].parse().unwrap();
    assert!((bias - 250.0 / 49.0).abs() < 1e-12);
    assert!((fields[4].parse::<f64>().unwrap() - bias.sqrt()).abs() < 1e-12);
}

#[test]
fn correct_regime_and_na_fields() {
    assert_eq!(run(&["correct", "--n", "2", "--T", "3", "--b", "mle"]).status.code(), Some(2));
    let o = run(&["correct", "--n", "10", "--T", "13"]);
    assert!(o.status.success());
    let line = stdout(&o);
    assert_eq!(line.trim().split(',').nth(5), Some("NA"));
    let o = run(&["correct", "--n", "4", "--T", "20", "--b", "ewma:0.9"]);
    assert!(stdout(&o).trim().split(',').all(|f| f != "NA"));
}

#[test]
fn correct_with_diagonal_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.txt");
    fs::write(&path, (1..=12).map(|i| format!("{i}\n")).collect::<String>()).unwrap();
    let spec = format!("diag:{}", path.display());
    let o = run(&["correct", "--n", "3", "--T", "12", "--b", &spec]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).trim().ends_with(",NA"));
    let missing = run(&["correct", "--n", "3", "--T", "12", "--b", "diag:/no/such/file"]);
    assert_eq!(missing.status.code(), Some(3));
    // wrong number of entries for T
    let short = run(&["correct", "--n", "3", "--T", "20", "--b", &spec]);
    assert_eq!(short.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["correct", "--n", "x", "--T", "3"]).status.code(), Some(1));
    assert_eq!(run(&["correct", "--n", "3", "--T", "30", "--b", "ewma:2"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--n", "5", "--T", "20", "--trials", "0", "--seed", "1"]).status.code(), Some(1));
    assert_eq!(run(&["--workers", "0", "validate"]).status.code(), Some(1));
}

#[test]
fn help_documents_every_subcommand() {
    for sub in ["correct", "simulate", "study", "wg", "validate"] {
        let o = run(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"));
    }
    let o = run(&["--help"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("WISHART_RISK_WORKERS"));
}

#[test]
fn simulate_is_deterministic_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = |out: &str| {
        vec![
            "simulate".to_string(),
            "--n".into(),
            "10".into(),
            "--T".into(),
            "40".into(),
            "--trials".into(),
            "200".into(),
            "--seed".into(),
            "5".into(),
            "--out-dir".into(),
            out.to_string(),
        ]
    };
    let run_s = |a: Vec<String>| run(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let oa = run_s(args(a.to_str().unwrap()));
    assert!(oa.status.success(), "{}", String::from_utf8_lossy(&oa.stderr));
    let mut with_workers = args(b.to_str().unwrap());
    with_workers.splice(0..0, ["--workers".to_string(), "2".to_string()]);
    // global flag placed before the subcommand
    let ob = run_s(with_workers);
    assert!(ob.status.success());
    for f in ["hist_before.csv", "hist_after.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let hist = fs::read_to_string(a.join("hist_after.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,count\n"));
    assert_eq!(hist.lines().count(), 22);
    let json: serde_json::Value = serde_json::from_str(&stdout(&oa)).unwrap();
    assert_eq!(json["summary"]["trials"], 200);
    assert!(json["summary"]["mean_after"].as_f64().unwrap() > 0.8);
}

#[test]
fn simulate_without_seed_prints_one() {
    let o = run(&["simulate", "--n", "4", "--T", "12", "--trials", "5"]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed="));
}

#[test]
fn simulate_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.cfg");
    fs::write(&cfg, "n = 5\nT = 20\nb = ewma:0.97\ntrials = 50\nseed = 3\n").unwrap();
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--trials", "30"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["summary"]["trials"], 30);
    assert_eq!(json["weight"], "ewma:0.97");
    fs::write(&cfg, "n = 5\nT = 20\nseed = 3\nmystery = 1\n").unwrap();
    assert_eq!(run(&["simulate", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--config", "/no/such.cfg"]).status.code(), Some(3));
}

#[test]
fn study_on_csv_and_synthetic_panels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    let mut text = String::from("A,B,C\n");
    for i in 0..60 {
        let x = i as f64;
        text.push_str(&format!("{},{},{}\n", (x * 0.7).sin() * 0.01, (x * 1.3).cos() * 0.02, (x * 0.31).sin() * 0.015));
    }
    fs::write(&path, text).unwrap();
    let o = run(&["study", "--input", path.to_str().unwrap(), "--t-sub", "20", "--repeats", "10", "--seed", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(json["assets"], 3);
    assert_eq!(json["summary"]["trials"], 10);

    let o = run(&["study", "--synthetic-n", "5", "--synthetic-rows", "100", "--t-sub", "30", "--repeats", "1", "--seed", "2", "--contiguous"]);
    assert!(o.status.success());
    let json: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(json["summary"].is_null());

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "A,B\n1,2\n3\n").unwrap();
    assert_eq!(run(&["study", "--input", bad.to_str().unwrap(), "--t-sub", "1", "--seed", "1"]).status.code(), Some(3));
    assert_eq!(run(&["study", "--input", path.to_str().unwrap(), "--t-sub", "5", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn wg_tables() {
    let o = run(&["wg", "--k", "2", "--z", "3", "--exact"]);
    assert_eq!(stdout(&o), "coset_type,value\n(1 1),2/15\n(2),-1/30\n");
    let o = run(&["wg", "--k", "3", "--z", "10"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = run(&["wg", "--k", "2", "--z", "40", "--w", "-29"]);
    assert!(o.status.success());
    assert_eq!(run(&["wg", "--k", "2", "--z", "-2"]).status.code(), Some(2));
    assert_eq!(run(&["wg", "--k", "2", "--z", "2.5", "--exact"]).status.code(), Some(1));
    assert_eq!(run(&["wg", "--k", "9", "--z", "20"]).status.code(), Some(2));
}

#[test]
fn validate_fast_passes() {
    let o = run(&["validate", "--level", "fast"]);
    assert!(o.status.success(), "{}{}", stdout(&o), String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
    assert_eq!(run(&["validate", "--level", "slow"]).status.code(), Some(1));
}
