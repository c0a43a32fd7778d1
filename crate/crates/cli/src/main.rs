use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use wishart_risk::correction::CorrectionFactor;
use wishart_risk::estimators::BSpec;
use wishart_risk::ingest::{read_returns_csv, real_data_risk_study, synthetic_panel, StudyConfig};
use wishart_risk::sampling::{random_spd, SpdScheme};
use wishart_risk::simlab::{
    export_histogram, run_experiment, ExperimentConfig, HistogramField, Scaling, TrialRecord,
};
use wishart_risk::validate::{run_validation, ValidationLevel};
use wishart_risk::weingarten::{exact, wg_double, wg_single};
use wishart_risk::{Error, ErrorClass};

/// Bias correction for the predicted risk of minimum-variance portfolios.
///
/// Exit codes: 0 success, 1 usage error, 2 regime or domain error (for
/// example T <= n + 1, or a failed validation check), 3 I/O or parse error.
#[derive(Debug, Parser)]
#[command(name = "wishart-risk", version)]
struct Cli {
    /// Worker threads for Monte Carlo work (default: all cores).
    #[arg(long, global = true, env = "WISHART_RISK_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the correction record n,T,q,bias_factor,sqrt_factor,var_q,asymptotic_limit.
    Correct(CorrectArgs),
    /// Run a Monte Carlo experiment and print its JSON summary.
    Simulate(SimulateArgs),
    /// Subsampling risk study on a return panel; prints a JSON summary.
    Study(StudyArgs),
    /// Print a Weingarten table as coset_type,value rows.
    Wg(WgArgs),
    /// Run the built-in self-checks and print one line per check.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct CorrectArgs {
    /// Number of assets.
    #[arg(long)]
    n: usize,
    /// Number of observations.
    #[arg(long = "T", visible_alias = "t")]
    t: usize,
    /// Weighting matrix: mle | sample | ewma:LAMBDA | idem:RANK | diag:FILE.
    #[arg(long, default_value = "mle")]
    b: BSpec,
    /// Print a header line first.
    #[arg(long)]
    header: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Flat key=value config file; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of assets.
    #[arg(long)]
    n: Option<usize>,
    /// Number of observations per trial.
    #[arg(long = "T", visible_alias = "t")]
    t: Option<usize>,
    /// Weighting matrix: mle | sample | ewma:LAMBDA | idem:RANK | diag:FILE.
    #[arg(long)]
    b: Option<BSpec>,
    /// Number of trials [default: 1000].
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed; one is generated and printed to stderr if absent.
    #[arg(long)]
    seed: Option<u64>,
    /// How Σ is drawn: wishart-like | diag-plus-lowrank.
    #[arg(long)]
    sigma: Option<SpdScheme>,
    /// finite-sample | asymptotic.
    #[arg(long)]
    scaling: Option<Scaling>,
    /// Draw a fresh Σ for every trial.
    #[arg(long)]
    redraw_sigma: bool,
    /// Include the Var(Q) formula (requires T > n + 3).
    #[arg(long)]
    report_variance: bool,
    /// Directory for hist_before.csv, hist_after.csv and summary.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Histogram bins.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Returns CSV: header of labels, most recent row first.
    #[arg(long, required_unless_present = "synthetic_n", conflicts_with = "synthetic_n")]
    input: Option<PathBuf>,
    /// Instead of --input, draw a synthetic panel with this many assets.
    #[arg(long, requires = "synthetic_rows")]
    synthetic_n: Option<usize>,
    /// Rows of the synthetic panel.
    #[arg(long)]
    synthetic_rows: Option<usize>,
    /// Rows per subsample.
    #[arg(long)]
    t_sub: usize,
    /// Weighting matrix: mle | sample | ewma:LAMBDA | idem:RANK | diag:FILE.
    #[arg(long, default_value = "mle")]
    b: BSpec,
    /// Number of subsamples.
    #[arg(long, default_value_t = 100)]
    repeats: usize,
    /// Seed; one is generated and printed to stderr if absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Use contiguous windows instead of scattered rows.
    #[arg(long)]
    contiguous: bool,
    /// finite-sample | asymptotic.
    #[arg(long, default_value = "finite-sample")]
    scaling: Scaling,
    /// Directory for hist_before.csv, hist_after.csv and summary.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Histogram bins.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
struct WgArgs {
    /// Order; the table is indexed by the partitions of k.
    #[arg(long)]
    k: usize,
    /// First parameter.
    #[arg(long, allow_negative_numbers = true)]
    z: f64,
    /// Second parameter; gives the double function Wg(·; z, w).
    #[arg(long, allow_negative_numbers = true)]
    w: Option<f64>,
    /// Exact rational arithmetic (integer parameters, k <= 2).
    #[arg(long)]
    exact: bool,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    /// fast | full.
    #[arg(long, default_value = "fast")]
    level: ValidationLevel,
}

type CliResult = Result<(), Error>;

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let seed = (nanos as u64) ^ ((nanos >> 64) as u64);
        eprintln!("seed={seed}");
        seed
    })
}

fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn cmd_correct(args: &CorrectArgs) -> CliResult {
    let b = args.b.build(args.t)?;
    let cf = CorrectionFactor::new(&b, args.n)?;
    if args.header {
        println!("n,T,q,bias_factor,sqrt_factor,var_q,asymptotic_limit");
    }
    println!(
        "{},{},{},{},{},{},{}",
        cf.n,
        cf.t,
        cf.q,
        cf.eq_mean,
        cf.sqrt_factor(),
        na(cf.var_q),
        na(cf.asymptotic_limit)
    );
    Ok(())
}

fn write_outputs(dir: &Path, records: &[TrialRecord], bins: usize, summary: &impl serde::Serialize) -> CliResult {
    fs::create_dir_all(dir)?;
    export_histogram(records, HistogramField::RatioBefore, bins, &dir.join("hist_before.csv"))?;
    export_histogram(records, HistogramField::RatioAfter, bins, &dir.join("hist_after.csv"))?;
    fs::write(dir.join("summary.json"), to_json(summary)? + "\n")?;
    Ok(())
}

fn to_json(v: &impl serde::Serialize) -> Result<String, Error> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn cmd_simulate(args: &SimulateArgs, workers: Option<usize>) -> CliResult {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::from_key_values(&fs::read_to_string(path)?)?,
        None => {
            let missing = |what: &str| Error::Parameter(format!("--{what} is required without --config"));
            let n = args.n.ok_or_else(|| missing("n"))?;
            let t = args.t.ok_or_else(|| missing("T"))?;
            let weight = args.b.clone().unwrap_or(BSpec::Mle).to_kind()?;
            ExperimentConfig::new(n, t, weight, 1000, resolve_seed(args.seed))
        }
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(t) = args.t {
        cfg.t = t;
    }
    if let Some(b) = &args.b {
        cfg.weight = b.to_kind()?;
    }
    if let Some(trials) = args.trials {
        cfg.trials = trials;
    }
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(s) = args.sigma {
        cfg.sigma_scheme = s;
    }
    if let Some(s) = args.scaling {
        cfg.scaling = s;
    }
    cfg.redraw_sigma |= args.redraw_sigma;
    cfg.report_variance |= args.report_variance;
    if workers.is_some() {
        cfg.workers = workers;
    }
    let exp = run_experiment(&cfg)?;
    let report = exp.report()?;
    if let Some(dir) = &args.out_dir {
        write_outputs(dir, &exp.records, args.bins, &report)?;
    }
    println!("{}", to_json(&report)?);
    Ok(())
}

fn cmd_study(args: &StudyArgs, workers: Option<usize>) -> CliResult {
    let seed = resolve_seed(args.seed);
    let panel = match (&args.input, args.synthetic_n, args.synthetic_rows) {
        (Some(path), _, _) => read_returns_csv(path)?,
        (None, Some(n), Some(rows)) => synthetic_panel(&random_spd(n, seed, SpdScheme::default()), rows, seed),
        _ => return Err(Error::Parameter("give --input or --synthetic-n with --synthetic-rows".into())),
    }
    .center();
    let cfg = StudyConfig {
        contiguous: args.contiguous,
        scaling: args.scaling,
        workers,
        ..StudyConfig::new(args.t_sub, args.b.to_kind()?, args.repeats, seed)
    };
    let study = real_data_risk_study(&panel, &cfg)?;
    #[derive(serde::Serialize)]
    struct Out<'a> {
        assets: usize,
        rows: usize,
        config: &'a StudyConfig,
        true_risk: f64,
        scaling_factor: f64,
        failures: usize,
        summary: &'a Option<wishart_risk::simlab::Summary>,
    }
    let out = Out {
        assets: panel.n(),
        rows: panel.len(),
        config: &cfg,
        true_risk: study.true_risk,
        scaling_factor: study.factor,
        failures: study.failures,
        summary: &study.summary,
    };
    if let Some(dir) = &args.out_dir {
        write_outputs(dir, &study.records, args.bins, &out)?;
    }
    println!("{}", to_json(&out)?);
    Ok(())
}

fn integer_param(x: f64, name: &str) -> Result<i64, Error> {
    if x.fract() != 0.0 || x.abs() > 1e15 {
        return Err(Error::Parameter(format!("--exact needs an integer --{name}, got {x}")));
    }
    Ok(x as i64)
}

fn cmd_wg(args: &WgArgs) -> CliResult {
    if args.exact {
        let z = integer_param(args.z, "z")?;
        let table = match args.w {
            Some(w) => exact::wg_double_exact(args.k, z, integer_param(w, "w")?)?,
            None => exact::wg_single_exact(args.k, z)?,
        };
        println!("coset_type,value");
        for (eta, v) in &table {
            println!("{eta},{v}");
        }
        return Ok(());
    }
    let table = match args.w {
        Some(w) => wg_double(args.k, args.z, w)?,
        None => wg_single(args.k, args.z)?,
    };
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs, workers: Option<usize>) -> CliResult {
    let run = || run_validation(args.level);
    let report = match workers {
        Some(k) => wishart_risk::thread_pool(k)?.install(run),
        None => run(),
    };
    for c in &report.checks {
        println!("{} {} ({:.1}s): {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail);
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(Error::Domain(format!("failed checks: {}", report.failing().join(", "))))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Regime => 2,
        ErrorClass::Io => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.workers == Some(0) {
        eprintln!("error: --workers must be positive");
        return ExitCode::from(1);
    }
    let result = match &cli.command {
        Command::Correct(a) => cmd_correct(a),
        Command::Simulate(a) => cmd_simulate(a, cli.workers),
        Command::Study(a) => cmd_study(a, cli.workers),
        Command::Wg(a) => cmd_wg(a),
        Command::Validate(a) => cmd_validate(a, cli.workers),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
