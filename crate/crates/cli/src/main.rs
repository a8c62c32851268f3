//! `lagmart` command-line entry point.
//!
//! Exit codes: 0 when every check passes, 1 when a statistical check fails,
//! 2 for usage, configuration or I/O errors.

mod manifest;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::SystemTime;

use clap::{Args, Parser, Subcommand};
use lagmart::blocks::{
    build_diverging_blocks, build_fixed_lag_blocks, diagnose_conditions, BlockError, BlockScheme, DivergingParams,
    LagSpec, DEFAULT_GROWTH_B, DEFAULT_GROWTH_BETA,
};
use lagmart::checks::{study_checks, CheckResult, Status};
use lagmart::simulate::{infer_horizon, read_records, run_study_with, summarize, RecordWriter, SimConfig, StudySummary};
use lagmart::verify::{moment_oracle_suite, sign_flipped_cov, verify_all};

use manifest::RunManifest;

const REPLICATIONS: &str = "replications.csv";
const SUMMARY: &str = "summary.json";
const MANIFEST: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "lagmart", version, about = "Lag-martingale blocking, variance estimators and the lag-1 causal effect study")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study, write all outputs and evaluate the acceptance checks.
    Reproduce(StudyArgs),
    /// Run the study and write replications.csv without evaluating checks.
    Simulate(StudyArgs),
    /// Recompute the summary from a replications CSV.
    Analyze(AnalyzeArgs),
    /// Print a blocking scheme as CSV, with condition diagnostics on stderr.
    Blocks(BlocksArgs),
    /// Run the oracle-equivalence and calibration suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long = "T")]
    horizon: Option<u64>,
    /// 0 uses every available core.
    #[arg(long, env = "LAGMART_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// JSON file with any subset of the study configuration fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Summary JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Horizon of the run; inferred from the records when absent.
    #[arg(long = "T")]
    horizon: Option<u64>,
}

#[derive(Args)]
struct BlocksArgs {
    #[arg(long, conflicts_with = "fixed", required_unless_present = "fixed")]
    diverging: bool,
    #[arg(long)]
    fixed: bool,
    #[arg(long = "A")]
    a_scale: Option<f64>,
    #[arg(long = "B")]
    b_scale: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Array start; fixed-lag schemes default to p + 1.
    #[arg(long)]
    s: Option<i64>,
    #[arg(long)]
    kmax: i64,
    /// Order of a diverging lag p_k = floor(C k^gamma); a fixed lag p is used when absent.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lag-C", default_value_t = 1.0)]
    lag_c: f64,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long = "growth-B", default_value_t = DEFAULT_GROWTH_B)]
    growth_b: f64,
    #[arg(long = "growth-beta", default_value_t = DEFAULT_GROWTH_BETA)]
    growth_beta: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Replace the covariance formula with a sign-flipped one (negative control).
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl std::fmt::Display) -> Failure {
    Failure { code: 2, message: message.to_string() }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    usage(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Reproduce(args) => cmd_study(args, true),
        Command::Simulate(args) => cmd_study(args, false),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Blocks(args) => cmd_blocks(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Defaults, then the JSON file, then flags.
fn effective_config(args: &StudyArgs) -> Result<SimConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(reps) = args.reps {
        config.reps = reps;
    }
    if let Some(t) = args.horizon {
        config.horizon = t;
    }
    if let Some(w) = args.workers {
        config.workers = w;
    }
    config.validate().map_err(usage)?;
    Ok(config)
}

fn summary_json(summary: &StudySummary) -> String {
    let mut json = serde_json::to_string_pretty(summary).expect("summary serializes");
    json.push('\n');
    json
}

fn report_checks(checks: &[CheckResult]) -> u8 {
    for c in checks {
        eprintln!("{}", c.line());
    }
    if checks.iter().any(|c| c.status == Status::Fail) {
        1
    } else {
        0
    }
}

fn cmd_study(args: StudyArgs, with_checks: bool) -> Result<u8, Failure> {
    let started = SystemTime::now();
    let config = effective_config(&args)?;
    std::fs::create_dir_all(&args.out).map_err(|e| io_error(&args.out, e))?;

    let csv_path = args.out.join(REPLICATIONS);
    let file = File::create(&csv_path).map_err(|e| io_error(&csv_path, e))?;
    let mut writer = RecordWriter::new(BufWriter::new(file)).map_err(|e| io_error(&csv_path, e))?;
    let records = run_study_with(&config, |r| writer.write(r)).map_err(usage)?;
    writer.finish().and_then(|mut w| Ok(w.flush()?)).map_err(|e| io_error(&csv_path, e))?;

    let mut manifest = RunManifest::new(if with_checks { "reproduce" } else { "simulate" }, &config, started);
    manifest.outputs.push(csv_path);
    let mut code = 0;
    if with_checks {
        let summary = summarize(&records, config.horizon);
        let summary_path = args.out.join(SUMMARY);
        std::fs::write(&summary_path, summary_json(&summary)).map_err(|e| io_error(&summary_path, e))?;
        manifest.outputs.push(summary_path);
        let checks = study_checks(&summary);
        code = report_checks(&checks);
        manifest = manifest.with_checks(checks);
    }
    let manifest_path = args.out.join(MANIFEST);
    manifest.write(&manifest_path).map_err(|e| io_error(&manifest_path, e))?;
    Ok(code)
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<u8, Failure> {
    let file = File::open(&args.input).map_err(|e| io_error(&args.input, e))?;
    let records = read_records(std::io::BufReader::new(file)).map_err(|e| usage(format!("{}: {e}", args.input.display())))?;
    let horizon = match args.horizon {
        Some(t) => t,
        None => infer_horizon(&records).ok_or_else(|| usage("cannot infer T from the records; pass --T"))?,
    };
    let summary = summarize(&records, horizon);
    let json = summary_json(&summary);
    match &args.out {
        Some(path) => std::fs::write(path, json).map_err(|e| io_error(path, e))?,
        None => print!("{json}"),
    }
    Ok(report_checks(&study_checks(&summary)))
}

fn build_scheme(args: &BlocksArgs) -> Result<(BlockScheme, LagSpec), BlockError> {
    if args.fixed {
        let start = args.s.unwrap_or(args.p as i64 + 1);
        let scheme = build_fixed_lag_blocks(args.p, start, args.kmax, args.growth_b, args.growth_beta)?;
        return Ok((scheme, LagSpec::fixed(args.p)));
    }
    let need = |v: Option<f64>, name: &'static str| {
        v.ok_or(BlockError::InvalidParameter { name, reason: "required for --diverging".into() })
    };
    let params = DivergingParams {
        a_scale: need(args.a_scale, "A")?,
        b_scale: need(args.b_scale, "B")?,
        alpha: need(args.alpha, "alpha")?,
        beta: need(args.beta, "beta")?,
        start: args.s.unwrap_or(1),
        k_max: args.kmax,
    };
    let lag = match args.gamma {
        Some(g) => LagSpec::power_law(args.lag_c, g)?,
        None => LagSpec::fixed(args.p),
    };
    Ok((build_diverging_blocks(params, lag.clone())?, lag))
}

fn cmd_blocks(args: BlocksArgs) -> Result<u8, Failure> {
    let (scheme, lag) = build_scheme(&args).map_err(usage)?;
    print!("{}", scheme.to_csv());
    let n = scheme.num_blocks();
    let diag = diagnose_conditions(&scheme, &lag, n);
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    eprintln!("blocks: {n}");
    eprintln!("minor fraction sum c / sum (c + d): {:.6}", last(&diag.minor_fraction));
    eprintln!("max major share max d / sum d: {:.6}", last(&diag.max_major_share));
    match diag.lag_holds_from {
        Some(j) => eprintln!("lag condition holds from block {j}"),
        None => eprintln!("lag condition fails at the last block"),
    }
    eprintln!("major sizes grow: {}", diag.major_sizes_grow);
    Ok(0)
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Failure> {
    let mut reports = verify_all(args.seed);
    if args.inject_sign_flip {
        reports[0] = moment_oracle_suite(1000, args.seed, &sign_flipped_cov);
    }
    for r in &reports {
        println!("{}", r.line());
    }
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
}
