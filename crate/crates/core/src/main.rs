use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fractal_qos::capacity::{calibrate, CalibrationTable, GridSpec};
use fractal_qos::estimator::{
    default_scales, estimate_generalized_hurst, signature, DEFAULT_Q_GRID,
};
use fractal_qos::generator::{compose_traffic, GeneratorSpec};
use fractal_qos::scenario::report::{
    write_logs, write_report_csv, write_report_json, ScenarioResult,
};
use fractal_qos::scenario::{compare_methods, run_scenario, Report, ScenarioConfig};
use fractal_qos::trace::TrafficTrace;
use fractal_qos::Result;

#[derive(Parser)]
#[command(
    name = "fractal-qos",
    version,
    about = "Multifractal traffic tools and QoS method simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a traffic trace.
    Generate(GenerateArgs),
    /// Estimate the fractal signature of a trace.
    Analyze(AnalyzeArgs),
    /// Build a buffer calibration table.
    Calibrate(CalibrateArgs),
    /// Run a scenario with its configured methods.
    Simulate(RunArgs),
    /// Run each method alone and all three together.
    Compare(RunArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator spec as TOML; flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    hurst: f64,
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
    #[arg(long, default_value_t = 1 << 14)]
    length: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Cascade depth; 0 disables the cascade.
    #[arg(long, default_value_t = 0)]
    depth: u32,
    #[arg(long, default_value_t = 0.7)]
    weight: f64,
    #[arg(long, default_value_t = 0.3)]
    envelope_cv: f64,
    /// Output CSV; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    trace: PathBuf,
    /// Also write the h(q) table (q, h_q, r_squared) here.
    #[arg(long)]
    hq: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 0.01)]
    loss_target: f64,
    #[arg(long, default_value_t = 10)]
    seeds: usize,
    #[arg(long)]
    trace_len: Option<usize>,
    /// Grid as TOML (rho, hurst, sigma_var, trace_len, max_probe, base_seed).
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    scenario: PathBuf,
    /// Run only these seeds instead of the scenario's list.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Directory for report.csv, report.json and per-run logs.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Calibration table overriding the scenario's.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Exit with status 2 when any class misses its loss or delay bound.
    #[arg(long)]
    strict: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(a) => generate(a).map(|_| true),
        Command::Analyze(a) => analyze(a).map(|_| true),
        Command::Calibrate(a) => calibrate_cmd(a).map(|_| true),
        Command::Simulate(a) => run(a, false),
        Command::Compare(a) => run(a, true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn generate(a: GenerateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => toml::from_str::<GeneratorSpec>(&std::fs::read_to_string(p)?)?,
        None => GeneratorSpec::new(a.hurst, a.intensity, a.length, a.seed)
            .with_cascade(a.depth, a.weight)
            .with_envelope_cv(a.envelope_cv),
    };
    let trace = compose_traffic(&spec)?;
    let mut out = output(a.out.as_deref())?;
    trace.write_csv(&mut out)?;
    out.flush()?;
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let trace = TrafficTrace::read_csv(BufReader::new(File::open(&a.trace)?))?;
    let sig = signature(&trace)?;
    print!("{}", sig.to_key_values());
    if let Some(path) = a.hq {
        let v = trace.values();
        let fit = estimate_generalized_hurst(v, &DEFAULT_Q_GRID, &default_scales(v.len()))?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["q", "h_q", "r_squared"])?;
        for f in &fit.fits {
            w.write_record([
                format!("{:?}", f.q),
                format!("{:?}", f.h),
                format!("{:?}", f.r_squared),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    let mut grid = match &a.grid {
        Some(p) => toml::from_str::<GridSpec>(&std::fs::read_to_string(p)?)?,
        None => GridSpec::default(),
    };
    if let Some(n) = a.trace_len {
        grid.trace_len = n;
    }
    let table = calibrate(&grid, a.loss_target, a.seeds)?;
    table.save(&a.out)?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn run(a: RunArgs, compare: bool) -> Result<bool> {
    let mut cfg = ScenarioConfig::load(&a.scenario)?;
    if !a.seed.is_empty() {
        cfg.seeds = a.seed.clone();
    }
    let table_path = a.table.clone().unwrap_or_else(|| cfg.table_path());
    let table = CalibrationTable::load(&table_path)?;
    let (report, results): (Report, Vec<ScenarioResult>) = if compare {
        compare_methods(&cfg, &table)?
    } else {
        let res = run_scenario(&cfg, &table)?;
        (
            Report {
                scenario: cfg.name.clone(),
                rows: vec![res.row.clone()],
            },
            vec![res],
        )
    };
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            write_report_csv(&report, File::create(dir.join("report.csv"))?)?;
            write_report_json(&report, File::create(dir.join("report.json"))?)?;
            write_logs(&dir.join("logs"), &results)?;
        }
        None => write_report_csv(&report, io::stdout().lock())?,
    }
    for res in &results {
        for run in &res.runs {
            let inv = &run.invariants;
            if inv.conservation_violations > 0 || !inv.ledger_balanced {
                eprintln!(
                    "warning: {} seed {}: invariant check failed: {:?}",
                    res.row.label, run.seed, inv
                );
            }
        }
    }
    let violations: Vec<&str> = report
        .rows
        .iter()
        .filter(|r| !r.compliant())
        .map(|r| r.label.as_str())
        .collect();
    if !violations.is_empty() {
        eprintln!("class bounds violated in: {}", violations.join(", "));
    }
    Ok(!(a.strict && !violations.is_empty()))
}
