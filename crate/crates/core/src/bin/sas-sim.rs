//! Command-line front end.
//!
//! Exit codes: 0 all criteria passed, 1 a criterion failed, 2 config or
//! usage error, 3 the run itself failed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sas_sim::harness::{
    run_analyze_experiment, run_fluorescence_experiment, run_lock_experiment, run_sweep_experiment,
    run_temp_step_experiment, Calibration, ColumnMap, ExperimentOutput, HarnessError, ScenarioConfig,
};
use sas_sim::FeatureId;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(
    name = "sas-sim",
    version,
    about = "Saturated absorption spectroscopy and laser lock simulator"
)]
struct Cli {
    /// Scenario config file; defaults to $SAS_CONFIG_DIR/default.conf or the bundled defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports and artifacts.
    #[arg(long, global = true, default_value = "sas-out")]
    out: PathBuf,
    /// Summary printed on stdout.
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize the full sweep and report depth metrics.
    Sweep,
    /// Acquire and hold the lock.
    Lock,
    /// Apply a temperature step while locked.
    TempStep,
    /// Evaluate the fluorescence proxy.
    Fluorescence,
    /// Calibrate and analyse an oscilloscope CSV export.
    Analyze(AnalyzeArgs),
    /// Run sweep, lock, temp-step and fluorescence.
    All,
}

#[derive(Debug, clap::Args)]
struct AnalyzeArgs {
    csv: PathBuf,
    #[arg(long, default_value = "detuning_hz")]
    axis_col: String,
    #[arg(long, default_value = "reference_v")]
    reference_col: String,
    #[arg(long, default_value = "probe_v")]
    probe_col: String,
    /// Omit to compute probe − reference.
    #[arg(long, default_value = "differential_v")]
    differential_col: Option<String>,
    #[arg(long, default_value = "Rb87 F=2 co(2,3)")]
    feature_a: String,
    #[arg(long, default_value = "Rb87 F=1 co(1,2)")]
    feature_b: String,
    /// Search window for feature A in axis units, `lo:hi`. Defaults to ±15 MHz
    /// around its table position (axis already in Hz).
    #[arg(long, value_parser = parse_window)]
    window_a: Option<(f64, f64)>,
    #[arg(long, value_parser = parse_window)]
    window_b: Option<(f64, f64)>,
}

fn parse_window(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected lo:hi")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("{e}"))?;
    if a >= b || a.is_nan() || b.is_nan() {
        return Err("lo must be below hi".into());
    }
    Ok((a, b))
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ScenarioConfig::load(p),
        None => ScenarioConfig::default_from_env(),
    }
    .map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    cfg.line_table().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn calibration(cfg: &ScenarioConfig, args: &AnalyzeArgs) -> Result<Calibration, Failure> {
    let table = cfg.line_table()?;
    let parse = |s: &str| {
        s.parse::<FeatureId>()
            .map_err(|e| Failure::Config(format!("{s:?}: {e}")))
    };
    let a = parse(&args.feature_a)?;
    let b = parse(&args.feature_b)?;
    let around = |id: &FeatureId| -> Result<(f64, f64), Failure> {
        let x = table
            .feature(id)
            .map_err(|e| Failure::Config(e.to_string()))?
            .detuning_hz;
        Ok((x - 15e6, x + 15e6))
    };
    let wa = match args.window_a {
        Some(w) => w,
        None => around(&a)?,
    };
    let wb = match args.window_b {
        Some(w) => w,
        None => around(&b)?,
    };
    Calibration::from_table(&table, &a, wa, &b, wb).map_err(|e| Failure::Config(e.to_string()))
}

fn emit(output: &ExperimentOutput, out_dir: &Path, format: Format) -> Result<(), Failure> {
    let dir = out_dir.join(output.report.experiment.replace('-', "_"));
    output.write_to(&dir)?;
    let summary = match format {
        Format::Json => output.report.to_json()?,
        Format::Csv => output.report.criteria_csv()?,
    };
    print!("{summary}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let cfg = load_config(cli)?;
    let outputs = match &cli.command {
        Command::Sweep => vec![run_sweep_experiment(&cfg)?],
        Command::Lock => vec![run_lock_experiment(&cfg)?],
        Command::TempStep => vec![run_temp_step_experiment(&cfg)?],
        Command::Fluorescence => vec![run_fluorescence_experiment(&cfg)?],
        Command::Analyze(args) => {
            let cal = calibration(&cfg, args)?;
            let columns = ColumnMap {
                axis: args.axis_col.clone(),
                reference: args.reference_col.clone(),
                probe: args.probe_col.clone(),
                differential: args.differential_col.clone().filter(|s| !s.is_empty()),
            };
            vec![run_analyze_experiment(&cfg, &args.csv, &columns, &cal)?]
        }
        Command::All => vec![
            run_sweep_experiment(&cfg)?,
            run_lock_experiment(&cfg)?,
            run_temp_step_experiment(&cfg)?,
            run_fluorescence_experiment(&cfg)?,
        ],
    };
    let mut passed = true;
    for o in &outputs {
        emit(o, &cli.out, cli.format)?;
        passed &= o.report.passed;
    }
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("sas-sim: config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("sas-sim: run failed: {msg}");
            ExitCode::from(3)
        }
    }
}
