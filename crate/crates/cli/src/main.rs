//! `qubus` batch front-end.
//!
//! ```text
//! qubus <experiment> [--config FILE] [--preset NAME] [--set key=value ...]
//!       [--out DIR] [--seed N] [--strict]
//! ```
//!
//! Writes `results.csv` and `summary.json` (plus `schedule.json` for
//! solve-schedule) into the output directory. Exit codes: 0 success,
//! 2 configuration/validation failure (no artifacts written),
//! 3 tolerance-check failure (artifacts written).

mod config;
mod experiments;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_config_text, preset, Experiment, ScenarioConfig};
use experiments::{run, ResultTable, RunArtifacts, RunError};

#[derive(Parser)]
#[command(
    name = "qubus",
    about = "Qubus-mediated two-qubit gate experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the gate on fixed or random inputs and report fidelities.
    #[command(name = "gate-check")]
    GateCheck(CommonArgs),
    /// Sweep the conditional-rotation angle θ at fixed d.
    Sweep(CommonArgs),
    /// Scan loss reflectivity η against the dephasing exponent.
    #[command(name = "loss-scan")]
    LossScan(CommonArgs),
    /// Compare the exact backend against the Fock oracle input by input.
    #[command(name = "fock-compare")]
    FockCompare(CommonArgs),
    /// Solve for the eight-drive-pulse schedule and verify it.
    #[command(name = "solve-schedule")]
    SolveSchedule(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value configuration file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Named preset: paper-strong, paper-weak or paper-loss.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Override a single config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (overrides the `out` key).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed (overrides the `seed` key).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Strict mode: leakage above check.max_leakage fails the run.
    #[arg(long)]
    strict: bool,
}

impl Command {
    fn split(self) -> (Experiment, CommonArgs) {
        match self {
            Command::GateCheck(a) => (Experiment::GateCheck, a),
            Command::Sweep(a) => (Experiment::Sweep, a),
            Command::LossScan(a) => (Experiment::LossScan, a),
            Command::FockCompare(a) => (Experiment::FockCompare, a),
            Command::SolveSchedule(a) => (Experiment::SolveSchedule, a),
        }
    }
}

fn gather_pairs(args: &CommonArgs) -> Result<Vec<(String, String, usize)>, String> {
    let mut pairs: Vec<(String, String, usize)> = Vec::new();
    if let Some(name) = &args.preset {
        for (k, v) in preset(name).map_err(|e| e.to_string())? {
            pairs.push((k, v, 0));
        }
    }
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        pairs.extend(parse_config_text(&text).map_err(|e| e.to_string())?);
    }
    for (i, entry) in args.set.iter().enumerate() {
        let Some(eq) = entry.find('=') else {
            return Err(format!("--set argument {} is not KEY=VALUE: `{entry}`", i + 1));
        };
        let key = entry[..eq].trim().to_string();
        let value = entry[eq + 1..].trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(format!("--set argument {} is not KEY=VALUE: `{entry}`", i + 1));
        }
        pairs.push((key, value, 0));
    }
    if let Some(seed) = args.seed {
        pairs.push(("seed".into(), seed.to_string(), 0));
    }
    if let Some(out) = &args.out {
        pairs.push(("out".into(), out.display().to_string(), 0));
    }
    if args.strict {
        pairs.push(("strict".into(), "true".into(), 0));
    }
    Ok(pairs)
}

fn write_csv(path: &Path, table: &ResultTable) -> std::io::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&table.columns)?;
    for row in &table.rows {
        writer.write_record(row)?;
    }
    writer.flush()
}

fn write_artifacts(dir: &Path, artifacts: &RunArtifacts) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join("results.csv"), &artifacts.table)?;
    let json = serde_json::to_string_pretty(&artifacts.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json + "\n")?;
    for (name, contents) in &artifacts.extra_files {
        fs::write(dir.join(name), contents)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = cli.command.split();

    let pairs = match gather_pairs(&args) {
        Ok(pairs) => pairs,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };

    let scenario = match ScenarioConfig::resolve(&pairs, Some(experiment)) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };

    let artifacts = match run(&scenario) {
        Ok(a) => a,
        Err(RunError::Infeasible(message)) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
        Err(RunError::Internal(message)) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };

    let out_dir = PathBuf::from(&scenario.out_dir);
    if let Err(e) = write_artifacts(&out_dir, &artifacts) {
        eprintln!("error: cannot write artifacts to {}: {e}", out_dir.display());
        return ExitCode::from(2);
    }

    for check in &artifacts.checks {
        let verdict = if check.pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} {} = {} (required {} {})",
            check.name,
            config::fmt_f64(check.value),
            check.op,
            config::fmt_f64(check.threshold)
        );
    }
    println!(
        "wrote {} and {}",
        out_dir.join("results.csv").display(),
        out_dir.join("summary.json").display()
    );

    if artifacts.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
