use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdfnav_core::field::load_checkpoint;
use sdfnav_core::pipeline::output::{metrics_text, SLICE_RESOLUTION};
use sdfnav_core::pipeline::suite::{load_scenarios, run_suite, summary_csv};
use sdfnav_core::pipeline::{emit_outputs, run_scenario, Arm, ScenarioConfig, SdfSlice};
use sdfnav_core::{gradcheck, Error};

/// Online neural distance fields for camera-driven safe navigation.
#[derive(Debug, Parser)]
#[command(name = "sdfnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop rollout and write its logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_parser = parse_arm)]
        arm: Arm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every scenario in a directory under its arms, `repeats` seeds each.
    Suite {
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 10)]
        repeats: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a horizontal slice of a saved field as a PGM image.
    Slice {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Slice height, meters.
        #[arg(long)]
        height: f64,
        #[arg(long)]
        out: PathBuf,
        /// `min_x,min_y,max_x,max_y` in meters.
        #[arg(long, default_value = "-1.5,-2,5,2", value_parser = parse_bounds)]
        bounds: [f64; 4],
        #[arg(long, default_value_t = SLICE_RESOLUTION)]
        resolution: f64,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_arm(s: &str) -> Result<Arm, String> {
    s.parse::<Arm>().map_err(|e| e.to_string())
}

fn parse_bounds(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "expected four comma-separated numbers".to_owned())
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn run(scenario: &Path, arm: Arm, seed: u64, out: &Path) -> Result<(), Failure> {
    let config = ScenarioConfig::load(scenario)?;
    config.validate()?;
    let result = run_scenario(&config, arm, seed)?;
    let scene = config.scene.build()?;
    emit_outputs(&result, &scene, false, config.robot.query_height_m, out)?;
    print!("{}", metrics_text(&result.metrics));
    Ok(())
}

fn suite(dir: &Path, repeats: u64, out: &Path) -> Result<(), Failure> {
    let scenarios = load_scenarios(dir)?;
    let (rows, _) = run_suite(&scenarios, repeats, Some(out), |m| {
        eprintln!(
            "{} {} seed {}: {} after {:.2} s, min clearance {:.3} m",
            m.scenario,
            m.arm,
            m.seed,
            m.halt.name(),
            m.duration_s,
            m.min_clearance_m
        );
    })?;
    print!("{}", summary_csv(&rows));
    Ok(())
}

fn slice(checkpoint: &Path, height: f64, out: &Path, bounds: [f64; 4], resolution: f64) -> Result<(), Failure> {
    if !height.is_finite() {
        return Err(Failure::Validation("height must be finite".into()));
    }
    let params = load_checkpoint(checkpoint)?;
    let s = SdfSlice::learned(&params, [bounds[0], bounds[1]], [bounds[2], bounds[3]], resolution, height)?;
    fs::write(out, s.to_pgm()).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let (rows, cols) = s.values.dim();
    println!("wrote {cols}x{rows} slice at z = {height} m to {}", out.display());
    Ok(())
}

fn gradcheck(seed: u64) -> Result<(), Failure> {
    let reports = gradcheck::run_suites(seed)?;
    let mut ok = true;
    for r in &reports {
        println!(
            "{} {}: max relative error {:.3e} over {} checks (tolerance {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.max_relative_error,
            r.checked,
            r.tolerance
        );
        ok &= r.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
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
    let result = match cli.command {
        Command::Run { scenario, arm, seed, out } => run(&scenario, arm, seed, &out),
        Command::Suite { scenarios, repeats, out } => suite(&scenarios, repeats, &out),
        Command::Slice {
            checkpoint,
            height,
            out,
            bounds,
            resolution,
        } => slice(&checkpoint, height, &out, bounds, resolution),
        Command::Gradcheck { seed } => gradcheck(seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
