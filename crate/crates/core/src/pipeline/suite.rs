//! Repeated rollouts over scenarios and arms, with per-cell summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::output::emit_outputs;
use super::scenario::{Arm, ScenarioConfig};
use super::sim::{run_scenario, RunMetrics};
use crate::error::{Error, Result};

/// Summary of one (scenario, arm) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub scenario: String,
    pub arm: Arm,
    pub runs: usize,
    pub safe_pct: f64,
    pub reached_pct: f64,
    /// Mean time to goal over the runs that reached it.
    pub mean_duration_s: Option<f64>,
}

impl SuiteRow {
    pub fn summarise(scenario: &str, arm: Arm, runs: &[RunMetrics]) -> Self {
        let n = runs.len();
        let pct = |k: usize| if n == 0 { 0.0 } else { 100.0 * k as f64 / n as f64 };
        let reached: Vec<f64> = runs.iter().filter(|m| m.reached).map(|m| m.duration_s).collect();
        Self {
            scenario: scenario.to_owned(),
            arm,
            runs: n,
            safe_pct: pct(runs.iter().filter(|m| m.safe).count()),
            reached_pct: pct(reached.len()),
            mean_duration_s: (!reached.is_empty()).then(|| reached.iter().sum::<f64>() / reached.len() as f64),
        }
    }
}

pub const SUMMARY_HEADER: &str = "scenario,arm,runs,safe_pct,reached_pct,mean_duration_s";

pub fn summary_csv(rows: &[SuiteRow]) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let dur = r.mean_duration_s.map_or_else(String::new, |d| format!("{d:.3}"));
        writeln!(s, "{},{},{},{:.1},{:.1},{dur}", r.scenario, r.arm, r.runs, r.safe_pct, r.reached_pct)
            .expect("writing to a string");
    }
    s
}

/// Per-run metrics, one CSV line each.
pub fn runs_csv(runs: &[RunMetrics]) -> String {
    let mut s = String::from(
        "scenario,arm,seed,safe,reached,halt,duration_s,min_clearance_m,infeasible_steps,longest_infeasible_s\n",
    );
    for m in runs {
        writeln!(
            s,
            "{},{},{},{},{},{},{:.3},{:.6},{},{:.3}",
            m.scenario,
            m.arm,
            m.seed,
            m.safe,
            m.reached,
            m.halt.name(),
            m.duration_s,
            m.min_clearance_m,
            m.infeasible_steps,
            m.longest_infeasible_s
        )
        .expect("writing to a string");
    }
    s
}

/// Every `*.toml` in `dir`, sorted by file name.
pub fn load_scenarios(dir: &Path) -> Result<Vec<ScenarioConfig>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!("no scenario files in {}", dir.display())));
    }
    paths.iter().map(|p| ScenarioConfig::load(p)).collect()
}

/// Runs every scenario under each of its suite arms with seeds
/// `0..repeats`. When `out_dir` is given, each run's outputs go to
/// `out_dir/<scenario>/<arm>/seed_<n>` and the summaries to `summary.csv`
/// and `runs.csv`. `progress` sees every run as it finishes.
pub fn run_suite(
    scenarios: &[ScenarioConfig],
    repeats: u64,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&RunMetrics),
) -> Result<(Vec<SuiteRow>, Vec<RunMetrics>)> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    for cfg in scenarios {
        cfg.validate()?;
    }
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for cfg in scenarios {
        let scene = cfg.scene.build()?;
        for &arm in &cfg.suite_arms {
            let mut cell = Vec::new();
            for seed in 0..repeats {
                let run = run_scenario(cfg, arm, seed)?;
                if let Some(dir) = out_dir {
                    let d = dir.join(&cfg.name).join(arm.name()).join(format!("seed_{seed}"));
                    emit_outputs(&run, &scene, false, cfg.robot.query_height_m, &d)?;
                }
                progress(&run.metrics);
                cell.push(run.metrics);
            }
            rows.push(SuiteRow::summarise(&cfg.name, arm, &cell));
            all.extend(cell);
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("summary.csv");
        fs::write(&p, summary_csv(&rows)).map_err(|e| Error::io(p, e))?;
        let p = dir.join("runs.csv");
        fs::write(&p, runs_csv(&all)).map_err(|e| Error::io(p, e))?;
    }
    Ok((rows, all))
}
