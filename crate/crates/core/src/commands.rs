//! The `run`, `sweep`, `report` and `preset-dump` commands.
//!
//! A run directory holds `events.log`, `victims.csv`, `hops.csv`,
//! `accuracy.csv`, `links.csv`, `scenario.json` and `summary.json`. A sweep
//! directory holds one `run_NNNN` directory per realization (without the
//! event log and link table), `collision_curve.csv` and `sweep_summary.json`;
//! with several slot counts each gets its own `n_slot_K` subdirectory.
//! `summary.json` is written last, so its presence marks a finished run and
//! an interrupted sweep picks up where it stopped.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    accuracy, collision_curve, consensus_time, hop_traces, seconds, slot_conflicts, victim_trace, windowed_consensus_time,
    write_accuracy, write_hop_traces, CollisionCurve, MetricsError, NodeAccuracy, VictimTrace, DEFAULT_GRID_STEP,
    DEFAULT_WINDOW,
};
use crate::protocol::{Micros, MICROS_PER_SEC};
use crate::scenario::{realization_seed, Scenario, ScenarioError};
use crate::sim::{LogLevel, SimError, SimOutput};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("no runs found in {0}")]
    NoRuns(PathBuf),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CommandError + '_ {
    move |source| CommandError::Io { path: path.to_owned(), source }
}

/// Writes through a temporary file so a crash never leaves a half-written file behind.
fn write_file(path: &Path, fill: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), CommandError> {
    let tmp = path.with_extension("partial");
    let file = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    fill(&mut w).and_then(|_| w.flush()).map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CommandError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| CommandError::Json { path: path.to_owned(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CommandError> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
}

/// Headline numbers of one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub n_slot: u8,
    pub horizon_s: f64,
    /// Start of the final victim-free stretch, if it reaches the horizon.
    pub consensus_time_s: Option<f64>,
    /// Start of the first victim-free stretch of at least 10 s.
    pub windowed_consensus_time_s: Option<f64>,
    pub final_victims: u32,
    pub max_victims_last_40s: u32,
    pub nodes_on: usize,
    /// Fraction of powered nodes whose hop equals the BFS distance
    /// (unreachable nodes count as correct at the not-available hop).
    pub hop_accuracy: f64,
    pub mean_heard_jaccard: f64,
    pub mean_bidirectional_jaccard: f64,
    pub slot_conflicts: usize,
    pub transmissions: u64,
    pub receptions: u64,
    pub lost_collision: u64,
    pub deliveries: usize,
}

pub struct RunResult {
    pub output: SimOutput,
    pub trace: VictimTrace,
    pub accuracy: Vec<NodeAccuracy>,
    pub summary: RunSummary,
}

fn hop_matches(row: &NodeAccuracy, h_na: u8) -> bool {
    match row.bfs_hop {
        Some(h) => h == row.claimed_hop as u32,
        None => row.claimed_hop == h_na,
    }
}

/// Simulates one realization and computes its metrics, without touching disk.
pub fn simulate(scenario: &Scenario, seed: u64) -> Result<RunResult, CommandError> {
    let output = scenario.build(seed)?.run(seed)?;
    let god = output.links.true_neighbor_sets();
    let trace = victim_trace(output.log.records(), &god, output.horizon);
    let rows = accuracy(&output.machines, &output.references, &god);
    let n = rows.len().max(1) as f64;
    let h_na = output.timing.h_na;
    let horizon = output.horizon;
    let summary = RunSummary {
        scenario: scenario.name.clone(),
        seed,
        n_slot: output.timing.n_slot,
        horizon_s: seconds(horizon),
        consensus_time_s: consensus_time(&trace).map(seconds),
        windowed_consensus_time_s: windowed_consensus_time(&trace, 10 * MICROS_PER_SEC).map(seconds),
        final_victims: trace.points().last().map_or(0, |p| p.1),
        max_victims_last_40s: trace.max_over(horizon.saturating_sub(40 * MICROS_PER_SEC), horizon),
        nodes_on: rows.len(),
        hop_accuracy: rows.iter().filter(|r| hop_matches(r, h_na)).count() as f64 / n,
        mean_heard_jaccard: rows.iter().map(|r| r.heard_jaccard).sum::<f64>() / n,
        mean_bidirectional_jaccard: rows.iter().map(|r| r.bidirectional_jaccard).sum::<f64>() / n,
        slot_conflicts: slot_conflicts(&output.machines, &god).len(),
        transmissions: output.counters.transmissions,
        receptions: output.counters.receptions,
        lost_collision: output.counters.lost_collision,
        deliveries: output.deliveries.len(),
    };
    Ok(RunResult { output, trace, accuracy: rows, summary })
}

fn write_run(dir: &Path, scenario: &Scenario, r: &RunResult, full: bool) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    if full {
        write_file(&dir.join("events.log"), |w| r.output.log.write_to(w))?;
        write_file(&dir.join("links.csv"), |w| r.output.links.write_csv(w))?;
        write_file(&dir.join("scenario.json"), |w| writeln!(w, "{}", scenario.to_json()))?;
    }
    write_file(&dir.join("victims.csv"), |w| r.trace.write_csv(w))?;
    write_file(&dir.join("hops.csv"), |w| write_hop_traces(&hop_traces(r.output.log.records()), w))?;
    write_file(&dir.join("accuracy.csv"), |w| write_accuracy(&r.accuracy, w))?;
    write_json(&dir.join("summary.json"), &r.summary)
}

/// Single realization with every output file.
pub fn cmd_run(scenario: &Scenario, seed: u64, out: &Path) -> Result<RunSummary, CommandError> {
    let r = simulate(scenario, seed)?;
    write_run(out, scenario, &r, true)?;
    Ok(r.summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p10: f64,
    pub median: f64,
    pub p90: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; `None` for an empty sample.
    pub fn of(mut values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let q = |p: f64| values[((p * values.len() as f64).ceil() as usize).clamp(1, values.len()) - 1];
        Some(Self { p10: q(0.1), median: q(0.5), p90: q(0.9) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub scenario: String,
    pub n_slot: u8,
    pub p_grant: f64,
    pub realizations: usize,
    pub base_seed: u64,
    pub window_s: f64,
    pub consensus_fraction: f64,
    pub consensus_time_s: Option<Quantiles>,
    pub max_victims_last_40s: Option<Quantiles>,
    pub final_victims_mean: f64,
    pub hop_accuracy_mean: f64,
    pub slot_conflict_runs: usize,
}

fn run_dir(dir: &Path, index: u32) -> PathBuf {
    dir.join(format!("run_{index:04}"))
}

/// Monte Carlo sweep. Realization `i` uses seed `base ^ i`; realizations whose
/// `summary.json` already exists are not rerun.
pub fn cmd_sweep(
    scenario: &Scenario,
    realizations: u32,
    jobs: usize,
    out: &Path,
) -> Result<Vec<SweepSummary>, CommandError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CommandError::Pool(e.to_string()))?;
    let slots = scenario.sweep_slots();
    let nested = !scenario.sweep_n_slot.is_empty();
    let mut summaries = Vec::new();
    for n_slot in slots {
        let mut s = scenario.with_n_slot(n_slot);
        s.log_level = LogLevel::Compact;
        let dir = if nested { out.join(format!("n_slot_{n_slot}")) } else { out.to_owned() };
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        pool.install(|| {
            (0..realizations).into_par_iter().try_for_each(|i| {
                let rd = run_dir(&dir, i);
                if rd.join("summary.json").exists() {
                    return Ok(());
                }
                let r = simulate(&s, realization_seed(s.seed, i))?;
                write_run(&rd, &s, &r, false)
            })
        })?;
        summaries.push(aggregate(&dir, &s, realizations)?);
    }
    Ok(summaries)
}

/// Rebuilds the curve and summary of a sweep directory from its per-run files.
pub fn aggregate(dir: &Path, scenario: &Scenario, realizations: u32) -> Result<SweepSummary, CommandError> {
    let horizon = scenario.horizon();
    let mut traces = Vec::new();
    let mut runs = Vec::new();
    for i in 0..realizations {
        let rd = run_dir(dir, i);
        let path = rd.join("victims.csv");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        traces.push(VictimTrace::from_csv(&text, horizon)?);
        runs.push(read_json::<RunSummary>(&rd.join("summary.json"))?);
    }
    let curve = if traces.len() >= 2 {
        Some(collision_curve(&traces, DEFAULT_WINDOW, DEFAULT_GRID_STEP, horizon)?)
    } else {
        None
    };
    if let Some(c) = &curve {
        write_file(&dir.join("collision_curve.csv"), |w| c.write_csv(w))?;
    }
    let n = runs.len().max(1) as f64;
    let summary = SweepSummary {
        scenario: scenario.name.clone(),
        n_slot: scenario.timing.n_slot,
        p_grant: scenario.timing.p_grant,
        realizations: runs.len(),
        base_seed: scenario.seed,
        window_s: seconds(DEFAULT_WINDOW),
        consensus_fraction: runs.iter().filter(|r| r.consensus_time_s.is_some()).count() as f64 / n,
        consensus_time_s: Quantiles::of(runs.iter().filter_map(|r| r.consensus_time_s).collect()),
        max_victims_last_40s: Quantiles::of(runs.iter().map(|r| r.max_victims_last_40s as f64).collect()),
        final_victims_mean: runs.iter().map(|r| r.final_victims as f64).sum::<f64>() / n,
        hop_accuracy_mean: runs.iter().map(|r| r.hop_accuracy).sum::<f64>() / n,
        slot_conflict_runs: runs.iter().filter(|r| r.slot_conflicts > 0).count(),
    };
    write_json(&dir.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}

/// Reads a curve CSV written by a sweep.
pub fn read_curve(path: &Path) -> Result<Vec<(Micros, f64)>, CommandError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let bad = |line: usize| MetricsError::Csv { line, what: "expected t_s,probability,n_realizations".into() };
    text.lines()
        .enumerate()
        .skip(1)
        .map(|(i, row)| {
            let mut cols = row.split(',');
            let t: f64 = cols.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(i + 1))?;
            let p: f64 = cols.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad(i + 1))?;
            Ok(((t * MICROS_PER_SEC as f64).round() as Micros, p))
        })
        .collect()
}

fn find_files(dir: &Path, name: &str, found: &mut Vec<PathBuf>) -> Result<(), CommandError> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_files(&p, name, found)?;
        } else if p.file_name().is_some_and(|f| f == name) {
            found.push(p);
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "never".to_owned(), |v| format!("{v:.2} s"))
}

/// Human-readable summary of every run and sweep below `dir`.
pub fn cmd_report(dir: &Path) -> Result<String, CommandError> {
    let mut sweeps = Vec::new();
    let mut runs = Vec::new();
    if dir.is_dir() {
        find_files(dir, "sweep_summary.json", &mut sweeps)?;
        find_files(dir, "summary.json", &mut runs)?;
    }
    // runs inside sweeps are already covered by their sweep summary
    let sweep_dirs: Vec<&Path> = sweeps.iter().filter_map(|p| p.parent()).collect();
    runs.retain(|p| !p.ancestors().skip(2).any(|a| sweep_dirs.contains(&a)));
    if sweeps.is_empty() && runs.is_empty() {
        return Err(CommandError::NoRuns(dir.to_owned()));
    }
    let mut out = String::new();
    for path in &sweeps {
        let s: SweepSummary = read_json(path)?;
        let parent = path.parent().expect("file has a parent");
        out += &format!(
            "sweep {} ({}): n_slot={} p={} realizations={}\n",
            s.scenario,
            parent.display(),
            s.n_slot,
            s.p_grant,
            s.realizations
        );
        out += &format!("  consensus reached: {:.0}%", 100.0 * s.consensus_fraction);
        if let Some(q) = &s.consensus_time_s {
            out += &format!(", time p10/median/p90 = {:.1}/{:.1}/{:.1} s", q.p10, q.median, q.p90);
        }
        out += "\n";
        if let Some(q) = &s.max_victims_last_40s {
            out += &format!("  max victims over the last 40 s: median {}, p90 {}\n", q.median, q.p90);
        }
        out += &format!(
            "  mean final victims {:.2}, mean hop accuracy {:.3}, runs with slot conflicts {}\n",
            s.final_victims_mean, s.hop_accuracy_mean, s.slot_conflict_runs
        );
        let curve_path = parent.join("collision_curve.csv");
        if curve_path.exists() {
            let curve = read_curve(&curve_path)?;
            let at = |t: f64| {
                curve
                    .iter()
                    .find(|p| p.0 == (t * MICROS_PER_SEC as f64) as Micros)
                    .map_or_else(|| "-".to_owned(), |p| format!("{:.3}", p.1))
            };
            out += &format!(
                "  collision probability at 1/10/20/30/40 s: {} {} {} {} {}\n",
                at(1.0),
                at(10.0),
                at(20.0),
                at(30.0),
                at(40.0)
            );
        }
    }
    for path in &runs {
        let r: RunSummary = read_json(path)?;
        out += &format!(
            "run {} ({}): seed={} n_slot={} horizon={} s\n",
            r.scenario,
            path.parent().expect("file has a parent").display(),
            r.seed,
            r.n_slot,
            r.horizon_s
        );
        out += &format!(
            "  consensus {}, final victims {}, hop accuracy {:.3}, neighbor jaccard {:.3}/{:.3}, deliveries {}\n",
            fmt_opt(r.consensus_time_s),
            r.final_victims,
            r.hop_accuracy,
            r.mean_heard_jaccard,
            r.mean_bidirectional_jaccard,
            r.deliveries
        );
    }
    Ok(out)
}

pub fn cmd_preset_dump(scenario: &Scenario, out: Option<&Path>) -> Result<String, CommandError> {
    let json = scenario.to_json();
    if let Some(path) = out {
        write_file(path, |w| writeln!(w, "{json}"))?;
    }
    Ok(json)
}

/// Collision curve recomputed from victim CSVs, for checking a sweep's aggregate.
pub fn curve_from_dir(dir: &Path, realizations: u32, horizon: Micros) -> Result<CollisionCurve, CommandError> {
    let traces = (0..realizations)
        .map(|i| {
            let path = run_dir(dir, i).join("victims.csv");
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            Ok(VictimTrace::from_csv(&text, horizon)?)
        })
        .collect::<Result<Vec<_>, CommandError>>()?;
    Ok(collision_curve(&traces, DEFAULT_WINDOW, DEFAULT_GRID_STEP, horizon)?)
}
