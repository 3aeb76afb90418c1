//! Per-method report rows, multi-seed aggregation and the four-way
//! method comparison.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::capacity::CalibrationTable;
use crate::des::write_event_log;
use crate::error::Result;

use super::config::{Method, ScenarioConfig};
use super::sim::{run_once, RunOutput, WindowMetrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCompliance {
    pub class: u32,
    pub loss: f64,
    pub loss_bound: f64,
    pub loss_ok: bool,
    pub mean_delay: Option<f64>,
    pub tau: f64,
    pub delay_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub methods: Vec<Method>,
    pub seeds: usize,
    pub measured_windows: usize,
    pub utilization: f64,
    pub loss_pct: f64,
    pub jitter_ms: f64,
    pub imbalance: f64,
    pub classes: Vec<ClassCompliance>,
}

impl ReportRow {
    pub fn compliant(&self) -> bool {
        self.classes.iter().all(|c| c.loss_ok && c.delay_ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub rows: Vec<ReportRow>,
}

pub fn label_of(methods: &[Method]) -> String {
    if methods.is_empty() {
        return "none".into();
    }
    if Method::ALL.iter().all(|m| methods.contains(m)) {
        return "combined".into();
    }
    let mut names: Vec<&str> = methods.iter().map(|m| m.name()).collect();
    names.sort();
    names.join("+")
}

/// Windows after the warm-up.
pub fn measured<'a>(cfg: &ScenarioConfig, run: &'a RunOutput) -> &'a [WindowMetrics] {
    let skip = (cfg.warmup_windows as usize).min(run.windows.len());
    &run.windows[skip..]
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Averages every seed's measured windows into one row. Loss is the ratio
/// of total lost to total generated work; the other metrics are window means.
pub fn aggregate(cfg: &ScenarioConfig, runs: &[RunOutput]) -> ReportRow {
    let windows: Vec<&WindowMetrics> = runs.iter().flat_map(|r| measured(cfg, r)).collect();
    let generated: u64 = windows.iter().map(|w| w.generated).sum();
    let lost: u64 = windows.iter().map(|w| w.lost).sum();
    let classes = cfg
        .classes
        .iter()
        .map(|c| {
            let per: Vec<_> = windows
                .iter()
                .filter_map(|w| w.classes.iter().find(|x| x.class == c.id))
                .collect();
            let g: u64 = per.iter().map(|x| x.generated).sum();
            let l: u64 = per.iter().map(|x| x.lost).sum();
            let n: u64 = per.iter().map(|x| x.delivered_packets).sum();
            let d: u64 = per.iter().map(|x| x.delay_sum).sum();
            let loss = if g > 0 { l as f64 / g as f64 } else { 0.0 };
            let mean_delay = (n > 0).then(|| d as f64 / n as f64);
            ClassCompliance {
                class: c.id,
                loss,
                loss_bound: c.loss_bound,
                loss_ok: loss <= c.loss_bound,
                mean_delay,
                tau: c.tau,
                delay_ok: mean_delay.is_none_or(|m| m <= c.tau),
            }
        })
        .collect();
    ReportRow {
        label: label_of(&cfg.methods),
        methods: cfg.methods.clone(),
        seeds: runs.len(),
        measured_windows: windows.len(),
        utilization: mean(windows.iter().map(|w| w.utilization)),
        loss_pct: if generated > 0 {
            100.0 * lost as f64 / generated as f64
        } else {
            0.0
        },
        jitter_ms: mean(windows.iter().filter_map(|w| w.jitter)) * cfg.slot_duration_ms,
        imbalance: mean(windows.iter().map(|w| w.imbalance)),
        classes,
    }
}

pub struct ScenarioResult {
    pub row: ReportRow,
    pub runs: Vec<RunOutput>,
}

/// Runs every seed of `cfg` (in parallel) and aggregates them.
pub fn run_scenario(cfg: &ScenarioConfig, table: &CalibrationTable) -> Result<ScenarioResult> {
    let runs: Vec<RunOutput> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_once(cfg, table, s))
        .collect::<Result<_>>()?;
    Ok(ScenarioResult {
        row: aggregate(cfg, &runs),
        runs,
    })
}

/// The method combinations compared: each method alone, then all three.
pub fn comparison_sets() -> Vec<Vec<Method>> {
    let mut sets: Vec<Vec<Method>> = Method::ALL.iter().map(|m| vec![*m]).collect();
    sets.push(Method::ALL.to_vec());
    sets
}

/// Same traffic and seeds under each method alone and all three together.
pub fn compare_methods(
    cfg: &ScenarioConfig,
    table: &CalibrationTable,
) -> Result<(Report, Vec<ScenarioResult>)> {
    let sets = comparison_sets();
    let jobs: Vec<(usize, u64)> = (0..sets.len())
        .flat_map(|i| cfg.seeds.iter().map(move |&s| (i, s)))
        .collect();
    let outputs: Vec<RunOutput> = jobs
        .par_iter()
        .map(|&(i, s)| run_once(&cfg.with_methods(&sets[i]), table, s))
        .collect::<Result<_>>()?;
    let mut results = Vec::new();
    let mut it = outputs.into_iter();
    for set in &sets {
        let c = cfg.with_methods(set);
        let runs: Vec<RunOutput> = it.by_ref().take(cfg.seeds.len()).collect();
        results.push(ScenarioResult {
            row: aggregate(&c, &runs),
            runs,
        });
    }
    let report = Report {
        scenario: cfg.name.clone(),
        rows: results.iter().map(|r| r.row.clone()).collect(),
    };
    Ok((report, results))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_report_csv<W: Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "utilization",
        "loss_pct",
        "jitter_ms",
        "imbalance",
        "compliant",
        "seeds",
        "windows",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.label.clone(),
            fmt(r.utilization),
            fmt(r.loss_pct),
            fmt(r.jitter_ms),
            fmt(r.imbalance),
            r.compliant().to_string(),
            r.seeds.to_string(),
            r.measured_windows.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report_json<W: Write>(report: &Report, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}

fn write_serialized<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct WindowRow {
    window: u64,
    utilization: f64,
    loss: f64,
    jitter: Option<f64>,
    imbalance: f64,
    generated: u64,
    lost: u64,
}

/// Writes the logs of every run under `dir`, one file set per method and seed.
pub fn write_logs(dir: &Path, results: &[ScenarioResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for res in results {
        for run in &res.runs {
            let stem = format!("{}_seed{}", res.row.label, run.seed);
            write_event_log(
                &run.events,
                std::fs::File::create(dir.join(format!("{stem}_events.csv")))?,
            )?;
            write_serialized(&run.routing_log, &dir.join(format!("{stem}_routing.csv")))?;
            write_serialized(&run.balancer_log, &dir.join(format!("{stem}_balancer.csv")))?;
            write_serialized(&run.control_log, &dir.join(format!("{stem}_control.csv")))?;
            let windows: Vec<WindowRow> = run
                .windows
                .iter()
                .map(|w| WindowRow {
                    window: w.window,
                    utilization: w.utilization,
                    loss: w.loss(),
                    jitter: w.jitter,
                    imbalance: w.imbalance,
                    generated: w.generated,
                    lost: w.lost,
                })
                .collect();
            write_serialized(&windows, &dir.join(format!("{stem}_windows.csv")))?;
        }
    }
    Ok(())
}
