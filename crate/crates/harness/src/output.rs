//! CSV, summary and chart artifacts of a mission.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use scx_core::metrics::{expected_performance, time_to_goal, MetricsRecord};
use scx_core::sim::stream::{stream_hash, write_stream};
use scx_core::sim::MissionLog;

use crate::config::OutputOptions;
use crate::plot::{line_chart, Series};

pub const METRICS_HEADER: [&str; 12] = [
    "t",
    "E",
    "C",
    "M",
    "P",
    "P_o",
    "P_f",
    "R_o",
    "R_f",
    "collisions",
    "tree_size",
    "best_utility",
];

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

fn metric_fields(m: &MetricsRecord) -> Vec<String> {
    vec![
        m.t.to_string(),
        m.e.to_string(),
        m.c.to_string(),
        m.m.to_string(),
        fmt_opt(m.p),
        fmt_opt(m.p_o),
        fmt_opt(m.p_f),
        fmt_opt(m.r_o),
        fmt_opt(m.r_f),
        m.collisions.to_string(),
    ]
}

pub fn write_metrics_csv(path: &Path, log: &MissionLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(METRICS_HEADER)?;
    for s in &log.snapshots {
        let mut row = metric_fields(&s.metrics);
        row.push(s.tree_size.to_string());
        row.push(s.best_utility.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Metric rows without planner columns, e.g. for replays.
pub fn write_records_csv(path: &Path, rows: &[(&str, &MetricsRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    let mut header = vec!["set"];
    header.extend_from_slice(&METRICS_HEADER[..10]);
    w.write_record(&header)?;
    for (set, m) in rows {
        let mut row = vec![set.to_string()];
        row.extend(metric_fields(m));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_csv(path: &Path, log: &MissionLog) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(["t", "kind", "x", "y", "z", "yaw", "tree_size", "utility"])?;
    for e in &log.events {
        w.write_record([
            e.t.to_string(),
            e.kind.name().to_string(),
            e.pose.x.to_string(),
            e.pose.y.to_string(),
            e.pose.z.to_string(),
            e.pose.yaw.to_string(),
            e.tree_size.to_string(),
            e.utility.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FinalMetrics {
    pub t: f64,
    pub e: f64,
    pub c: f64,
    pub m: f64,
    pub p: Option<f64>,
    pub p_o: Option<f64>,
    pub p_f: Option<f64>,
    pub r_o: Option<f64>,
    pub r_f: Option<f64>,
}

impl From<&MetricsRecord> for FinalMetrics {
    fn from(m: &MetricsRecord) -> Self {
        Self {
            t: m.t,
            e: m.e,
            c: m.c,
            m: m.m,
            p: m.p,
            p_o: m.p_o,
            p_f: m.p_f,
            r_o: m.r_o,
            r_f: m.r_f,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Expected {
    pub e: f64,
    pub c: f64,
    pub m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GoalTime {
    pub metric: String,
    pub fraction: f64,
    /// Absent when the goal was never reached.
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub status: String,
    pub seed: u64,
    pub elapsed: f64,
    pub executed_cost: f64,
    pub partial_cost: f64,
    pub idle_time: f64,
    pub collisions: usize,
    pub safe: bool,
    pub gain_evaluations: u64,
    /// Hash of the sensing and prediction stream, hex; absent when not recorded.
    pub stream_hash: Option<String>,
    pub final_metrics: FinalMetrics,
    /// Time averages over the mission.
    pub expected: Expected,
    pub time_to_goal: Vec<GoalTime>,
}

impl Summary {
    pub fn goal(&self, metric: &str, fraction: f64) -> Option<f64> {
        self.time_to_goal
            .iter()
            .find(|g| g.metric == metric && g.fraction == fraction)
            .and_then(|g| g.time)
    }
}

pub fn summarize(log: &MissionLog, seed: u64, thresholds: &[f64]) -> Result<Summary> {
    let series = |f: fn(&MetricsRecord) -> f64| log.series(f);
    let (se, sc, sm) = (series(|m| m.e), series(|m| m.c), series(|m| m.m));
    let expected = if log.elapsed > 0.0 && !log.snapshots.is_empty() {
        Expected {
            e: expected_performance(&se, 0.0, log.elapsed)?,
            c: expected_performance(&sc, 0.0, log.elapsed)?,
            m: expected_performance(&sm, 0.0, log.elapsed)?,
        }
    } else {
        log.snapshots.last().map_or_else(Expected::default, |s| Expected {
            e: s.metrics.e,
            c: s.metrics.c,
            m: s.metrics.m,
        })
    };
    let mut goals = Vec::new();
    for (name, s) in [("E", &se), ("C", &sc), ("M", &sm)] {
        for &f in thresholds {
            let time = if s.is_empty() { None } else { time_to_goal(s, f)? };
            goals.push(GoalTime {
                metric: name.into(),
                fraction: f,
                time,
            });
        }
    }
    Ok(Summary {
        status: log.status.name().into(),
        seed,
        elapsed: log.elapsed,
        executed_cost: log.executed_cost,
        partial_cost: log.partial_cost,
        idle_time: log.idle_time,
        collisions: log.collisions.len(),
        safe: log.is_safe(),
        gain_evaluations: log.gain_evaluations,
        stream_hash: (!log.stream.is_empty()).then(|| format!("{:016x}", stream_hash(&log.stream))),
        final_metrics: log.snapshots.last().map(|s| FinalMetrics::from(&s.metrics)).unwrap_or_default(),
        expected,
        time_to_goal: goals,
    })
}

/// Writes every artifact of one mission into `dir`.
pub fn write_run(dir: &Path, log: &MissionLog, seed: u64, opts: &OutputOptions) -> Result<Summary> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_metrics_csv(&dir.join("metrics.csv"), log)?;
    write_events_csv(&dir.join("events.csv"), log)?;
    if !log.stream.is_empty() {
        let f = fs::File::create(dir.join("stream.log"))?;
        let mut w = std::io::BufWriter::new(f);
        write_stream(&log.stream, &mut w)?;
        w.flush()?;
    }
    if opts.map {
        let f = fs::File::create(dir.join("map.txt"))?;
        let mut w = std::io::BufWriter::new(f);
        scx_core::io::write_map(&log.map, &mut w)?;
        w.flush()?;
    }
    let summary = summarize(log, seed, &opts.thresholds)?;
    fs::write(dir.join("summary.toml"), toml::to_string(&summary)?)?;
    if opts.plots {
        let pct = |f: fn(&MetricsRecord) -> f64| log.series(f).into_iter().map(|(t, v)| (t, 100.0 * v)).collect();
        let svg = line_chart(
            "coverage",
            "time [s]",
            &[
                Series {
                    name: "E",
                    points: pct(|m| m.e),
                },
                Series {
                    name: "C",
                    points: pct(|m| m.c),
                },
                Series {
                    name: "M",
                    points: pct(|m| m.m),
                },
            ],
            Some((0.0, 100.0)),
        );
        fs::write(dir.join("metrics.svg"), svg)?;
    }
    Ok(summary)
}
