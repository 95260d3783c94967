//! The subcommands, as library functions.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use rayon::prelude::*;

use scx_core::fusion::FusionStrategy;
use scx_core::grid::VoxelState;
use scx_core::metrics::{observable_space, snapshot_with, EvaluationSet, MetricsRecord};
use scx_core::sim::stream::{read_stream, replay_fusion, replay_with_metrics, stream_hash};
use scx_core::sim::{generate_world, run_mission, GroundTruthWorld, MissionConfig, MissionLog, WorldSpec};

use crate::config::{load_world_file, ExperimentSpec, OutputOptions};
use crate::output::{fmt_opt, write_records_csv, write_run, Summary};

/// Runs one mission and writes its artifacts into `dir`.
pub fn run_one(world: &GroundTruthWorld, mission: &MissionConfig, dir: &Path, opts: &OutputOptions) -> Result<(MissionLog, Summary)> {
    let log = run_mission(world, mission)?;
    let summary = write_run(dir, &log, mission.seed, opts)?;
    Ok((log, summary))
}

fn rep_dir(base: &Path, reps: usize, r: usize) -> PathBuf {
    if reps == 1 {
        base.to_path_buf()
    } else {
        base.join(format!("rep_{r:03}"))
    }
}

/// `run`: every repetition of the base mission. Artifacts of repetition `r`
/// go to `output_dir/rep_<r>`, or straight into `output_dir` for a single run.
pub fn cmd_run(spec: &ExperimentSpec) -> Result<Vec<Summary>> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir).with_context(|| format!("cannot create {}", spec.output_dir.display()))?;
    fs::write(spec.output_dir.join("config.toml"), spec.to_toml()?)?;
    let mut out = Vec::with_capacity(spec.repetitions);
    for r in 0..spec.repetitions {
        let world = spec.world.load(r)?;
        let mission = spec.mission_for(&spec.mission, r);
        let dir = rep_dir(&spec.output_dir, spec.repetitions, r);
        let (_, summary) = run_one(&world, &mission, &dir, &spec.output)?;
        out.push(summary);
    }
    Ok(out)
}

/// Outcome of one batch run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub cell: usize,
    pub rep: usize,
    pub seed: u64,
    pub result: Result<Summary, String>,
}

#[derive(Clone, Debug)]
pub struct BatchReport {
    pub labels: Vec<String>,
    pub runs: Vec<RunRecord>,
}

impl BatchReport {
    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.result.is_err())
    }

    pub fn cell_runs(&self, cell: usize) -> impl Iterator<Item = &Summary> {
        self.runs.iter().filter(move |r| r.cell == cell).filter_map(|r| r.result.as_ref().ok())
    }
}

/// `batch`: every cell of the matrix times every repetition, on `jobs`
/// threads. A failing run is recorded and the batch carries on.
pub fn cmd_batch(spec: &ExperimentSpec, jobs: usize) -> Result<BatchReport> {
    spec.validate()?;
    let cells = spec.matrix.cells(&spec.mission)?;
    fs::create_dir_all(&spec.output_dir).with_context(|| format!("cannot create {}", spec.output_dir.display()))?;
    fs::write(spec.output_dir.join("config.toml"), spec.to_toml()?)?;

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.repetitions).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let runs: Vec<RunRecord> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, r)| {
                let mission = spec.mission_for(&cells[c].mission, r);
                let dir = spec.output_dir.join(format!("cell_{c:02}")).join(format!("rep_{r:03}"));
                let result = spec
                    .world
                    .load(r)
                    .and_then(|w| run_one(&w, &mission, &dir, &spec.output))
                    .map(|(_, s)| s)
                    .map_err(|e| format!("{e:#}"));
                RunRecord {
                    cell: c,
                    rep: r,
                    seed: mission.seed,
                    result,
                }
            })
            .collect()
    });
    let report = BatchReport {
        labels: cells.into_iter().map(|c| c.label).collect(),
        runs,
    };
    write_runs_csv(&spec.output_dir.join("runs.csv"), &report)?;
    write_aggregate_csv(&spec.output_dir.join("aggregate.csv"), &report, &spec.output.thresholds)?;
    Ok(report)
}

fn write_runs_csv(path: &Path, report: &BatchReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cell", "label", "rep", "seed", "status", "elapsed", "E", "C", "M", "collisions", "stream_hash", "error"])?;
    for r in &report.runs {
        let label = &report.labels[r.cell];
        let mut row = vec![r.cell.to_string(), label.clone(), r.rep.to_string(), r.seed.to_string()];
        match &r.result {
            Ok(s) => row.extend([
                s.status.clone(),
                s.elapsed.to_string(),
                s.final_metrics.e.to_string(),
                s.final_metrics.c.to_string(),
                s.final_metrics.m.to_string(),
                s.collisions.to_string(),
                s.stream_hash.clone().unwrap_or_else(|| "NA".into()),
                String::new(),
            ]),
            Err(e) => {
                row.push("error".into());
                row.extend(std::iter::repeat("NA".to_string()).take(6));
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean and sample standard deviation; `None` without values.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    Some((mean, var.sqrt()))
}

fn write_aggregate_csv(path: &Path, report: &BatchReport, thresholds: &[f64]) -> Result<()> {
    type Pick = Box<dyn Fn(&Summary) -> Option<f64>>;
    let mut columns: Vec<(String, Pick)> = vec![
        ("E".into(), Box::new(|s: &Summary| Some(s.final_metrics.e))),
        ("C".into(), Box::new(|s: &Summary| Some(s.final_metrics.c))),
        ("M".into(), Box::new(|s: &Summary| Some(s.final_metrics.m))),
        ("P".into(), Box::new(|s: &Summary| s.final_metrics.p)),
        ("P_o".into(), Box::new(|s: &Summary| s.final_metrics.p_o)),
        ("P_f".into(), Box::new(|s: &Summary| s.final_metrics.p_f)),
        ("R_o".into(), Box::new(|s: &Summary| s.final_metrics.r_o)),
        ("R_f".into(), Box::new(|s: &Summary| s.final_metrics.r_f)),
        ("expected_E".into(), Box::new(|s: &Summary| Some(s.expected.e))),
        ("expected_C".into(), Box::new(|s: &Summary| Some(s.expected.c))),
        ("expected_M".into(), Box::new(|s: &Summary| Some(s.expected.m))),
        ("collisions".into(), Box::new(|s: &Summary| Some(s.collisions as f64))),
        ("elapsed".into(), Box::new(|s: &Summary| Some(s.elapsed))),
    ];
    for metric in ["E", "C", "M"] {
        for &f in thresholds {
            columns.push((
                format!("T_{metric}_{f}"),
                Box::new(move |s: &Summary| s.goal(metric, f)),
            ));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string(), "label".into(), "runs".into(), "failures".into()];
    for (name, _) in &columns {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
        header.push(format!("{name}_n"));
    }
    w.write_record(&header)?;
    for (c, label) in report.labels.iter().enumerate() {
        let summaries: Vec<&Summary> = report.cell_runs(c).collect();
        let failures = report.runs.iter().filter(|r| r.cell == c && r.result.is_err()).count();
        let mut row = vec![c.to_string(), label.clone(), summaries.len().to_string(), failures.to_string()];
        for (_, pick) in &columns {
            let vals: Vec<f64> = summaries.iter().filter_map(|s| pick(s)).collect();
            let ms = mean_std(&vals);
            row.push(fmt_opt(ms.map(|m| m.0)));
            row.push(fmt_opt(ms.map(|m| m.1)));
            row.push(vals.len().to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-strategy result of a replay.
#[derive(Clone, Debug)]
pub struct ReplayResult {
    pub strategy: FusionStrategy,
    pub all: Vec<MetricsRecord>,
    pub predicted_only: Vec<MetricsRecord>,
    /// SC voxels in the occupied and free state at the configured threshold.
    pub sc_occupied: usize,
    pub sc_free: usize,
}

/// Snapshot times of a replay: every `interval` seconds up to the last record,
/// plus the last record itself.
pub fn replay_times(last: f64, interval: f64) -> Vec<f64> {
    let mut times: Vec<f64> = (0..).map(|n| n as f64 * interval).take_while(|&t| t < last).collect();
    times.push(last.max(0.0));
    times
}

/// `replay-fusion`: fuses one recorded stream with every strategy and
/// evaluates the maps over time, writing `replay_<strategy>.csv` and
/// `replay_summary.csv` into the output directory.
pub fn cmd_replay_fusion(spec: &ExperimentSpec, stream: &Path, strategies: &[FusionStrategy]) -> Result<Vec<ReplayResult>> {
    ensure!(!strategies.is_empty(), "no fusion strategies given");
    let f = fs::File::open(stream).with_context(|| format!("cannot open stream {}", stream.display()))?;
    let entries = read_stream(BufReader::new(f)).with_context(|| format!("cannot read stream {}", stream.display()))?;
    let world = spec.world.load(0)?;
    let cfg = *world.config();
    let gt = observable_space(&world, cfg.world_to_index(&world.start().position()))?;
    let sensor = spec.mission.mapping_sensor();
    let last = entries.last().map_or(0.0, |e| e.t());
    let times = replay_times(last, spec.mission.snapshot_interval);
    let cal = &spec.mission.calibration;
    let tau = spec.mission.tau;

    fs::create_dir_all(&spec.output_dir).with_context(|| format!("cannot create {}", spec.output_dir.display()))?;
    let mut results = Vec::new();
    for &s in strategies {
        let all = replay_with_metrics(&entries, &world, &sensor, s, cal, tau, &gt, &times, EvaluationSet::AllObservable)?;
        let predicted_only = replay_with_metrics(&entries, &world, &sensor, s, cal, tau, &gt, &times, EvaluationSet::PredictedOnly)?;
        let sc = replay_fusion(&entries, cfg, s, cal)?;
        let (l_o, l_f) = scx_core::layered::confidence_cutoffs(tau);
        let rows: Vec<(&str, &MetricsRecord)> = all
            .iter()
            .map(|m| ("all_observable", m))
            .chain(predicted_only.iter().map(|m| ("predicted_only", m)))
            .collect();
        write_records_csv(&spec.output_dir.join(format!("replay_{}.csv", s.name())), &rows)?;
        results.push(ReplayResult {
            strategy: s,
            sc_occupied: sc.count_state(l_o, l_f, VoxelState::Occupied),
            sc_free: sc.count_state(l_o, l_f, VoxelState::Free),
            all,
            predicted_only,
        });
    }

    let mut w = csv::Writer::from_path(spec.output_dir.join("replay_summary.csv"))?;
    w.write_record(["strategy", "stream_hash", "E", "C", "P", "P_o", "R_o", "predicted_P_o", "predicted_R_o", "sc_occupied", "sc_free"])?;
    let hash = format!("{:016x}", stream_hash(&entries));
    for r in &results {
        let (a, p) = (r.all.last(), r.predicted_only.last());
        w.write_record([
            r.strategy.name().to_string(),
            hash.clone(),
            fmt_opt(a.map(|m| m.e)),
            fmt_opt(a.map(|m| m.c)),
            fmt_opt(a.and_then(|m| m.p)),
            fmt_opt(a.and_then(|m| m.p_o)),
            fmt_opt(a.and_then(|m| m.r_o)),
            fmt_opt(p.and_then(|m| m.p_o)),
            fmt_opt(p.and_then(|m| m.r_o)),
            r.sc_occupied.to_string(),
            r.sc_free.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(results)
}

/// `gen-world`: writes a procedural world to `out`.
pub fn cmd_gen_world(spec: &WorldSpec, seed: u64, out: &Path) -> Result<GroundTruthWorld> {
    let world = generate_world(spec, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(out).with_context(|| format!("cannot write {}", out.display()))?;
    let mut w = std::io::BufWriter::new(f);
    scx_core::io::write_world(&world, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(world)
}

/// `eval-map`: metrics of a saved map against a world, optionally at a
/// different confidence threshold.
pub fn cmd_eval_map(map: &Path, world: &Path, set: EvaluationSet, tau: Option<f64>) -> Result<MetricsRecord> {
    let f = fs::File::open(map).with_context(|| format!("cannot open map {}", map.display()))?;
    let mut m = scx_core::io::read_map(BufReader::new(f)).with_context(|| format!("cannot read map {}", map.display()))?;
    if let Some(t) = tau {
        m.set_tau(t)?;
    }
    let world = load_world_file(world)?;
    let cfg = *world.config();
    let gt = observable_space(&world, cfg.world_to_index(&world.start().position()))?;
    Ok(snapshot_with(0.0, &m, &gt, 0, set)?)
}
