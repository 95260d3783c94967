use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use scx_core::fusion::FusionStrategy;
use scx_core::layered::CollisionMode;
use scx_core::metrics::EvaluationSet;
use scx_core::oracle::{NoiseModel, OracleMode};
use scx_core::planner::{GainKind, RaycastMode};
use scx_core::sim::WorldSpec;
use scx_harness::config::{jobs_from_env, parse_enum, ExperimentSpec, OracleChoice, WorldSource};
use scx_harness::output::{fmt_opt, Summary};
use scx_harness::{cmd_batch, cmd_eval_map, cmd_gen_world, cmd_replay_fusion, cmd_run};

#[derive(Parser)]
#[command(name = "scx", version, about = "Exploration missions with scene-completion mapping")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured mission, once per repetition.
    Run(SpecArgs),
    /// Run every cell of a configuration matrix and aggregate the results.
    Batch {
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        matrix: MatrixArgs,
    },
    /// Fuse a recorded prediction stream with several strategies.
    ReplayFusion {
        #[command(flatten)]
        spec: SpecArgs,
        /// Stream written by a mission (stream.log).
        #[arg(long)]
        stream: PathBuf,
        #[arg(long, value_delimiter = ',', value_parser = parse_enum::<FusionStrategy>,
              default_value = "occupancy,probabilistic,counting,scfusion,nofusion")]
        strategies: Vec<FusionStrategy>,
    },
    /// Generate a procedural world file.
    GenWorld {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Recompute metrics of a saved map against a world.
    EvalMap {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long, value_parser = parse_enum::<EvaluationSet>, default_value = "all_observable")]
        set: EvaluationSet,
        /// Confidence threshold replacing the one stored with the map.
        #[arg(long)]
        tau: Option<f64>,
    },
}

/// Experiment settings. Each flag overrides the matching config-file field.
#[derive(Args, Default)]
struct SpecArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,

    /// World file; replaces a procedural world.
    #[arg(long)]
    world: Option<PathBuf>,
    #[arg(long)]
    world_seed: Option<u64>,
    #[arg(long)]
    world_per_repetition: Option<bool>,
    #[arg(long)]
    rooms: Option<usize>,
    #[arg(long)]
    clutter_per_room: Option<usize>,
    /// Outer world extent in metres, `x,y,z`.
    #[arg(long, value_delimiter = ',')]
    size: Option<Vec<f64>>,
    #[arg(long)]
    extruded: Option<bool>,

    #[arg(long)]
    repetitions: Option<usize>,
    /// Seed of the first repetition.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "SCX_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Time-to-goal fractions, e.g. `0.5,0.8`.
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long)]
    plots: Option<bool>,
    #[arg(long)]
    write_map: Option<bool>,

    #[arg(long)]
    t_max: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    sensor_rate_hz: Option<f64>,
    #[arg(long)]
    prediction_rate_hz: Option<f64>,
    #[arg(long)]
    snapshot_interval: Option<f64>,
    #[arg(long)]
    render_scale: Option<usize>,
    #[arg(long, value_parser = parse_enum::<FusionStrategy>)]
    fusion: Option<FusionStrategy>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = parse_enum::<OracleChoice>)]
    oracle: Option<OracleChoice>,
    #[arg(long)]
    miss_rate: Option<f64>,
    #[arg(long)]
    hallucination_rate: Option<f64>,
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    correlation_radius: Option<usize>,
    #[arg(long)]
    start_free_radius: Option<f64>,
    #[arg(long)]
    record_stream: Option<bool>,

    #[arg(long, value_parser = parse_enum::<GainKind>)]
    gain: Option<GainKind>,
    #[arg(long)]
    sampling_radius: Option<f64>,
    #[arg(long)]
    max_edge_length: Option<f64>,
    #[arg(long)]
    yaw_samples: Option<usize>,
    #[arg(long)]
    fan_width: Option<usize>,
    #[arg(long)]
    fan_height: Option<usize>,
    #[arg(long, value_parser = parse_enum::<RaycastMode>)]
    raycast_mode: Option<RaycastMode>,
    #[arg(long, value_parser = parse_enum::<CollisionMode>)]
    collision_mode: Option<CollisionMode>,
    #[arg(long)]
    collision_radius: Option<f64>,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    a_max: Option<f64>,
    #[arg(long)]
    yaw_rate_max_deg: Option<f64>,
    #[arg(long)]
    max_tree_size: Option<usize>,
    #[arg(long)]
    expansions_per_step: Option<usize>,
    #[arg(long)]
    stuck_attempts: Option<usize>,
    #[arg(long)]
    rewire_budget: Option<usize>,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<GainKind>)]
    gains: Option<Vec<GainKind>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<FusionStrategy>)]
    fusions: Option<Vec<FusionStrategy>>,
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<OracleChoice>)]
    oracles: Option<Vec<OracleChoice>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<CollisionMode>)]
    collision_modes: Option<Vec<CollisionMode>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_enum::<RaycastMode>)]
    raycast_modes: Option<Vec<RaycastMode>>,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

impl SpecArgs {
    fn build(self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(p) => ExperimentSpec::load(p)?,
            None => ExperimentSpec::new(WorldSource::Procedural {
                seed: 0,
                per_repetition: false,
                spec: WorldSpec::default(),
            }),
        };
        spec.apply_env();

        if let Some(p) = self.world {
            spec.world = WorldSource::File(p);
        }
        let procedural = self.world_seed.is_some()
            || self.world_per_repetition.is_some()
            || self.rooms.is_some()
            || self.clutter_per_room.is_some()
            || self.size.is_some()
            || self.extruded.is_some();
        if procedural {
            let WorldSource::Procedural {
                seed,
                per_repetition,
                spec: ws,
            } = &mut spec.world
            else {
                bail!("procedural world flags given together with a world file");
            };
            set(seed, self.world_seed);
            set(per_repetition, self.world_per_repetition);
            set(&mut ws.rooms, self.rooms);
            set(&mut ws.clutter_per_room, self.clutter_per_room);
            set(&mut ws.extruded, self.extruded);
            if let Some(s) = self.size {
                let Ok(s) = <[f64; 3]>::try_from(s) else {
                    bail!("--size takes three values, x,y,z");
                };
                ws.size = s;
            }
        }

        set(&mut spec.repetitions, self.repetitions);
        set(&mut spec.seed_base, self.seed);
        set(&mut spec.output_dir, self.output_dir);
        set(&mut spec.output.thresholds, self.thresholds);
        set(&mut spec.output.plots, self.plots);
        set(&mut spec.output.map, self.write_map);

        let m = &mut spec.mission;
        set(&mut m.t_max, self.t_max);
        set(&mut m.dt, self.dt);
        set(&mut m.sensor_rate_hz, self.sensor_rate_hz);
        set(&mut m.prediction_rate_hz, self.prediction_rate_hz);
        set(&mut m.snapshot_interval, self.snapshot_interval);
        set(&mut m.render_scale, self.render_scale);
        set(&mut m.fusion, self.fusion);
        set(&mut m.tau, self.tau);
        set(&mut m.start_free_radius, self.start_free_radius);
        set(&mut m.record_stream, self.record_stream);
        let noise_flags = self.miss_rate.is_some()
            || self.hallucination_rate.is_some()
            || self.noise_seed.is_some()
            || self.correlation_radius.is_some();
        let choice = self.oracle.or(noise_flags.then_some(OracleChoice::Noisy));
        match choice {
            Some(OracleChoice::None) => m.oracle = None,
            Some(OracleChoice::Perfect) => m.oracle = Some(OracleMode::Perfect),
            Some(OracleChoice::Noisy) => {
                let mut n = match &m.oracle {
                    Some(OracleMode::Noisy(n)) => n.clone(),
                    _ => NoiseModel::default(),
                };
                set(&mut n.miss_rate, self.miss_rate);
                set(&mut n.hallucination_rate, self.hallucination_rate);
                set(&mut n.seed, self.noise_seed);
                set(&mut n.correlation_radius, self.correlation_radius);
                m.oracle = Some(OracleMode::Noisy(n));
            }
            None => {}
        }

        let p = &mut m.planner;
        set(&mut p.gain, self.gain);
        set(&mut p.sampling_radius, self.sampling_radius);
        set(&mut p.max_edge_length, self.max_edge_length);
        set(&mut p.yaw_samples, self.yaw_samples);
        set(&mut p.fan_width, self.fan_width);
        set(&mut p.fan_height, self.fan_height);
        set(&mut p.raycast_mode, self.raycast_mode);
        set(&mut p.collision_mode, self.collision_mode);
        set(&mut p.collision_radius, self.collision_radius);
        set(&mut p.v_max, self.v_max);
        set(&mut p.a_max, self.a_max);
        set(&mut p.yaw_rate_max_deg, self.yaw_rate_max_deg);
        set(&mut p.max_tree_size, self.max_tree_size);
        set(&mut p.expansions_per_step, self.expansions_per_step);
        set(&mut p.stuck_attempts, self.stuck_attempts);
        set(&mut p.rewire_budget, self.rewire_budget);

        spec.validate()?;
        Ok(spec)
    }
}

fn print_summary(label: &str, s: &Summary) {
    let goals: Vec<String> = s
        .time_to_goal
        .iter()
        .map(|g| format!("T_{}={}:{}", g.metric, g.fraction, fmt_opt(g.time)))
        .collect();
    println!(
        "{label}status={} elapsed={} E={:.4} C={:.4} M={:.4} collisions={} {}",
        s.status,
        s.elapsed,
        s.final_metrics.e,
        s.final_metrics.c,
        s.final_metrics.m,
        s.collisions,
        goals.join(" ")
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Run(args) => {
            let print = args.print_config;
            let spec = args.build()?;
            if print {
                print!("{}", spec.to_toml()?);
                return Ok(());
            }
            for (r, s) in cmd_run(&spec)?.iter().enumerate() {
                print_summary(&format!("rep {r}: "), s);
            }
        }
        Cmd::Batch { spec, matrix } => {
            let print = spec.print_config;
            let mut spec = spec.build()?;
            let m = &mut spec.matrix;
            set(&mut m.gains, matrix.gains.map(Some));
            set(&mut m.fusions, matrix.fusions.map(Some));
            set(&mut m.taus, matrix.taus.map(Some));
            set(&mut m.oracles, matrix.oracles.map(Some));
            set(&mut m.collision_modes, matrix.collision_modes.map(Some));
            set(&mut m.raycast_modes, matrix.raycast_modes.map(Some));
            if print {
                print!("{}", spec.to_toml()?);
                return Ok(());
            }
            let report = cmd_batch(&spec, jobs_from_env()?)?;
            for (c, label) in report.labels.iter().enumerate() {
                let ok = report.cell_runs(c).count();
                let failed = report.runs.iter().filter(|r| r.cell == c && r.result.is_err()).count();
                println!("cell {c} [{label}]: {ok} ok, {failed} failed");
            }
            for f in report.failures() {
                eprintln!("cell {} rep {} failed: {}", f.cell, f.rep, f.result.as_ref().unwrap_err());
            }
            if report.runs.iter().all(|r| r.result.is_err()) {
                bail!("every run of the batch failed");
            }
        }
        Cmd::ReplayFusion { spec, stream, strategies } => {
            let spec = spec.build()?;
            for r in cmd_replay_fusion(&spec, &stream, &strategies)? {
                let last = r.predicted_only.last();
                println!(
                    "{}: R_o(predicted)={} P_o(predicted)={} sc_occupied={} sc_free={}",
                    r.strategy.name(),
                    fmt_opt(last.and_then(|m| m.r_o)),
                    fmt_opt(last.and_then(|m| m.p_o)),
                    r.sc_occupied,
                    r.sc_free
                );
            }
        }
        Cmd::GenWorld { spec, out } => {
            let spec = spec.build()?;
            let WorldSource::Procedural { seed, spec: ws, .. } = &spec.world else {
                bail!("gen-world needs a procedural world");
            };
            let w = cmd_gen_world(ws, *seed, &out)?;
            let [x, y, z] = w.dims();
            println!("wrote {} ({x}x{y}x{z} voxels, {} occupied)", out.display(), w.occupied_count());
        }
        Cmd::EvalMap { map, world, set, tau } => {
            let m = cmd_eval_map(&map, &world, set, tau)?;
            println!("E,C,M,P,P_o,P_f,R_o,R_f");
            println!(
                "{},{},{},{},{},{},{},{}",
                m.e,
                m.c,
                m.m,
                fmt_opt(m.p),
                fmt_opt(m.p_o),
                fmt_opt(m.p_f),
                fmt_opt(m.r_o),
                fmt_opt(m.r_f)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
