//! Closed-loop exploration mission against a ground-truth world.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ClassCalibration, FusionStrategy, ScLayer};
use crate::grid::{Pose, VoxelIndex};
use crate::layered::MultiLayerMap;
use crate::measured::MeasuredMap;
use crate::metrics::{observable_space, snapshot, MetricsRecord, ObservableSpace};
use crate::oracle::{predict, OracleMode};
use crate::planner::{Expansion, Planner, PlannerConfig};
use crate::sensor::SensorModel;
use crate::sim::stream::{PredictionRecord, StreamEntry};
use crate::sim::world::GroundTruthWorld;
use crate::sim::{first_contact, render_depth, step_robot, RobotState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    /// Mission time budget in seconds.
    pub t_max: f64,
    /// Control step in seconds.
    pub dt: f64,
    pub sensor_rate_hz: f64,
    pub prediction_rate_hz: f64,
    /// Seconds between metric snapshots.
    pub snapshot_interval: f64,
    pub sensor: SensorModel,
    /// Depth images used for mapping have this many times the sensor's
    /// resolution along each axis.
    pub render_scale: usize,
    pub planner: PlannerConfig,
    pub fusion: FusionStrategy,
    pub calibration: ClassCalibration,
    pub tau: f64,
    pub seed: u64,
    /// No predictions are made without an oracle.
    pub oracle: Option<OracleMode>,
    /// Radius around the start assumed free before the first image.
    pub start_free_radius: f64,
    /// Keep the sensing and prediction stream in the log.
    pub record_stream: bool,
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            t_max: 600.0,
            dt: 0.05,
            sensor_rate_hz: 5.0,
            prediction_rate_hz: 1.24,
            snapshot_interval: 10.0,
            sensor: SensorModel::default(),
            render_scale: 2,
            planner: PlannerConfig::default(),
            fusion: FusionStrategy::Occupancy,
            calibration: ClassCalibration::default(),
            tau: 0.0,
            seed: 0,
            oracle: None,
            start_free_radius: 1.0,
            record_stream: true,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.dt, self.sensor_rate_hz, self.prediction_rate_hz, self.snapshot_interval];
        if !(self.t_max >= 0.0 && self.t_max.is_finite()) || pos.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(Error::InvalidArgument("mission times and rates must be positive and finite".into()));
        }
        if self.render_scale == 0 || !(0.0..=1.0).contains(&self.tau) || !(self.start_free_radius >= 0.0) {
            return Err(Error::InvalidArgument("render_scale, tau or start_free_radius out of range".into()));
        }
        self.sensor.validate()?;
        self.planner.validate()?;
        if let Some(OracleMode::Noisy(n)) = &self.oracle {
            n.validate()?;
        }
        Ok(())
    }

    /// Sensor model used for rendering and integration.
    pub fn mapping_sensor(&self) -> SensorModel {
        let s = self.sensor;
        s.with_resolution(s.width * self.render_scale, s.height * self.render_scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissionStatus {
    /// The time budget ran out.
    Completed,
    /// No view with positive utility for too many planning attempts.
    Stuck,
    Collision,
}

impl MissionStatus {
    pub fn name(self) -> &'static str {
        match self {
            MissionStatus::Completed => "completed",
            MissionStatus::Stuck => "stuck",
            MissionStatus::Collision => "collision",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// A new view was selected and the robot set off towards it.
    Execute,
    Arrive,
    /// The remaining edge stopped being traversable; the tree was reset.
    Blocked,
    Stuck,
    Collision,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Execute => "execute",
            EventKind::Arrive => "arrive",
            EventKind::Blocked => "blocked",
            EventKind::Stuck => "stuck",
            EventKind::Collision => "collision",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerEvent {
    pub t: f64,
    pub kind: EventKind,
    pub pose: Pose,
    pub tree_size: usize,
    pub utility: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub metrics: MetricsRecord,
    pub tree_size: usize,
    pub best_utility: f64,
}

#[derive(Clone, Debug)]
pub struct MissionLog {
    pub status: MissionStatus,
    /// Simulated seconds.
    pub elapsed: f64,
    /// Sum of the planner costs of every completed edge.
    pub executed_cost: f64,
    /// Seconds spent on the edge in progress when the mission ended.
    pub partial_cost: f64,
    /// Seconds without a target.
    pub idle_time: f64,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<PlannerEvent>,
    pub collisions: Vec<CollisionEvent>,
    pub stream: Vec<StreamEntry>,
    pub gain_evaluations: u64,
    pub map: MultiLayerMap,
}

impl MissionLog {
    /// `(t, f)` series of one metric over the snapshots.
    pub fn series(&self, f: impl Fn(&MetricsRecord) -> f64) -> Vec<(f64, f64)> {
        self.snapshots.iter().map(|s| (s.metrics.t, f(&s.metrics))).collect()
    }

    pub fn is_safe(&self) -> bool {
        self.collisions.is_empty()
    }
}

fn empty_map(world: &GroundTruthWorld, cfg: &MissionConfig) -> Result<MultiLayerMap> {
    let grid = *world.config();
    MultiLayerMap::new(
        MeasuredMap::new(grid, world.bounds()),
        ScLayer::new(grid, cfg.fusion, cfg.calibration.clone()),
        cfg.tau,
    )
}

/// Marks every voxel lying wholly inside the ball of radius `r` around `p` free.
fn mark_ball_free(map: &mut MultiLayerMap, p: &Pose, r: f64) {
    let grid = *map.config();
    let nu = grid.voxel_size();
    let inner = r - 0.5 * 3f64.sqrt() * nu;
    if inner <= 0.0 {
        return;
    }
    let c = grid.world_to_index(&p.position());
    let n = (r / nu).ceil() as i64;
    for k in -n..=n {
        for j in -n..=n {
            for i in -n..=n {
                let v = VoxelIndex::new(c.i + i, c.j + j, c.k + k);
                if (grid.index_to_center(v) - p.position()).norm() <= inner {
                    map.measured.mark_free(v);
                }
            }
        }
    }
}

/// Mission state carried between control steps.
struct Mission<'a> {
    world: &'a GroundTruthWorld,
    cfg: &'a MissionConfig,
    gt: ObservableSpace,
    map: MultiLayerMap,
    planner: Planner,
    rng: ChaCha8Rng,
    robot: RobotState,
    target: Option<Pose>,
    segment_cost: f64,
    version: u64,
    checked_version: u64,
    failures: usize,
    log_events: Vec<PlannerEvent>,
    snapshots: Vec<Snapshot>,
    collisions: Vec<CollisionEvent>,
    stream: Vec<StreamEntry>,
    executed_cost: f64,
    idle_time: f64,
}

impl Mission<'_> {
    fn event(&mut self, t: f64, kind: EventKind, pose: Pose) {
        let utility = self.planner.best_utility();
        self.log_events.push(PlannerEvent {
            t,
            kind,
            pose,
            tree_size: self.planner.tree().len(),
            utility,
        });
    }

    fn snapshot(&mut self, t: f64) -> Result<()> {
        let metrics = snapshot(t, &self.map, &self.gt, self.collisions.len())?;
        self.snapshots.push(Snapshot {
            metrics,
            tree_size: self.planner.tree().len(),
            best_utility: self.planner.best_utility(),
        });
        Ok(())
    }

    fn sense(&mut self, t: f64, sensor: &SensorModel) -> Result<()> {
        let pose = self.robot.pose;
        let depth = render_depth(&pose, self.world, sensor)?;
        self.map.measured.integrate_depth(&pose, &depth, sensor)?;
        self.version += 1;
        if self.cfg.record_stream {
            self.stream.push(StreamEntry::Sense { t, pose });
        }
        Ok(())
    }

    fn predict(&mut self, t: f64, mode: &OracleMode) -> Result<()> {
        let pose = self.robot.pose;
        let mut pred = predict(&pose, self.world, mode)?;
        pred.record_measured(&self.map.measured);
        self.map.sc.fuse(&pred, Some(&self.map.measured))?;
        self.version += 1;
        if self.cfg.record_stream {
            self.stream.push(StreamEntry::Predict(PredictionRecord::encode(t, &pred)));
        }
        Ok(())
    }

    /// Moves for one control step; returns `false` when the mission must stop.
    fn advance(&mut self, t: f64) -> bool {
        let limits = self.cfg.planner.limits();
        let r = self.cfg.planner.collision_radius;
        let mut budget = self.cfg.dt;
        while budget > 0.0 {
            let target = match self.target {
                Some(p) => p,
                None => match self.planner.select_and_execute(&self.map, self.version) {
                    Some(p) => {
                        self.failures = 0;
                        self.target = Some(p);
                        self.segment_cost = limits.edge_cost(&self.robot.pose, &p);
                        let now = t + self.cfg.dt - budget;
                        self.event(now, EventKind::Execute, p);
                        p
                    }
                    None => {
                        self.failures += 1;
                        break;
                    }
                },
            };
            if self.version != self.checked_version {
                self.checked_version = self.version;
                let here = self.robot.pose.position();
                let mode = self.cfg.planner.collision_mode;
                if !self.map.is_segment_traversable(&here, &target.position(), mode, r) {
                    let now = t + self.cfg.dt - budget;
                    self.executed_cost += self.robot.segment_elapsed();
                    self.robot.halt();
                    self.target = None;
                    self.planner.reset(self.robot.pose);
                    self.event(now, EventKind::Blocked, self.robot.pose);
                    break;
                }
            }
            let step = step_robot(&self.robot, &target, budget, &limits);
            let now = t + self.cfg.dt - step.unused;
            if let Some(p) = first_contact(self.world, &step.from, &step.to, r) {
                let pose = Pose::from_position(p, step.state.pose.yaw);
                self.collisions.push(CollisionEvent { t: now, pose });
                self.event(now, EventKind::Collision, pose);
                return false;
            }
            self.robot = step.state;
            budget = step.unused;
            if step.arrived {
                self.executed_cost += self.segment_cost;
                self.target = None;
                self.event(now, EventKind::Arrive, target);
            } else {
                break;
            }
        }
        self.idle_time += budget;
        true
    }
}

/// Runs one exploration mission.
///
/// Each control step senses and predicts when due, grows the planning tree,
/// then moves the robot, selecting a new view whenever it is idle. Snapshots are
/// taken at the configured cadence and once more at the end.
pub fn run_mission(world: &GroundTruthWorld, cfg: &MissionConfig) -> Result<MissionLog> {
    cfg.validate()?;
    let start = world.start();
    let mut map = empty_map(world, cfg)?;
    let planner = Planner::new(cfg.planner.clone(), &cfg.sensor, start)?;
    if cfg.t_max <= 0.0 {
        return Ok(MissionLog {
            status: MissionStatus::Completed,
            elapsed: 0.0,
            executed_cost: 0.0,
            partial_cost: 0.0,
            idle_time: 0.0,
            snapshots: Vec::new(),
            events: Vec::new(),
            collisions: Vec::new(),
            stream: Vec::new(),
            gain_evaluations: 0,
            map,
        });
    }
    let r_c = cfg.planner.collision_radius;
    if !world.bounds().contains(&start.position()) || !world.sphere_is_free(&start.position(), r_c) {
        return Err(Error::StartNotFree(world.config().world_to_index(&start.position())));
    }
    // shrink the assumed-free ball until it really is free
    let nu = world.config().voxel_size();
    let mut radius = cfg.start_free_radius;
    while radius > r_c && !world.sphere_is_free(&start.position(), radius) {
        radius -= nu;
    }
    mark_ball_free(&mut map, &start, radius.max(0.0));
    let gt = observable_space(world, world.config().world_to_index(&start.position()))?;
    let mut m = Mission {
        world,
        cfg,
        gt,
        map,
        planner,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        robot: RobotState::new(start),
        target: None,
        segment_cost: 0.0,
        version: 1,
        checked_version: 1,
        failures: 0,
        log_events: Vec::new(),
        snapshots: Vec::new(),
        collisions: Vec::new(),
        stream: Vec::new(),
        executed_cost: 0.0,
        idle_time: 0.0,
    };
    let oracle = cfg.oracle.clone().map(|o| match o {
        OracleMode::Noisy(mut n) => {
            n.seed = n.seed.wrapping_add(cfg.seed);
            OracleMode::Noisy(n)
        }
        p => p,
    });
    let sensor = cfg.mapping_sensor();
    let steps = (cfg.t_max / cfg.dt - 1e-9).ceil() as u64;
    let (sense_every, predict_every, snap_every) =
        (1.0 / cfg.sensor_rate_hz, 1.0 / cfg.prediction_rate_hz, cfg.snapshot_interval);
    let (mut next_sense, mut next_predict, mut next_snap) = (0.0, 0.0, 0.0);
    let eps = 1e-9;
    let mut status = MissionStatus::Completed;
    let mut elapsed = 0.0;
    for n in 0..steps {
        let t = n as f64 * cfg.dt;
        if t + eps >= next_sense {
            m.sense(t, &sensor)?;
            next_sense += sense_every;
        }
        if let Some(mode) = &oracle {
            if t + eps >= next_predict {
                m.predict(t, mode)?;
                next_predict += predict_every;
            }
        }
        if t + eps >= next_snap {
            m.snapshot(t)?;
            next_snap += snap_every;
        }
        for _ in 0..cfg.planner.expansions_per_step {
            if m.planner.expand(&m.map, m.version, &mut m.rng) == Expansion::Full {
                break;
            }
        }
        let ok = m.advance(t);
        elapsed = ((n + 1) as f64 * cfg.dt).min(cfg.t_max);
        if !ok {
            status = MissionStatus::Collision;
            break;
        }
        if m.target.is_none() && m.failures >= cfg.planner.stuck_attempts {
            status = MissionStatus::Stuck;
            let pose = m.robot.pose;
            m.event(elapsed, EventKind::Stuck, pose);
            break;
        }
    }
    if m.snapshots.last().map_or(true, |s| s.metrics.t < elapsed) {
        m.snapshot(elapsed)?;
    }
    Ok(MissionLog {
        status,
        elapsed,
        executed_cost: m.executed_cost,
        partial_cost: m.robot.segment_elapsed(),
        idle_time: m.idle_time,
        snapshots: m.snapshots,
        events: m.log_events,
        collisions: m.collisions,
        stream: m.stream,
        gain_evaluations: m.planner.gain_evaluations(),
        map: m.map,
    })
}
