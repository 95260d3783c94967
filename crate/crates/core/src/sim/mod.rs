//! Ground-truth simulation: depth rendering, robot motion and the mission loop.

pub mod mission;
pub mod stream;
pub mod world;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::grid::{normalize_angle, BlockCache, Pose};
use crate::fusion::EMPTY_CLASS;
use crate::planner::MotionLimits;
use crate::raycast::RayTraversal;
use crate::sensor::{DepthImage, SensorModel};

pub use mission::{run_mission, CollisionEvent, EventKind, MissionConfig, MissionLog, MissionStatus, PlannerEvent, Snapshot};
pub use stream::{PredictionRecord, StreamEntry};
pub use world::{generate_world, GroundTruthWorld, WorldSpec};

/// Range to the first ground-truth occupied voxel along every pixel ray, or
/// `+∞` when there is none within the sensor range.
pub fn render_depth(pose: &Pose, world: &GroundTruthWorld, sensor: &SensorModel) -> Result<DepthImage> {
    if !world.bounds().contains(&pose.position()) {
        return Err(Error::OutOfBounds {
            x: pose.x,
            y: pose.y,
            z: pose.z,
        });
    }
    let cfg = *world.config();
    let origin = pose.position();
    let mut img = DepthImage::new(sensor.width, sensor.height);
    let mut cache = BlockCache::default();
    for v in 0..sensor.height {
        for u in 0..sensor.width {
            let dir = sensor.ray_direction(pose.yaw, u, v);
            let hit = RayTraversal::new_unit(origin, dir, sensor.max_range, &cfg)
                .find(|s| world.label_cached(s.voxel, &mut cache) != EMPTY_CLASS);
            if let Some(s) = hit {
                img.set(u, v, s.t_enter);
            }
        }
    }
    Ok(img)
}

/// Robot pose plus the edge it is currently flying.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotState {
    pub pose: Pose,
    segment: Option<(Pose, Pose)>,
    /// Seconds spent on the current edge.
    elapsed: f64,
}

/// Result of advancing the robot by one time slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobotStep {
    pub state: RobotState,
    /// Positions at the start and end of the slice.
    pub from: Point3<f64>,
    pub to: Point3<f64>,
    pub arrived: bool,
    /// Part of the slice left over after arrival.
    pub unused: f64,
}

impl RobotState {
    pub fn new(pose: Pose) -> Self {
        Self {
            pose,
            segment: None,
            elapsed: 0.0,
        }
    }

    /// Seconds spent on the current edge so far.
    pub fn segment_elapsed(&self) -> f64 {
        self.elapsed
    }

    /// Stops in place, dropping the current edge.
    pub fn halt(&mut self) {
        self.segment = None;
        self.elapsed = 0.0;
    }
}

/// Advances the robot towards `target` for `dt` seconds. Translation follows a
/// rest-to-rest velocity ramp along the straight edge while yaw turns at the
/// maximum rate, so an edge takes exactly its planner cost.
pub fn step_robot(state: &RobotState, target: &Pose, dt: f64, limits: &MotionLimits) -> RobotStep {
    let (start, elapsed) = match state.segment {
        Some((s, t)) if t == *target => (s, state.elapsed),
        _ => (state.pose, 0.0),
    };
    let cost = limits.edge_cost(&start, target);
    let t = elapsed + dt;
    let from = state.pose.position();
    if t >= cost {
        let next = RobotState::new(*target);
        return RobotStep {
            state: next,
            from,
            to: target.position(),
            arrived: true,
            unused: t - cost,
        };
    }
    let d = start.distance(target);
    let s = limits.translation_distance_at(d, t);
    let p = if d > 0.0 {
        start.position() + (target.position() - start.position()) * (s / d)
    } else {
        start.position()
    };
    let dyaw = normalize_angle(target.yaw - start.yaw);
    let turned = (limits.yaw_rate_max * t).min(dyaw.abs());
    let yaw = normalize_angle(start.yaw + dyaw.signum() * turned);
    let next = RobotState {
        pose: Pose::from_position(p, yaw),
        segment: Some((start, *target)),
        elapsed: t,
    };
    RobotStep {
        state: next,
        from,
        to: p,
        arrived: false,
        unused: 0.0,
    }
}

/// First point of the segment from `a` to `b` where a sphere of radius `r`
/// touches ground-truth occupied space, sampled at most a quarter voxel apart.
pub fn first_contact(world: &GroundTruthWorld, a: &Point3<f64>, b: &Point3<f64>, r: f64) -> Option<Point3<f64>> {
    let step = world.config().voxel_size() / 4.0;
    let len = (b - a).norm();
    let n = (len / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|i| a + (b - a) * (i as f64 / n as f64))
        .find(|p| !world.sphere_is_free(p, r))
}
