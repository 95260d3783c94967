//! Velocity-ramp motion model shared by edge costs and the simulated robot.

use serde::{Deserialize, Serialize};

use crate::grid::Pose;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionLimits {
    /// m/s
    pub v_max: f64,
    /// m/s², `f64::INFINITY` for instantaneous velocity changes
    pub a_max: f64,
    /// rad/s
    pub yaw_rate_max: f64,
}

impl Default for MotionLimits {
    fn default() -> Self {
        Self {
            v_max: 1.0,
            a_max: 2.0,
            yaw_rate_max: 90f64.to_radians(),
        }
    }
}

impl MotionLimits {
    /// Duration of a rest-to-rest trapezoidal (or triangular) profile over `d`.
    pub fn translation_time(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        let (v, a) = (self.v_max, self.a_max);
        if a.is_infinite() {
            return d / v;
        }
        if d >= v * v / a {
            d / v + v / a
        } else {
            2.0 * (d / a).sqrt()
        }
    }

    /// Distance covered after `t` seconds of the profile over `d`.
    pub fn translation_distance_at(&self, d: f64, t: f64) -> f64 {
        if d <= 0.0 || t <= 0.0 {
            return 0.0;
        }
        let total = self.translation_time(d);
        if t >= total {
            return d;
        }
        let (v, a) = (self.v_max, self.a_max);
        if a.is_infinite() {
            return v * t;
        }
        // peak speed of the profile, reached after t_ramp
        let peak = v.min((a * d).sqrt());
        let t_ramp = peak / a;
        if t <= t_ramp {
            0.5 * a * t * t
        } else if t <= total - t_ramp {
            0.5 * peak * t_ramp + peak * (t - t_ramp)
        } else {
            let r = total - t;
            d - 0.5 * a * r * r
        }
    }

    pub fn yaw_time(&self, dyaw: f64) -> f64 {
        dyaw.abs() / self.yaw_rate_max
    }

    /// Time to move between two poses, translating and turning simultaneously.
    pub fn edge_cost(&self, from: &Pose, to: &Pose) -> f64 {
        self.translation_time(from.distance(to)).max(self.yaw_time(from.yaw_distance(to)))
    }
}
