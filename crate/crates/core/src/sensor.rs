//! Depth sensor geometry.
//!
//! Pixels are laid out on a uniform angular grid: column `u` of `width` spans the
//! horizontal field of view left to right, row `v` of `height` spans the vertical
//! field of view top to bottom. Each pixel stores the metric range along its
//! ray, or `+∞` when nothing was hit within `max_range`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::normalize_angle;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub max_range: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            hfov_deg: 90.0,
            vfov_deg: 73.7,
            max_range: 5.0,
            width: 90,
            height: 68,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let ok = self.hfov_deg > 0.0
            && self.hfov_deg <= 360.0
            && self.vfov_deg > 0.0
            && self.vfov_deg < 180.0
            && self.max_range > 0.0
            && self.max_range.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid sensor model {self:?}")))
        }
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    /// Azimuth offset of column `u` relative to the sensor yaw (left positive).
    #[inline]
    pub fn azimuth(&self, u: usize) -> f64 {
        let h = self.hfov_deg.to_radians();
        0.5 * h - (u as f64 + 0.5) * h / self.width as f64
    }

    /// Elevation of row `v` (up positive).
    #[inline]
    pub fn elevation(&self, v: usize) -> f64 {
        let e = self.vfov_deg.to_radians();
        0.5 * e - (v as f64 + 0.5) * e / self.height as f64
    }

    /// Unit direction of pixel `(u, v)` for a sensor with world yaw `yaw`.
    #[inline]
    pub fn ray_direction(&self, yaw: f64, u: usize, v: usize) -> Vector3<f64> {
        direction(yaw + self.azimuth(u), self.elevation(v))
    }

    /// All ray directions, row-major (`v` outer, `u` inner).
    pub fn directions(&self, yaw: f64) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.num_pixels());
        for v in 0..self.height {
            for u in 0..self.width {
                out.push(self.ray_direction(yaw, u, v));
            }
        }
        out
    }

    /// Whether a world direction lies inside the field of view of a sensor at `yaw`.
    pub fn in_fov(&self, yaw: f64, dir: &Vector3<f64>) -> bool {
        let horiz = (dir.x * dir.x + dir.y * dir.y).sqrt();
        let el = dir.z.atan2(horiz);
        let az = normalize_angle(dir.y.atan2(dir.x) - yaw);
        az.abs() <= 0.5 * self.hfov_deg.to_radians() && el.abs() <= 0.5 * self.vfov_deg.to_radians()
    }
}

/// Unit vector from azimuth (around +z, from +x) and elevation.
#[inline]
pub fn direction(azimuth: f64, elevation: f64) -> Vector3<f64> {
    let (sa, ca) = azimuth.sin_cos();
    let (se, ce) = elevation.sin_cos();
    Vector3::new(ce * ca, ce * sa, se)
}

/// Range image produced by the simulated camera.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major ranges in metres; `f64::INFINITY` marks "no return".
    pub ranges: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ranges: vec![f64::INFINITY; width * height],
        }
    }

    pub fn empty() -> Self {
        Self::new(0, 0)
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.ranges[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, range: f64) {
        self.ranges[v * self.width + u] = range;
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centre_ray_points_along_yaw() {
        let s = SensorModel::default().with_resolution(3, 3);
        let d = s.ray_direction(0.5, 1, 1);
        assert!((d - Vector3::new(0.5f64.cos(), 0.5f64.sin(), 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pixel_rays_are_inside_fov() {
        let s = SensorModel::default();
        for d in s.directions(1.0) {
            assert!((d.norm() - 1.0).abs() < 1e-12);
            assert!(s.in_fov(1.0, &d));
        }
        assert!(!s.in_fov(0.0, &Vector3::new(-1.0, 0.0, 0.0)));
    }
}
