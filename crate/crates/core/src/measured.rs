//! Sensor-measurement layer.
//!
//! Depth images are integrated by carving each pixel ray through the grid:
//! voxels before the return receive a free update, the voxel containing the
//! return receives an occupied update, and rays without a return carve free
//! space up to the maximum range. Only the ternary state derived from the
//! log-odds is consumed downstream.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BlockCache, BlockHashGrid, Bounds, GridConfig, Pose, VoxelIndex, VoxelState};
use crate::raycast::RayTraversal;
use crate::sensor::{DepthImage, SensorModel};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeasuredVoxel {
    pub log_odds: f32,
    pub observed: bool,
}

impl MeasuredVoxel {
    #[inline]
    pub fn state(&self) -> VoxelState {
        if !self.observed {
            VoxelState::Unknown
        } else if self.log_odds >= 0.0 {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        }
    }
}

/// Log-odds increments and clamping bounds of the measured layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyParams {
    pub hit: f32,
    pub miss: f32,
    pub min: f32,
    pub max: f32,
}

impl Default for OccupancyParams {
    fn default() -> Self {
        Self {
            hit: (0.7f32 / 0.3).ln(),
            miss: (0.3f32 / 0.7).ln(),
            min: -10.0,
            max: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IntegrationStats {
    pub rays: usize,
    pub free_updates: usize,
    pub occupied_updates: usize,
}

#[derive(Clone, Debug)]
pub struct MeasuredMap {
    grid: BlockHashGrid<MeasuredVoxel>,
    params: OccupancyParams,
    bounds: Bounds,
}

impl MeasuredMap {
    pub fn new(cfg: GridConfig, bounds: Bounds) -> Self {
        Self::with_params(cfg, bounds, OccupancyParams::default())
    }

    pub fn with_params(cfg: GridConfig, bounds: Bounds, params: OccupancyParams) -> Self {
        Self {
            grid: BlockHashGrid::new(cfg),
            params,
            bounds,
        }
    }

    pub fn config(&self) -> &GridConfig {
        self.grid.config()
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn grid(&self) -> &BlockHashGrid<MeasuredVoxel> {
        &self.grid
    }

    pub fn params(&self) -> &OccupancyParams {
        &self.params
    }

    #[inline]
    pub fn voxel(&self, v: VoxelIndex) -> MeasuredVoxel {
        *self.grid.get(v)
    }

    #[inline]
    pub fn state(&self, v: VoxelIndex) -> VoxelState {
        self.grid.get(v).state()
    }

    #[inline]
    pub fn state_cached(&self, v: VoxelIndex, cache: &mut BlockCache) -> VoxelState {
        self.grid.get_cached(v, cache).state()
    }

    /// Number of voxels whose state is not `m_u`.
    pub fn observed_count(&self) -> usize {
        self.grid.iter().filter(|(_, m)| m.observed).count()
    }

    #[inline]
    fn apply(grid: &mut BlockHashGrid<MeasuredVoxel>, v: VoxelIndex, delta: f32, p: &OccupancyParams, cache: &mut BlockCache) {
        let m = grid.get_mut_cached(v, cache);
        m.log_odds = (m.log_odds + delta).clamp(p.min, p.max);
        m.observed = true;
    }

    /// Applies a single free update; used to seed space known to be empty.
    pub fn mark_free(&mut self, v: VoxelIndex) {
        let p = self.params;
        Self::apply(&mut self.grid, v, p.miss, &p, &mut BlockCache::default());
    }

    /// Applies a single occupied update.
    pub fn mark_occupied(&mut self, v: VoxelIndex) {
        let p = self.params;
        Self::apply(&mut self.grid, v, p.hit, &p, &mut BlockCache::default());
    }

    /// Overwrites a voxel; used when loading snapshots.
    pub fn set_voxel(&mut self, v: VoxelIndex, m: MeasuredVoxel) {
        self.grid.set(v, m);
    }

    /// Fuses one range image taken from `pose`.
    ///
    /// The voxel containing a return is the one whose ray span satisfies
    /// `t_enter <= range < t_exit` (or the zero-length span at `range` when the
    /// ray crosses an edge exactly); every voxel before it is carved free.
    pub fn integrate_depth(&mut self, pose: &Pose, depth: &DepthImage, sensor: &SensorModel) -> Result<IntegrationStats> {
        let origin = pose.position();
        if !self.bounds.contains(&origin) {
            return Err(Error::OutOfBounds {
                x: pose.x,
                y: pose.y,
                z: pose.z,
            });
        }
        let mut stats = IntegrationStats::default();
        if depth.is_empty() {
            return Ok(stats);
        }
        if depth.width != sensor.width || depth.height != sensor.height {
            return Err(Error::InvalidArgument(format!(
                "depth image is {}x{} but the sensor is {}x{}",
                depth.width, depth.height, sensor.width, sensor.height
            )));
        }
        let cfg = *self.grid.config();
        let p = self.params;
        let mut cache = BlockCache::default();
        for v in 0..depth.height {
            for u in 0..depth.width {
                let range = depth.get(u, v);
                let dir = sensor.ray_direction(pose.yaw, u, v);
                stats.rays += 1;
                if range.is_finite() && range <= sensor.max_range {
                    for span in RayTraversal::new_unit(origin, dir, sensor.max_range, &cfg) {
                        if range < span.t_exit || span.t_enter >= range || span.t_exit >= sensor.max_range {
                            Self::apply(&mut self.grid, span.voxel, p.hit, &p, &mut cache);
                            stats.occupied_updates += 1;
                            break;
                        }
                        Self::apply(&mut self.grid, span.voxel, p.miss, &p, &mut cache);
                        stats.free_updates += 1;
                    }
                } else {
                    for span in RayTraversal::new_unit(origin, dir, sensor.max_range, &cfg) {
                        Self::apply(&mut self.grid, span.voxel, p.miss, &p, &mut cache);
                        stats.free_updates += 1;
                    }
                }
            }
        }
        Ok(stats)
    }
}
