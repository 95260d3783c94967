//! Ray-cast information gain and yaw optimisation.
//!
//! Gains are evaluated on a fixed ray fan: `fan_width × fan_height` rays per
//! field of view, laid out on a full 360° ring of columns so all yaw samples of
//! a node share one cast. A yaw sample sees the columns whose azimuth lies in
//! its horizontal field of view; a voxel touched by several rays counts once.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::{normalize_angle, Bounds, Pose, VoxelIndex, VoxelState};
use crate::layered::{GainClass, LookupCache, MultiLayerMap, Source};
use crate::raycast::RayTraversal;
use crate::sensor::{direction, SensorModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainKind {
    Exploration,
    Sc,
    Hybrid,
    Occupied,
    Confidence,
}

impl GainKind {
    pub const ALL: [GainKind; 5] = [
        GainKind::Exploration,
        GainKind::Sc,
        GainKind::Hybrid,
        GainKind::Occupied,
        GainKind::Confidence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GainKind::Exploration => "exploration",
            GainKind::Sc => "sc",
            GainKind::Hybrid => "hybrid",
            GainKind::Occupied => "occupied",
            GainKind::Confidence => "confidence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaycastMode {
    /// Rays stop at predicted-occupied voxels as well as measured ones.
    Blocking,
    /// Only measured-occupied voxels stop rays.
    NonBlocking,
}

/// Information of one voxel under `kind`.
pub fn voxel_information(kind: GainKind, v: VoxelIndex, map: &MultiLayerMap, cache: &mut LookupCache) -> f64 {
    let r = map.lookup_cached(v, cache);
    information_of(kind, r.source, r.state, || map.sc_probability_cached(v, cache))
}

#[inline]
fn information_of(kind: GainKind, source: Source, state: VoxelState, p: impl FnOnce() -> Option<f64>) -> f64 {
    let class = match source {
        Source::Measured => GainClass::InS,
        Source::Predicted => GainClass::InP,
        Source::Unknown => GainClass::Neither,
    };
    match (kind, class) {
        (_, GainClass::InS) => 0.0,
        (GainKind::Exploration, _) => 1.0,
        (GainKind::Sc, GainClass::InP) => 1.0,
        (GainKind::Hybrid, GainClass::InP) => 2.0,
        (GainKind::Hybrid, GainClass::Neither) => 1.0,
        (GainKind::Occupied, GainClass::InP) if state == VoxelState::Occupied => 1.0,
        (GainKind::Confidence, GainClass::InP) => p().map_or(0.0, |p| (0.5 - p).abs()),
        _ => 0.0,
    }
}

/// Fixed ray layout used for gain evaluation.
#[derive(Clone, Debug)]
pub struct GainFan {
    sensor: SensorModel,
    columns: usize,
    rows: usize,
    azimuths: Vec<f64>,
    dirs: Vec<Vector3<f64>>,
}

impl GainFan {
    /// `fan_width × fan_height` rays per field of view of `sensor`.
    pub fn new(sensor: &SensorModel, fan_width: usize, fan_height: usize) -> Self {
        let columns = ((fan_width as f64) * 360.0 / sensor.hfov_deg).round().max(1.0) as usize;
        let step = std::f64::consts::TAU / columns as f64;
        let azimuths: Vec<f64> = (0..columns)
            .map(|c| -std::f64::consts::PI + (c as f64 + 0.5) * step)
            .collect();
        let e = sensor.vfov_deg.to_radians();
        let mut dirs = Vec::with_capacity(columns * fan_height);
        for &az in &azimuths {
            for r in 0..fan_height {
                let el = 0.5 * e - (r as f64 + 0.5) * e / fan_height as f64;
                dirs.push(direction(az, el));
            }
        }
        Self {
            sensor: *sensor,
            columns,
            rows: fan_height,
            azimuths,
            dirs,
        }
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    /// Whether column `c` lies in the horizontal field of view at `yaw`.
    #[inline]
    pub fn column_in_view(&self, c: usize, yaw: f64) -> bool {
        normalize_angle(self.azimuths[c] - yaw).abs() < 0.5 * self.sensor.hfov_deg.to_radians()
    }

    #[inline]
    fn dir(&self, c: usize, r: usize) -> Vector3<f64> {
        self.dirs[c * self.rows + r]
    }
}

/// Length of the ray inside `bounds`, capped at `max_len`.
fn clipped_length(o: &Point3<f64>, d: &Vector3<f64>, max_len: f64, bounds: &Bounds) -> f64 {
    let mut t1 = max_len;
    for a in 0..3 {
        if d[a] > 0.0 && bounds.max[a].is_finite() {
            t1 = t1.min((bounds.max[a] - o[a]) / d[a]);
        } else if d[a] < 0.0 && bounds.min[a].is_finite() {
            t1 = t1.min((bounds.min[a] - o[a]) / d[a]);
        }
    }
    // stepping accumulates rounding error; stay clear of the boundary crossing
    (t1 - 1e-9).max(0.0)
}

/// Reusable buffers for gain evaluation.
#[derive(Clone, Debug, Default)]
pub struct GainScratch {
    masks: Vec<u8>,
    /// Whether the voxel stops rays; valid where `masks` is non-zero.
    codes: Vec<bool>,
    touched: Vec<(usize, f64)>,
    lo: VoxelIndex,
    dims: [usize; 3],
}

impl GainScratch {
    fn prepare(&mut self, o: &Point3<f64>, range: f64, map: &MultiLayerMap) {
        let cfg = map.config();
        let b = map.measured.bounds();
        let r = range + 2.0 * cfg.voxel_size();
        let lo = Point3::new((o.x - r).max(b.min.x), (o.y - r).max(b.min.y), (o.z - r).max(b.min.z));
        let hi = Point3::new((o.x + r).min(b.max.x), (o.y + r).min(b.max.y), (o.z + r).min(b.max.z));
        let (lo, hi) = (cfg.world_to_index(&lo).offset(-1, -1, -1), cfg.world_to_index(&hi).offset(1, 1, 1));
        self.lo = lo;
        self.dims = [
            (hi.i - lo.i + 1) as usize,
            (hi.j - lo.j + 1) as usize,
            (hi.k - lo.k + 1) as usize,
        ];
        let n = self.dims[0] * self.dims[1] * self.dims[2];
        if self.masks.len() < n {
            self.masks.resize(n, 0);
            self.codes.resize(n, false);
        }
        self.touched.clear();
    }

    #[inline]
    fn slot(&self, v: VoxelIndex) -> Option<usize> {
        let (x, y, z) = (v.i - self.lo.i, v.j - self.lo.j, v.k - self.lo.k);
        if x < 0 || y < 0 || z < 0 || x as usize >= self.dims[0] || y as usize >= self.dims[1] || z as usize >= self.dims[2] {
            return None;
        }
        Some((z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize)
    }

    fn finish(&mut self) {
        for &(n, _) in &self.touched {
            self.masks[n] = 0;
        }
    }
}

/// Gain evaluator: fan geometry, gain kind and ray-cast mode.
#[derive(Clone, Debug)]
pub struct GainEvaluator {
    pub fan: GainFan,
    pub kind: GainKind,
    pub mode: RaycastMode,
    yaws: Vec<f64>,
    /// Bit `k` of entry `c` is set when column `c` is in view at yaw sample `k`.
    column_masks: Vec<u8>,
}

impl GainEvaluator {
    /// At most eight yaw samples, spaced uniformly from `-π`.
    pub fn new(fan: GainFan, kind: GainKind, mode: RaycastMode, yaw_samples: usize) -> Self {
        let n = yaw_samples.clamp(1, 8);
        let yaws: Vec<f64> = (0..n)
            .map(|k| -std::f64::consts::PI + std::f64::consts::TAU * k as f64 / n as f64)
            .collect();
        let column_masks = (0..fan.columns())
            .map(|c| {
                yaws.iter()
                    .enumerate()
                    .filter(|(_, &y)| fan.column_in_view(c, y))
                    .fold(0u8, |m, (k, _)| m | (1 << k))
            })
            .collect();
        Self {
            fan,
            kind,
            mode,
            yaws,
            column_masks,
        }
    }

    pub fn yaw_samples(&self) -> &[f64] {
        &self.yaws
    }

    fn range(&self) -> f64 {
        self.fan.sensor.max_range
    }

    fn cast_column(
        &self,
        map: &MultiLayerMap,
        o: &Point3<f64>,
        c: usize,
        cache: &mut LookupCache,
        mut visit: impl FnMut(VoxelIndex, Source, VoxelState, &mut LookupCache),
    ) {
        let range = self.range();
        let cfg = map.config();
        for r in 0..self.fan.rows {
            let d = self.fan.dir(c, r);
            let len = clipped_length(o, &d, range, map.measured.bounds());
            if len <= 0.0 {
                continue;
            }
            for span in RayTraversal::new_unit(*o, d, len, cfg) {
                let res = map.lookup_cached(span.voxel, cache);
                visit(span.voxel, res.source, res.state, cache);
                if res.state == VoxelState::Occupied && (res.source == Source::Measured || self.mode == RaycastMode::Blocking) {
                    break;
                }
            }
        }
    }

    /// Voxels seen from `pose`, sorted.
    pub fn visible_voxels(&self, pose: &Pose, map: &MultiLayerMap) -> Vec<VoxelIndex> {
        let o = pose.position();
        let mut out = Vec::new();
        let mut cache = LookupCache::default();
        for c in 0..self.fan.columns() {
            if self.fan.column_in_view(c, pose.yaw) {
                self.cast_column(map, &o, c, &mut cache, |v, _, _, _| out.push(v));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Gain of one pose: summed information over its visible voxels.
    pub fn gain(&self, pose: &Pose, map: &MultiLayerMap) -> f64 {
        let mut cache = LookupCache::default();
        self.visible_voxels(pose, map)
            .into_iter()
            .map(|v| voxel_information(self.kind, v, map, &mut cache))
            .sum()
    }

    /// Gain of every yaw sample at `p`, from a single 360° cast.
    pub fn yaw_gains(&self, p: &Point3<f64>, map: &MultiLayerMap, scratch: &mut GainScratch) -> Vec<f64> {
        scratch.prepare(p, self.range(), map);
        let mut cache = LookupCache::default();
        let kind = self.kind;
        let range = self.range();
        let cfg = map.config();
        let blocking = self.mode == RaycastMode::Blocking;
        for c in 0..self.fan.columns() {
            let bits = self.column_masks[c];
            if bits == 0 {
                continue;
            }
            for r in 0..self.fan.rows {
                let d = self.fan.dir(c, r);
                let len = clipped_length(p, &d, range, map.measured.bounds());
                if len <= 0.0 {
                    continue;
                }
                for span in RayTraversal::new_unit(*p, d, len, cfg) {
                    let v = span.voxel;
                    let Some(n) = scratch.slot(v) else {
                        break;
                    };
                    // first visit classifies the voxel, later rays reuse it
                    let code = match scratch.masks[n] {
                        0 => {
                            let res = map.lookup_cached(v, &mut cache);
                            let info = information_of(kind, res.source, res.state, || map.sc_probability_cached(v, &mut cache));
                            scratch.touched.push((n, info));
                            let stops = res.state == VoxelState::Occupied && (res.source == Source::Measured || blocking);
                            scratch.codes[n] = stops;
                            stops
                        }
                        _ => scratch.codes[n],
                    };
                    scratch.masks[n] |= bits;
                    if code {
                        break;
                    }
                }
            }
        }
        let mut gains = vec![0.0; self.yaws.len()];
        for &(n, info) in &scratch.touched {
            if info == 0.0 {
                continue;
            }
            let m = scratch.masks[n];
            for (k, g) in gains.iter_mut().enumerate() {
                if m & (1 << k) != 0 {
                    *g += info;
                }
            }
        }
        scratch.finish();
        gains
    }

    /// Best yaw sample and its gain; ties go to the smallest yaw.
    pub fn optimize_yaw(&self, p: &Point3<f64>, map: &MultiLayerMap, scratch: &mut GainScratch) -> (f64, f64) {
        let gains = self.yaw_gains(p, map, scratch);
        pick_best_yaw(&self.yaws, &gains)
    }
}

/// Argmax over `(yaw, gain)` pairs with ties resolved to the smallest yaw.
pub fn pick_best_yaw(yaws: &[f64], gains: &[f64]) -> (f64, f64) {
    let mut best = (yaws[0], gains[0]);
    for (&y, &g) in yaws.iter().zip(gains).skip(1) {
        if g > best.1 || (g == best.1 && y < best.0) {
            best = (y, g);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ClassCalibration, FusionStrategy, ScLayer};
    use crate::grid::GridConfig;
    use crate::measured::MeasuredMap;

    fn map(bounds: Bounds) -> MultiLayerMap {
        let cfg = GridConfig::default();
        MultiLayerMap::new(
            MeasuredMap::new(cfg, bounds),
            ScLayer::new(cfg, FusionStrategy::Occupancy, ClassCalibration::default()),
            0.0,
        )
        .unwrap()
    }

    /// Three columns at -120°, 0° and 120° with one row at zero elevation, so a
    /// pose with yaw 0 casts exactly one ray along +x.
    fn single_ray() -> GainEvaluator {
        let sensor = SensorModel {
            hfov_deg: 120.0,
            ..Default::default()
        };
        GainEvaluator::new(GainFan::new(&sensor, 1, 1), GainKind::Exploration, RaycastMode::Blocking, 1)
    }

    #[test]
    fn information_examples() {
        let mut m = map(Bounds::infinite());
        let mut cache = LookupCache::default();
        let measured = VoxelIndex::new(0, 0, 0);
        m.measured.mark_free(measured);
        m.sc.set_log_odds(measured, 3.0);
        for k in GainKind::ALL {
            assert_eq!(voxel_information(k, measured, &m, &mut cache), 0.0);
        }
        let predicted = VoxelIndex::new(1, 0, 0);
        m.sc.set_log_odds(predicted, (0.3f64 / 0.7).ln());
        let want = [1.0, 1.0, 2.0, 0.0, 0.2];
        for (k, w) in GainKind::ALL.into_iter().zip(want) {
            assert!((voxel_information(k, predicted, &m, &mut cache) - w).abs() < 1e-12, "{k:?}");
        }
        let unknown = VoxelIndex::new(2, 0, 0);
        let want = [1.0, 0.0, 1.0, 0.0, 0.0];
        for (k, w) in GainKind::ALL.into_iter().zip(want) {
            assert_eq!(voxel_information(k, unknown, &m, &mut cache), w, "{k:?}");
        }
    }

    #[test]
    fn forward_ray_examples() {
        let e = single_ray();
        assert_eq!(e.fan.columns(), 3);
        assert!(e.fan.column_in_view(1, 0.0) && !e.fan.column_in_view(0, 0.0));
        let pose = Pose::new(0.04, 0.04, 0.04, 0.0);
        let empty = map(Bounds::infinite());
        let vis = e.visible_voxels(&pose, &empty);
        assert_eq!(vis.len(), 63);
        assert_eq!(vis.last(), Some(&VoxelIndex::new(62, 0, 0)));

        let mut wall = map(Bounds::infinite());
        wall.measured.mark_occupied(VoxelIndex::new(12, 0, 0));
        for mode in [RaycastMode::Blocking, RaycastMode::NonBlocking] {
            let mut e = single_ray();
            e.mode = mode;
            assert_eq!(e.visible_voxels(&pose, &wall).last(), Some(&VoxelIndex::new(12, 0, 0)));
        }

        let mut pred = map(Bounds::infinite());
        pred.sc.set_log_odds(VoxelIndex::new(12, 0, 0), 2.0);
        assert_eq!(e.visible_voxels(&pose, &pred).len(), 13);
        let mut nb = single_ray();
        nb.mode = RaycastMode::NonBlocking;
        assert_eq!(nb.visible_voxels(&pose, &pred).len(), 63);
    }

    #[test]
    fn bounds_clip_rays() {
        let e = single_ray();
        let m = map(Bounds::new(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)));
        let vis = e.visible_voxels(&Pose::new(0.04, 0.04, 0.04, 0.0), &m);
        assert_eq!(vis.last(), Some(&VoxelIndex::new(12, 0, 0)));
    }

    #[test]
    fn yaw_argmax_prefers_smallest_on_ties() {
        assert_eq!(pick_best_yaw(&[-1.0, 0.0], &[3.0, 5.0]), (0.0, 5.0));
        assert_eq!(pick_best_yaw(&[-1.0, 0.0, 1.0], &[2.0, 2.0, 2.0]), (-1.0, 2.0));
    }

    #[test]
    fn default_fan_has_eight_windows_of_sixty_four_columns() {
        let e = GainEvaluator::new(
            GainFan::new(&SensorModel::default(), 64, 48),
            GainKind::Exploration,
            RaycastMode::Blocking,
            8,
        );
        assert_eq!(e.fan.columns(), 256);
        for k in 0..8 {
            let n = e.column_masks.iter().filter(|m| **m & (1 << k) != 0).count();
            assert_eq!(n, 64);
        }
    }
}
