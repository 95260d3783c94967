//! Hierarchical two-layer map.
//!
//! Look-ups consult the measured layer first; only voxels the sensor never
//! observed fall through to the SC layer, where the confidence threshold `τ_c`
//! decides whether a prediction is trusted.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{probability, sc_state, ScLayer};
use crate::grid::{BlockCache, GridConfig, VoxelIndex, VoxelState};
use crate::measured::MeasuredMap;

/// Log-odds cut-offs `(l_o, l_f)` for confidence threshold `τ_c`.
pub fn confidence_cutoffs(tau: f64) -> (f64, f64) {
    if tau >= 1.0 {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    let l_o = ((1.0 + tau) / (1.0 - tau)).ln();
    (l_o, -l_o)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Measured,
    Predicted,
    Unknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LookupResult {
    pub state: VoxelState,
    pub source: Source,
}

/// Membership in the measured set 𝕊 or the predicted-not-measured set ℙ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GainClass {
    InS,
    InP,
    Neither,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollisionMode {
    /// Only measured-free space is traversable.
    Conservative,
    /// Predicted-free space is traversable as well.
    Optimistic,
}

/// Block caches for both layers, for tight look-up loops.
#[derive(Clone, Debug, Default)]
pub struct LookupCache {
    pub(crate) measured: BlockCache,
    pub(crate) sc: BlockCache,
}

#[derive(Clone, Debug)]
pub struct MultiLayerMap {
    pub measured: MeasuredMap,
    pub sc: ScLayer,
    tau: f64,
    l_o: f64,
    l_f: f64,
}

impl MultiLayerMap {
    pub fn new(measured: MeasuredMap, sc: ScLayer, tau: f64) -> Result<Self> {
        if !measured.config().same_lattice(sc.config()) {
            return Err(Error::GridMismatch("measured and SC layers use different grids".into()));
        }
        let mut m = Self {
            measured,
            sc,
            tau: 0.0,
            l_o: 0.0,
            l_f: 0.0,
        };
        m.set_tau(tau)?;
        Ok(m)
    }

    pub fn config(&self) -> &GridConfig {
        self.measured.config()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn cutoffs(&self) -> (f64, f64) {
        (self.l_o, self.l_f)
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::InvalidArgument(format!("confidence threshold {tau} outside [0, 1]")));
        }
        self.tau = tau;
        (self.l_o, self.l_f) = confidence_cutoffs(tau);
        Ok(())
    }

    pub fn lookup(&self, v: VoxelIndex) -> LookupResult {
        self.lookup_cached(v, &mut LookupCache::default())
    }

    #[inline]
    pub fn lookup_cached(&self, v: VoxelIndex, cache: &mut LookupCache) -> LookupResult {
        let m = self.measured.state_cached(v, &mut cache.measured);
        if m.is_known() {
            return LookupResult {
                state: m,
                source: Source::Measured,
            };
        }
        match sc_state(self.sc.log_odds_cached(v, &mut cache.sc), self.l_o, self.l_f) {
            VoxelState::Unknown => LookupResult {
                state: VoxelState::Unknown,
                source: Source::Unknown,
            },
            s => LookupResult {
                state: s,
                source: Source::Predicted,
            },
        }
    }

    /// SC state at the current threshold, ignoring the measured layer.
    #[inline]
    pub fn sc_state_cached(&self, v: VoxelIndex, cache: &mut LookupCache) -> VoxelState {
        sc_state(self.sc.log_odds_cached(v, &mut cache.sc), self.l_o, self.l_f)
    }

    /// Occupancy probability of the SC layer, `None` when never predicted.
    #[inline]
    pub fn sc_probability_cached(&self, v: VoxelIndex, cache: &mut LookupCache) -> Option<f64> {
        self.sc.log_odds_cached(v, &mut cache.sc).map(probability)
    }

    pub fn classify_for_gain(&self, v: VoxelIndex) -> GainClass {
        self.classify_for_gain_cached(v, &mut LookupCache::default())
    }

    #[inline]
    pub fn classify_for_gain_cached(&self, v: VoxelIndex, cache: &mut LookupCache) -> GainClass {
        match self.lookup_cached(v, cache).source {
            Source::Measured => GainClass::InS,
            Source::Predicted => GainClass::InP,
            Source::Unknown => GainClass::Neither,
        }
    }

    #[inline]
    fn passable(&self, v: VoxelIndex, mode: CollisionMode, cache: &mut LookupCache) -> bool {
        let r = self.lookup_cached(v, cache);
        r.state == VoxelState::Free && (mode == CollisionMode::Optimistic || r.source == Source::Measured)
    }

    /// Whether a sphere of radius `r_c` at `p` lies in traversable space.
    ///
    /// Voxels count as intersecting the sphere when their centre lies within
    /// `r_c + (√3/2)ν`, which over-approximates exact sphere–box overlap.
    pub fn is_traversable(&self, p: &Point3<f64>, mode: CollisionMode, r_c: f64) -> bool {
        self.is_segment_traversable(p, p, mode, r_c)
    }

    /// Swept-sphere version of [`Self::is_traversable`] over the segment `a`–`b`.
    pub fn is_segment_traversable(&self, a: &Point3<f64>, b: &Point3<f64>, mode: CollisionMode, r_c: f64) -> bool {
        let mut cache = LookupCache::default();
        let cfg = *self.config();
        let reach = r_c + 0.5 * 3f64.sqrt() * cfg.voxel_size();
        let lo = cfg.world_to_index(&Point3::new(a.x.min(b.x) - reach, a.y.min(b.y) - reach, a.z.min(b.z) - reach));
        let hi = cfg.world_to_index(&Point3::new(a.x.max(b.x) + reach, a.y.max(b.y) + reach, a.z.max(b.z) + reach));
        let ab = b - a;
        let len2 = ab.norm_squared();
        let reach2 = reach * reach;
        // k outermost keeps consecutive look-ups inside one block row
        for k in lo.k..=hi.k {
            for j in lo.j..=hi.j {
                for i in lo.i..=hi.i {
                    let v = VoxelIndex::new(i, j, k);
                    let c = cfg.index_to_center(v);
                    let t = if len2 > 0.0 { ((c - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    if (c - (a + ab * t)).norm_squared() <= reach2 && !self.passable(v, mode, &mut cache) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{ClassCalibration, FusionStrategy};
    use crate::grid::Bounds;
    use approx::assert_abs_diff_eq;

    fn empty(tau: f64) -> MultiLayerMap {
        let cfg = GridConfig::default();
        MultiLayerMap::new(
            MeasuredMap::new(cfg, Bounds::infinite()),
            ScLayer::new(cfg, FusionStrategy::Occupancy, ClassCalibration::default()),
            tau,
        )
        .unwrap()
    }

    #[test]
    fn cutoff_examples() {
        assert_eq!(confidence_cutoffs(0.0), (0.0, -0.0));
        assert_eq!(confidence_cutoffs(1.0), (f64::INFINITY, f64::NEG_INFINITY));
        let (o, f) = confidence_cutoffs(0.1);
        assert_abs_diff_eq!(o, (1.1f64 / 0.9).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(o, 0.2006707, epsilon = 1e-7);
        assert_eq!(f, -o);
    }

    #[test]
    fn tau_zero_splits_at_one_half() {
        let mut m = empty(0.0);
        let v = VoxelIndex::new(0, 0, 0);
        m.sc.set_log_odds(v, 0.0);
        assert_eq!(m.lookup(v).state, VoxelState::Occupied);
        m.sc.set_log_odds(v, -1e-9);
        assert_eq!(m.lookup(v).state, VoxelState::Free);
    }

    #[test]
    fn measurement_takes_precedence() {
        let mut m = empty(0.0);
        let v = VoxelIndex::new(3, 1, 2);
        m.sc.set_log_odds(v, -8.0);
        m.measured.mark_occupied(v);
        assert_eq!(
            m.lookup(v),
            LookupResult {
                state: VoxelState::Occupied,
                source: Source::Measured
            }
        );
        assert_eq!(m.classify_for_gain(v), GainClass::InS);
    }

    #[test]
    fn predicted_and_unknown() {
        let mut m = empty(0.0);
        let v = VoxelIndex::new(0, 0, 0);
        assert_eq!(m.lookup(v).source, Source::Unknown);
        assert_eq!(m.classify_for_gain(v), GainClass::Neither);
        m.sc.set_log_odds(v, 1.27);
        assert_eq!(
            m.lookup(v),
            LookupResult {
                state: VoxelState::Occupied,
                source: Source::Predicted
            }
        );
        assert_eq!(m.classify_for_gain(v), GainClass::InP);
        m.set_tau(0.9).unwrap();
        assert_eq!(m.lookup(v).source, Source::Unknown);
        assert!(m.set_tau(1.5).is_err());
    }

    #[test]
    fn traversability_modes() {
        let mut m = empty(0.0);
        let r_c = 0.35;
        let p = Point3::new(0.04, 0.04, 0.04);
        for i in -8..=8 {
            for j in -8..=8 {
                for k in -8..=8 {
                    m.measured.mark_free(VoxelIndex::new(i, j, k));
                }
            }
        }
        assert!(m.is_traversable(&p, CollisionMode::Conservative, r_c));
        assert!(m.is_traversable(&p, CollisionMode::Optimistic, r_c));

        let mut pred = m.clone();
        let v = VoxelIndex::new(4, 0, 0);
        pred.measured.set_voxel(v, Default::default());
        pred.sc.set_log_odds(v, -3.0);
        assert!(!pred.is_traversable(&p, CollisionMode::Conservative, r_c));
        assert!(pred.is_traversable(&p, CollisionMode::Optimistic, r_c));

        let mut wall = m.clone();
        for _ in 0..3 {
            wall.measured.mark_occupied(v);
        }
        assert!(!wall.is_traversable(&p, CollisionMode::Conservative, r_c));
        assert!(!wall.is_traversable(&p, CollisionMode::Optimistic, r_c));
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let a = GridConfig::default();
        let b = GridConfig::with_voxel_size(0.1).unwrap();
        let r = MultiLayerMap::new(
            MeasuredMap::new(a, Bounds::infinite()),
            ScLayer::new(b, FusionStrategy::Occupancy, ClassCalibration::default()),
            0.0,
        );
        assert!(matches!(r, Err(Error::GridMismatch(_))));
    }
}
