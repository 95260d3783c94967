//! Incremental fusion of scene-completion predictions into the SC layer.
//!
//! Every SC voxel stores a single log-odds value `l_t`; voxels that no
//! prediction has touched hold `NaN` and read as unknown. The `Occupancy`
//! strategy treats completion as object detection: free predictions nudge the
//! estimate by a constant small amount while occupied predictions add a
//! per-class, always non-negative increment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BlockCache, BlockHashGrid, GridConfig, Pose, VoxelIndex, VoxelState};
use crate::measured::MeasuredMap;

pub type ClassId = u8;

/// Semantic labels carried by ground truth and predictions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum SemanticClass {
    Floor = 1,
    Wall = 2,
    Furniture = 3,
    Sofa = 4,
}

impl SemanticClass {
    pub const ALL: [SemanticClass; 4] = [
        SemanticClass::Floor,
        SemanticClass::Wall,
        SemanticClass::Furniture,
        SemanticClass::Sofa,
    ];

    pub fn id(self) -> ClassId {
        self as u8
    }

    pub fn from_id(id: ClassId) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.id() == id)
    }
}

/// Class id written for free predictions.
pub const EMPTY_CLASS: ClassId = 0;

/// Class-keyed maps serialized with string keys, as text formats such as TOML require.
pub(crate) mod class_keys {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ClassId;

    pub fn serialize<S: Serializer>(m: &BTreeMap<ClassId, f64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ClassId, f64>, D::Error> {
        BTreeMap::<String, f64>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| D::Error::custom(format!("bad class id {k:?}"))))
            .collect()
    }
}

/// Log-odds of a probability, `log(p / (1 - p))`.
#[inline]
pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`log_odds`].
#[inline]
pub fn probability(l: f64) -> f64 {
    if l >= 0.0 {
        1.0 / (1.0 + (-l).exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Per-class occupancy confidence `p̄(c)` and the constant free probability `p̄_f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCalibration {
    #[serde(with = "class_keys")]
    occupied: BTreeMap<ClassId, f64>,
    free: f64,
}

impl Default for ClassCalibration {
    fn default() -> Self {
        let mut occupied = BTreeMap::new();
        occupied.insert(SemanticClass::Floor.id(), 0.41);
        occupied.insert(SemanticClass::Wall.id(), 0.41);
        occupied.insert(SemanticClass::Furniture.id(), 0.3);
        occupied.insert(SemanticClass::Sofa.id(), 0.56);
        Self { occupied, free: 0.49 }
    }
}

impl ClassCalibration {
    pub fn new(occupied: BTreeMap<ClassId, f64>, free: f64) -> Result<Self> {
        if !(free > 0.0 && free < 0.5) {
            return Err(Error::InvalidArgument(format!("free probability {free} outside (0, 0.5)")));
        }
        for (&c, &p) in &occupied {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("confidence {p} for class {c} outside [0, 1)")));
            }
        }
        Ok(Self { occupied, free })
    }

    pub fn free(&self) -> f64 {
        self.free
    }

    pub fn occupied(&self, class: ClassId) -> Option<f64> {
        self.occupied.get(&class).copied()
    }

    pub fn classes(&self) -> impl Iterator<Item = (ClassId, f64)> + '_ {
        self.occupied.iter().map(|(&c, &p)| (c, p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredictedState {
    Free,
    Occupied,
}

/// Log-odds increment of the occupancy-detection update.
pub fn occupancy_update_weight(state: PredictedState, class: ClassId, calib: &ClassCalibration) -> Result<f64> {
    match state {
        PredictedState::Free => Ok(log_odds(calib.free)),
        PredictedState::Occupied => {
            let p = calib.occupied(class).ok_or(Error::UnknownClass(class))?;
            Ok(((1.0 + p) / (1.0 - p)).ln())
        }
    }
}

/// One voxel of a completion: the emitted state, its class, and the network's
/// confidence in the emitted state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedVoxel {
    pub state: PredictedState,
    pub class_id: ClassId,
    pub confidence: f32,
}

impl PredictedVoxel {
    /// Occupancy probability implied by the network confidence.
    pub fn occupancy_probability(&self) -> f64 {
        let c = self.confidence as f64;
        match self.state {
            PredictedState::Occupied => c,
            PredictedState::Free => 1.0 - c,
        }
    }
}

/// Standard completion volume, in voxels.
pub const PREDICTION_DIMS: [usize; 3] = [60, 60, 36];

/// A grid-aligned completion volume anchored at the pose it was predicted from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub anchor: Pose,
    /// Index of the voxel at the minimum corner of the volume.
    pub origin: VoxelIndex,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    /// x-fastest, then y, then z.
    pub voxels: Vec<PredictedVoxel>,
    /// Per-voxel flag set when the measured layer already observed the voxel at
    /// fusion time; recorded so replays reproduce measurement-dependent fusion.
    pub measured_mask: Option<Vec<bool>>,
}

impl Prediction {
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn voxel_index(&self, n: usize) -> VoxelIndex {
        let [nx, ny, _] = self.dims;
        self.origin.offset((n % nx) as i64, ((n / nx) % ny) as i64, (n / (nx * ny)) as i64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, &PredictedVoxel)> + '_ {
        self.voxels.iter().enumerate().map(move |(n, p)| (self.voxel_index(n), p))
    }

    pub fn get(&self, v: VoxelIndex) -> Option<&PredictedVoxel> {
        let (di, dj, dk) = (v.i - self.origin.i, v.j - self.origin.j, v.k - self.origin.k);
        let [nx, ny, nz] = self.dims;
        if di < 0 || dj < 0 || dk < 0 || di >= nx as i64 || dj >= ny as i64 || dk >= nz as i64 {
            return None;
        }
        self.voxels.get((dk as usize * ny + dj as usize) * nx + di as usize)
    }

    /// Fills `measured_mask` from the current measured layer.
    pub fn record_measured(&mut self, measured: &MeasuredMap) {
        let mut cache = BlockCache::default();
        let mask = (0..self.len())
            .map(|n| measured.state_cached(self.voxel_index(n), &mut cache).is_known())
            .collect();
        self.measured_mask = Some(mask);
    }

    fn validate(&self, cfg: &GridConfig) -> Result<()> {
        if (self.voxel_size - cfg.voxel_size()).abs() > 1e-12 * cfg.voxel_size() {
            return Err(Error::MisalignedPrediction(format!(
                "voxel size {} differs from map voxel size {}",
                self.voxel_size,
                cfg.voxel_size()
            )));
        }
        if self.voxels.len() != self.len() {
            return Err(Error::MisalignedPrediction(format!(
                "{} voxels for dims {:?}",
                self.voxels.len(),
                self.dims
            )));
        }
        if let Some(mask) = &self.measured_mask {
            if mask.len() != self.len() {
                return Err(Error::MisalignedPrediction("measured mask length mismatch".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStrategy {
    /// Occupancy detection with calibrated per-class weights.
    Occupancy,
    /// Bayesian fusion of the raw network confidence.
    Probabilistic,
    /// Frequency of occupied predictions.
    Counting,
    /// Occupied predictions only, and only where nothing was measured yet.
    #[serde(rename = "scfusion")]
    ScFusionBaseline,
    /// Latest prediction overwrites the voxel.
    NoFusion,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 5] = [
        FusionStrategy::Occupancy,
        FusionStrategy::Probabilistic,
        FusionStrategy::Counting,
        FusionStrategy::ScFusionBaseline,
        FusionStrategy::NoFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Occupancy => "occupancy",
            FusionStrategy::Probabilistic => "probabilistic",
            FusionStrategy::Counting => "counting",
            FusionStrategy::ScFusionBaseline => "scfusion",
            FusionStrategy::NoFusion => "nofusion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// One SC voxel: its log-odds, or `NaN` when never predicted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScVoxel(pub f64);

impl Default for ScVoxel {
    fn default() -> Self {
        ScVoxel(f64::NAN)
    }
}

impl ScVoxel {
    #[inline]
    pub fn log_odds(self) -> Option<f64> {
        if self.0.is_nan() {
            None
        } else {
            Some(self.0)
        }
    }
}

/// Hit statistics kept only by the `Counting` strategy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HitCount {
    pub hits: u32,
    pub total: u32,
}

impl HitCount {
    /// Raw frequency `hits / total`.
    pub fn frequency(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    /// Laplace-smoothed estimate used for the stored log-odds.
    pub fn smoothed(&self) -> f64 {
        (self.hits as f64 + 0.5) / (self.total as f64 + 1.0)
    }
}

/// Bound on probabilities derived from network confidences, keeping the
/// increments finite for perfect predictions.
pub const CONFIDENCE_CLAMP: f64 = 1e-3;

fn confidence_weight(p: &PredictedVoxel) -> f64 {
    log_odds(p.occupancy_probability().clamp(CONFIDENCE_CLAMP, 1.0 - CONFIDENCE_CLAMP))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FusionStats {
    pub updated: usize,
    pub skipped: usize,
}

/// The SC layer: fused completions, one scalar per voxel.
#[derive(Clone, Debug)]
pub struct ScLayer {
    grid: BlockHashGrid<ScVoxel>,
    counts: Option<BlockHashGrid<HitCount>>,
    strategy: FusionStrategy,
    calib: ClassCalibration,
}

impl ScLayer {
    pub fn new(cfg: GridConfig, strategy: FusionStrategy, calib: ClassCalibration) -> Self {
        Self {
            grid: BlockHashGrid::new(cfg),
            counts: (strategy == FusionStrategy::Counting).then(|| BlockHashGrid::new(cfg)),
            strategy,
            calib,
        }
    }

    pub fn config(&self) -> &GridConfig {
        self.grid.config()
    }

    pub fn strategy(&self) -> FusionStrategy {
        self.strategy
    }

    pub fn calibration(&self) -> &ClassCalibration {
        &self.calib
    }

    pub fn grid(&self) -> &BlockHashGrid<ScVoxel> {
        &self.grid
    }

    #[inline]
    pub fn log_odds(&self, v: VoxelIndex) -> Option<f64> {
        self.grid.get(v).log_odds()
    }

    #[inline]
    pub fn log_odds_cached(&self, v: VoxelIndex, cache: &mut BlockCache) -> Option<f64> {
        self.grid.get_cached(v, cache).log_odds()
    }

    pub fn probability(&self, v: VoxelIndex) -> Option<f64> {
        self.log_odds(v).map(probability)
    }

    pub fn hit_count(&self, v: VoxelIndex) -> Option<HitCount> {
        self.counts.as_ref().map(|c| *c.get(v))
    }

    /// Overwrites a voxel's log-odds; used when loading snapshots.
    pub fn set_log_odds(&mut self, v: VoxelIndex, l: f64) {
        self.grid.set(v, ScVoxel(l));
    }

    /// Fuses one prediction. Measurement-dependent strategies consult the
    /// prediction's recorded mask when present, otherwise `measured`.
    pub fn fuse(&mut self, pred: &Prediction, measured: Option<&MeasuredMap>) -> Result<FusionStats> {
        pred.validate(self.grid.config())?;
        for p in &pred.voxels {
            if p.state == PredictedState::Occupied && self.calib.occupied(p.class_id).is_none() {
                return Err(Error::UnknownClass(p.class_id));
            }
        }
        let free_w = occupancy_update_weight(PredictedState::Free, EMPTY_CLASS, &self.calib)?;
        let mut occ_w: BTreeMap<ClassId, f64> = BTreeMap::new();
        for (c, _) in self.calib.classes() {
            occ_w.insert(c, occupancy_update_weight(PredictedState::Occupied, c, &self.calib)?);
        }
        let mut stats = FusionStats::default();
        let mut cache = BlockCache::default();
        let mut mcache = BlockCache::default();
        let mut ccache = BlockCache::default();
        for (n, p) in pred.voxels.iter().enumerate() {
            let v = pred.voxel_index(n);
            let occupied = p.state == PredictedState::Occupied;
            match self.strategy {
                FusionStrategy::Occupancy => {
                    let w = if occupied { occ_w[&p.class_id] } else { free_w };
                    let cell = self.grid.get_mut_cached(v, &mut cache);
                    cell.0 = cell.log_odds().unwrap_or(0.0) + w;
                }
                FusionStrategy::Probabilistic => {
                    let w = confidence_weight(p);
                    let cell = self.grid.get_mut_cached(v, &mut cache);
                    cell.0 = cell.log_odds().unwrap_or(0.0) + w;
                }
                FusionStrategy::Counting => {
                    let counts = self.counts.as_mut().expect("counting layer allocates counts");
                    let c = counts.get_mut_cached(v, &mut ccache);
                    c.total += 1;
                    if occupied {
                        c.hits += 1;
                    }
                    let l = log_odds(c.smoothed());
                    self.grid.get_mut_cached(v, &mut cache).0 = l;
                }
                FusionStrategy::ScFusionBaseline => {
                    let already_measured = match (&pred.measured_mask, measured) {
                        (Some(mask), _) => mask[n],
                        (None, Some(m)) => m.state_cached(v, &mut mcache).is_known(),
                        (None, None) => false,
                    };
                    if !occupied || already_measured {
                        stats.skipped += 1;
                        continue;
                    }
                    let cell = self.grid.get_mut_cached(v, &mut cache);
                    cell.0 = cell.log_odds().unwrap_or(0.0) + occ_w[&p.class_id];
                }
                FusionStrategy::NoFusion => {
                    self.grid.get_mut_cached(v, &mut cache).0 = confidence_weight(p);
                }
            }
            stats.updated += 1;
        }
        Ok(stats)
    }

    /// Voxels with an SC entry whose state at the given cut-offs is `state`.
    pub fn count_state(&self, l_o: f64, l_f: f64, state: VoxelState) -> usize {
        self.grid
            .iter()
            .filter(|(_, s)| sc_state(s.log_odds(), l_o, l_f) == state)
            .count()
    }
}

/// Ternary SC state of a log-odds value under cut-offs `l_o`, `l_f`.
#[inline]
pub fn sc_state(l: Option<f64>, l_o: f64, l_f: f64) -> VoxelState {
    match l {
        None => VoxelState::Unknown,
        Some(l) => {
            if l >= l_o {
                VoxelState::Occupied
            } else if l <= l_f {
                VoxelState::Free
            } else {
                VoxelState::Unknown
            }
        }
    }
}
