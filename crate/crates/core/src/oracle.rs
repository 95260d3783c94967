//! Ground-truth stand-in for the scene-completion network.
//!
//! A prediction covers a 60×60×36 voxel box in front of the camera. The box is
//! aligned with the camera yaw rounded to the nearest multiple of 90°, the camera
//! sits at the centre of the box's near face and the box bottom rests on the
//! world floor. Occluded voxels are completed as well.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ClassId, PredictedState, PredictedVoxel, Prediction, SemanticClass, EMPTY_CLASS, PREDICTION_DIMS};
use crate::grid::{BlockCache, Pose, VoxelIndex};
use crate::sim::world::GroundTruthWorld;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Probability that a ground-truth occupied voxel is emitted free.
    pub miss_rate: f64,
    /// Probability that a ground-truth free voxel is emitted occupied.
    pub hallucination_rate: f64,
    /// Per-class miss rates replacing `miss_rate`.
    #[serde(with = "crate::fusion::class_keys")]
    pub class_miss_rates: BTreeMap<ClassId, f64>,
    pub seed: u64,
    /// Dilation radius (voxels, 6-neighbourhood steps) applied to flip masks;
    /// zero keeps flips independent.
    pub correlation_radius: usize,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            miss_rate: 0.0,
            hallucination_rate: 0.0,
            class_miss_rates: BTreeMap::new(),
            seed: 0,
            correlation_radius: 0,
        }
    }
}

impl NoiseModel {
    pub fn new(miss_rate: f64, hallucination_rate: f64, seed: u64) -> Result<Self> {
        let m = Self {
            miss_rate,
            hallucination_rate,
            seed,
            ..Default::default()
        };
        m.validate()?;
        Ok(m)
    }

    /// Rates giving the requested expected precision and recall on volumes
    /// whose occupied fraction is `occupied_fraction`.
    pub fn from_precision_recall(precision: f64, recall: f64, occupied_fraction: f64, seed: u64) -> Result<Self> {
        if !(precision > 0.0 && precision <= 1.0 && (0.0..=1.0).contains(&recall)) {
            return Err(Error::InvalidArgument("precision must be in (0, 1] and recall in [0, 1]".into()));
        }
        if !(occupied_fraction > 0.0 && occupied_fraction < 1.0) {
            return Err(Error::InvalidArgument("occupied fraction must be in (0, 1)".into()));
        }
        let f = occupied_fraction;
        let h = recall * f / (1.0 - f) * (1.0 / precision - 1.0);
        Self::new(1.0 - recall, h, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(self.miss_rate) || !ok(self.hallucination_rate) || !self.class_miss_rates.values().all(|&r| ok(r)) {
            return Err(Error::InvalidArgument(format!("noise rates outside [0, 1]: {self:?}")));
        }
        Ok(())
    }

    pub fn miss_rate_for(&self, class: ClassId) -> f64 {
        self.class_miss_rates.get(&class).copied().unwrap_or(self.miss_rate)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    Perfect,
    Noisy(NoiseModel),
}

/// Minimum corner and axis permutation of the completion box for `pose`.
pub fn prediction_box(pose: &Pose, world: &GroundTruthWorld) -> VoxelIndex {
    let cfg = world.config();
    let c = cfg.world_to_index(&pose.position());
    let [nx, ny, _] = PREDICTION_DIMS;
    let (hx, hy) = ((nx / 2) as i64, (ny / 2) as i64);
    let quadrant = (pose.yaw / std::f64::consts::FRAC_PI_2).round() as i64;
    let k0 = world.origin().k;
    match quadrant.rem_euclid(4) {
        0 => VoxelIndex::new(c.i, c.j - hy, k0),
        1 => VoxelIndex::new(c.i - hx, c.j, k0),
        2 => VoxelIndex::new(c.i - nx as i64 + 1, c.j - hy, k0),
        _ => VoxelIndex::new(c.i - hx, c.j - ny as i64 + 1, k0),
    }
}

fn pose_seed(seed: u64, pose: &Pose) -> u64 {
    let mut h = FxHasher::default();
    seed.hash(&mut h);
    for x in [pose.x, pose.y, pose.z, pose.yaw] {
        x.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Completes the box in front of `pose` from ground truth.
///
/// Confidences depend only on the emitted state: occupied voxels carry
/// `1 − hallucination_rate`, free voxels `1 − miss_rate`.
pub fn predict(pose: &Pose, world: &GroundTruthWorld, mode: &OracleMode) -> Result<Prediction> {
    if !world.bounds().contains(&pose.position()) {
        return Err(Error::OutOfBounds {
            x: pose.x,
            y: pose.y,
            z: pose.z,
        });
    }
    let origin = prediction_box(pose, world);
    let dims = PREDICTION_DIMS;
    let n = dims[0] * dims[1] * dims[2];
    let mut cache = BlockCache::default();
    let mut labels = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                labels.push(world.label_cached(origin.offset(x as i64, y as i64, z as i64), &mut cache));
            }
        }
    }
    let voxels = match mode {
        OracleMode::Perfect => labels
            .iter()
            .map(|&l| PredictedVoxel {
                state: if l == EMPTY_CLASS { PredictedState::Free } else { PredictedState::Occupied },
                class_id: l,
                confidence: 1.0,
            })
            .collect(),
        OracleMode::Noisy(noise) => {
            noise.validate()?;
            let mut rng = ChaCha8Rng::seed_from_u64(pose_seed(noise.seed, pose));
            let mut flips: Vec<bool> = labels
                .iter()
                .map(|&l| {
                    let rate = if l == EMPTY_CLASS { noise.hallucination_rate } else { noise.miss_rate_for(l) };
                    rng.gen::<f64>() < rate
                })
                .collect();
            if noise.correlation_radius > 0 {
                flips = dilate(&flips, dims, noise.correlation_radius);
            }
            let occ_conf = (1.0 - noise.hallucination_rate) as f32;
            let free_conf = (1.0 - noise.miss_rate) as f32;
            labels
                .iter()
                .zip(&flips)
                .map(|(&l, &flip)| {
                    let occupied = (l != EMPTY_CLASS) != flip;
                    if occupied {
                        PredictedVoxel {
                            state: PredictedState::Occupied,
                            class_id: if l == EMPTY_CLASS { SemanticClass::Furniture.id() } else { l },
                            confidence: occ_conf,
                        }
                    } else {
                        PredictedVoxel {
                            state: PredictedState::Free,
                            class_id: EMPTY_CLASS,
                            confidence: free_conf,
                        }
                    }
                })
                .collect()
        }
    };
    Ok(Prediction {
        anchor: *pose,
        origin,
        dims,
        voxel_size: world.config().voxel_size(),
        voxels,
        measured_mask: None,
    })
}

fn dilate(mask: &[bool], dims: [usize; 3], radius: usize) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut cur = mask.to_vec();
    for _ in 0..radius {
        let mut next = cur.clone();
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let n = (z * ny + y) * nx + x;
                    if !cur[n] {
                        continue;
                    }
                    let v = VoxelIndex::new(x as i64, y as i64, z as i64);
                    for w in v.neighbors6() {
                        if w.i >= 0 && w.j >= 0 && w.k >= 0 && (w.i as usize) < nx && (w.j as usize) < ny && (w.k as usize) < nz {
                            next[(w.k as usize * ny + w.j as usize) * nx + w.i as usize] = true;
                        }
                    }
                }
            }
        }
        cur = next;
    }
    cur
}
