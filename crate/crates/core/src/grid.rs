//! Sparse block-allocated voxel grid and the geometric primitives shared by
//! every map layer.
//!
//! Voxels are addressed by signed 64-bit [`VoxelIndex`] triples. A voxel with
//! index `(i, j, k)` covers the half-open box `[i*ν, (i+1)*ν) × …` in world
//! coordinates, so `world_to_index` is a componentwise floor. Storage is a hash
//! map from block coordinates to dense blocks of `block_side³` payloads that is
//! populated on first write. Reads of unallocated voxels return the grid's
//! designated default payload.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer coordinates of a voxel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelIndex {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelIndex {
    pub const fn new(i: i64, j: i64, k: i64) -> Self {
        Self { i, j, k }
    }

    pub const fn offset(self, di: i64, dj: i64, dk: i64) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }

    /// The six face-adjacent neighbours.
    pub fn neighbors6(self) -> [VoxelIndex; 6] {
        [
            self.offset(1, 0, 0),
            self.offset(-1, 0, 0),
            self.offset(0, 1, 0),
            self.offset(0, -1, 0),
            self.offset(0, 0, 1),
            self.offset(0, 0, -1),
        ]
    }

    /// Manhattan distance between two indices.
    pub fn l1(self, other: VoxelIndex) -> i64 {
        (self.i - other.i).abs() + (self.j - other.j).abs() + (self.k - other.k).abs()
    }
}

/// Ternary voxel state `m_o`, `m_f`, `m_u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoxelState {
    Occupied,
    Free,
    Unknown,
}

impl VoxelState {
    pub fn is_known(self) -> bool {
        self != VoxelState::Unknown
    }

    pub fn as_char(self) -> char {
        match self {
            VoxelState::Occupied => 'o',
            VoxelState::Free => 'f',
            VoxelState::Unknown => 'u',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'o' => Some(VoxelState::Occupied),
            'f' => Some(VoxelState::Free),
            'u' => Some(VoxelState::Unknown),
            _ => None,
        }
    }
}

/// Voxel size and block layout shared by all grids of one map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    voxel_size: f64,
    block_side: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.08,
            block_side: 16,
        }
    }
}

impl GridConfig {
    pub fn new(voxel_size: f64, block_side: usize) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if block_side == 0 || !block_side.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "block side must be a power of two, got {block_side}"
            )));
        }
        Ok(Self {
            voxel_size,
            block_side,
        })
    }

    pub fn with_voxel_size(voxel_size: f64) -> Result<Self> {
        Self::new(voxel_size, 16)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn block_side(&self) -> usize {
        self.block_side
    }

    pub fn world_to_index(&self, p: &Point3<f64>) -> VoxelIndex {
        VoxelIndex::new(
            (p.x / self.voxel_size).floor() as i64,
            (p.y / self.voxel_size).floor() as i64,
            (p.z / self.voxel_size).floor() as i64,
        )
    }

    pub fn index_to_center(&self, v: VoxelIndex) -> Point3<f64> {
        let h = 0.5 * self.voxel_size;
        Point3::new(
            v.i as f64 * self.voxel_size + h,
            v.j as f64 * self.voxel_size + h,
            v.k as f64 * self.voxel_size + h,
        )
    }

    pub fn index_to_min_corner(&self, v: VoxelIndex) -> Point3<f64> {
        Point3::new(
            v.i as f64 * self.voxel_size,
            v.j as f64 * self.voxel_size,
            v.k as f64 * self.voxel_size,
        )
    }

    /// True when two configurations describe the same voxel lattice.
    pub fn same_lattice(&self, other: &GridConfig) -> bool {
        (self.voxel_size - other.voxel_size).abs() <= 1e-12 * self.voxel_size.max(1.0)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let r = a - two_pi * ((a + PI) / two_pi).floor();
    // floating error can land exactly on +π
    if r >= PI {
        r - two_pi
    } else {
        r
    }
}

/// Position plus yaw of the robot or its sensor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Yaw in radians, kept in `[-π, π)`.
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            yaw: normalize_angle(yaw),
        }
    }

    pub fn from_position(p: Point3<f64>, yaw: f64) -> Self {
        Self::new(p.x, p.y, p.z, yaw)
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::new(self.x, self.y, self.z)
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.position() - other.position()).norm()
    }

    /// Absolute yaw difference in `[0, π]`.
    pub fn yaw_distance(&self, other: &Pose) -> f64 {
        normalize_angle(other.yaw - self.yaw).abs()
    }

    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }
}

/// Axis-aligned world-space box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Bounds {
    pub fn new(min: Point3<f64>, max: Point3<f64>) -> Self {
        Self { min, max }
    }

    /// Unbounded box, used for maps that are not tied to a world.
    pub fn infinite() -> Self {
        Self {
            min: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            max: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        }
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct BlockKey(i64, i64, i64);

/// Remembers the last block touched so consecutive accesses inside one block
/// skip the hash lookup.
#[derive(Clone, Copy, Debug)]
pub struct BlockCache {
    key: BlockKey,
    slot: u32,
}

impl Default for BlockCache {
    fn default() -> Self {
        Self {
            key: BlockKey(i64::MIN, i64::MIN, i64::MIN),
            slot: u32::MAX,
        }
    }
}

const MISSING: u32 = u32::MAX - 1;

/// Sparse voxel storage allocated in dense cubic blocks.
///
/// Multiple readers may share `&BlockHashGrid`; writes need `&mut`, so the
/// type is `Send + Sync` whenever the payload is.
#[derive(Clone, Debug)]
pub struct BlockHashGrid<T> {
    cfg: GridConfig,
    shift: u32,
    mask: i64,
    index: FxHashMap<BlockKey, u32>,
    keys: Vec<BlockKey>,
    blocks: Vec<Box<[T]>>,
    default: T,
}

impl<T: Clone + Default> BlockHashGrid<T> {
    pub fn new(cfg: GridConfig) -> Self {
        Self::with_default(cfg, T::default())
    }
}

impl<T: Clone> BlockHashGrid<T> {
    pub fn with_default(cfg: GridConfig, default: T) -> Self {
        Self {
            cfg,
            shift: cfg.block_side.trailing_zeros(),
            mask: cfg.block_side as i64 - 1,
            index: FxHashMap::default(),
            keys: Vec::new(),
            blocks: Vec::new(),
            default,
        }
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    /// Payload returned for voxels that were never written.
    pub fn default_value(&self) -> &T {
        &self.default
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn allocated_voxels(&self) -> usize {
        self.blocks.len() * self.block_len()
    }

    fn block_len(&self) -> usize {
        let s = self.cfg.block_side;
        s * s * s
    }

    #[inline]
    fn split(&self, v: VoxelIndex) -> (BlockKey, usize) {
        let key = BlockKey(v.i >> self.shift, v.j >> self.shift, v.k >> self.shift);
        let s = self.cfg.block_side;
        let local = (((v.k & self.mask) as usize * s) + (v.j & self.mask) as usize) * s
            + (v.i & self.mask) as usize;
        (key, local)
    }

    #[inline]
    pub fn get(&self, v: VoxelIndex) -> &T {
        let (key, local) = self.split(v);
        match self.index.get(&key) {
            Some(&slot) => &self.blocks[slot as usize][local],
            None => &self.default,
        }
    }

    /// Like [`get`](Self::get) but reuses the block found by the previous call.
    #[inline]
    pub fn get_cached(&self, v: VoxelIndex, cache: &mut BlockCache) -> &T {
        let (key, local) = self.split(v);
        if cache.key != key {
            cache.key = key;
            cache.slot = self.index.get(&key).copied().unwrap_or(MISSING);
        }
        if cache.slot == MISSING {
            &self.default
        } else {
            &self.blocks[cache.slot as usize][local]
        }
    }

    fn slot_for(&mut self, key: BlockKey) -> u32 {
        if let Some(&slot) = self.index.get(&key) {
            return slot;
        }
        let slot = self.blocks.len() as u32;
        self.blocks
            .push(vec![self.default.clone(); self.block_len()].into_boxed_slice());
        self.keys.push(key);
        self.index.insert(key, slot);
        slot
    }

    /// Mutable access, allocating the containing block on first write.
    #[inline]
    pub fn get_mut(&mut self, v: VoxelIndex) -> &mut T {
        let (key, local) = self.split(v);
        let slot = self.slot_for(key);
        &mut self.blocks[slot as usize][local]
    }

    #[inline]
    pub fn get_mut_cached(&mut self, v: VoxelIndex, cache: &mut BlockCache) -> &mut T {
        let (key, local) = self.split(v);
        if cache.key != key || cache.slot == MISSING {
            cache.key = key;
            cache.slot = self.slot_for(key);
        }
        &mut self.blocks[cache.slot as usize][local]
    }

    pub fn set(&mut self, v: VoxelIndex, value: T) {
        *self.get_mut(v) = value;
    }

    pub fn is_allocated(&self, v: VoxelIndex) -> bool {
        self.index.contains_key(&self.split(v).0)
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.keys.clear();
        self.blocks.clear();
    }

    /// Visits every voxel of every allocated block in allocation order.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, &T)> + '_ {
        let s = self.cfg.block_side as i64;
        self.keys
            .iter()
            .zip(self.blocks.iter())
            .flat_map(move |(key, block)| {
                block.iter().enumerate().map(move |(local, value)| {
                    let local = local as i64;
                    let v = VoxelIndex::new(
                        key.0 * s + local % s,
                        key.1 * s + (local / s) % s,
                        key.2 * s + local / (s * s),
                    );
                    (v, value)
                })
            })
    }
}
