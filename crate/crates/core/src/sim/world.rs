//! Ground-truth worlds and the procedural indoor generator.

use std::collections::VecDeque;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ClassId, SemanticClass, EMPTY_CLASS};
use crate::grid::{BlockCache, BlockHashGrid, Bounds, GridConfig, Pose, VoxelIndex, VoxelState};

/// Static voxel world: label 0 is free, any other label is an occupied voxel of
/// that class. Everything outside the box is free.
#[derive(Clone, Debug)]
pub struct GroundTruthWorld {
    grid: BlockHashGrid<ClassId>,
    origin: VoxelIndex,
    dims: [usize; 3],
    start: Pose,
}

impl GroundTruthWorld {
    /// An all-free world of `dims` voxels whose minimum corner is voxel `origin`.
    pub fn new(cfg: GridConfig, origin: VoxelIndex, dims: [usize; 3], start: Pose) -> Self {
        Self {
            grid: BlockHashGrid::with_default(cfg, EMPTY_CLASS),
            origin,
            dims,
            start,
        }
    }

    pub fn config(&self) -> &GridConfig {
        self.grid.config()
    }

    pub fn origin(&self) -> VoxelIndex {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn start(&self) -> Pose {
        self.start
    }

    pub fn set_start(&mut self, start: Pose) {
        self.start = start;
    }

    pub fn num_voxels(&self) -> usize {
        self.dims.iter().product()
    }

    /// Metric extent of the voxel box.
    pub fn bounds(&self) -> Bounds {
        let cfg = self.config();
        let lo = cfg.index_to_min_corner(self.origin);
        let hi = cfg.index_to_min_corner(self.origin.offset(
            self.dims[0] as i64,
            self.dims[1] as i64,
            self.dims[2] as i64,
        ));
        Bounds::new(lo, hi)
    }

    #[inline]
    pub fn contains_index(&self, v: VoxelIndex) -> bool {
        let (di, dj, dk) = (v.i - self.origin.i, v.j - self.origin.j, v.k - self.origin.k);
        di >= 0
            && dj >= 0
            && dk >= 0
            && (di as usize) < self.dims[0]
            && (dj as usize) < self.dims[1]
            && (dk as usize) < self.dims[2]
    }

    #[inline]
    pub fn label(&self, v: VoxelIndex) -> ClassId {
        if self.contains_index(v) {
            *self.grid.get(v)
        } else {
            EMPTY_CLASS
        }
    }

    #[inline]
    pub fn label_cached(&self, v: VoxelIndex, cache: &mut BlockCache) -> ClassId {
        if self.contains_index(v) {
            *self.grid.get_cached(v, cache)
        } else {
            EMPTY_CLASS
        }
    }

    #[inline]
    pub fn is_occupied(&self, v: VoxelIndex) -> bool {
        self.label(v) != EMPTY_CLASS
    }

    /// Ground-truth state `M*(v)`.
    #[inline]
    pub fn state(&self, v: VoxelIndex) -> VoxelState {
        if self.is_occupied(v) {
            VoxelState::Occupied
        } else {
            VoxelState::Free
        }
    }

    pub fn set_label(&mut self, v: VoxelIndex, label: ClassId) -> Result<()> {
        if !self.contains_index(v) {
            return Err(Error::OutOfBounds {
                x: v.i as f64,
                y: v.j as f64,
                z: v.k as f64,
            });
        }
        self.grid.set(v, label);
        Ok(())
    }

    /// Local coordinates `(0..nx, 0..ny, 0..nz)` to a global index.
    #[inline]
    pub fn local(&self, x: usize, y: usize, z: usize) -> VoxelIndex {
        self.origin.offset(x as i64, y as i64, z as i64)
    }

    /// All indices in x-fastest order.
    pub fn indices(&self) -> impl Iterator<Item = VoxelIndex> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |z| (0..ny).flat_map(move |y| (0..nx).map(move |x| self.local(x, y, z))))
    }

    pub fn occupied_count(&self) -> usize {
        self.grid.iter().filter(|(v, l)| **l != EMPTY_CLASS && self.contains_index(*v)).count()
    }

    /// Whether every voxel overlapping a sphere of radius `r` at `p` is free.
    pub fn sphere_is_free(&self, p: &Point3<f64>, r: f64) -> bool {
        let cfg = *self.config();
        let nu = cfg.voxel_size();
        let lo = cfg.world_to_index(&Point3::new(p.x - r, p.y - r, p.z - r));
        let hi = cfg.world_to_index(&Point3::new(p.x + r, p.y + r, p.z + r));
        let mut cache = BlockCache::default();
        for k in lo.k..=hi.k {
            for j in lo.j..=hi.j {
                for i in lo.i..=hi.i {
                    let v = VoxelIndex::new(i, j, k);
                    if self.label_cached(v, &mut cache) == EMPTY_CLASS {
                        continue;
                    }
                    let c = cfg.index_to_min_corner(v);
                    let mut d2 = 0.0;
                    for a in 0..3 {
                        let q = p[a].clamp(c[a], c[a] + nu);
                        d2 += (p[a] - q) * (p[a] - q);
                    }
                    if d2 < r * r {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Free voxels 6-connected to `start` inside the world box.
    pub fn reachable_free(&self, start: VoxelIndex) -> Vec<VoxelIndex> {
        let n = self.num_voxels();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        if !self.contains_index(start) || self.is_occupied(start) {
            return out;
        }
        let idx = |v: VoxelIndex| -> usize {
            let (x, y, z) = (
                (v.i - self.origin.i) as usize,
                (v.j - self.origin.j) as usize,
                (v.k - self.origin.k) as usize,
            );
            (z * self.dims[1] + y) * self.dims[0] + x
        };
        let mut queue = VecDeque::from([start]);
        seen[idx(start)] = true;
        let mut cache = BlockCache::default();
        while let Some(v) = queue.pop_front() {
            out.push(v);
            for w in v.neighbors6() {
                if self.contains_index(w) && !seen[idx(w)] && self.label_cached(w, &mut cache) == EMPTY_CLASS {
                    seen[idx(w)] = true;
                    queue.push_back(w);
                }
            }
        }
        out
    }
}

/// Parameters of the procedural generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    /// Outer extent in metres.
    pub size: [f64; 3],
    pub voxel_size: f64,
    pub rooms: usize,
    pub clutter_per_room: usize,
    pub door_width: f64,
    pub door_height: f64,
    /// Wall thickness in voxels.
    pub wall_voxels: usize,
    pub min_room_side: f64,
    /// Clutter and doors span floor to ceiling, so every horizontal slice is identical.
    pub extruded: bool,
    /// Radius around the start kept free of clutter.
    pub start_clearance: f64,
    pub start_height: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            size: [20.0, 15.0, 3.0],
            voxel_size: 0.08,
            rooms: 4,
            clutter_per_room: 4,
            door_width: 1.2,
            door_height: 2.2,
            wall_voxels: 2,
            min_room_side: 3.0,
            extruded: false,
            start_clearance: 1.0,
            start_height: 1.2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Rect {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Rect {
    fn side(&self, axis: usize) -> usize {
        if axis == 0 {
            self.x1 - self.x0
        } else {
            self.y1 - self.y0
        }
    }

    fn area(&self) -> usize {
        self.side(0) * self.side(1)
    }
}

/// Door in an interior wall. The wall is normal to `axis` and occupies
/// `[line, line + wall)` along it; the opening spans `[lo, hi)` along the other axis.
#[derive(Clone, Copy, Debug)]
struct Door {
    axis: usize,
    line: usize,
    lo: usize,
    hi: usize,
}

fn dims_z_full(spec: &WorldSpec) -> usize {
    (spec.size[2] / spec.voxel_size).round() as usize
}

/// Builds a connected indoor world: BSP rooms joined by doors, plus box and
/// cylinder clutter. Free pockets unreachable from the start are filled.
pub fn generate_world(spec: &WorldSpec, seed: u64) -> Result<GroundTruthWorld> {
    let cfg = GridConfig::with_voxel_size(spec.voxel_size)?;
    let nu = spec.voxel_size;
    let to_vox = |m: f64| (m / nu).round() as usize;
    let dims = [to_vox(spec.size[0]), to_vox(spec.size[1]), to_vox(spec.size[2])];
    let w = spec.wall_voxels.max(1);
    let min_room = to_vox(spec.min_room_side);
    let door_w = to_vox(spec.door_width);
    let door_h = if spec.extruded { dims_z_full(spec) } else { to_vox(spec.door_height) };
    if spec.rooms == 0 {
        return Err(Error::InfeasibleWorld("at least one room is required".into()));
    }
    if dims[0] < min_room + 2 * w || dims[1] < min_room + 2 * w {
        return Err(Error::InfeasibleWorld(format!(
            "footprint {:?} m is smaller than one {} m room",
            spec.size, spec.min_room_side
        )));
    }
    let clear_z = (spec.start_height + spec.start_clearance) / nu + 1.0;
    if (dims[2] as f64) < clear_z + 1.0 {
        return Err(Error::InfeasibleWorld(format!("height {} m is too low", spec.size[2])));
    }
    if door_w + 2 > min_room {
        return Err(Error::InfeasibleWorld("doors wider than the minimum room side".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = GroundTruthWorld::new(cfg, VoxelIndex::new(0, 0, 0), dims, Pose::new(0.0, 0.0, 0.0, 0.0));
    let [nx, ny, nz] = dims;
    let wall = SemanticClass::Wall.id();
    let floor = SemanticClass::Floor.id();

    let fill = |world: &mut GroundTruthWorld, x: (usize, usize), y: (usize, usize), z: (usize, usize), label| {
        for k in z.0..z.1 {
            for j in y.0..y.1 {
                for i in x.0..x.1 {
                    world.grid.set(world.local(i, j, k), label);
                }
            }
        }
    };

    fill(&mut world, (0, nx), (0, ny), (0, 1), floor);
    fill(&mut world, (0, nx), (0, ny), (nz - 1, nz), wall);
    fill(&mut world, (0, w), (0, ny), (1, nz - 1), wall);
    fill(&mut world, (nx - w, nx), (0, ny), (1, nz - 1), wall);
    fill(&mut world, (0, nx), (0, w), (1, nz - 1), wall);
    fill(&mut world, (0, nx), (ny - w, ny), (1, nz - 1), wall);

    // binary space partition of the interior footprint
    let mut rooms = vec![Rect {
        x0: w,
        y0: w,
        x1: nx - w,
        y1: ny - w,
    }];
    let mut doors: Vec<Door> = Vec::new();
    let margin = w + 2;
    while rooms.len() < spec.rooms {
        let mut order: Vec<usize> = (0..rooms.len()).collect();
        order.sort_by_key(|&r| (std::cmp::Reverse(rooms[r].area()), r));
        let mut done = false;
        'rooms: for r in order {
            let rect = rooms[r];
            let mut axes = [0usize, 1];
            if rect.side(1) > rect.side(0) {
                axes.swap(0, 1);
            }
            for axis in axes {
                let (lo, hi) = if axis == 0 { (rect.x0, rect.x1) } else { (rect.y0, rect.y1) };
                if hi - lo < 2 * min_room + w {
                    continue;
                }
                for _ in 0..32 {
                    let s = rng.gen_range(lo + min_room..=hi - min_room - w);
                    // a new wall must not run into a door of a perpendicular wall bounding this room
                    let blocked = doors.iter().any(|d| {
                        let (olo, ohi) = if axis == 0 { (rect.y0, rect.y1) } else { (rect.x0, rect.x1) };
                        d.axis != axis
                            && (d.line + w == olo || d.line == ohi)
                            && s < d.hi + margin
                            && d.lo < s + w + margin
                    });
                    if blocked {
                        continue;
                    }
                    let (olo, ohi) = if axis == 0 { (rect.y0, rect.y1) } else { (rect.x0, rect.x1) };
                    let d0 = rng.gen_range(olo + margin..=ohi - margin - door_w);
                    let (a, b) = if axis == 0 {
                        (
                            Rect { x1: s, ..rect },
                            Rect { x0: s + w, ..rect },
                        )
                    } else {
                        (
                            Rect { y1: s, ..rect },
                            Rect { y0: s + w, ..rect },
                        )
                    };
                    if axis == 0 {
                        fill(&mut world, (s, s + w), (rect.y0, rect.y1), (1, nz - 1), wall);
                        fill(&mut world, (s, s + w), (d0, d0 + door_w), (1, (1 + door_h).min(nz - 1)), EMPTY_CLASS);
                    } else {
                        fill(&mut world, (rect.x0, rect.x1), (s, s + w), (1, nz - 1), wall);
                        fill(&mut world, (d0, d0 + door_w), (s, s + w), (1, (1 + door_h).min(nz - 1)), EMPTY_CLASS);
                    }
                    doors.push(Door {
                        axis,
                        line: s,
                        lo: d0,
                        hi: d0 + door_w,
                    });
                    rooms[r] = a;
                    rooms.push(b);
                    done = true;
                    break 'rooms;
                }
            }
        }
        if !done {
            return Err(Error::InfeasibleWorld(format!(
                "cannot fit {} rooms of side {} m into {:?} m",
                spec.rooms, spec.min_room_side, spec.size
            )));
        }
    }

    let first = rooms[0];
    let start = Pose::new(
        (first.x0 + first.x1) as f64 * 0.5 * nu,
        (first.y0 + first.y1) as f64 * 0.5 * nu,
        spec.start_height,
        0.0,
    );
    world.start = start;

    // clutter keeps out of door approaches and the start ball, and leaves
    // either no gap or a robot-sized gap to walls and other objects
    let approach = to_vox(1.0);
    let gap = to_vox(1.0);
    let keep_out: Vec<(usize, usize, usize, usize)> = doors
        .iter()
        .map(|d| {
            if d.axis == 0 {
                (d.line.saturating_sub(approach), d.lo.saturating_sub(2), d.line + w + approach, d.hi + 2)
            } else {
                (d.lo.saturating_sub(2), d.line.saturating_sub(approach), d.hi + 2, d.line + w + approach)
            }
        })
        .collect();
    let start_v = cfg.world_to_index(&start.position());
    let start_keep = to_vox(spec.start_clearance + 0.5);
    let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
    for room in &rooms {
        for _ in 0..spec.clutter_per_room {
            for _attempt in 0..40 {
                let kind = rng.gen_range(0..3u8);
                let (sx, sy, height, class, cylinder) = match kind {
                    0 => {
                        let long = rng.gen_range(1.6..2.2);
                        let short = rng.gen_range(0.8..1.0);
                        let (sx, sy) = if rng.gen_bool(0.5) { (long, short) } else { (short, long) };
                        (sx, sy, rng.gen_range(0.8..1.0), SemanticClass::Sofa.id(), false)
                    }
                    1 => (
                        rng.gen_range(0.4..1.2),
                        rng.gen_range(0.4..1.2),
                        rng.gen_range(0.4..2.0),
                        SemanticClass::Furniture.id(),
                        false,
                    ),
                    _ => {
                        let d = rng.gen_range(0.3..0.8);
                        (d, d, rng.gen_range(0.5..2.0), SemanticClass::Furniture.id(), true)
                    }
                };
                let (sx, sy) = (to_vox(sx).max(2), to_vox(sy).max(2));
                // flush against a wall or at least a robot gap away, per axis
                let pick = |rng: &mut ChaCha8Rng, lo: usize, hi: usize, s: usize| -> Option<usize> {
                    if hi < lo + gap + s {
                        return None;
                    }
                    match rng.gen_range(0..3u8) {
                        0 => Some(lo),
                        1 => Some(hi - s),
                        _ if hi >= lo + 2 * gap + s => Some(rng.gen_range(lo + gap..=hi - gap - s)),
                        _ => None,
                    }
                };
                let (Some(x0), Some(y0)) = (pick(&mut rng, room.x0, room.x1, sx), pick(&mut rng, room.y0, room.y1, sy))
                else {
                    continue;
                };
                let (x1, y1) = (x0 + sx, y0 + sy);
                let overlaps = |r: &(usize, usize, usize, usize), pad: usize| {
                    x0 < r.2 + pad && r.0 < x1 + pad && y0 < r.3 + pad && r.1 < y1 + pad
                };
                if keep_out.iter().any(|r| overlaps(r, 0)) || placed.iter().any(|r| overlaps(r, gap)) {
                    continue;
                }
                let (svx, svy) = (start_v.i as usize, start_v.j as usize);
                if x0 < svx + start_keep && svx < x1 + start_keep && y0 < svy + start_keep && svy < y1 + start_keep {
                    continue;
                }
                let hz = if spec.extruded { nz - 1 } else { (1 + to_vox(height)).min(nz - 1) };
                let (cx, cy, r2) = ((x0 + x1) as f64 * 0.5, (y0 + y1) as f64 * 0.5, (sx as f64 * 0.5).powi(2));
                for j in y0..y1 {
                    for i in x0..x1 {
                        if cylinder {
                            let (dx, dy) = (i as f64 + 0.5 - cx, j as f64 + 0.5 - cy);
                            if dx * dx + dy * dy > r2 {
                                continue;
                            }
                        }
                        for k in 1..hz {
                            world.grid.set(world.local(i, j, k), class);
                        }
                    }
                }
                placed.push((x0, y0, x1, y1));
                break;
            }
        }
    }

    if !world.sphere_is_free(&start.position(), spec.start_clearance) {
        return Err(Error::InfeasibleWorld("start clearance is not free".into()));
    }
    let reachable = world.reachable_free(start_v);
    let mut mask = vec![false; world.num_voxels()];
    for v in &reachable {
        mask[((v.k as usize) * ny + v.j as usize) * nx + v.i as usize] = true;
    }
    let furniture = SemanticClass::Furniture.id();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = world.local(i, j, k);
                if !mask[(k * ny + j) * nx + i] && world.label(v) == EMPTY_CLASS {
                    world.grid.set(v, furniture);
                }
            }
        }
    }
    Ok(world)
}
