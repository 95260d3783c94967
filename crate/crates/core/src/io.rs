//! Text formats for ground-truth worlds and map snapshots.
//!
//! World file:
//!
//! ```text
//! scx-world 1
//! dims <nx> <ny> <nz>
//! voxel_size <ν>
//! origin <i> <j> <k>
//! start <x> <y> <z> <yaw>
//! runs <n>
//! <count> <label>          (n lines)
//! ```
//!
//! Runs cover the box x-fastest, then y, then z; label 0 is free space. Lines
//! end in `\n`, fields are separated by one space, and floats are written in
//! their shortest round-trip form, so equal worlds produce equal bytes.
//!
//! Map snapshot:
//!
//! ```text
//! scx-map 1
//! voxel_size <ν>
//! bounds <min x y z> <max x y z>
//! tau <τ>
//! strategy <name>
//! measured <n>
//! <i> <j> <k> <log-odds>   (n lines, observed voxels only)
//! sc <m>
//! <i> <j> <k> <log-odds>   (m lines, predicted voxels only)
//! ```

use std::io::{BufRead, Write};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::fusion::{ClassCalibration, FusionStrategy, ScLayer};
use crate::grid::{Bounds, GridConfig, Pose, VoxelIndex};
use crate::layered::MultiLayerMap;
use crate::measured::{MeasuredMap, MeasuredVoxel};
use crate::sim::world::GroundTruthWorld;

const WORLD_HEADER: &str = "scx-world 1";
const MAP_HEADER: &str = "scx-map 1";

pub fn write_world<W: Write>(world: &GroundTruthWorld, mut out: W) -> Result<()> {
    let [nx, ny, nz] = world.dims();
    let o = world.origin();
    let s = world.start();
    writeln!(out, "{WORLD_HEADER}")?;
    writeln!(out, "dims {nx} {ny} {nz}")?;
    writeln!(out, "voxel_size {}", world.config().voxel_size())?;
    writeln!(out, "origin {} {} {}", o.i, o.j, o.k)?;
    writeln!(out, "start {} {} {} {}", s.x, s.y, s.z, s.yaw)?;
    let mut runs: Vec<(usize, u8)> = Vec::new();
    for v in world.indices() {
        let l = world.label(v);
        match runs.last_mut() {
            Some((n, last)) if *last == l => *n += 1,
            _ => runs.push((1, l)),
        }
    }
    writeln!(out, "runs {}", runs.len())?;
    for (n, l) in runs {
        writeln!(out, "{n} {l}")?;
    }
    Ok(())
}

/// Line reader that numbers lines from one for error messages.
struct Lines<R: BufRead> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(r: R) -> Self {
        Self {
            inner: r.lines(),
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    /// Reads `<key> <fields...>` and returns the fields.
    fn keyed(&mut self, key: &str, n: usize) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut tok = l.split(' ');
        if tok.next() != Some(key) {
            return Err(self.err(format!("expected `{key}`")));
        }
        let fields: Vec<String> = tok.map(str::to_owned).collect();
        if fields.len() != n {
            return Err(self.err(format!("`{key}` takes {n} fields")));
        }
        Ok(fields)
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse {s:?}")))
    }

    fn header(&mut self, expected: &str) -> Result<()> {
        if self.next_line()?.trim_end() != expected {
            return Err(self.err(format!("expected header `{expected}`")));
        }
        Ok(())
    }

    fn expect_end(&mut self) -> Result<()> {
        while let Some(l) = self.inner.next() {
            self.line += 1;
            if !l?.trim().is_empty() {
                return Err(self.err("trailing data"));
            }
        }
        Ok(())
    }
}

pub fn read_world<R: BufRead>(input: R) -> Result<GroundTruthWorld> {
    let mut r = Lines::new(input);
    r.header(WORLD_HEADER)?;
    let d = r.keyed("dims", 3)?;
    let dims: [usize; 3] = [r.parse(&d[0])?, r.parse(&d[1])?, r.parse(&d[2])?];
    let nu: f64 = {
        let f = r.keyed("voxel_size", 1)?;
        r.parse(&f[0])?
    };
    let cfg = GridConfig::with_voxel_size(nu).map_err(|e| r.err(e.to_string()))?;
    let o = r.keyed("origin", 3)?;
    let origin = VoxelIndex::new(r.parse(&o[0])?, r.parse(&o[1])?, r.parse(&o[2])?);
    let s = r.keyed("start", 4)?;
    let start = Pose::new(r.parse(&s[0])?, r.parse(&s[1])?, r.parse(&s[2])?, r.parse(&s[3])?);
    let n: usize = {
        let f = r.keyed("runs", 1)?;
        r.parse(&f[0])?
    };
    let mut world = GroundTruthWorld::new(cfg, origin, dims, start);
    let total: usize = dims.iter().product();
    let [nx, ny, _] = dims;
    let mut pos = 0usize;
    for _ in 0..n {
        let l = r.next_line()?;
        let parts: Vec<&str> = l.split(' ').collect();
        if parts.len() != 2 {
            return Err(r.err("a run is `<count> <label>`"));
        }
        let count: usize = r.parse(parts[0])?;
        let label: u8 = r.parse(parts[1])?;
        if count == 0 || pos + count > total {
            return Err(r.err("run overflows the world box"));
        }
        if label != 0 {
            for p in pos..pos + count {
                let v = world.local(p % nx, (p / nx) % ny, p / (nx * ny));
                world.set_label(v, label)?;
            }
        }
        pos += count;
    }
    if pos != total {
        return Err(r.err(format!("runs cover {pos} of {total} voxels")));
    }
    r.expect_end()?;
    Ok(world)
}

pub fn world_to_string(world: &GroundTruthWorld) -> String {
    let mut buf = Vec::new();
    write_world(world, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

pub fn write_map<W: Write>(map: &MultiLayerMap, mut out: W) -> Result<()> {
    let b = map.measured.bounds();
    writeln!(out, "{MAP_HEADER}")?;
    writeln!(out, "voxel_size {}", map.config().voxel_size())?;
    writeln!(
        out,
        "bounds {} {} {} {} {} {}",
        b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z
    )?;
    writeln!(out, "tau {}", map.tau())?;
    writeln!(out, "strategy {}", map.sc.strategy().name())?;
    let mut measured: Vec<(VoxelIndex, f32)> = map
        .measured
        .grid()
        .iter()
        .filter(|(_, m)| m.observed)
        .map(|(v, m)| (v, m.log_odds))
        .collect();
    measured.sort_by_key(|p| p.0);
    writeln!(out, "measured {}", measured.len())?;
    for (v, l) in measured {
        writeln!(out, "{} {} {} {l}", v.i, v.j, v.k)?;
    }
    let mut sc: Vec<(VoxelIndex, f64)> = map
        .sc
        .grid()
        .iter()
        .filter_map(|(v, s)| s.log_odds().map(|l| (v, l)))
        .collect();
    sc.sort_by_key(|p| p.0);
    writeln!(out, "sc {}", sc.len())?;
    for (v, l) in sc {
        writeln!(out, "{} {} {} {l}", v.i, v.j, v.k)?;
    }
    Ok(())
}

pub fn read_map<R: BufRead>(input: R) -> Result<MultiLayerMap> {
    let mut r = Lines::new(input);
    r.header(MAP_HEADER)?;
    let nu: f64 = {
        let f = r.keyed("voxel_size", 1)?;
        r.parse(&f[0])?
    };
    let cfg = GridConfig::with_voxel_size(nu).map_err(|e| r.err(e.to_string()))?;
    let b = r.keyed("bounds", 6)?;
    let mut c = [0.0; 6];
    for (x, s) in c.iter_mut().zip(&b) {
        *x = r.parse(s)?;
    }
    let bounds = Bounds::new(Point3::new(c[0], c[1], c[2]), Point3::new(c[3], c[4], c[5]));
    let tau: f64 = {
        let f = r.keyed("tau", 1)?;
        r.parse(&f[0])?
    };
    let strategy = {
        let f = r.keyed("strategy", 1)?;
        FusionStrategy::parse(&f[0]).ok_or_else(|| r.err(format!("unknown strategy {:?}", f[0])))?
    };
    let mut map = MultiLayerMap::new(
        MeasuredMap::new(cfg, bounds),
        ScLayer::new(cfg, strategy, ClassCalibration::default()),
        tau,
    )
    .map_err(|e| r.err(e.to_string()))?;
    let n: usize = {
        let f = r.keyed("measured", 1)?;
        r.parse(&f[0])?
    };
    for _ in 0..n {
        let (v, l) = voxel_line::<f32, R>(&mut r)?;
        map.measured.set_voxel(v, MeasuredVoxel { log_odds: l, observed: true });
    }
    let m: usize = {
        let f = r.keyed("sc", 1)?;
        r.parse(&f[0])?
    };
    for _ in 0..m {
        let (v, l) = voxel_line::<f64, R>(&mut r)?;
        map.sc.set_log_odds(v, l);
    }
    r.expect_end()?;
    Ok(map)
}

fn voxel_line<T: std::str::FromStr, R: BufRead>(r: &mut Lines<R>) -> Result<(VoxelIndex, T)> {
    let l = r.next_line()?;
    let parts: Vec<&str> = l.split(' ').collect();
    if parts.len() != 4 {
        return Err(r.err("expected `<i> <j> <k> <value>`"));
    }
    let v = VoxelIndex::new(r.parse(parts[0])?, r.parse(parts[1])?, r.parse(parts[2])?);
    Ok((v, r.parse(parts[3])?))
}
