//! The logged sensing and prediction stream of a mission, its text format and
//! fusion replay.
//!
//! Text format, one record per line after the header `scx-stream 1`:
//!
//! ```text
//! S <t> <x> <y> <z> <yaw>
//! P <t> <x> <y> <z> <yaw> <oi> <oj> <ok> <nx> <ny> <nz> <voxel_size> <masked 0|1> <runs> <run>...
//! ```
//!
//! A run is `<count>,<o|f>,<class>,<confidence>` with `,<0|1>` appended when the
//! record carries a measured mask. Voxels are listed x-fastest. Floats use the
//! shortest representation that parses back to the same value.

use std::hash::{Hash, Hasher};
use std::io::{BufRead, Write};

use rustc_hash::FxHasher;

use crate::error::{Error, Result};
use crate::fusion::{ClassCalibration, FusionStrategy, PredictedState, PredictedVoxel, Prediction, ScLayer};
use crate::grid::{GridConfig, Pose, VoxelIndex};
use crate::layered::MultiLayerMap;
use crate::measured::MeasuredMap;
use crate::metrics::{snapshot_with, EvaluationSet, MetricsRecord, ObservableSpace};
use crate::sensor::SensorModel;
use crate::sim::render_depth;
use crate::sim::world::GroundTruthWorld;

/// A run of identical voxels inside a prediction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Run {
    pub count: u32,
    pub voxel: PredictedVoxel,
    pub measured: bool,
}

/// Run-length encoded prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub t: f64,
    pub anchor: Pose,
    pub origin: VoxelIndex,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub masked: bool,
    pub runs: Vec<Run>,
}

impl PredictionRecord {
    pub fn encode(t: f64, pred: &Prediction) -> Self {
        let mut runs: Vec<Run> = Vec::new();
        for (n, v) in pred.voxels.iter().enumerate() {
            let measured = pred.measured_mask.as_ref().is_some_and(|m| m[n]);
            match runs.last_mut() {
                Some(r) if r.voxel == *v && r.measured == measured => r.count += 1,
                _ => runs.push(Run {
                    count: 1,
                    voxel: *v,
                    measured,
                }),
            }
        }
        Self {
            t,
            anchor: pred.anchor,
            origin: pred.origin,
            dims: pred.dims,
            voxel_size: pred.voxel_size,
            masked: pred.measured_mask.is_some(),
            runs,
        }
    }

    pub fn decode(&self) -> Prediction {
        let n: usize = self.runs.iter().map(|r| r.count as usize).sum();
        let mut voxels = Vec::with_capacity(n);
        let mut mask = Vec::with_capacity(if self.masked { n } else { 0 });
        for r in &self.runs {
            voxels.extend(std::iter::repeat(r.voxel).take(r.count as usize));
            if self.masked {
                mask.extend(std::iter::repeat(r.measured).take(r.count as usize));
            }
        }
        Prediction {
            anchor: self.anchor,
            origin: self.origin,
            dims: self.dims,
            voxel_size: self.voxel_size,
            voxels,
            measured_mask: self.masked.then_some(mask),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StreamEntry {
    /// A depth image was taken from `pose`.
    Sense { t: f64, pose: Pose },
    Predict(PredictionRecord),
}

impl StreamEntry {
    pub fn t(&self) -> f64 {
        match self {
            StreamEntry::Sense { t, .. } => *t,
            StreamEntry::Predict(r) => r.t,
        }
    }
}

const HEADER: &str = "scx-stream 1";

pub fn write_stream<W: Write>(entries: &[StreamEntry], mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for e in entries {
        match e {
            StreamEntry::Sense { t, pose } => {
                writeln!(out, "S {t} {} {} {} {}", pose.x, pose.y, pose.z, pose.yaw)?;
            }
            StreamEntry::Predict(r) => {
                let a = &r.anchor;
                write!(
                    out,
                    "P {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
                    r.t,
                    a.x,
                    a.y,
                    a.z,
                    a.yaw,
                    r.origin.i,
                    r.origin.j,
                    r.origin.k,
                    r.dims[0],
                    r.dims[1],
                    r.dims[2],
                    r.voxel_size,
                    u8::from(r.masked),
                    r.runs.len()
                )?;
                for run in &r.runs {
                    let s = match run.voxel.state {
                        PredictedState::Occupied => 'o',
                        PredictedState::Free => 'f',
                    };
                    write!(out, " {},{},{},{}", run.count, s, run.voxel.class_id, run.voxel.confidence)?;
                    if r.masked {
                        write!(out, ",{}", u8::from(run.measured))?;
                    }
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

pub fn stream_to_string(entries: &[StreamEntry]) -> String {
    let mut buf = Vec::new();
    write_stream(entries, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// Order-sensitive hash of the stream's text form.
pub fn stream_hash(entries: &[StreamEntry]) -> u64 {
    let mut h = FxHasher::default();
    stream_to_string(entries).hash(&mut h);
    h.finish()
}

fn field<T: std::str::FromStr>(tok: Option<&str>, record: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::CorruptRecord {
        record,
        msg: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::CorruptRecord {
        record,
        msg: format!("bad {what} {tok:?}"),
    })
}

fn parse_run(tok: &str, masked: bool, record: usize) -> Result<Run> {
    let bad = || Error::CorruptRecord {
        record,
        msg: format!("bad run {tok:?}"),
    };
    let parts: Vec<&str> = tok.split(',').collect();
    if parts.len() != if masked { 5 } else { 4 } {
        return Err(bad());
    }
    let count: u32 = parts[0].parse().map_err(|_| bad())?;
    let state = match parts[1] {
        "o" => PredictedState::Occupied,
        "f" => PredictedState::Free,
        _ => return Err(bad()),
    };
    let class_id = parts[2].parse().map_err(|_| bad())?;
    let confidence: f32 = parts[3].parse().map_err(|_| bad())?;
    let measured = match parts.get(4) {
        None | Some(&"0") => false,
        Some(&"1") => true,
        _ => return Err(bad()),
    };
    if count == 0 {
        return Err(bad());
    }
    Ok(Run {
        count,
        voxel: PredictedVoxel {
            state,
            class_id,
            confidence,
        },
        measured,
    })
}

/// Parses a stream; errors name the zero-based index of the offending record.
pub fn read_stream<R: BufRead>(input: R) -> Result<Vec<StreamEntry>> {
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == HEADER => {}
        Some(Err(e)) => return Err(e.into()),
        _ => {
            return Err(Error::CorruptRecord {
                record: 0,
                msg: "missing stream header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = out.len();
        let mut tok = line.split_ascii_whitespace();
        let kind = tok.next();
        let t: f64 = field(tok.next(), record, "time")?;
        let pose = Pose::new(
            field(tok.next(), record, "x")?,
            field(tok.next(), record, "y")?,
            field(tok.next(), record, "z")?,
            field(tok.next(), record, "yaw")?,
        );
        match kind {
            Some("S") => out.push(StreamEntry::Sense { t, pose }),
            Some("P") => {
                let origin = VoxelIndex::new(
                    field(tok.next(), record, "origin")?,
                    field(tok.next(), record, "origin")?,
                    field(tok.next(), record, "origin")?,
                );
                let dims: [usize; 3] = [
                    field(tok.next(), record, "dims")?,
                    field(tok.next(), record, "dims")?,
                    field(tok.next(), record, "dims")?,
                ];
                let voxel_size: f64 = field(tok.next(), record, "voxel size")?;
                let masked = match field::<u8>(tok.next(), record, "mask flag")? {
                    0 => false,
                    1 => true,
                    m => {
                        return Err(Error::CorruptRecord {
                            record,
                            msg: format!("bad mask flag {m}"),
                        })
                    }
                };
                let n: usize = field(tok.next(), record, "run count")?;
                let runs = (0..n)
                    .map(|_| {
                        let t = tok.next().ok_or_else(|| Error::CorruptRecord {
                            record,
                            msg: "truncated runs".into(),
                        })?;
                        parse_run(t, masked, record)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let total: u64 = runs.iter().map(|r| r.count as u64).sum();
                if tok.next().is_some() || total != dims.iter().product::<usize>() as u64 {
                    return Err(Error::CorruptRecord {
                        record,
                        msg: "run lengths do not match the volume".into(),
                    });
                }
                out.push(StreamEntry::Predict(PredictionRecord {
                    t,
                    anchor: pose,
                    origin,
                    dims,
                    voxel_size,
                    masked,
                    runs,
                }));
            }
            _ => {
                return Err(Error::CorruptRecord {
                    record,
                    msg: "unknown record kind".into(),
                })
            }
        }
        if tok.next().is_some() {
            return Err(Error::CorruptRecord {
                record,
                msg: "trailing fields".into(),
            });
        }
    }
    Ok(out)
}

/// Fuses every logged prediction, in order, into a fresh layer.
pub fn replay_fusion(
    entries: &[StreamEntry],
    cfg: GridConfig,
    strategy: FusionStrategy,
    calib: &ClassCalibration,
) -> Result<ScLayer> {
    let mut sc = ScLayer::new(cfg, strategy, calib.clone());
    for e in entries {
        if let StreamEntry::Predict(r) = e {
            sc.fuse(&r.decode(), None)?;
        }
    }
    Ok(sc)
}

/// Replays sensing and fusion against `world`, evaluating the map at each of
/// `times` (sorted) after all records up to that time were applied.
#[allow(clippy::too_many_arguments)]
pub fn replay_with_metrics(
    entries: &[StreamEntry],
    world: &GroundTruthWorld,
    sensor: &SensorModel,
    strategy: FusionStrategy,
    calib: &ClassCalibration,
    tau: f64,
    gt: &ObservableSpace,
    times: &[f64],
    set: EvaluationSet,
) -> Result<Vec<MetricsRecord>> {
    let cfg = *world.config();
    let mut map = MultiLayerMap::new(
        MeasuredMap::new(cfg, world.bounds()),
        ScLayer::new(cfg, strategy, calib.clone()),
        tau,
    )?;
    let mut out = Vec::with_capacity(times.len());
    let mut next = 0;
    for &t in times {
        while next < entries.len() && entries[next].t() <= t {
            match &entries[next] {
                StreamEntry::Sense { pose, .. } => {
                    let depth = render_depth(pose, world, sensor)?;
                    map.measured.integrate_depth(pose, &depth, sensor)?;
                }
                StreamEntry::Predict(r) => {
                    map.sc.fuse(&r.decode(), None)?;
                }
            }
            next += 1;
        }
        out.push(snapshot_with(t, &map, gt, 0, set)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred() -> Prediction {
        let v = |s, c, conf| PredictedVoxel {
            state: s,
            class_id: c,
            confidence: conf,
        };
        let o = v(PredictedState::Occupied, 3, 0.75);
        let f = v(PredictedState::Free, 0, 0.1);
        Prediction {
            anchor: Pose::new(0.1, 0.2, 0.3, 0.4),
            origin: VoxelIndex::new(-1, 2, 0),
            dims: [2, 2, 2],
            voxel_size: 0.08,
            voxels: vec![o, o, f, f, f, o, o, o],
            measured_mask: Some(vec![true, false, false, false, false, false, false, false]),
        }
    }

    #[test]
    fn records_round_trip() {
        let p = pred();
        let r = PredictionRecord::encode(1.5, &p);
        assert_eq!(r.runs.len(), 4);
        assert_eq!(r.decode(), p);
        let entries = vec![StreamEntry::Sense { t: 0.2, pose: Pose::new(1.0 / 3.0, 0.0, 1.2, -0.1) }, StreamEntry::Predict(r)];
        let text = stream_to_string(&entries);
        let back = read_stream(text.as_bytes()).unwrap();
        assert_eq!(back, entries);
        assert_eq!(stream_hash(&back), stream_hash(&entries));
    }

    #[test]
    fn corrupt_records_are_located() {
        let entries = vec![
            StreamEntry::Sense { t: 0.0, pose: Pose::default() },
            StreamEntry::Predict(PredictionRecord::encode(0.5, &pred())),
        ];
        let text = stream_to_string(&entries);
        let broken = text.replace(",o,3,", ",x,3,");
        match read_stream(broken.as_bytes()) {
            Err(Error::CorruptRecord { record, .. }) => assert_eq!(record, 1),
            other => panic!("expected a corrupt record, got {other:?}"),
        }
        let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n") + "\nP 1.0 0 0";
        assert!(matches!(read_stream(truncated.as_bytes()), Err(Error::CorruptRecord { record: 1, .. })));
        assert!(read_stream("nonsense\n".as_bytes()).is_err());
    }
}
