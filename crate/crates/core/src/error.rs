use thiserror::Error;

use crate::grid::VoxelIndex;

/// Errors raised by the mapping, fusion, planning and simulation modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pose ({x:.3}, {y:.3}, {z:.3}) lies outside the world bounds")]
    OutOfBounds { x: f64, y: f64, z: f64 },

    #[error("prediction is not aligned with the map grid: {0}")]
    MisalignedPrediction(String),

    #[error("no calibration entry for class id {0}")]
    UnknownClass(u8),

    #[error("grids do not share a configuration: {0}")]
    GridMismatch(String),

    #[error("start voxel {0:?} is not free")]
    StartNotFree(VoxelIndex),

    #[error("infeasible world specification: {0}")]
    InfeasibleWorld(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("corrupt prediction log at record {record}: {msg}")]
    CorruptRecord { record: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
