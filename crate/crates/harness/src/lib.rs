//! Experiment harness: mission runs, batches over configuration matrices,
//! fusion replays and their CSV and chart artifacts.

pub mod commands;
pub mod config;
pub mod output;
pub mod plot;

pub use commands::{cmd_batch, cmd_eval_map, cmd_gen_world, cmd_replay_fusion, cmd_run, BatchReport};
pub use config::{BatchMatrix, ExperimentSpec, OutputOptions, WorldSource};
