pub mod error;
pub mod fusion;
pub mod grid;
pub mod io;
pub mod layered;
pub mod measured;
pub mod metrics;
pub mod oracle;
pub mod planner;
pub mod raycast;
pub mod sensor;
pub mod sim;

pub use error::{Error, Result};
