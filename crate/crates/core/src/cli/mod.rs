//! Run configuration, the checkpoint file format and the command runner
//! behind the binary.

mod checkpoint;
mod commands;
mod config;

pub use checkpoint::{Checkpoint, MAGIC};
pub use commands::{run, Command, GRADCHECK_TOLERANCE};
pub use config::{RunConfig, KEYS};
