pub mod cli;
pub mod error;
pub mod layers;
pub mod models;
pub mod nb;
pub mod numerics;
pub mod rng;
pub mod textpipe;
pub mod train;

pub use error::{Error, Result};
