pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod forest;
pub mod gin;
pub mod graph;
pub mod local;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
