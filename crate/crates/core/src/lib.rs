pub mod augment;
pub mod bench;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod pairing;
pub mod rng;
pub mod trainer;

pub use error::{OpgError, Result};
