pub mod channel;
pub mod classical;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
