pub mod cli;
pub mod dataio;
pub mod diagnostics;
pub mod error;
pub mod evaluator;
pub mod inter;
pub mod intra;
pub mod model;
pub mod nn;
pub mod numcore;
pub mod trainer;

pub use error::{HireError, Result};
