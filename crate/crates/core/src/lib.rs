pub mod cli;
mod coords;
pub mod deform;
pub mod error;
pub mod exec;
pub mod grid;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
mod poisson;
pub mod solver;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};
