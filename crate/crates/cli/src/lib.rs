//! Batch front end for `opcov`: fit models from long-format CSV, export
//! covariance and correlation grids, eigenfunctions and scores, and run
//! simulation experiments.

pub mod commands;
pub mod io;
pub mod model;

pub use commands::{run, Cli};
pub use model::ModelFile;
