//! Command-line driver, file formats and experiments around `drefc-core`.

pub mod config;
pub mod harness;
pub mod io;
