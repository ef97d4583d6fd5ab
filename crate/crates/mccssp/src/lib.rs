//! Solver backends, file formats, benchmarks and the command-line front end
//! for [`mccssp_core`].

pub mod backend;
pub mod experiments;
pub mod io;

pub use mccssp_core as core;
