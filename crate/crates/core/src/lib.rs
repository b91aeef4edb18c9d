//! Neural graphical models: a single multi-task MLP whose input-to-output
//! paths are constrained to follow a dependency graph, with learning,
//! inference and sampling on top.

pub mod data;
pub mod error;
pub mod graph;
pub mod inference;
pub mod learning;
pub mod model_io;
pub mod numerics;
pub mod projections;
pub mod sampling;
pub mod synth;

pub use error::{NgmError, Result};
