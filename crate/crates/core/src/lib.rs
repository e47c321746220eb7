//! Discrete flow bridge between reactant and product molecular graphs.
//!
//! The crate is organized bottom-up: [`chemgraph`] turns atom-mapped reactions into
//! paired categorical graphs, [`bridge`] holds the probability-path and velocity
//! kernels, [`net`] is a small reverse-mode tensor engine, [`model`] assembles the
//! graph-to-graph transformer, [`train`] implements training, sampling and
//! checkpoints, and [`pipeline`] backs the command-line tools.

pub mod bridge;
pub mod chemgraph;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod train;
