//! Discrete flow-bridge kernels over an arbitrary alphabet of size K.
//!
//! The path between two endpoint classes mixes their one-hot vectors with uniform
//! noise; velocities transport mass along it, and an Euler step samples the next
//! state.

mod graph;
mod kernels;
mod scheduler;

use thiserror::Error;

pub use graph::sample_graph_path;
pub(crate) use kernels::sample_index;
pub use kernels::{
    conditional_path, conditional_velocity, conditional_velocity_in, enumerate_marginal, euler_step,
    parameterized_velocity, parameterized_velocity_into, simulate_euler_marginals, step_distribution, Categorical,
    SignedVelocity,
};
pub use scheduler::{Direction, Scheduler, SchedulerState, DEFAULT_EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("class {class} out of range for alphabet of {k}")]
    ClassOutOfRange { class: usize, k: usize },
    #[error("malformed categorical: {0}")]
    Categorical(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}
