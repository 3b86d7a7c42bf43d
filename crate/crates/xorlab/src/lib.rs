//! Two-layer ReLU network dynamics on the Boolean XOR distribution.
//!
//! The crate trains `f(x) = (1/p) Σ_j a_j relu(w_jᵀx)` with online minibatch SGD on
//! `x ~ Uniform{±1}^d`, `y = -x1·x2`, evaluates population gradients exactly or in closed
//! form, classifies neurons by their signal/noise decomposition and audits the inequalities
//! that govern the two phases of training.
//!
//! Coordinates are 1-indexed in prose (`x1`, `x2` carry the label) and 0-indexed in code, so
//! `x[0]`, `x[1]` are the signal coordinates and `x[2..]` the noise coordinates.

pub mod audit;
pub mod baseline;
pub mod config;
pub mod data;
pub mod error;
pub mod grad;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod oracle;
pub mod phase;
pub mod plot;
pub mod rng;
pub mod schedule;
pub mod trainer;

pub use error::{Error, Result};
