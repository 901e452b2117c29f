//! Topology optimization by projected gradient descent.
//!
//! Each design update takes a gradient step and projects the result onto the
//! design box intersected with the linearized constraints. The projection is
//! solved in a handful of dual variables: by bisection for a single or
//! independent constraints, otherwise by a semismooth Newton method on a
//! regularized, always-feasible version of the subproblem.

pub mod config;
pub mod error;
pub mod fea;
pub mod filter;
pub mod optimizer;
pub mod problems;
pub mod projection;
pub mod report;

pub use error::{Error, Result};
