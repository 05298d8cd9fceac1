//! Certificates of global optimality for critical points of feedforward-network
//! training objectives.
//!
//! The crate computes the quantities that decide whether a numerically critical
//! point of a smooth network's training loss is a global minimum: ranks of feature
//! and weight matrices, block Hessian non-degeneracy, and linear separability of
//! hidden features. It also contains the constructive side (wide layers driven to
//! full rank) and a small deterministic trainer that produces the points to check.

pub mod autodiff;
pub mod certify;
pub mod cli;
pub mod construct;
pub mod error;
pub mod io;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
