//! Counterfactual explanations for differentiable recommenders.
//!
//! The crate trains two small recommenders, estimates how removing a user's
//! own actions would move their scores with damped, block-restricted
//! influence functions, searches for small counterfactual action sets
//! (a greedy gap-filling search plus four baselines), and verifies the
//! results by retraining.

pub mod data;
mod error;
pub mod eval;
pub mod explain;
pub mod influence;
pub mod model;
pub mod par;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
