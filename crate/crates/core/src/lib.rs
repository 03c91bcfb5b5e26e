//! Multi-head temporal-difference estimation of cumulative collision
//! probabilities: head `i` predicts the chance of a collision within the
//! next `i` steps under a fixed driving policy.

pub mod credit;
pub mod env;
pub mod episode;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod oracle;
pub mod replay;
pub mod training;

pub use error::{Error, Result};
