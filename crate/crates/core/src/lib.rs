//! Conformal active learning for binary document labeling.

pub mod api;
pub mod classifier;
pub mod conformal;
pub mod corpus;
pub mod embed;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod seeding;
pub mod select;
pub mod sim;
pub mod workspace;

pub use error::{Error, Result};
