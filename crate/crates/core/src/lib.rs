//! Hierarchical event-driven world models built from Experts: each Expert
//! clusters its input, learns sequences of cluster indices, predicts the
//! next cluster, and can act by turning expected rewards into goals.

pub mod environments;
pub mod error;
pub mod expert;
pub mod harness;
pub mod math;
pub mod predictive_group;
pub mod spatial_pooler;
pub mod temporal_pooler;
pub mod topology;

pub use error::{Error, Result};
