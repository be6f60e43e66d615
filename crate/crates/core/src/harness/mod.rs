//! Data generation, metrics and the experiment runners.

pub mod data;
pub mod experiment;
pub mod metrics;
pub mod report;
