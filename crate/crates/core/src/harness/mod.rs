//! Experiment drivers, configuration and output writers.

pub mod config;
pub mod exp1;
pub mod exp2;
pub mod exp3;
pub mod exp4;
pub mod output;
pub mod properties;
pub mod stats;
