//! Desk-scale experiment runners, configuration and report emitters.

pub mod config;
pub mod continual;
pub mod output;
pub mod toy;

pub use config::ExperimentConfig;
