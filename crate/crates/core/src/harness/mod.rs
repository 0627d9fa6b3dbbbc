//! Configuration, experiment orchestration and artifact writers.

pub mod config;
pub mod experiment;
pub mod output;
pub mod toy;
