//! File formats and command implementations behind the `smd` binary.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod fsutil;
pub mod pfm;
pub mod png;
