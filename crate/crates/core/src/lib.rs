//! Continuous stereo disparity with a bimodal mixture head.

pub mod backbone;
pub mod data;
pub mod error;
pub mod field;
pub mod infer;
pub mod metrics;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod sampling;
pub mod train;

pub use error::{Result, SmdError};
pub use parallel::ExecMode;
