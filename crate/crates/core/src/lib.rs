//! Channel-wise CPU/GPU co-execution of linear and convolution operators:
//! op model, reference kernels, GPU dispatch model, synthetic device,
//! latency predictors, partition planner and co-execution timing.

pub mod device;
pub mod dispatch;
pub mod error;
pub mod gbdt;
pub mod kernels;
pub mod networks;
pub mod op;
pub mod partition;
pub mod predictor;
pub mod sim;
pub mod sync;

pub use error::{Error, Result};
