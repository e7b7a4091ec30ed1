//! Latency ground truth: a parametric synthetic device, real-trace ingestion,
//! and the operation samplers used to build training and evaluation sets.

mod sampling;
mod synth;
mod trace;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dispatch::KernelImpl;
use crate::error::{Error, Result};
use crate::op::OpDescriptor;

pub use sampling::{linear_eval_dims, sample_eval_ops, sample_training_ops, EVAL_FLOPS_RANGE};
pub use synth::{SyntheticDevice, SyntheticDeviceSpec, WaveCoefficients, PRESET_NAMES};
pub use trace::{Dataset, LatencySample, TRACE_HEADER};

/// Where an op (or op slice) runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Executor {
    Gpu,
    /// CPU with 1, 2 or 3 threads.
    Cpu(u8),
}

impl Executor {
    pub const ALL: [Executor; 4] = [
        Executor::Gpu,
        Executor::Cpu(1),
        Executor::Cpu(2),
        Executor::Cpu(3),
    ];

    pub fn cpu(threads: u8) -> Result<Self> {
        if !(1..=3).contains(&threads) {
            return Err(Error::contract(format!("CPU thread count {threads} not in 1..=3")));
        }
        Ok(Executor::Cpu(threads))
    }

    pub fn threads(self) -> Option<u8> {
        match self {
            Executor::Gpu => None,
            Executor::Cpu(t) => Some(t),
        }
    }
}

impl fmt::Display for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Executor::Gpu => f.write_str("gpu"),
            Executor::Cpu(t) => write!(f, "cpu{t}"),
        }
    }
}

impl std::str::FromStr for Executor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gpu" => Ok(Executor::Gpu),
            "cpu1" => Ok(Executor::Cpu(1)),
            "cpu2" => Ok(Executor::Cpu(2)),
            "cpu3" => Ok(Executor::Cpu(3)),
            other => Err(Error::UnknownExecutor(other.to_string())),
        }
    }
}

impl TryFrom<String> for Executor {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Executor> for String {
    fn from(e: Executor) -> String {
        e.to_string()
    }
}

/// Anything that can price an op on either device: the synthetic oracle, a
/// trained predictor, or a measurement table.
pub trait LatencyModel: Sync {
    fn gpu_latency_us(&self, op: &OpDescriptor) -> Result<f64>;

    fn cpu_latency_us(&self, op: &OpDescriptor, threads: u8) -> Result<f64>;

    fn latency_us(&self, op: &OpDescriptor, executor: Executor) -> Result<f64> {
        match executor {
            Executor::Gpu => self.gpu_latency_us(op),
            Executor::Cpu(t) => self.cpu_latency_us(op, t),
        }
    }
}

/// Build latency samples for every `(op, executor)` pair, in input order.
pub fn synthesize(
    device: &SyntheticDevice,
    ops: &[OpDescriptor],
    executors: &[Executor],
) -> Dataset {
    use rayon::prelude::*;

    let samples = ops
        .par_iter()
        .flat_map_iter(|op| {
            executors.iter().map(move |&ex| {
                let kernel = match ex {
                    Executor::Gpu => Some(device.kernel_for(op)),
                    Executor::Cpu(_) => None,
                };
                LatencySample {
                    op: *op,
                    executor: ex,
                    kernel,
                    latency_us: device
                        .latency_us(op, ex)
                        .expect("synthetic device prices every op"),
                }
            })
        })
        .collect();
    Dataset { samples }
}

pub(crate) fn kernel_matches_executor(executor: Executor, kernel: Option<KernelImpl>) -> bool {
    matches!(
        (executor, kernel),
        (Executor::Gpu, Some(_)) | (Executor::Cpu(_), None)
    )
}
