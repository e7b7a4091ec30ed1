//! Virtual-clock co-execution timing.

use serde::{Deserialize, Serialize};

use crate::device::LatencyModel;
use crate::error::{Error, Result};
use crate::partition::{LayerPlan, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Both sides busy-poll shared flags.
    Polling,
    /// The CPU waits on a GPU completion event.
    Passive,
}

impl std::str::FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polling" => Ok(SyncMode::Polling),
            "passive" => Ok(SyncMode::Passive),
            other => Err(Error::contract(format!("unknown sync mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub mode: SyncMode,
    pub epsilon_poll_us: f64,
    pub notify_delay_us: f64,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            mode: SyncMode::Polling,
            epsilon_poll_us: 7.0,
            notify_delay_us: 162.0,
        }
    }
}

impl SyncConfig {
    pub fn passive() -> Self {
        Self {
            mode: SyncMode::Passive,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon_poll_us < 0.0 || self.notify_delay_us < 0.0 {
            return Err(Error::contract("synchronization delays must be non-negative"));
        }
        Ok(())
    }

    /// Overhead charged to a co-executed layer.
    pub fn overhead_us(&self) -> f64 {
        match self.mode {
            SyncMode::Polling => self.epsilon_poll_us,
            SyncMode::Passive => self.notify_delay_us,
        }
    }
}

/// A zero duration on either side means the other device ran alone and no
/// synchronization is charged.
pub fn simulate_layer(t_cpu_us: f64, t_gpu_us: f64, sync: &SyncConfig) -> f64 {
    if t_cpu_us == 0.0 || t_gpu_us == 0.0 {
        t_cpu_us.max(t_gpu_us)
    } else {
        t_cpu_us.max(t_gpu_us) + sync.overhead_us()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTiming {
    pub per_layer_us: Vec<f64>,
    pub total_us: f64,
    /// Synchronization share of `total_us`.
    pub overhead_us: f64,
}

/// Replay `plans` on `model`, charging synchronization on co-executed layers.
pub fn simulate_model<M: LatencyModel + ?Sized>(
    layers: &[LayerSpec],
    plans: &[LayerPlan],
    model: &M,
    threads: u8,
    sync: &SyncConfig,
) -> Result<ModelTiming> {
    if layers.len() != plans.len() {
        return Err(Error::Planning(format!(
            "{} layers but {} plans",
            layers.len(),
            plans.len()
        )));
    }
    let mut per_layer_us = Vec::with_capacity(plans.len());
    let mut overhead_us = 0.0;
    for (i, (layer, plan)) in layers.iter().zip(plans).enumerate() {
        let t = match layer {
            LayerSpec::Pool => {
                if plan.c_cpu != 0 {
                    return Err(Error::Planning(format!("layer {i}: pool layers run on the GPU")));
                }
                0.0
            }
            LayerSpec::Op(op) => {
                if plan.c_cpu + plan.c_gpu != op.c_out() {
                    return Err(Error::Planning(format!(
                        "layer {i}: plan covers {} channels, op has {}",
                        plan.c_cpu + plan.c_gpu,
                        op.c_out()
                    )));
                }
                let tc = match plan.c_cpu {
                    0 => 0.0,
                    c => model.cpu_latency_us(&op.with_c_out(c)?, threads)?,
                };
                let tg = match plan.c_gpu {
                    0 => 0.0,
                    c => model.gpu_latency_us(&op.with_c_out(c)?)?,
                };
                let t = simulate_layer(tc, tg, sync);
                overhead_us += t - tc.max(tg);
                t
            }
        };
        per_layer_us.push(t);
    }
    Ok(ModelTiming {
        total_us: per_layer_us.iter().sum(),
        per_layer_us,
        overhead_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_examples() {
        let poll = SyncConfig::default();
        let passive = SyncConfig::passive();
        assert_eq!(simulate_layer(354.0, 379.0, &poll), 386.0);
        assert_eq!(simulate_layer(354.0, 379.0, &passive), 541.0);
        assert_eq!(simulate_layer(0.0, 379.0, &passive), 379.0);
        assert_eq!(simulate_layer(379.0, 0.0, &poll), 379.0);
    }

    #[test]
    fn negative_delays_rejected() {
        let bad = SyncConfig {
            epsilon_poll_us: -1.0,
            ..SyncConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
