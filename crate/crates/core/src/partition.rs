//! Output-channel partitioning between CPU and GPU.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::LatencyModel;
use crate::error::{Error, Result};
use crate::op::{ChannelPartition, LayerRecord, OpDescriptor};

pub const DEFAULT_ALIGNMENT: u32 = 8;

/// Latency of each side of a split plus the fixed co-execution overhead.
pub trait CostEstimate: Sync {
    fn c_out(&self) -> u32;

    /// CPU latency when it computes `c` channels (`c >= 1`).
    fn t_cpu_us(&self, c: u32) -> Result<f64>;

    /// GPU latency when it computes `c` channels (`c >= 1`).
    fn t_gpu_us(&self, c: u32) -> Result<f64>;

    fn t_overhead_us(&self) -> f64;
}

/// Costs of one op priced by a [`LatencyModel`].
pub struct OpCosts<'a, M: LatencyModel + ?Sized> {
    pub op: OpDescriptor,
    pub model: &'a M,
    pub threads: u8,
    pub overhead_us: f64,
}

impl<M: LatencyModel + ?Sized> CostEstimate for OpCosts<'_, M> {
    fn c_out(&self) -> u32 {
        self.op.c_out()
    }

    fn t_cpu_us(&self, c: u32) -> Result<f64> {
        self.model.cpu_latency_us(&self.op.with_c_out(c)?, self.threads)
    }

    fn t_gpu_us(&self, c: u32) -> Result<f64> {
        self.model.gpu_latency_us(&self.op.with_c_out(c)?)
    }

    fn t_overhead_us(&self) -> f64 {
        self.overhead_us
    }
}

/// Explicit latency tables indexed by channel count; index 0 is unused.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedCosts {
    pub cpu_us: Vec<f64>,
    pub gpu_us: Vec<f64>,
    pub overhead_us: f64,
}

impl TabulatedCosts {
    pub fn from_fn(c_out: u32, overhead_us: f64, cpu: impl Fn(u32) -> f64, gpu: impl Fn(u32) -> f64) -> Self {
        Self {
            cpu_us: (0..=c_out).map(&cpu).collect(),
            gpu_us: (0..=c_out).map(&gpu).collect(),
            overhead_us,
        }
    }
}

impl CostEstimate for TabulatedCosts {
    fn c_out(&self) -> u32 {
        (self.cpu_us.len() - 1) as u32
    }

    fn t_cpu_us(&self, c: u32) -> Result<f64> {
        self.cpu_us
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::contract(format!("no CPU cost for {c} channels")))
    }

    fn t_gpu_us(&self, c: u32) -> Result<f64> {
        self.gpu_us
            .get(c as usize)
            .copied()
            .ok_or_else(|| Error::contract(format!("no GPU cost for {c} channels")))
    }

    fn t_overhead_us(&self) -> f64 {
        self.overhead_us
    }
}

/// `T_overhead + max(T_CPU(c_cpu), T_GPU(c_gpu))`, or the lone device's
/// latency when one side is empty.
pub fn objective(c_cpu: u32, c_gpu: u32, costs: &(impl CostEstimate + ?Sized)) -> Result<f64> {
    let c_out = costs.c_out();
    if c_cpu as u64 + c_gpu as u64 != c_out as u64 {
        return Err(Error::contract(format!(
            "split {c_cpu} + {c_gpu} does not cover C_out = {c_out}"
        )));
    }
    match (c_cpu, c_gpu) {
        (0, g) => costs.t_gpu_us(g),
        (c, 0) => costs.t_cpu_us(c),
        (c, g) => Ok(costs.t_overhead_us() + costs.t_cpu_us(c)?.max(costs.t_gpu_us(g)?)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    Predicted,
    Measured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub partition: ChannelPartition,
    pub predicted_total_us: f64,
    pub baseline_gpu_us: f64,
    pub baseline_cpu_us: f64,
    /// GPU-only latency over the plan's latency.
    pub speedup: f64,
    pub source: PlanSource,
    pub candidates_evaluated: usize,
}

/// `{0, step, 2*step, ...} ∪ {c_out}`, ascending.
pub fn candidate_grid(c_out: u32, step: u32) -> Vec<u32> {
    let step = step.max(1);
    let mut grid: Vec<u32> = (0..=c_out).step_by(step as usize).collect();
    if grid.last() != Some(&c_out) {
        grid.push(c_out);
    }
    grid
}

fn best_plan(c_out: u32, grid: &[u32], totals: Vec<f64>, source: PlanSource) -> PartitionPlan {
    // Minimum total; ties go to the larger GPU share.
    let mut best = 0;
    for (i, t) in totals.iter().enumerate() {
        if *t <= totals[best] {
            best = i;
        }
    }
    let c_gpu = grid[best];
    let baseline_gpu_us = *totals.last().expect("grid includes C_out");
    let baseline_cpu_us = totals[0];
    let total = totals[best];
    PartitionPlan {
        partition: ChannelPartition {
            c_cpu: c_out - c_gpu,
            c_gpu,
        },
        predicted_total_us: total,
        baseline_gpu_us,
        baseline_cpu_us,
        speedup: baseline_gpu_us / total,
        source,
        candidates_evaluated: grid.len(),
    }
}

/// Best split over GPU channel counts aligned to `alignment`.
pub fn optimize(costs: &(impl CostEstimate + ?Sized), alignment: u32) -> Result<PartitionPlan> {
    if alignment == 0 {
        return Err(Error::contract("alignment must be at least 1"));
    }
    let c_out = costs.c_out();
    let grid = candidate_grid(c_out, alignment);
    let totals = grid
        .par_iter()
        .map(|&g| objective(c_out - g, g, costs))
        .collect::<Result<Vec<_>>>()?;
    Ok(best_plan(c_out, &grid, totals, PlanSource::Predicted))
}

/// Brute-force search where each candidate split is measured end to end.
pub fn grid_search_measured(
    c_out: u32,
    measure: impl Fn(ChannelPartition) -> Result<f64> + Sync,
    step: u32,
) -> Result<PartitionPlan> {
    if step == 0 {
        return Err(Error::contract("grid step must be at least 1"));
    }
    let grid = candidate_grid(c_out, step);
    let totals = grid
        .par_iter()
        .map(|&g| measure(ChannelPartition { c_cpu: c_out - g, c_gpu: g }))
        .collect::<Result<Vec<_>>>()?;
    Ok(best_plan(c_out, &grid, totals, PlanSource::Measured))
}

/// One entry of a model description.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Op(OpDescriptor),
    /// Always runs on the GPU; its latency is not modeled.
    Pool,
}

impl LayerSpec {
    /// Parse a JSON array of layer records and `{"type": "pool"}` entries.
    pub fn parse_model(json: &str) -> Result<Vec<LayerSpec>> {
        let values: Vec<serde_json::Value> = serde_json::from_str(json)?;
        values
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v.get("type").and_then(|t| t.as_str()) {
                Some("pool") => Ok(LayerSpec::Pool),
                Some("linear" | "conv") => {
                    let rec: LayerRecord = serde_json::from_value(v)
                        .map_err(|e| Error::Planning(format!("layer {i}: {e}")))?;
                    let op = OpDescriptor::try_from(rec)
                        .map_err(|e| Error::Planning(format!("layer {i}: {e}")))?;
                    Ok(LayerSpec::Op(op))
                }
                Some(other) => Err(Error::Planning(format!("layer {i}: unknown layer type `{other}`"))),
                None => Err(Error::Planning(format!("layer {i}: missing `type`"))),
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub layer: usize,
    pub c_cpu: u32,
    pub c_gpu: u32,
    pub predicted_us: f64,
    pub speedup: f64,
    #[serde(skip)]
    pub baseline_gpu_us: f64,
}

impl LayerPlan {
    pub fn is_coexecuted(&self) -> bool {
        self.c_cpu > 0 && self.c_gpu > 0
    }
}

/// Plan every layer independently. Returns per-layer plans in order.
pub fn plan_model<M: LatencyModel + ?Sized>(
    layers: &[LayerSpec],
    model: &M,
    threads: u8,
    overhead_us: f64,
    alignment: u32,
) -> Result<Vec<LayerPlan>> {
    layers
        .iter()
        .enumerate()
        .map(|(i, layer)| match layer {
            LayerSpec::Pool => Ok(LayerPlan {
                layer: i,
                c_cpu: 0,
                c_gpu: 0,
                predicted_us: 0.0,
                speedup: 1.0,
                baseline_gpu_us: 0.0,
            }),
            LayerSpec::Op(op) => {
                let costs = OpCosts {
                    op: *op,
                    model,
                    threads,
                    overhead_us,
                };
                let p = optimize(&costs, alignment)?;
                Ok(LayerPlan {
                    layer: i,
                    c_cpu: p.partition.c_cpu,
                    c_gpu: p.partition.c_gpu,
                    predicted_us: p.predicted_total_us,
                    speedup: p.speedup,
                    baseline_gpu_us: p.baseline_gpu_us,
                })
            }
        })
        .collect()
}

/// Sum of GPU-only latencies over the sum of planned latencies.
pub fn end_to_end_speedup(plans: &[LayerPlan]) -> f64 {
    let gpu: f64 = plans.iter().map(|p| p.baseline_gpu_us).sum();
    let total: f64 = plans.iter().map(|p| p.predicted_us).sum();
    if total == 0.0 {
        1.0
    } else {
        gpu / total
    }
}
