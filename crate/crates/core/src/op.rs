//! Layer descriptors and the output-channel split.
//!
//! A linear layer computes `Y[L x C_out] = X[L x C_in] * W[C_in x C_out]`; a
//! convolution applies `C_out` square `K x K x C_in` filters with stride `S`
//! and zero "same" padding, so `H_out = floor(H_in / S)`. Both are split along
//! the output-channel axis: the CPU owns channels `[0, c_cpu)` and the GPU owns
//! `[c_cpu, C_out)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernel sizes accepted for convolutions.
pub const CONV_KERNEL_SIZES: [u32; 4] = [1, 3, 5, 7];
/// Strides accepted for convolutions.
pub const CONV_STRIDES: [u32; 2] = [1, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Linear,
    Conv,
}

impl OpKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::Conv => "conv",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(OpKind::Linear),
            "conv" => Ok(OpKind::Conv),
            other => Err(Error::InvalidOp(format!("unknown op type `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LinearOp {
    l: u32,
    c_in: u32,
    c_out: u32,
}

impl LinearOp {
    pub fn new(l: u32, c_in: u32, c_out: u32) -> Result<Self> {
        if l == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::InvalidOp(format!(
                "linear dimensions must be positive (L={l}, C_in={c_in}, C_out={c_out})"
            )));
        }
        Ok(Self { l, c_in, c_out })
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn c_in(&self) -> u32 {
        self.c_in
    }

    pub fn c_out(&self) -> u32 {
        self.c_out
    }

    pub fn flops(&self) -> u128 {
        2 * self.l as u128 * self.c_in as u128 * self.c_out as u128
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvOp {
    h_in: u32,
    w_in: u32,
    c_in: u32,
    c_out: u32,
    k: u32,
    s: u32,
}

impl ConvOp {
    pub fn new(h_in: u32, w_in: u32, c_in: u32, c_out: u32, k: u32, s: u32) -> Result<Self> {
        if c_in == 0 || c_out == 0 {
            return Err(Error::InvalidOp(format!(
                "conv channels must be positive (C_in={c_in}, C_out={c_out})"
            )));
        }
        if !CONV_KERNEL_SIZES.contains(&k) {
            return Err(Error::InvalidOp(format!("kernel size K={k} not in {{1,3,5,7}}")));
        }
        if !CONV_STRIDES.contains(&s) {
            return Err(Error::InvalidOp(format!("stride S={s} not in {{1,2}}")));
        }
        if h_in < k || w_in < k {
            return Err(Error::InvalidOp(format!(
                "input {h_in}x{w_in} smaller than kernel {k}x{k}"
            )));
        }
        if h_in < s || w_in < s {
            return Err(Error::InvalidOp(format!(
                "input {h_in}x{w_in} leaves no output at stride {s}"
            )));
        }
        Ok(Self {
            h_in,
            w_in,
            c_in,
            c_out,
            k,
            s,
        })
    }

    pub fn h_in(&self) -> u32 {
        self.h_in
    }

    pub fn w_in(&self) -> u32 {
        self.w_in
    }

    pub fn c_in(&self) -> u32 {
        self.c_in
    }

    pub fn c_out(&self) -> u32 {
        self.c_out
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn s(&self) -> u32 {
        self.s
    }

    /// `(H_out, W_out)` under zero "same" padding.
    pub fn output_shape(&self) -> (u32, u32) {
        (self.h_in / self.s, self.w_in / self.s)
    }

    pub fn flops(&self) -> u128 {
        let (h, w) = self.output_shape();
        2 * h as u128
            * w as u128
            * self.c_out as u128
            * (self.k * self.k) as u128
            * self.c_in as u128
    }
}

/// A partitionable layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "LayerRecord", into = "LayerRecord")]
pub enum OpDescriptor {
    Linear(LinearOp),
    Conv(ConvOp),
}

impl OpDescriptor {
    pub fn kind(&self) -> OpKind {
        match self {
            OpDescriptor::Linear(_) => OpKind::Linear,
            OpDescriptor::Conv(_) => OpKind::Conv,
        }
    }

    pub fn c_in(&self) -> u32 {
        match self {
            OpDescriptor::Linear(op) => op.c_in,
            OpDescriptor::Conv(op) => op.c_in,
        }
    }

    pub fn c_out(&self) -> u32 {
        match self {
            OpDescriptor::Linear(op) => op.c_out,
            OpDescriptor::Conv(op) => op.c_out,
        }
    }

    pub fn flops(&self) -> u128 {
        match self {
            OpDescriptor::Linear(op) => op.flops(),
            OpDescriptor::Conv(op) => op.flops(),
        }
    }

    /// Same op with a different number of output channels.
    pub fn with_c_out(&self, c_out: u32) -> Result<Self> {
        Ok(match *self {
            OpDescriptor::Linear(op) => OpDescriptor::Linear(LinearOp::new(op.l, op.c_in, c_out)?),
            OpDescriptor::Conv(op) => {
                OpDescriptor::Conv(ConvOp::new(op.h_in, op.w_in, op.c_in, c_out, op.k, op.s)?)
            }
        })
    }

    /// Canonical single-line JSON record.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("op records always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl From<LinearOp> for OpDescriptor {
    fn from(op: LinearOp) -> Self {
        OpDescriptor::Linear(op)
    }
}

impl From<ConvOp> for OpDescriptor {
    fn from(op: ConvOp) -> Self {
        OpDescriptor::Conv(op)
    }
}

impl fmt::Display for OpDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OpDescriptor::Linear(op) => write!(f, "linear({}x{}->{})", op.l, op.c_in, op.c_out),
            OpDescriptor::Conv(op) => write!(
                f,
                "conv({}x{}x{}->{}, K={}, S={})",
                op.h_in, op.w_in, op.c_in, op.c_out, op.k, op.s
            ),
        }
    }
}

/// Wire form shared by op records and model-description layer records.
/// Absent fields are omitted.
#[allow(non_snake_case)]
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub L: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub C_in: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub C_out: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub H_in: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub W_in: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub K: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub S: Option<u32>,
}

fn required(value: Option<u32>, name: &str, kind: &str) -> Result<u32> {
    value.ok_or_else(|| Error::InvalidOp(format!("{kind} record is missing `{name}`")))
}

impl TryFrom<LayerRecord> for OpDescriptor {
    type Error = Error;

    fn try_from(r: LayerRecord) -> Result<Self> {
        match r.kind.as_str() {
            "linear" => {
                if r.H_in.is_some() || r.W_in.is_some() || r.K.is_some() || r.S.is_some() {
                    return Err(Error::InvalidOp(
                        "linear record carries convolution fields".into(),
                    ));
                }
                Ok(LinearOp::new(
                    required(r.L, "L", "linear")?,
                    required(r.C_in, "C_in", "linear")?,
                    required(r.C_out, "C_out", "linear")?,
                )?
                .into())
            }
            "conv" => {
                if r.L.is_some() {
                    return Err(Error::InvalidOp("conv record carries `L`".into()));
                }
                Ok(ConvOp::new(
                    required(r.H_in, "H_in", "conv")?,
                    required(r.W_in, "W_in", "conv")?,
                    required(r.C_in, "C_in", "conv")?,
                    required(r.C_out, "C_out", "conv")?,
                    required(r.K, "K", "conv")?,
                    required(r.S, "S", "conv")?,
                )?
                .into())
            }
            other => Err(Error::InvalidOp(format!("unknown op type `{other}`"))),
        }
    }
}

impl From<OpDescriptor> for LayerRecord {
    fn from(op: OpDescriptor) -> Self {
        match op {
            OpDescriptor::Linear(op) => LayerRecord {
                kind: "linear".into(),
                L: Some(op.l),
                C_in: Some(op.c_in),
                C_out: Some(op.c_out),
                ..Default::default()
            },
            OpDescriptor::Conv(op) => LayerRecord {
                kind: "conv".into(),
                C_in: Some(op.c_in),
                C_out: Some(op.c_out),
                H_in: Some(op.h_in),
                W_in: Some(op.w_in),
                K: Some(op.k),
                S: Some(op.s),
                ..Default::default()
            },
        }
    }
}

/// Output channels assigned to each device.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelPartition {
    pub c_cpu: u32,
    pub c_gpu: u32,
}

impl ChannelPartition {
    /// Assign the first `c_cpu` channels of `c_out` to the CPU.
    pub fn with_cpu(c_out: u32, c_cpu: u32) -> Result<Self> {
        if c_cpu > c_out {
            return Err(Error::contract(format!(
                "c_cpu={c_cpu} exceeds C_out={c_out}"
            )));
        }
        Ok(Self {
            c_cpu,
            c_gpu: c_out - c_cpu,
        })
    }

    pub fn gpu_only(c_out: u32) -> Self {
        Self { c_cpu: 0, c_gpu: c_out }
    }

    pub fn cpu_only(c_out: u32) -> Self {
        Self { c_cpu: c_out, c_gpu: 0 }
    }

    pub fn c_out(&self) -> u32 {
        self.c_cpu + self.c_gpu
    }

    pub fn is_exclusive(&self) -> bool {
        self.c_cpu == 0 || self.c_gpu == 0
    }

    pub fn cpu_channels(&self) -> std::ops::Range<u32> {
        0..self.c_cpu
    }

    pub fn gpu_channels(&self) -> std::ops::Range<u32> {
        self.c_cpu..self.c_cpu + self.c_gpu
    }

    pub fn check(&self, op: &OpDescriptor) -> Result<()> {
        if self.c_out() != op.c_out() {
            return Err(Error::contract(format!(
                "partition {}+{} does not cover C_out={} of {op}",
                self.c_cpu,
                self.c_gpu,
                op.c_out()
            )));
        }
        Ok(())
    }
}

/// The two halves of a split op; `None` marks a side with no channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitOps {
    pub cpu: Option<OpDescriptor>,
    pub gpu: Option<OpDescriptor>,
}

pub fn split(op: &OpDescriptor, partition: ChannelPartition) -> Result<SplitOps> {
    partition.check(op)?;
    let side = |c: u32| -> Result<Option<OpDescriptor>> {
        if c == 0 {
            Ok(None)
        } else {
            op.with_c_out(c).map(Some)
        }
    };
    Ok(SplitOps {
        cpu: side(partition.c_cpu)?,
        gpu: side(partition.c_gpu)?,
    })
}
