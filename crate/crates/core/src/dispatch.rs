//! White-box model of GPU kernel selection and workgroup dispatch.
//!
//! The selection rules and workgroup heuristic here are documented stand-ins
//! for what a mobile inference runtime does internally; every knob lives in a
//! [`DeviceProfile`] so that it can be adjusted per device.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::op::{ConvOp, LinearOp, OpDescriptor, OpKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelImpl {
    LinearGeneric,
    ConvConstant,
    Winograd,
    ConvGeneric,
}

impl KernelImpl {
    pub const ALL: [KernelImpl; 4] = [
        KernelImpl::LinearGeneric,
        KernelImpl::ConvConstant,
        KernelImpl::Winograd,
        KernelImpl::ConvGeneric,
    ];

    /// Stable numeric id used as a feature value.
    pub fn id(self) -> u8 {
        match self {
            KernelImpl::LinearGeneric => 0,
            KernelImpl::ConvConstant => 1,
            KernelImpl::Winograd => 2,
            KernelImpl::ConvGeneric => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelImpl::LinearGeneric => "linear_generic",
            KernelImpl::ConvConstant => "conv_constant",
            KernelImpl::Winograd => "winograd",
            KernelImpl::ConvGeneric => "conv_generic",
        }
    }

    pub fn op_kind(self) -> OpKind {
        match self {
            KernelImpl::LinearGeneric => OpKind::Linear,
            _ => OpKind::Conv,
        }
    }
}

impl fmt::Display for KernelImpl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelImpl {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelImpl::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnsupportedKernel(s.to_string()))
    }
}

/// Hardware knobs that drive kernel selection and dispatch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub name: String,
    /// Filters up to this many bytes (fp32) may use `conv_constant`.
    pub constant_mem_bytes: u64,
    /// Largest `C_out` for which `conv_constant` has enough registers.
    pub reg_cout_limit: u32,
    /// Winograd is chosen when `C_out` exceeds this.
    pub winograd_cout_min: u32,
    /// ... and the output has at least this many pixels.
    pub winograd_area_min: u32,
    /// Workgroups resident at once (one wave).
    pub compute_units: u32,
    /// Outputs per work item: `(rows, channels)`.
    pub tile: (u32, u32),
    /// Work items per workgroup: `(rows, channels)`.
    pub wg: (u32, u32),
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self {
            name: "default".into(),
            constant_mem_bytes: 16384,
            reg_cout_limit: 64,
            winograd_cout_min: 128,
            winograd_area_min: 256,
            compute_units: 8,
            tile: (4, 4),
            wg: (8, 4),
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("constant_mem_bytes", self.constant_mem_bytes),
            ("reg_cout_limit", self.reg_cout_limit as u64),
            ("winograd_cout_min", self.winograd_cout_min as u64),
            ("winograd_area_min", self.winograd_area_min as u64),
            ("compute_units", self.compute_units as u64),
            ("tile.0", self.tile.0 as u64),
            ("tile.1", self.tile.1 as u64),
            ("wg.0", self.wg.0 as u64),
            ("wg.1", self.wg.1 as u64),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::contract(format!(
                    "profile `{}`: {field} must be positive",
                    self.name
                )));
            }
        }
        Ok(())
    }

    /// Load profile `name` from a JSON object keyed by profile name.
    pub fn load(path: &Path, name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut all: BTreeMap<String, DeviceProfile> = serde_json::from_str(&text)?;
        let mut profile = all.remove(name).ok_or_else(|| {
            Error::contract(format!("profile `{name}` not found in {}", path.display()))
        })?;
        profile.name = name.to_string();
        profile.validate()?;
        Ok(profile)
    }
}

pub fn select_kernel(op: &OpDescriptor, profile: &DeviceProfile) -> KernelImpl {
    match op {
        OpDescriptor::Linear(_) => KernelImpl::LinearGeneric,
        OpDescriptor::Conv(c) => select_conv_kernel(c, profile),
    }
}

fn select_conv_kernel(op: &ConvOp, profile: &DeviceProfile) -> KernelImpl {
    let (h, w) = op.output_shape();
    if op.k() == 3
        && op.s() == 1
        && op.c_out() > profile.winograd_cout_min
        && h as u64 * w as u64 >= profile.winograd_area_min as u64
    {
        return KernelImpl::Winograd;
    }
    let filter_bytes = (op.k() * op.k()) as u64 * op.c_in() as u64 * op.c_out() as u64 * 4;
    if filter_bytes <= profile.constant_mem_bytes && op.c_out() <= profile.reg_cout_limit {
        return KernelImpl::ConvConstant;
    }
    KernelImpl::ConvGeneric
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispatchInfo {
    pub kernel: KernelImpl,
    /// Work items along `(rows, channels)`.
    pub grid: (u64, u64),
    pub wg_size: (u32, u32),
    pub wg_count: u64,
    /// Fraction of dispatched outputs that fall outside the real output.
    pub padding_waste: f64,
    /// Output rows covered; for Winograd one row is a 2x2 output tile.
    pub rows: u64,
}

impl DispatchInfo {
    pub fn wave_count(&self, profile: &DeviceProfile) -> u64 {
        self.wg_count.div_ceil(profile.compute_units as u64)
    }
}

/// Output rows handled by the grid for `kernel`.
fn dispatch_rows(op: &OpDescriptor, kernel: KernelImpl) -> u64 {
    match op {
        OpDescriptor::Linear(l) => l.l() as u64,
        OpDescriptor::Conv(c) => {
            let (h, w) = c.output_shape();
            if kernel == KernelImpl::Winograd {
                h.div_ceil(2) as u64 * w.div_ceil(2) as u64
            } else {
                h as u64 * w as u64
            }
        }
    }
}

/// Workgroup shape for a grid. Grids narrower than the profile's row extent
/// get the smallest power-of-two row extent that covers them, and the channel
/// extent grows to keep the item count.
pub fn workgroup_size(grid: (u64, u64), profile: &DeviceProfile) -> (u32, u32) {
    let (wx, wy) = profile.wg;
    if grid.0 >= wx as u64 {
        return (wx, wy);
    }
    let narrow = (grid.0.max(1) as u32).next_power_of_two().min(wx);
    (narrow, (wx * wy).div_ceil(narrow))
}

pub fn dispatch(op: &OpDescriptor, kernel: KernelImpl, profile: &DeviceProfile) -> Result<DispatchInfo> {
    if kernel.op_kind() != op.kind() {
        return Err(Error::UnsupportedKernel(format!("{kernel} cannot run {op}")));
    }
    if kernel == KernelImpl::Winograd {
        if let OpDescriptor::Conv(c) = op {
            if c.k() != 3 || c.s() != 1 {
                return Err(Error::UnsupportedKernel(format!("winograd cannot run {op}")));
            }
        }
    }
    let rows = dispatch_rows(op, kernel);
    let c_out = op.c_out() as u64;
    let (tx, ty) = (profile.tile.0 as u64, profile.tile.1 as u64);
    let grid = (rows.div_ceil(tx), c_out.div_ceil(ty));
    let wg_size = workgroup_size(grid, profile);
    let (wx, wy) = (wg_size.0 as u64, wg_size.1 as u64);
    let wg_count = grid.0.div_ceil(wx) * grid.1.div_ceil(wy);
    let dispatched = wg_count * wx * wy * tx * ty;
    let padding_waste = 1.0 - (rows * c_out) as f64 / dispatched as f64;
    Ok(DispatchInfo {
        kernel,
        grid,
        wg_size,
        wg_count,
        padding_waste,
        rows,
    })
}

/// Which feature set a predictor consumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Op parameters plus kernel and workgroup dispatch information.
    Augmented,
    /// Op parameters only.
    Baseline,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "augmented" => Ok(FeatureMode::Augmented),
            "baseline" => Ok(FeatureMode::Baseline),
            other => Err(Error::contract(format!("unknown feature mode `{other}`"))),
        }
    }
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Augmented => "augmented",
            FeatureMode::Baseline => "baseline",
        })
    }
}

const LINEAR_PARAMS: &[&str] = &["L", "C_in", "C_out", "flops"];
const CONV_PARAMS: &[&str] = &["H_in", "W_in", "C_in", "C_out", "K", "S", "flops"];
const DISPATCH_FEATURES: &[&str] = &[
    "kernel",
    "wg_count",
    "wg_x",
    "wg_y",
    "padding_waste",
    "wave_count",
];

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub names: Vec<&'static str>,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn csv_header(&self) -> String {
        self.names.join(",")
    }

    pub fn csv_row(&self) -> String {
        self.values
            .iter()
            .map(|v| format!("{v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

fn op_params(op: &OpDescriptor) -> (Vec<&'static str>, Vec<f64>) {
    match op {
        OpDescriptor::Linear(l) => (LINEAR_PARAMS.to_vec(), linear_params(l)),
        OpDescriptor::Conv(c) => (
            CONV_PARAMS.to_vec(),
            vec![
                c.h_in() as f64,
                c.w_in() as f64,
                c.c_in() as f64,
                c.c_out() as f64,
                c.k() as f64,
                c.s() as f64,
                c.flops() as f64,
            ],
        ),
    }
}

fn linear_params(l: &LinearOp) -> Vec<f64> {
    vec![l.l() as f64, l.c_in() as f64, l.c_out() as f64, l.flops() as f64]
}

/// Feature names for GPU predictors of `kind` in `mode`.
pub fn gpu_feature_names(kind: OpKind, mode: FeatureMode) -> Vec<&'static str> {
    let mut names = match kind {
        OpKind::Linear => LINEAR_PARAMS.to_vec(),
        OpKind::Conv => CONV_PARAMS.to_vec(),
    };
    if mode == FeatureMode::Augmented {
        names.extend_from_slice(DISPATCH_FEATURES);
    }
    names
}

/// Feature names for CPU predictors: op parameters plus the thread count.
pub fn cpu_feature_names(kind: OpKind) -> Vec<&'static str> {
    let mut names = match kind {
        OpKind::Linear => LINEAR_PARAMS.to_vec(),
        OpKind::Conv => CONV_PARAMS.to_vec(),
    };
    names.push("threads");
    names
}

/// GPU predictor features for `op` on `profile`.
pub fn features(op: &OpDescriptor, profile: &DeviceProfile, mode: FeatureMode) -> FeatureVector {
    let (mut names, mut values) = op_params(op);
    if mode == FeatureMode::Augmented {
        let kernel = select_kernel(op, profile);
        let d = dispatch(op, kernel, profile).expect("selected kernel always fits the op");
        names.extend_from_slice(DISPATCH_FEATURES);
        values.extend_from_slice(&[
            kernel.id() as f64,
            d.wg_count as f64,
            d.wg_size.0 as f64,
            d.wg_size.1 as f64,
            d.padding_waste,
            d.wave_count(profile) as f64,
        ]);
    }
    FeatureVector { names, values }
}

pub fn cpu_features(op: &OpDescriptor, threads: u8) -> FeatureVector {
    let (mut names, mut values) = op_params(op);
    names.push("threads");
    values.push(threads as f64);
    FeatureVector { names, values }
}
