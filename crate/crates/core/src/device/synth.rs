use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Executor, LatencyModel};
use crate::dispatch::{dispatch, select_kernel, DeviceProfile, DispatchInfo, KernelImpl};
use crate::error::{Error, Result};
use crate::op::OpDescriptor;

/// Per-kernel GPU cost of one wave, in microseconds per MFLOP of
/// per-workgroup work.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveCoefficients {
    pub linear_generic: f64,
    pub conv_constant: f64,
    pub winograd: f64,
    pub conv_generic: f64,
}

impl WaveCoefficients {
    pub fn get(&self, kernel: KernelImpl) -> f64 {
        match kernel {
            KernelImpl::LinearGeneric => self.linear_generic,
            KernelImpl::ConvConstant => self.conv_constant,
            KernelImpl::Winograd => self.winograd,
            KernelImpl::ConvGeneric => self.conv_generic,
        }
    }

    fn scaled(self, f: f64) -> Self {
        Self {
            linear_generic: self.linear_generic * f,
            conv_constant: self.conv_constant * f,
            winograd: self.winograd * f,
            conv_generic: self.conv_generic * f,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDeviceSpec {
    pub profile: DeviceProfile,
    /// Fixed kernel-launch cost.
    pub gpu_dispatch_us: f64,
    pub wave_us_per_mflop: WaveCoefficients,
    /// Single-thread CPU throughput.
    pub cpu_gflops_1t: f64,
    /// Parallel efficiency for 1, 2 and 3 threads.
    pub cpu_scaling: [f64; 3],
    /// Fixed per-op CPU cost (thread wake-up, packing).
    pub cpu_overhead_us: f64,
    /// Multiplicative noise amplitude, `Uniform(1 - n, 1 + n)`.
    pub noise_rel: f64,
    pub seed: u64,
}

pub const PRESET_NAMES: [&str; 4] = ["pixel4", "pixel5", "moto2022", "oneplus11"];

// Reference coefficients; presets scale them.
const BASE_WAVES: WaveCoefficients = WaveCoefficients {
    linear_generic: 11.6,
    conv_constant: 10.6,
    winograd: 6.6,
    conv_generic: 13.3,
};

impl Default for SyntheticDeviceSpec {
    /// The `oneplus11` preset: on `LinearOp(50, 3072, C_out)` the 3-thread CPU
    /// line crosses the midline of the GPU wave staircase at `C_out = 425`.
    fn default() -> Self {
        Self {
            profile: DeviceProfile {
                name: "oneplus11".into(),
                ..DeviceProfile::default()
            },
            gpu_dispatch_us: 45.6,
            wave_us_per_mflop: BASE_WAVES,
            cpu_gflops_1t: 187.5,
            cpu_scaling: [1.0, 0.9, 0.8],
            cpu_overhead_us: 16.0,
            noise_rel: 0.005,
            seed: 0,
        }
    }
}

impl SyntheticDeviceSpec {
    /// Named device presets. They differ in CPU/GPU balance only; the
    /// dispatch knobs are the default profile's.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        let named = |gflops: f64, gpu_factor: f64, dispatch: f64| Self {
            profile: DeviceProfile {
                name: name.to_string(),
                ..DeviceProfile::default()
            },
            cpu_gflops_1t: gflops,
            wave_us_per_mflop: BASE_WAVES.scaled(gpu_factor),
            gpu_dispatch_us: dispatch,
            ..base.clone()
        };
        match name {
            "oneplus11" => Ok(base),
            "pixel4" => Ok(named(150.0, 1.15, 50.0)),
            "pixel5" => Ok(named(175.0, 1.3, 55.0)),
            "moto2022" => Ok(named(140.0, 0.85, 40.0)),
            other => Err(Error::contract(format!(
                "unknown device preset `{other}` (known: {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        let s = self.cpu_scaling;
        if !(0.0..=0.1).contains(&self.noise_rel) {
            return Err(Error::contract("noise_rel must lie in [0, 0.1]"));
        }
        if s[0] != 1.0 || s.iter().any(|&v| v <= 0.0 || v > 1.0) {
            return Err(Error::contract("cpu_scaling must start at 1 and lie in (0, 1]"));
        }
        if !(2.0 * s[1] >= s[0] && 3.0 * s[2] >= 2.0 * s[1]) {
            return Err(Error::contract("total CPU throughput must not drop with more threads"));
        }
        let w = self.wave_us_per_mflop;
        let positive = [
            self.gpu_dispatch_us >= 0.0,
            self.cpu_overhead_us >= 0.0,
            self.cpu_gflops_1t > 0.0,
            w.linear_generic > 0.0,
            w.conv_constant > 0.0,
            w.winograd > 0.0,
            w.conv_generic > 0.0,
        ];
        if positive.contains(&false) {
            return Err(Error::contract("latency coefficients must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Deterministic latency oracle built from a [`SyntheticDeviceSpec`].
#[derive(Clone, Debug)]
pub struct SyntheticDevice {
    spec: SyntheticDeviceSpec,
}

impl SyntheticDevice {
    pub fn new(spec: SyntheticDeviceSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &SyntheticDeviceSpec {
        &self.spec
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.spec.profile
    }

    pub fn kernel_for(&self, op: &OpDescriptor) -> KernelImpl {
        select_kernel(op, &self.spec.profile)
    }

    pub fn dispatch_for(&self, op: &OpDescriptor) -> DispatchInfo {
        dispatch(op, self.kernel_for(op), &self.spec.profile)
            .expect("selected kernel always fits the op")
    }

    /// Work one workgroup performs, in FLOPs, including padded outputs.
    pub fn workgroup_flops(&self, op: &OpDescriptor, d: &DispatchInfo) -> f64 {
        let p = &self.spec.profile;
        let items = (d.wg_size.0 * d.wg_size.1) as f64 * (p.tile.0 * p.tile.1) as f64;
        let per_output = match op {
            OpDescriptor::Linear(l) => 2.0 * l.c_in() as f64,
            OpDescriptor::Conv(c) => 2.0 * (c.k() * c.k()) as f64 * c.c_in() as f64,
        };
        let outputs_per_row = if d.kernel == KernelImpl::Winograd { 4.0 } else { 1.0 };
        items * outputs_per_row * per_output
    }

    /// Noise-free GPU latency: launch cost plus whole waves.
    pub fn gpu_latency_clean(&self, op: &OpDescriptor) -> f64 {
        let d = self.dispatch_for(op);
        let waves = d.wave_count(&self.spec.profile) as f64;
        let per_wave = self.spec.wave_us_per_mflop.get(d.kernel) * self.workgroup_flops(op, &d) / 1e6;
        self.spec.gpu_dispatch_us + waves * per_wave
    }

    pub fn cpu_latency_clean(&self, op: &OpDescriptor, threads: u8) -> f64 {
        let t = threads as f64;
        let eff = self.spec.cpu_scaling[threads as usize - 1];
        let flops_per_us = self.spec.cpu_gflops_1t * t * eff * 1000.0;
        op.flops() as f64 / flops_per_us + self.spec.cpu_overhead_us
    }

    fn noise(&self, op: &OpDescriptor, executor: Executor) -> f64 {
        if self.spec.noise_rel == 0.0 {
            return 1.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(noise_key(self.spec.seed, op, executor));
        let n = self.spec.noise_rel;
        rng.random_range(1.0 - n..=1.0 + n)
    }
}

impl LatencyModel for SyntheticDevice {
    fn gpu_latency_us(&self, op: &OpDescriptor) -> Result<f64> {
        Ok(self.gpu_latency_clean(op) * self.noise(op, Executor::Gpu))
    }

    fn cpu_latency_us(&self, op: &OpDescriptor, threads: u8) -> Result<f64> {
        let ex = Executor::cpu(threads)?;
        Ok(self.cpu_latency_clean(op, threads) * self.noise(op, ex))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn noise_key(seed: u64, op: &OpDescriptor, executor: Executor) -> u64 {
    let ex = match executor {
        Executor::Gpu => 0,
        Executor::Cpu(t) => t as u64,
    };
    let fields: [u64; 8] = match op {
        OpDescriptor::Linear(l) => [1, l.l() as u64, l.c_in() as u64, l.c_out() as u64, 0, 0, 0, ex],
        OpDescriptor::Conv(c) => [
            2,
            c.h_in() as u64,
            c.w_in() as u64,
            c.c_in() as u64,
            c.c_out() as u64,
            c.k() as u64,
            c.s() as u64,
            ex,
        ],
    };
    fields.iter().fold(splitmix(seed), |h, &f| splitmix(h ^ f))
}
