use coexec_core::device::{
    sample_eval_ops, synthesize, Dataset, Executor, LatencyModel, SyntheticDevice,
    SyntheticDeviceSpec, PRESET_NAMES,
};
use coexec_core::op::{LinearOp, OpDescriptor, OpKind};
use proptest::prelude::*;

fn quiet_default() -> SyntheticDevice {
    SyntheticDevice::new(SyntheticDeviceSpec {
        noise_rel: 0.0,
        ..SyntheticDeviceSpec::default()
    })
    .unwrap()
}

fn vit(c_out: u32) -> OpDescriptor {
    LinearOp::new(50, 3072, c_out).unwrap().into()
}

#[test]
fn default_crossover_near_425() {
    let dev = quiet_default();
    let gpu: Vec<f64> = (1..=1100).map(|c| dev.gpu_latency_us(&vit(c)).unwrap()).collect();
    let cpu = |c: u32| dev.cpu_latency_us(&vit(c), 3).unwrap();
    // GPU latency is a staircase; compare the CPU line against its local mean.
    let crossing = (40..=1000u32)
        .find(|&c| {
            let window = &gpu[(c - 33) as usize..(c + 31) as usize];
            cpu(c) >= window.iter().sum::<f64>() / window.len() as f64
        })
        .unwrap();
    assert!((417..=433).contains(&crossing), "crossing at {crossing}");
    for c in 1..300 {
        assert!(cpu(c) < gpu[c as usize - 1], "CPU should win at {c}");
    }
    for c in 601..=1100 {
        assert!(cpu(c) > gpu[c as usize - 1], "GPU should win at {c}");
    }
}

#[test]
fn synthesized_dataset_round_trips_through_trace() {
    let dev = SyntheticDevice::new(SyntheticDeviceSpec::preset("pixel4").unwrap()).unwrap();
    let ops = coexec_core::device::sample_training_ops(40, OpKind::Conv, 5).unwrap();
    let ds = synthesize(&dev, &ops, &Executor::ALL);
    assert_eq!(ds.len(), 160);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    ds.write_trace(&path).unwrap();
    let back = Dataset::ingest_trace(&path).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn eval_grid_sizes() {
    let lin = sample_eval_ops(OpKind::Linear);
    let conv = sample_eval_ops(OpKind::Conv);
    assert_eq!(lin.len(), 8610);
    assert_eq!(conv.len(), 1960);
}

#[test]
fn presets_are_all_constructible() {
    for name in PRESET_NAMES {
        SyntheticDevice::new(SyntheticDeviceSpec::preset(name).unwrap()).unwrap();
    }
}

proptest! {
    #[test]
    fn cpu_latency_monotone(l in 1u32..256, ci in 1u32..1024, co in 1u32..1024, t in 1u8..3) {
        let dev = quiet_default();
        let op: OpDescriptor = LinearOp::new(l, ci, co).unwrap().into();
        let bigger: OpDescriptor = LinearOp::new(l, ci, co + 1).unwrap().into();
        let a = dev.cpu_latency_us(&op, t).unwrap();
        prop_assert!(dev.cpu_latency_us(&bigger, t).unwrap() > a);
        prop_assert!(dev.cpu_latency_us(&op, t + 1).unwrap() <= a);
    }

    #[test]
    fn gpu_jumps_only_at_dispatch_changes(l in 1u32..256, ci in 1u32..512, co in 1u32..1024) {
        let dev = quiet_default();
        let a: OpDescriptor = LinearOp::new(l, ci, co).unwrap().into();
        let b: OpDescriptor = LinearOp::new(l, ci, co + 1).unwrap().into();
        let (da, db) = (dev.dispatch_for(&a), dev.dispatch_for(&b));
        let same = da.kernel == db.kernel
            && da.wave_count(dev.profile()) == db.wave_count(dev.profile());
        let (la, lb) = (dev.gpu_latency_us(&a).unwrap(), dev.gpu_latency_us(&b).unwrap());
        prop_assert_eq!(same, la == lb);
    }

    #[test]
    fn synthetic_latency_deterministic(seed in any::<u64>(), co in 1u32..2048) {
        let spec = SyntheticDeviceSpec { seed, ..SyntheticDeviceSpec::default() };
        let a = SyntheticDevice::new(spec.clone()).unwrap();
        let b = SyntheticDevice::new(spec).unwrap();
        for ex in Executor::ALL {
            prop_assert_eq!(a.latency_us(&vit(co), ex).unwrap(), b.latency_us(&vit(co), ex).unwrap());
        }
    }
}
