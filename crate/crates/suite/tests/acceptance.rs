//! One test per acceptance criterion. Each prints a single PASS/FAIL line to
//! stderr, bypassing the test harness's output capture, then asserts.
//! Criteria run one at a time so timing-sensitive ones get the machine alone.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use coexec_core::device::{
    sample_eval_ops, sample_training_ops, synthesize, Executor, LatencyModel, SyntheticDevice, SyntheticDeviceSpec,
};
use coexec_core::dispatch::FeatureMode;
use coexec_core::gbdt::{mape, tune, HyperparameterSpace, Hyperparams};
use coexec_core::kernels::{coexec_forward, conv_forward_direct, conv_forward_winograd, ConvAlgorithm, Tensor};
use coexec_core::op::{ChannelPartition, ConvOp, LinearOp, OpDescriptor, OpKind};
use coexec_core::partition::{grid_search_measured, objective, optimize, OpCosts, TabulatedCosts};
use coexec_core::predictor::{train_ensemble, training_set, ModelKey, TrainingPlan};
use coexec_core::sim::{simulate_layer, SyncConfig, SyncMode};
use coexec_core::sync::{run_with_config, RendezvousConfig, WaitMode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: String, elapsed: Duration) {
    let line = format!(
        "acceptance {n:>2} {}: {name}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn random_linear(rng: &mut ChaCha8Rng, max: u32) -> OpDescriptor {
    LinearOp::new(
        rng.random_range(1..=max),
        rng.random_range(1..=max),
        rng.random_range(1..=max),
    )
    .unwrap()
    .into()
}

fn random_conv(rng: &mut ChaCha8Rng, k: u32, s: u32) -> OpDescriptor {
    let h = rng.random_range(k.max(s)..=16);
    let w = rng.random_range(k.max(s)..=16);
    ConvOp::new(h, w, rng.random_range(1..=8), rng.random_range(1..=16), k, s)
        .unwrap()
        .into()
}

fn operands(op: &OpDescriptor, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    match op {
        OpDescriptor::Linear(l) => (
            Tensor::random_normal(&[l.l() as usize, l.c_in() as usize], rng),
            Tensor::random_normal(&[l.c_in() as usize, l.c_out() as usize], rng),
        ),
        OpDescriptor::Conv(c) => (
            Tensor::random_normal(&[c.h_in() as usize, c.w_in() as usize, c.c_in() as usize], rng),
            Tensor::random_normal(
                &[c.k() as usize, c.k() as usize, c.c_in() as usize, c.c_out() as usize],
                rng,
            ),
        ),
    }
}

fn full_forward(op: &OpDescriptor, x: &Tensor, w: &Tensor) -> Tensor {
    match op {
        OpDescriptor::Linear(_) => coexec_core::kernels::linear_forward(x, w).unwrap(),
        OpDescriptor::Conv(c) => conv_forward_direct(x, w, c.s() as usize).unwrap(),
    }
}

#[test]
fn criterion_01_partition_merge() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_exact = 0.0f32;
    let mut worst_winograd = 0.0f32;
    let mut winograd_cases = 0;
    for i in 0..100 {
        let op = if i < 50 {
            random_linear(&mut rng, 64)
        } else {
            let k = *[1, 3].choose(&mut rng).unwrap();
            let stride = rng.random_range(1..=2);
            random_conv(&mut rng, k, stride)
        };
        let (x, w) = operands(&op, &mut rng);
        let p = ChannelPartition::with_cpu(op.c_out(), rng.random_range(0..=op.c_out())).unwrap();
        let full = full_forward(&op, &x, &w);
        let wino = matches!(op, OpDescriptor::Conv(c) if c.k() == 3 && c.s() == 1) && p.c_gpu > 0;
        let gpu_algo = if wino { ConvAlgorithm::Winograd } else { ConvAlgorithm::Direct };
        let merged = coexec_forward(&op, p, &x, &w, ConvAlgorithm::Direct, gpu_algo).unwrap();
        let err = merged.max_abs_diff(&full).unwrap();
        if wino {
            winograd_cases += 1;
            worst_winograd = worst_winograd.max(err);
        } else {
            worst_exact = worst_exact.max(err);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "co-executed forward equals full forward",
        worst_exact == 0.0 && worst_winograd <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "like-kernel max err {worst_exact:e} (exact), winograd max err {worst_winograd:e} over {winograd_cases} cases (<= 1e-4)"
        ),
        elapsed,
    );
}

#[test]
fn criterion_02_winograd_equivalence() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f32;
    for _ in 0..100 {
        let op = random_conv(&mut rng, 3, 1);
        let (x, w) = operands(&op, &mut rng);
        let direct = conv_forward_direct(&x, &w, 1).unwrap();
        let wino = conv_forward_winograd(&x, &w).unwrap();
        worst = worst.max(wino.max_abs_diff(&direct).unwrap());
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "winograd matches direct convolution",
        worst <= 1e-4 && elapsed < Duration::from_secs(10),
        format!("max abs err {worst:e} over 100 convs (<= 1e-4)"),
        elapsed,
    );
}

/// Exhaustive minimum over every split, priced straight from the device.
fn exhaustive_minimum(dev: &SyntheticDevice, op: &OpDescriptor, threads: u8, eps: f64) -> f64 {
    let c_out = op.c_out();
    let cpu = |c: u32| dev.cpu_latency_us(&op.with_c_out(c).unwrap(), threads).unwrap();
    let gpu = |c: u32| dev.gpu_latency_us(&op.with_c_out(c).unwrap()).unwrap();
    (0..=c_out)
        .map(|c_gpu| match (c_out - c_gpu, c_gpu) {
            (0, g) => gpu(g),
            (c, 0) => cpu(c),
            (c, g) => eps + cpu(c).max(gpu(g)),
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn criterion_03_partitioner_optimality() {
    let _g = exclusive();
    let start = Instant::now();
    let dev = SyntheticDevice::new(SyntheticDeviceSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ops = sample_training_ops(50, OpKind::Linear, 31).unwrap();
    ops.extend(sample_training_ops(50, OpKind::Conv, 32).unwrap());
    let mut mismatches = 0;
    for op in &ops {
        let threads = rng.random_range(1..=3);
        let costs = OpCosts {
            op: *op,
            model: &dev,
            threads,
            overhead_us: 7.0,
        };
        let plan = optimize(&costs, 1).unwrap();
        let best = exhaustive_minimum(&dev, op, threads, 7.0);
        let at_plan = objective(plan.partition.c_cpu, plan.partition.c_gpu, &costs).unwrap();
        if plan.predicted_total_us.to_bits() != best.to_bits() || at_plan.to_bits() != best.to_bits() {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "optimize finds the exhaustive minimum",
        mismatches == 0 && elapsed < Duration::from_secs(30),
        format!("{mismatches} of 100 ops differ from exhaustive enumeration (bitwise)"),
        elapsed,
    );
}

#[test]
fn criterion_04_grid_step_fidelity() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut c_outs: Vec<u32> = (1..=64).collect();
    c_outs.extend((0..100).map(|_| rng.random_range(65..=4096)));
    let mut bad = Vec::new();
    for &c_out in &c_outs {
        let seen = Mutex::new(Vec::new());
        let plan = grid_search_measured(
            c_out,
            |p| {
                seen.lock().unwrap().push(p.c_gpu);
                Ok(1.0 + p.c_gpu as f64)
            },
            8,
        )
        .unwrap();
        let mut seen = seen.into_inner().unwrap();
        seen.sort_unstable();
        let want = c_out.div_ceil(8) as usize + 1;
        let spaced = seen.windows(2).all(|w| w[1] - w[0] == 8 || w[1] == c_out);
        if seen.len() != want
            || plan.candidates_evaluated != want
            || seen.first() != Some(&0)
            || seen.last() != Some(&c_out)
            || !spaced
        {
            bad.push(c_out);
        }
    }
    let elapsed = start.elapsed();
    verdict(
        4,
        "step-8 grid enumerates ceil(C_out/8)+1 candidates with both endpoints",
        bad.is_empty(),
        format!("{} of {} channel counts wrong {:?}", bad.len(), c_outs.len(), bad),
        elapsed,
    );
}

#[test]
fn criterion_05_feature_augmentation_ablation() {
    let _g = exclusive();
    let start = Instant::now();
    let dev = SyntheticDevice::new(SyntheticDeviceSpec::default()).unwrap();
    let noise = dev.spec().noise_rel;
    let ops = sample_training_ops(10_000, OpKind::Linear, 5).unwrap();
    let ds = synthesize(&dev, &ops, &[Executor::Gpu]);
    let key = ModelKey::route(&ops[0], Executor::Gpu, dev.profile());
    let space = HyperparameterSpace::default();
    let mut scores = BTreeMap::new();
    for mode in [FeatureMode::Augmented, FeatureMode::Baseline] {
        let set = training_set(&ds, &key, dev.profile(), mode).unwrap();
        let (train, test) = set.split(0.2, 55);
        let r = tune(&train, &space, 50, 56).unwrap();
        let err = mape(&r.model.predict_all(&test.rows), &test.latency_us).unwrap();
        scores.insert(mode == FeatureMode::Augmented, err);
    }
    let (aug, base) = (scores[&true], scores[&false]);
    let elapsed = start.elapsed();
    verdict(
        5,
        "feature augmentation lowers tuned GPU linear MAPE",
        noise <= 0.02 && aug <= 0.7 * base && aug <= 10.0 && elapsed < Duration::from_secs(600),
        format!(
            "augmented {aug:.3}% vs baseline {base:.3}% (ratio {:.3} <= 0.7, augmented <= 10%), 10000 samples, noise {:.1}%",
            aug / base,
            100.0 * noise
        ),
        elapsed,
    );
}

#[test]
fn criterion_06_eval_grid_counts() {
    let _g = exclusive();
    let start = Instant::now();
    let linear = sample_eval_ops(OpKind::Linear).len();
    let conv = sample_eval_ops(OpKind::Conv).len();
    verdict(
        6,
        "evaluation grid sizes",
        linear == 2039 && conv == 2051,
        format!("{linear} linear (want 2039), {conv} conv (want 2051)"),
        start.elapsed(),
    );
}

#[test]
fn criterion_07_planner_vs_oracle() {
    let _g = exclusive();
    let start = Instant::now();
    let dev = SyntheticDevice::new(SyntheticDeviceSpec::default()).unwrap();
    let ops = sample_training_ops(5000, OpKind::Linear, 7).unwrap();
    let ds = synthesize(&dev, &ops, &[Executor::Gpu, Executor::Cpu(3)]);
    let (ensemble, _) = train_ensemble(
        &ds,
        dev.profile(),
        FeatureMode::Augmented,
        &TrainingPlan::Fixed(Hyperparams::default()),
        7,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let eval: Vec<OpDescriptor> = sample_eval_ops(OpKind::Linear)
        .choose_multiple(&mut rng, 200)
        .copied()
        .collect();
    let (mut predicted, mut search) = (0.0, 0.0);
    for op in &eval {
        let oracle = OpCosts {
            op: *op,
            model: &dev,
            threads: 3,
            overhead_us: 7.0,
        };
        let plan = optimize(
            &OpCosts {
                op: *op,
                model: &ensemble,
                threads: 3,
                overhead_us: 7.0,
            },
            8,
        )
        .unwrap();
        let measured = grid_search_measured(op.c_out(), |p| objective(p.c_cpu, p.c_gpu, &oracle), 8).unwrap();
        let realized = objective(plan.partition.c_cpu, plan.partition.c_gpu, &oracle).unwrap();
        predicted += measured.baseline_gpu_us / realized;
        search += measured.speedup;
    }
    let (predicted, search) = (predicted / 200.0, search / 200.0);
    let elapsed = start.elapsed();
    verdict(
        7,
        "predictor-driven plans vs measured grid search",
        predicted >= 0.9 * search && elapsed < Duration::from_secs(300),
        format!(
            "mean speedup {predicted:.3}x vs {search:.3}x = {:.1}% (>= 90%), 200 linear ops, 3 threads",
            100.0 * predicted / search
        ),
        elapsed,
    );
}

#[test]
fn criterion_08_objective_simulator_identity() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let tc = log_uniform(&mut rng, 1e-2, 1e6);
        let tg = log_uniform(&mut rng, 1e-2, 1e6);
        let eps = log_uniform(&mut rng, 1e-3, 1e3);
        let costs = TabulatedCosts::from_fn(2, eps, |_| tc, |_| tg);
        let sync = SyncConfig {
            mode: SyncMode::Polling,
            epsilon_poll_us: eps,
            ..SyncConfig::default()
        };
        if simulate_layer(tc, tg, &sync).to_bits() != objective(1, 1, &costs).unwrap().to_bits() {
            mismatches += 1;
        }
    }
    verdict(
        8,
        "simulate_layer equals the planning objective",
        mismatches == 0,
        format!("{mismatches} of 1000 random (tc, tg, eps) triples differ (bitwise)"),
        start.elapsed(),
    );
}

#[test]
fn criterion_09_sync_safety_and_liveness() {
    let _g = exclusive();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut overhead = [Vec::new(), Vec::new()];
    let (mut violations, mut failures, mut rounds) = (0, Vec::new(), [0, 0]);
    for _ in 0..100 {
        let tc = rng.random_range(0..=300);
        let tg = rng.random_range(0..=300);
        for (i, mode) in [WaitMode::Polling, WaitMode::Passive { injected_delay_us: 162 }]
            .into_iter()
            .enumerate()
        {
            let r = run_with_config(&RendezvousConfig {
                rounds: 10,
                t_cpu_work_us: tc,
                t_gpu_work_us: tg,
                mode,
                ..RendezvousConfig::default()
            })
            .unwrap();
            violations += r.ordering_violations;
            rounds[i] += r.completed_rounds;
            if !r.is_live() {
                failures.push(r.liveness_failure.clone().unwrap_or_else(|| "incomplete run".into()));
            }
            overhead[i].extend(r.rounds.iter().map(|x| x.overhead_ns));
        }
    }
    let median = |v: &mut Vec<u64>| {
        v.sort_unstable();
        v[(v.len() - 1) / 2] as f64 / 1000.0
    };
    let poll = median(&mut overhead[0]);
    let passive = median(&mut overhead[1]);
    let elapsed = start.elapsed();
    verdict(
        9,
        "rendezvous safety, liveness and overhead",
        failures.is_empty()
            && violations == 0
            && rounds == [1000, 1000]
            && poll < passive
            && poll < 100.0
            && elapsed < Duration::from_secs(120),
        format!(
            "{} polling + {} passive rounds, {} deadlocks, {violations} ordering violations, median overhead polling {poll:.1} us vs passive {passive:.1} us (< 100 us)",
            rounds[0],
            rounds[1],
            failures.len()
        ),
        elapsed,
    );
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            for (name, bytes) in snapshot(&p) {
                files.insert(format!("{}/{name}", p.file_name().unwrap().to_string_lossy()), bytes);
            }
        } else {
            files.insert(p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap());
        }
    }
    files
}

fn pipeline(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();
    let run = |args: &[&str]| {
        let mut argv = vec!["coexec"];
        argv.extend_from_slice(args);
        coexec_cli::run_from(argv).unwrap_or_else(|e| panic!("{args:?}: {e}"));
    };
    run(&["gen-dataset", "--count", "2000", "--seed", "10", "--out", &p("ds")]);
    run(&["train", "--data", &p("ds"), "--trials", "2", "--seed", "10", "--ablation", "--out", &p("models")]);
    let model = p("models/ensemble_augmented.json");
    run(&["plan", "--model", &model, "--sample-fraction", "0.02", "--seed", "10", "--out", &p("plans")]);
    run(&["plan", "--model", &model, "--network", "resnet18", "--seed", "10", "--out", &p("plans")]);
    snapshot(root)
}

#[test]
fn criterion_10_determinism() {
    let _g = exclusive();
    let start = Instant::now();
    // Same paths both times, so the configs (and their hashes) are identical.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let first = pipeline(&root);
    std::fs::remove_dir_all(&root).unwrap();
    let second = pipeline(&root);
    let differing: Vec<&String> = first
        .iter()
        .filter(|(name, bytes)| second.get(*name) != Some(*bytes))
        .map(|(name, _)| name)
        .collect();
    verdict(
        10,
        "gen-dataset, train and plan are byte-reproducible",
        differing.is_empty() && first.len() == second.len(),
        format!("{} files compared, differing: {differing:?}", first.len()),
        start.elapsed(),
    );
}
