use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use coexec_core::device::{LatencyModel, SyntheticDevice, SyntheticDeviceSpec};
use coexec_core::networks::{bundled, BUNDLED_NETWORKS};
use coexec_core::partition::LayerSpec;
use serde_json::Value;

fn coexec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coexec"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = coexec(args);
    assert!(
        out.status.success(),
        "coexec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Dataset and fixed-parameter models shared by the tests below.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-fixture");
        let _ = std::fs::remove_dir_all(&dir);
        let ds = dir.join("ds");
        let models = dir.join("models");
        ok(&["gen-dataset", "--count", "1500", "--seed", "0", "--out", s(&ds)]);
        ok(&["train", "--data", s(&ds), "--trials", "0", "--seed", "0", "--out", s(&models)]);
        dir
    })
}

#[test]
fn gen_dataset_writes_count_rows_per_executor() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["gen-dataset", "--count", "250", "--kind", "linear", "--out", s(dir.path())]);
    assert!(stdout.contains("250 rows (train 200 / test 50)"), "{stdout}");
    for ex in ["gpu", "cpu1", "cpu2", "cpu3"] {
        for suffix in ["trace", "features"] {
            let text = std::fs::read_to_string(dir.path().join(format!("linear_{ex}_{suffix}.csv"))).unwrap();
            assert_eq!(text.lines().count(), 251, "{ex} {suffix}");
        }
    }
    let report = read_json(&dir.path().join("dataset.json"));
    assert_eq!(report["seed"], 0);
    assert_eq!(report["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, r#"{"count": 100, "kind": "linear", "seed": 9}"#).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["gen-dataset", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["gen-dataset", "--config", s(&cfg), "--count", "120", "--out", s(&b)]);
    let rows = |d: &Path| std::fs::read_to_string(d.join("linear_gpu_trace.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows(&a), 100);
    assert_eq!(rows(&b), 120);
    let ra = read_json(&a.join("dataset.json"));
    let rb = read_json(&b.join("dataset.json"));
    assert_eq!(ra["seed"], 9);
    assert_ne!(ra["config_sha256"], rb["config_sha256"]);
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, r#"{"count": 100, "colour": "red"}"#).unwrap();
    let out = coexec(&["gen-dataset", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let out = coexec(&["gen-dataset", "--device", "nokia3310", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_trace_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.csv");
    let good = r#""{""type"":""linear"",""L"":2,""C_in"":3,""C_out"":4}""#;
    std::fs::write(
        &trace,
        format!("op_json,executor,threads,kernel,latency_us\n{good},cpu,2,,10.5\n{good},cpu,7,,10.5\n"),
    )
    .unwrap();
    let out = coexec(&["gen-dataset", "--trace", s(&trace), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3") && err.contains("threads"), "{err}");
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = coexec(&["gen-dataset", "--trace", "/nonexistent/trace.csv", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
    let out = coexec(&["plan", "--model", "/nonexistent/model.json", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn too_few_samples_names_the_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    ok(&["gen-dataset", "--count", "200", "--kind", "conv", "--out", s(&ds)]);
    let out = coexec(&["train", "--data", s(&ds), "--trials", "0", "--out", s(&dir.path().join("m"))]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gpu/") && err.contains("50 after the 20% hold-out"), "{err}");
}

#[test]
fn train_reports_both_feature_modes_in_table_layout() {
    let dir = tempfile::tempdir().unwrap();
    let ds = fixture().join("ds");
    let stdout = ok(&["train", "--data", s(&ds), "--trials", "0", "--ablation", "--out", s(dir.path())]);
    for col in ["GPU", "1 CPU", "2 CPUs", "3 CPUs", "Linear", "Convolutional"] {
        assert!(stdout.contains(col), "missing {col}");
    }
    let metrics = read_json(&dir.path().join("metrics.json"));
    let modes: Vec<&str> = metrics["result"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["mode"].as_str().unwrap())
        .collect();
    assert_eq!(modes, ["augmented", "baseline"]);
    for m in metrics["result"].as_array().unwrap() {
        for row in m["table"].as_array().unwrap() {
            assert_eq!(row["mape_percent"].as_array().unwrap().len(), 4);
        }
    }
    assert!(dir.path().join("ensemble_baseline.json").is_file());
}

#[test]
fn search_dominates_gbdt_in_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture().join("models/ensemble_augmented.json");
    let stdout = ok(&["plan", "--model", s(&model), "--sample-fraction", "0.02", "--out", s(dir.path())]);
    assert!(stdout.contains("GBDT") && stdout.contains("Search"));
    let report = read_json(&dir.path().join("plan_report.json"));
    let cells = report["result"].as_array().unwrap();
    assert_eq!(cells.len(), 12);
    for pair in cells.chunks(2) {
        assert_eq!(pair[0]["method"], "GBDT");
        assert_eq!(pair[1]["method"], "Search");
        let g = pair[0]["mean_speedup"].as_f64().unwrap();
        let search = pair[1]["mean_speedup"].as_f64().unwrap();
        assert!(search >= g && g >= 1.0, "{pair:?}");
    }
    let csv = std::fs::read_to_string(dir.path().join("plan_ops.csv")).unwrap();
    assert!(csv.starts_with("kind,threads,op_json,"));
}

#[test]
fn bundled_networks_plan_and_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture().join("models/ensemble_augmented.json");
    for net in BUNDLED_NETWORKS {
        ok(&["plan", "--model", s(&model), "--network", net, "--threads", "2", "--out", s(dir.path())]);
        let plan = dir.path().join(format!("plan_{net}_t2.json"));
        let stdout = ok(&["simulate", "--plan", s(&plan), "--out", s(dir.path())]);
        assert!(stdout.contains(net));
        let report = read_json(&dir.path().join(format!("simulate_{net}.json")));
        let r = &report["result"];
        assert_eq!(r["layers"].as_u64().unwrap() as usize, bundled(net).unwrap().len());
        let modes = r["modes"].as_array().unwrap();
        let (poll, passive) = (&modes[0], &modes[1]);
        assert_eq!(poll["sync"], "polling");
        if r["coexecuted_layers"].as_u64().unwrap() > 0 {
            assert!(passive["total_us"].as_f64().unwrap() > poll["total_us"].as_f64().unwrap());
        }
    }
}

#[test]
fn exclusive_gpu_plan_costs_sum_of_gpu_latencies() {
    let dir = tempfile::tempdir().unwrap();
    let layers = bundled("resnet18").unwrap();
    let device = SyntheticDevice::new(SyntheticDeviceSpec::default()).unwrap();
    let mut expected = 0.0;
    let plans: Vec<Value> = layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let c_gpu = match l {
                LayerSpec::Op(op) => {
                    expected += device.gpu_latency_us(op).unwrap();
                    op.c_out()
                }
                LayerSpec::Pool => 0,
            };
            serde_json::json!({"layer": i, "c_cpu": 0, "c_gpu": c_gpu, "predicted_us": 0.0, "speedup": 1.0})
        })
        .collect();
    let plan = dir.path().join("gpu_only.json");
    std::fs::write(
        &plan,
        serde_json::json!({"network": "resnet18", "threads": 1, "layers": plans}).to_string(),
    )
    .unwrap();
    ok(&["simulate", "--plan", s(&plan), "--out", s(dir.path())]);
    let report = read_json(&dir.path().join("simulate_resnet18.json"));
    for m in report["result"]["modes"].as_array().unwrap() {
        let total = m["total_us"].as_f64().unwrap();
        assert!((total - expected).abs() <= 1e-9 * expected, "{total} vs {expected}");
        assert_eq!(m["overhead_us"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn mismatched_plan_names_the_layer() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture().join("models/ensemble_augmented.json");
    ok(&["plan", "--model", s(&model), "--network", "resnet18", "--threads", "1", "--out", s(dir.path())]);
    let plan = dir.path().join("plan_resnet18_t1.json");
    let out = coexec(&["simulate", "--plan", s(&plan), "--network", "resnet34", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("layer"), "{err}");
}

#[test]
fn sync_bench_reports_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&["sync-bench", "--rounds", "50", "--cpu-us", "20", "--gpu-us", "30", "--out", s(dir.path())]);
    assert!(stdout.contains("polling") && stdout.contains("passive"));
    let report = read_json(&dir.path().join("sync_bench.json"));
    assert_eq!(report["result"].as_array().unwrap().len(), 2);
}
