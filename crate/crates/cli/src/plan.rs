use std::path::PathBuf;

use clap::Args;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use coexec_core::device::{sample_eval_ops, SyntheticDevice};
use coexec_core::networks;
use coexec_core::op::{OpDescriptor, OpKind};
use coexec_core::partition::{
    end_to_end_speedup, grid_search_measured, objective, optimize, plan_model, LayerPlan, LayerSpec, OpCosts,
};
use coexec_core::predictor::PredictorEnsemble;

use crate::config::{self, apply, check_threads, DeviceConfig, Envelope, KindSel};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ensemble JSON written by `train`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    kind: Option<KindSel>,
    /// CPU thread counts, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=3))]
    threads: Option<Vec<u8>>,
    /// Fraction of the evaluation grid to plan, drawn with `--seed`.
    #[arg(long)]
    sample_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Plan a bundled network instead of the evaluation grid.
    #[arg(long)]
    network: Option<String>,
    /// Plan a layer-list JSON file instead of the evaluation grid.
    #[arg(long, conflicts_with = "network")]
    layers: Option<PathBuf>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    device_spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    pub model: Option<PathBuf>,
    pub kind: KindSel,
    pub threads: Vec<u8>,
    pub sample_fraction: f64,
    pub seed: u64,
    /// GPU channel counts considered by the predictor-driven planner.
    pub alignment: u32,
    /// Step of the measured grid search.
    pub grid_step: u32,
    /// Synchronization cost charged to co-executed splits.
    pub overhead_us: f64,
    pub network: Option<String>,
    pub layers: Option<PathBuf>,
    /// The oracle that plans are measured on.
    pub device: DeviceConfig,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            model: None,
            kind: KindSel::Both,
            threads: vec![1, 2, 3],
            sample_fraction: 0.1,
            seed: 0,
            alignment: 8,
            grid_step: 8,
            overhead_us: 7.0,
            network: None,
            layers: None,
            device: DeviceConfig::default(),
            out: PathBuf::from("plans"),
        }
    }
}

impl PlanArgs {
    fn resolve(self) -> CliResult<PlanConfig> {
        let mut c: PlanConfig = config::load_config(self.config.as_deref())?;
        if self.model.is_some() {
            c.model = self.model;
        }
        apply(&mut c.kind, self.kind);
        apply(&mut c.threads, self.threads);
        apply(&mut c.sample_fraction, self.sample_fraction);
        apply(&mut c.seed, self.seed);
        if self.network.is_some() {
            c.network = self.network;
            c.layers = None;
        }
        if self.layers.is_some() {
            c.layers = self.layers;
            c.network = None;
        }
        apply(&mut c.device.preset, self.device);
        if self.device_spec.is_some() {
            c.device.spec = self.device_spec;
        }
        apply(&mut c.out, self.out);
        check_threads(&c.threads)?;
        if !(c.sample_fraction > 0.0 && c.sample_fraction <= 1.0) {
            return Err(CliError::config("sample_fraction must lie in (0, 1]"));
        }
        if c.alignment == 0 || c.grid_step == 0 {
            return Err(CliError::config("alignment and grid_step must be positive"));
        }
        if c.overhead_us < 0.0 {
            return Err(CliError::config("overhead_us must be non-negative"));
        }
        if c.network.is_some() && c.layers.is_some() {
            return Err(CliError::config("give either network or layers, not both"));
        }
        Ok(c)
    }
}

/// Per-layer plans for one network at one thread count; read by `simulate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub network: String,
    pub threads: u8,
    pub layers: Vec<LayerPlan>,
}

pub fn load_ensemble(path: Option<&PathBuf>, device: &SyntheticDevice) -> CliResult<PredictorEnsemble> {
    let path = path.ok_or_else(|| CliError::config("no model given (use --model)"))?;
    config::require_file(path, "model file")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let ensemble = PredictorEnsemble::from_json(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if ensemble.profile != *device.profile() {
        return Err(CliError::config(format!(
            "model was trained for device profile `{}`, planning targets `{}`",
            ensemble.profile.name,
            device.profile().name
        )));
    }
    Ok(ensemble)
}

/// Layers of a bundled network or a layer-list file, with a display name.
pub fn load_layers(network: Option<&str>, layers: Option<&PathBuf>) -> CliResult<(String, Vec<LayerSpec>)> {
    match (network, layers) {
        (Some(name), _) => Ok((name.to_string(), networks::bundled(name)?)),
        (None, Some(path)) => {
            config::require_file(path, "layer list")?;
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "layers".into());
            Ok((name, LayerSpec::parse_model(&text)?))
        }
        (None, None) => Err(CliError::config("no network or layer list given")),
    }
}

#[derive(Serialize)]
struct OpRow {
    kind: OpKind,
    threads: u8,
    op: OpDescriptor,
    gpu_only_us: f64,
    gbdt_c_gpu: u32,
    gbdt_us: f64,
    search_c_gpu: u32,
    search_us: f64,
}

#[derive(Serialize)]
struct Cell {
    method: &'static str,
    kind: OpKind,
    threads: u8,
    ops: usize,
    mean_speedup: f64,
}

#[derive(Serialize)]
struct NetworkRow {
    threads: u8,
    plan_file: String,
    layers: usize,
    coexecuted_layers: usize,
    predicted_speedup: f64,
}

fn eval_ops(kind: OpKind, fraction: f64, seed: u64) -> Vec<OpDescriptor> {
    let all = sample_eval_ops(kind);
    if fraction >= 1.0 {
        return all;
    }
    let n = ((all.len() as f64 * fraction).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ kind as u64);
    let mut picked = index::sample(&mut rng, all.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| all[i]).collect()
}

fn plan_op(
    op: &OpDescriptor,
    threads: u8,
    ensemble: &PredictorEnsemble,
    device: &SyntheticDevice,
    cfg: &PlanConfig,
) -> CliResult<OpRow> {
    let predicted = OpCosts {
        op: *op,
        model: ensemble,
        threads,
        overhead_us: cfg.overhead_us,
    };
    let oracle = OpCosts {
        op: *op,
        model: device,
        threads,
        overhead_us: cfg.overhead_us,
    };
    let gbdt = optimize(&predicted, cfg.alignment)?;
    let gbdt_us = objective(gbdt.partition.c_cpu, gbdt.partition.c_gpu, &oracle)?;
    let search = grid_search_measured(
        op.c_out(),
        |p| objective(p.c_cpu, p.c_gpu, &oracle),
        cfg.grid_step,
    )?;
    Ok(OpRow {
        kind: op.kind(),
        threads,
        op: *op,
        gpu_only_us: search.baseline_gpu_us,
        gbdt_c_gpu: gbdt.partition.c_gpu,
        gbdt_us,
        search_c_gpu: search.partition.c_gpu,
        search_us: search.predicted_total_us,
    })
}

fn run_grid(cfg: &PlanConfig, ensemble: &PredictorEnsemble, device: &SyntheticDevice) -> CliResult<()> {
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for kind in cfg.kind.kinds() {
        let ops = eval_ops(kind, cfg.sample_fraction, cfg.seed);
        for &t in &cfg.threads {
            let r = ops
                .par_iter()
                .map(|op| plan_op(op, t, ensemble, device, cfg))
                .collect::<CliResult<Vec<_>>>()?;
            let mean = |f: &dyn Fn(&OpRow) -> f64| r.iter().map(f).sum::<f64>() / r.len() as f64;
            cells.push(Cell {
                method: "GBDT",
                kind,
                threads: t,
                ops: r.len(),
                mean_speedup: mean(&|o| o.gpu_only_us / o.gbdt_us),
            });
            cells.push(Cell {
                method: "Search",
                kind,
                threads: t,
                ops: r.len(),
                mean_speedup: mean(&|o| o.gpu_only_us / o.search_us),
            });
            rows.extend(r);
        }
    }

    let csv_path = cfg.out.join("plan_ops.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| CliError::Io(format!("{}: {e}", csv_path.display())))?;
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", csv_path.display()));
    w.write_record([
        "kind",
        "threads",
        "op_json",
        "gpu_only_us",
        "gbdt_c_gpu",
        "gbdt_us",
        "gbdt_speedup",
        "search_c_gpu",
        "search_us",
        "search_speedup",
    ])
    .map_err(io)?;
    for r in &rows {
        w.write_record([
            r.kind.to_string(),
            r.threads.to_string(),
            r.op.to_json(),
            r.gpu_only_us.to_string(),
            r.gbdt_c_gpu.to_string(),
            r.gbdt_us.to_string(),
            (r.gpu_only_us / r.gbdt_us).to_string(),
            r.search_c_gpu.to_string(),
            r.search_us.to_string(),
            (r.gpu_only_us / r.search_us).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;

    let text = render_grid(&device.profile().name, cfg, &cells);
    print!("{text}");
    config::write_text(&cfg.out.join("plan_report.txt"), &text)?;
    config::write_json(
        &cfg.out.join("plan_report.json"),
        &Envelope {
            command: "plan",
            config_sha256: config::config_hash(cfg),
            seed: cfg.seed,
            config: cfg,
            result: &cells,
        },
    )
}

fn render_grid(device: &str, cfg: &PlanConfig, cells: &[Cell]) -> String {
    let kinds = cfg.kind.kinds();
    let mut header = vec!["Device".to_string(), "Method".to_string()];
    for k in &kinds {
        let label = match k {
            OpKind::Linear => "Linear",
            OpKind::Conv => "Conv",
        };
        for t in &cfg.threads {
            header.push(format!("{label} {t}T"));
        }
    }
    let rows: Vec<Vec<String>> = ["GBDT", "Search"]
        .iter()
        .map(|method| {
            let mut row = vec![device.to_string(), method.to_string()];
            for k in &kinds {
                for t in &cfg.threads {
                    let c = cells
                        .iter()
                        .find(|c| c.method == *method && c.kind == *k && c.threads == *t)
                        .expect("every cell computed");
                    row.push(format!("{:.2}x", c.mean_speedup));
                }
            }
            row
        })
        .collect();
    let counts: Vec<String> = kinds
        .iter()
        .map(|k| {
            let n = cells.iter().find(|c| c.kind == *k).map_or(0, |c| c.ops);
            format!("{n} {k}")
        })
        .collect();
    format!(
        "mean co-execution speedup over GPU-only ({} ops)\n{}",
        counts.join(", "),
        config::render_table(&header, &rows)
    )
}

fn run_network(cfg: &PlanConfig, ensemble: &PredictorEnsemble) -> CliResult<()> {
    let (name, layers) = load_layers(cfg.network.as_deref(), cfg.layers.as_ref())?;
    let mut summary = Vec::new();
    for &t in &cfg.threads {
        let plans = plan_model(&layers, ensemble, t, cfg.overhead_us, cfg.alignment)?;
        let plan_file = format!("plan_{name}_t{t}.json");
        config::write_json(
            &cfg.out.join(&plan_file),
            &PlanFile {
                network: name.clone(),
                threads: t,
                layers: plans.clone(),
            },
        )?;
        summary.push(NetworkRow {
            threads: t,
            plan_file,
            layers: plans.len(),
            coexecuted_layers: plans.iter().filter(|p| p.is_coexecuted()).count(),
            predicted_speedup: end_to_end_speedup(&plans),
        });
    }
    let header: Vec<String> = ["Network", "Threads", "Layers", "Co-executed", "Predicted speedup"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                name.clone(),
                s.threads.to_string(),
                s.layers.to_string(),
                s.coexecuted_layers.to_string(),
                format!("{:.2}x", s.predicted_speedup),
            ]
        })
        .collect();
    let text = config::render_table(&header, &rows);
    print!("{text}");
    config::write_text(&cfg.out.join(format!("plan_{name}.txt")), &text)?;
    config::write_json(
        &cfg.out.join(format!("plan_{name}_report.json")),
        &Envelope {
            command: "plan",
            config_sha256: config::config_hash(cfg),
            seed: cfg.seed,
            config: cfg,
            result: &summary,
        },
    )
}

pub fn run(args: PlanArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let device = cfg.device.build()?;
    let ensemble = load_ensemble(cfg.model.as_ref(), &device)?;
    config::ensure_dir(&cfg.out)?;
    if cfg.network.is_some() || cfg.layers.is_some() {
        run_network(&cfg, &ensemble)
    } else {
        run_grid(&cfg, &ensemble, &device)
    }
}
