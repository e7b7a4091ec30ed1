use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use coexec_core::partition::{LayerPlan, LayerSpec};
use coexec_core::sim::{simulate_model, SyncConfig, SyncMode};
use coexec_core::sync::{passive_baseline_run, rendezvous_run, OverheadStats};

use crate::config::{self, apply, DeviceConfig, Envelope};
use crate::error::{CliError, CliResult};
use crate::plan::{load_layers, PlanFile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SyncSel {
    Polling,
    Passive,
    Both,
}

impl SyncSel {
    pub fn modes(self) -> Vec<SyncMode> {
        match self {
            SyncSel::Polling => vec![SyncMode::Polling],
            SyncSel::Passive => vec![SyncMode::Passive],
            SyncSel::Both => vec![SyncMode::Polling, SyncMode::Passive],
        }
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Plan JSON written by `plan --network`.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    network: Option<String>,
    #[arg(long, conflicts_with = "network")]
    layers: Option<PathBuf>,
    #[arg(long, value_enum)]
    sync: Option<SyncSel>,
    /// Also run the real-thread rendezvous benchmark.
    #[arg(long)]
    bench: bool,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    device_spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub plan: Option<PathBuf>,
    pub network: Option<String>,
    pub layers: Option<PathBuf>,
    pub sync: SyncSel,
    pub epsilon_poll_us: f64,
    pub notify_delay_us: f64,
    pub bench: bool,
    pub bench_rounds: usize,
    pub bench_cpu_us: u64,
    pub bench_gpu_us: u64,
    pub seed: u64,
    pub device: DeviceConfig,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let sync = SyncConfig::default();
        Self {
            plan: None,
            network: None,
            layers: None,
            sync: SyncSel::Both,
            epsilon_poll_us: sync.epsilon_poll_us,
            notify_delay_us: sync.notify_delay_us,
            bench: false,
            bench_rounds: 1000,
            bench_cpu_us: 100,
            bench_gpu_us: 100,
            seed: 0,
            device: DeviceConfig::default(),
            out: PathBuf::from("simulation"),
        }
    }
}

impl SimulateArgs {
    fn resolve(self) -> CliResult<SimulateConfig> {
        let mut c: SimulateConfig = config::load_config(self.config.as_deref())?;
        if self.plan.is_some() {
            c.plan = self.plan;
        }
        if self.network.is_some() {
            c.network = self.network;
            c.layers = None;
        }
        if self.layers.is_some() {
            c.layers = self.layers;
            c.network = None;
        }
        apply(&mut c.sync, self.sync);
        c.bench |= self.bench;
        apply(&mut c.device.preset, self.device);
        if self.device_spec.is_some() {
            c.device.spec = self.device_spec;
        }
        apply(&mut c.out, self.out);
        if c.plan.is_none() {
            return Err(CliError::config("no plan given (use --plan)"));
        }
        if c.network.is_some() && c.layers.is_some() {
            return Err(CliError::config("give either network or layers, not both"));
        }
        if c.bench && c.bench_rounds == 0 {
            return Err(CliError::config("bench_rounds must be positive"));
        }
        Ok(c)
    }

    fn sync_config(c: &SimulateConfig, mode: SyncMode) -> CliResult<SyncConfig> {
        let s = SyncConfig {
            mode,
            epsilon_poll_us: c.epsilon_poll_us,
            notify_delay_us: c.notify_delay_us,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Serialize)]
struct ModeResult {
    sync: SyncMode,
    total_us: f64,
    overhead_us: f64,
    overhead_share: f64,
    speedup: f64,
    per_layer_us: Vec<f64>,
}

#[derive(Serialize)]
struct BenchResult {
    note: &'static str,
    polling: OverheadStats,
    passive: OverheadStats,
}

#[derive(Serialize)]
struct SimulateResult {
    network: String,
    threads: u8,
    layers: usize,
    coexecuted_layers: usize,
    gpu_only_us: f64,
    modes: Vec<ModeResult>,
    bench: Option<BenchResult>,
}

fn gpu_only(layers: &[LayerSpec]) -> Vec<LayerPlan> {
    layers
        .iter()
        .enumerate()
        .map(|(i, l)| LayerPlan {
            layer: i,
            c_cpu: 0,
            c_gpu: match l {
                LayerSpec::Op(op) => op.c_out(),
                LayerSpec::Pool => 0,
            },
            predicted_us: 0.0,
            speedup: 1.0,
            baseline_gpu_us: 0.0,
        })
        .collect()
}

pub fn run(args: SimulateArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let device = cfg.device.build()?;
    let plan_path = cfg.plan.as_ref().expect("checked in resolve");
    config::require_file(plan_path, "plan file")?;
    let text = std::fs::read_to_string(plan_path).map_err(|e| CliError::io(plan_path, e))?;
    let plan: PlanFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", plan_path.display())))?;
    let network = cfg.network.clone().or_else(|| cfg.layers.is_none().then(|| plan.network.clone()));
    let (name, layers) = load_layers(network.as_deref(), cfg.layers.as_ref())?;
    if plan.layers.iter().enumerate().any(|(i, p)| p.layer != i) {
        return Err(CliError::Validation(format!(
            "{}: layer indices must run 0, 1, 2, ...",
            plan_path.display()
        )));
    }

    let base = simulate_model(&layers, &gpu_only(&layers), &device, plan.threads, &SyncConfig::default())?;
    let mut modes = Vec::new();
    for mode in cfg.sync.modes() {
        let sync = SimulateArgs::sync_config(&cfg, mode)?;
        let t = simulate_model(&layers, &plan.layers, &device, plan.threads, &sync)
            .map_err(|e| CliError::Validation(format!("plan {} on {name}: {e}", plan_path.display())))?;
        modes.push(ModeResult {
            sync: mode,
            overhead_share: if t.total_us > 0.0 { t.overhead_us / t.total_us } else { 0.0 },
            speedup: base.total_us / t.total_us,
            total_us: t.total_us,
            overhead_us: t.overhead_us,
            per_layer_us: t.per_layer_us,
        });
    }

    let bench = if cfg.bench {
        let poll = rendezvous_run(cfg.bench_cpu_us, cfg.bench_gpu_us, cfg.bench_rounds)?;
        let passive = passive_baseline_run(
            cfg.bench_cpu_us,
            cfg.bench_gpu_us,
            cfg.bench_rounds,
            cfg.notify_delay_us.round() as u64,
        )?;
        for r in [&poll, &passive] {
            if !r.is_live() {
                return Err(CliError::Validation(format!(
                    "rendezvous benchmark failed: {}",
                    r.liveness_failure.clone().unwrap_or_default()
                )));
            }
        }
        Some(BenchResult {
            note: "wall-clock measurement; not reproducible bit for bit",
            polling: poll.stats,
            passive: passive.stats,
        })
    } else {
        None
    };

    let result = SimulateResult {
        network: name.clone(),
        threads: plan.threads,
        layers: layers.len(),
        coexecuted_layers: plan.layers.iter().filter(|p| p.is_coexecuted()).count(),
        gpu_only_us: base.total_us,
        modes,
        bench,
    };

    let header: Vec<String> = ["Network", "Sync", "GPU-only (ms)", "Co-exec (ms)", "Speedup", "Sync share"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = result
        .modes
        .iter()
        .map(|m| {
            vec![
                name.clone(),
                format!("{:?}", m.sync).to_lowercase(),
                format!("{:.2}", result.gpu_only_us / 1000.0),
                format!("{:.2}", m.total_us / 1000.0),
                format!("{:.2}x", m.speedup),
                format!("{:.1}%", 100.0 * m.overhead_share),
            ]
        })
        .collect();
    let mut text = format!(
        "{name}, {} CPU thread(s), {} of {} layers co-executed\n",
        result.threads, result.coexecuted_layers, result.layers
    );
    text.push_str(&config::render_table(&header, &rows));
    if let Some(b) = &result.bench {
        text.push_str(&format!(
            "rendezvous overhead median: polling {:.1} us, passive {:.1} us\n",
            b.polling.median_ns as f64 / 1000.0,
            b.passive.median_ns as f64 / 1000.0
        ));
    }
    print!("{text}");
    config::ensure_dir(&cfg.out)?;
    config::write_text(&cfg.out.join(format!("simulate_{name}.txt")), &text)?;
    config::write_json(
        &cfg.out.join(format!("simulate_{name}.json")),
        &Envelope {
            command: "simulate",
            config_sha256: config::config_hash(&cfg),
            seed: cfg.seed,
            config: &cfg,
            result: &result,
        },
    )
}
