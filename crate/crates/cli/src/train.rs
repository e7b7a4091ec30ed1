use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use coexec_core::device::{Dataset, Executor};
use coexec_core::dispatch::FeatureMode;
use coexec_core::gbdt::{HyperparameterSpace, Hyperparams};
use coexec_core::op::OpKind;
use coexec_core::predictor::{train_ensemble, ModelReport, TrainingPlan};

use crate::config::{self, apply, DeviceConfig, Envelope};
use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    Augmented,
    Baseline,
    /// Both feature sets, for the augmentation ablation.
    Both,
}

impl ModeSel {
    fn modes(self) -> Vec<FeatureMode> {
        match self {
            ModeSel::Augmented => vec![FeatureMode::Augmented],
            ModeSel::Baseline => vec![FeatureMode::Baseline],
            ModeSel::Both => vec![FeatureMode::Augmented, FeatureMode::Baseline],
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace CSV files, or directories of `*_trace.csv` files.
    #[arg(long = "data", num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeSel>,
    /// Shorthand for `--mode both`.
    #[arg(long)]
    ablation: bool,
    /// Random-search trials per model; 0 trains once with fixed parameters.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    device: Option<String>,
    #[arg(long)]
    device_spec: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub data: Vec<PathBuf>,
    pub mode: ModeSel,
    pub trials: usize,
    pub params: Hyperparams,
    pub space: HyperparameterSpace,
    pub seed: u64,
    /// Only the profile is used: features are computed against it.
    pub device: DeviceConfig,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: Vec::new(),
            mode: ModeSel::Augmented,
            trials: 20,
            params: Hyperparams::default(),
            space: HyperparameterSpace::default(),
            seed: 0,
            device: DeviceConfig::default(),
            out: PathBuf::from("models"),
        }
    }
}

impl TrainArgs {
    fn resolve(self) -> CliResult<TrainConfig> {
        let mut c: TrainConfig = config::load_config(self.config.as_deref())?;
        if !self.data.is_empty() {
            c.data = self.data;
        }
        apply(&mut c.mode, self.mode);
        if self.ablation {
            c.mode = ModeSel::Both;
        }
        apply(&mut c.trials, self.trials);
        apply(&mut c.seed, self.seed);
        apply(&mut c.device.preset, self.device);
        if self.device_spec.is_some() {
            c.device.spec = self.device_spec;
        }
        apply(&mut c.out, self.out);
        if c.data.is_empty() {
            return Err(CliError::config("no training data given (use --data)"));
        }
        Ok(c)
    }
}

/// Trace files named by `paths`, expanding directories in name order.
pub fn trace_files(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| CliError::io(p, e))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with("_trace.csv"))
                .collect();
            found.sort();
            if found.is_empty() {
                return Err(CliError::Io(format!("{}: no *_trace.csv files", p.display())));
            }
            files.extend(found);
        } else {
            config::require_file(p, "trace")?;
            files.push(p.clone());
        }
    }
    Ok(files)
}

pub fn load_traces(paths: &[PathBuf]) -> CliResult<Dataset> {
    let mut samples = Vec::new();
    for f in trace_files(paths)? {
        let ds = Dataset::ingest_trace(&f).map_err(|e| match CliError::from(e) {
            CliError::Validation(m) => CliError::Validation(format!("{}: {m}", f.display())),
            other => other,
        })?;
        samples.extend(ds.samples);
    }
    Ok(Dataset { samples })
}

const COLUMNS: [&str; 4] = ["GPU", "1 CPU", "2 CPUs", "3 CPUs"];

fn column(executor: Executor) -> usize {
    match executor {
        Executor::Gpu => 0,
        Executor::Cpu(t) => t as usize,
    }
}

#[derive(Serialize)]
struct MapeRow {
    device: String,
    op_kind: OpKind,
    /// Percent, per column of [`COLUMNS`]; GPU pools its kernel models
    /// weighted by sample count.
    mape_percent: [Option<f64>; 4],
}

#[derive(Serialize)]
struct ModeMetrics {
    mode: FeatureMode,
    model_file: String,
    table: Vec<MapeRow>,
    models: Vec<ModelReport>,
}

fn mape_rows(device: &str, reports: &[ModelReport]) -> Vec<MapeRow> {
    [OpKind::Linear, OpKind::Conv]
        .into_iter()
        .filter_map(|kind| {
            let mut sums = [(0.0, 0usize); 4];
            for r in reports.iter().filter(|r| r.key.op_kind == kind) {
                let cell = &mut sums[column(r.key.executor)];
                cell.0 += r.validation_mape * r.samples as f64;
                cell.1 += r.samples;
            }
            if sums.iter().all(|s| s.1 == 0) {
                return None;
            }
            Some(MapeRow {
                device: device.to_string(),
                op_kind: kind,
                mape_percent: sums.map(|(s, n)| (n > 0).then(|| s / n as f64)),
            })
        })
        .collect()
}

fn render(metrics: &[ModeMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&format!("MAPE ({} features, 20% held out)\n", mode_name(m.mode)));
        let mut header = vec!["Device".to_string(), "Operations".to_string()];
        header.extend(COLUMNS.iter().map(|c| c.to_string()));
        let rows: Vec<Vec<String>> = m
            .table
            .iter()
            .map(|r| {
                let mut row = vec![
                    r.device.clone(),
                    match r.op_kind {
                        OpKind::Linear => "Linear".to_string(),
                        OpKind::Conv => "Convolutional".to_string(),
                    },
                ];
                row.extend(
                    r.mape_percent
                        .iter()
                        .map(|v| v.map_or("-".to_string(), |v| format!("{v:.1}%"))),
                );
                row
            })
            .collect();
        out.push_str(&config::render_table(&header, &rows));
        out.push('\n');
        for r in m.models.iter().filter(|r| r.key.executor == Executor::Gpu) {
            let mut gain = r.gain.clone();
            gain.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let total: f64 = gain.iter().map(|g| g.1).sum();
            out.push_str(&format!("gain importance, {} ({} samples)\n", r.key, r.samples));
            for (i, (name, g)) in gain.iter().enumerate() {
                let share = if total > 0.0 { 100.0 * g / total } else { 0.0 };
                out.push_str(&format!("  {:>2}. {name:<14} {share:6.2}%\n", i + 1));
            }
        }
        out.push('\n');
    }
    out
}

fn mode_name(mode: FeatureMode) -> &'static str {
    match mode {
        FeatureMode::Augmented => "augmented",
        FeatureMode::Baseline => "baseline",
    }
}

pub fn run(args: TrainArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let device = cfg.device.build()?;
    let dataset = load_traces(&cfg.data)?;
    if dataset.is_empty() {
        return Err(CliError::Validation("training data is empty".into()));
    }
    let plan = if cfg.trials == 0 {
        TrainingPlan::Fixed(cfg.params.clone())
    } else {
        TrainingPlan::Tune {
            space: cfg.space.clone(),
            trials: cfg.trials,
        }
    };
    config::ensure_dir(&cfg.out)?;

    let mut metrics = Vec::new();
    for mode in cfg.mode.modes() {
        let (ensemble, reports) = train_ensemble(&dataset, device.profile(), mode, &plan, cfg.seed)?;
        let model_file = format!("ensemble_{}.json", mode_name(mode));
        config::write_text(&cfg.out.join(&model_file), &ensemble.to_json())?;
        metrics.push(ModeMetrics {
            mode,
            model_file,
            table: mape_rows(&device.profile().name, &reports),
            models: reports,
        });
    }

    let text = render(&metrics);
    print!("{text}");
    config::write_text(&cfg.out.join("metrics.txt"), &text)?;
    config::write_json(
        &cfg.out.join("metrics.json"),
        &Envelope {
            command: "train",
            config_sha256: config::config_hash(&cfg),
            seed: cfg.seed,
            config: &cfg,
            result: &metrics,
        },
    )
}
