use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use coexec_core::device::{sample_training_ops, synthesize, Dataset, Executor};
use coexec_core::dispatch::FeatureMode;
use coexec_core::op::OpKind;

use crate::config::{self, apply, DeviceConfig, Envelope, KindSel};
use crate::error::{CliError, CliResult};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Distinct op configurations per kind.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<KindSel>,
    #[arg(long)]
    seed: Option<u64>,
    /// Device preset name.
    #[arg(long)]
    device: Option<String>,
    /// Device spec JSON, instead of a preset.
    #[arg(long)]
    device_spec: Option<PathBuf>,
    #[arg(long)]
    noise: Option<f64>,
    /// Ingest a measured trace CSV instead of sampling the synthetic device.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub count: usize,
    pub kind: KindSel,
    pub seed: u64,
    pub device: DeviceConfig,
    pub trace: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            count: 12_500,
            kind: KindSel::Both,
            seed: 0,
            device: DeviceConfig::default(),
            trace: None,
            out: PathBuf::from("dataset"),
        }
    }
}

impl GenArgs {
    fn resolve(self) -> CliResult<GenConfig> {
        let mut c: GenConfig = config::load_config(self.config.as_deref())?;
        apply(&mut c.count, self.count);
        apply(&mut c.kind, self.kind);
        apply(&mut c.seed, self.seed);
        apply(&mut c.device.preset, self.device);
        apply(&mut c.out, self.out);
        if self.device_spec.is_some() {
            c.device.spec = self.device_spec;
        }
        if self.noise.is_some() {
            c.device.noise_rel = self.noise;
        }
        if self.trace.is_some() {
            c.trace = self.trace;
        }
        if c.count == 0 {
            return Err(CliError::config("count must be positive"));
        }
        Ok(c)
    }
}

#[derive(Serialize)]
struct FileSummary {
    kind: OpKind,
    executor: Executor,
    trace_file: String,
    features_file: String,
    rows: usize,
    train_rows: usize,
    test_rows: usize,
}

pub fn run(args: GenArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let device = cfg.device.build()?;
    let dataset = match &cfg.trace {
        Some(path) => crate::train::load_traces(std::slice::from_ref(path))?,
        None => {
            let mut samples = Vec::new();
            for (i, kind) in cfg.kind.kinds().into_iter().enumerate() {
                let ops = sample_training_ops(cfg.count, kind, cfg.seed.wrapping_add(i as u64))?;
                samples.extend(synthesize(&device, &ops, &Executor::ALL).samples);
            }
            Dataset { samples }
        }
    };
    config::ensure_dir(&cfg.out)?;

    let mut groups: BTreeMap<(OpKind, Executor), Dataset> = BTreeMap::new();
    for s in &dataset.samples {
        if cfg.kind.kinds().contains(&s.op.kind()) {
            groups.entry((s.op.kind(), s.executor)).or_default().samples.push(*s);
        }
    }
    if groups.is_empty() {
        return Err(CliError::Validation("no samples of the requested kind".into()));
    }

    let mut files = Vec::new();
    for ((kind, executor), group) in &groups {
        let stem = format!("{kind}_{executor}");
        let trace_file = format!("{stem}_trace.csv");
        let features_file = format!("{stem}_features.csv");
        group.write_trace(&cfg.out.join(&trace_file))?;
        let path = cfg.out.join(&features_file);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        group.write_features(
            BufWriter::new(f),
            *kind,
            |_| true,
            device.profile(),
            FeatureMode::Augmented,
        )?;
        let rows = group.len();
        let test_rows = (rows as f64 * 0.2).round() as usize;
        println!(
            "{stem}: {rows} rows (train {} / test {test_rows}) -> {}",
            rows - test_rows,
            cfg.out.join(&trace_file).display()
        );
        files.push(FileSummary {
            kind: *kind,
            executor: *executor,
            trace_file,
            features_file,
            rows,
            train_rows: rows - test_rows,
            test_rows,
        });
    }

    let report = Envelope {
        command: "gen-dataset",
        config_sha256: config::config_hash(&cfg),
        seed: cfg.seed,
        config: &cfg,
        result: &files,
    };
    config::write_json(&cfg.out.join("dataset.json"), &report)
}
