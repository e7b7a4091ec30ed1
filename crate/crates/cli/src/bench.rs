use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use coexec_core::sim::SyncMode;
use coexec_core::sync::{run_with_config, RendezvousConfig, RendezvousReport, WaitMode};

use crate::config::{self, apply, Envelope};
use crate::error::{CliError, CliResult};
use crate::simulate::SyncSel;

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Emulated CPU work per round.
    #[arg(long)]
    cpu_us: Option<u64>,
    /// Emulated GPU work per round.
    #[arg(long)]
    gpu_us: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<SyncSel>,
    /// Notification delay injected in passive mode.
    #[arg(long)]
    delay_us: Option<u64>,
    /// Keep per-round timestamps in the JSON report.
    #[arg(long)]
    rounds_detail: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub rounds: usize,
    pub cpu_us: u64,
    pub gpu_us: u64,
    pub mode: SyncSel,
    pub delay_us: u64,
    pub timeout_ms: u64,
    pub rounds_detail: bool,
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            rounds: 1000,
            cpu_us: 100,
            gpu_us: 100,
            mode: SyncSel::Both,
            delay_us: 162,
            timeout_ms: RendezvousConfig::default().timeout_ms,
            rounds_detail: false,
            out: PathBuf::from("sync-bench"),
        }
    }
}

impl BenchArgs {
    fn resolve(self) -> CliResult<BenchConfig> {
        let mut c: BenchConfig = config::load_config(self.config.as_deref())?;
        apply(&mut c.rounds, self.rounds);
        apply(&mut c.cpu_us, self.cpu_us);
        apply(&mut c.gpu_us, self.gpu_us);
        apply(&mut c.mode, self.mode);
        apply(&mut c.delay_us, self.delay_us);
        c.rounds_detail |= self.rounds_detail;
        apply(&mut c.out, self.out);
        if c.rounds == 0 {
            return Err(CliError::config("rounds must be positive"));
        }
        Ok(c)
    }
}

pub fn run(args: BenchArgs) -> CliResult<()> {
    let cfg = args.resolve()?;
    let mut reports: Vec<RendezvousReport> = Vec::new();
    for mode in cfg.mode.modes() {
        let rc = RendezvousConfig {
            rounds: cfg.rounds,
            t_cpu_work_us: cfg.cpu_us,
            t_gpu_work_us: cfg.gpu_us,
            mode: match mode {
                SyncMode::Polling => WaitMode::Polling,
                SyncMode::Passive => WaitMode::Passive {
                    injected_delay_us: cfg.delay_us,
                },
            },
            timeout_ms: cfg.timeout_ms,
            ..RendezvousConfig::default()
        };
        let mut r = run_with_config(&rc)?;
        if !cfg.rounds_detail {
            r.rounds.clear();
        }
        reports.push(r);
    }

    let header: Vec<String> = ["Mode", "Rounds", "Min (us)", "Median (us)", "P95 (us)", "Mean (us)", "Violations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let us = |ns: u64| format!("{:.1}", ns as f64 / 1000.0);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                match r.config.mode {
                    WaitMode::Polling => "polling".to_string(),
                    WaitMode::Passive { .. } => "passive".to_string(),
                },
                format!("{}/{}", r.completed_rounds, r.config.rounds),
                us(r.stats.min_ns),
                us(r.stats.median_ns),
                us(r.stats.p95_ns),
                format!("{:.1}", r.stats.mean_ns / 1000.0),
                r.ordering_violations.to_string(),
            ]
        })
        .collect();
    let text = config::render_table(&header, &rows);
    print!("{text}");
    config::ensure_dir(&cfg.out)?;
    config::write_text(&cfg.out.join("sync_bench.txt"), &text)?;
    config::write_json(
        &cfg.out.join("sync_bench.json"),
        &Envelope {
            command: "sync-bench",
            config_sha256: config::config_hash(&cfg),
            seed: 0,
            config: &cfg,
            result: &reports,
        },
    )?;
    if let Some(r) = reports.iter().find(|r| !r.is_live() || r.ordering_violations > 0) {
        return Err(CliError::Validation(format!(
            "rendezvous failed: {} ordering violations, {}",
            r.ordering_violations,
            r.liveness_failure.as_deref().unwrap_or("all rounds completed")
        )));
    }
    Ok(())
}
