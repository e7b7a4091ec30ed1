//! Real-thread rendezvous harness for the two-flag busy-polling protocol.
//!
//! Two OS threads play the CPU and GPU roles; the GPU role is emulated by a
//! CPU thread. Each round both emulate their work by waiting on the wall
//! clock, publish completion, and wait for the other side. Flags hold the
//! number of the last attempt whose work finished, so they only ever grow and
//! never need resetting between rounds.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CPU: usize = 0;
const GPU: usize = 1;
const ROLE_NAMES: [&str; 2] = ["cpu", "gpu"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WaitMode {
    /// Both roles busy-poll each other's flag.
    Polling,
    /// The GPU role signals through a condition variable, `injected_delay_us`
    /// after its work ends; the CPU role blocks on it.
    Passive { injected_delay_us: u64 },
}

/// Deliberate protocol faults, for exercising the timeout path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// The GPU role stops signalling from this round on.
    GpuSilentFromRound(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RendezvousConfig {
    pub rounds: usize,
    pub t_cpu_work_us: u64,
    pub t_gpu_work_us: u64,
    pub mode: WaitMode,
    pub timeout_ms: u64,
    /// Allowed relative error of an emulated work duration.
    pub work_tolerance: f64,
    pub max_retries: u32,
    pub fault: Option<Fault>,
}

impl Default for RendezvousConfig {
    fn default() -> Self {
        Self {
            rounds: 1000,
            t_cpu_work_us: 0,
            t_gpu_work_us: 0,
            mode: WaitMode::Polling,
            timeout_ms: 1000,
            work_tolerance: 0.05,
            max_retries: 10,
            fault: None,
        }
    }
}

/// One accepted round; all times are nanoseconds since the run started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub attempt: u64,
    pub cpu_work_end_ns: u64,
    pub gpu_work_end_ns: u64,
    pub cpu_pass_ns: u64,
    pub gpu_pass_ns: u64,
    /// Both roles are past the rendezvous.
    pub join_ns: u64,
    /// `join - max(work ends)`.
    pub overhead_ns: u64,
    /// The retry budget ran out and the round was kept anyway.
    pub work_out_of_tolerance: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverheadStats {
    pub min_ns: u64,
    pub median_ns: u64,
    pub p95_ns: u64,
    pub mean_ns: f64,
}

impl OverheadStats {
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            min_ns: s[0],
            median_ns: rank(0.5),
            p95_ns: rank(0.95),
            mean_ns: s.iter().sum::<u64>() as f64 / s.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RendezvousReport {
    pub note: String,
    pub config: RendezvousConfig,
    pub completed_rounds: usize,
    pub discarded_attempts: usize,
    pub timing_floor_ns: u64,
    pub stats: OverheadStats,
    /// Rounds where a role passed before both flags were set.
    pub ordering_violations: usize,
    pub liveness_failure: Option<String>,
    pub rounds: Vec<RoundRecord>,
}

impl RendezvousReport {
    pub fn is_live(&self) -> bool {
        self.liveness_failure.is_none() && self.completed_rounds == self.config.rounds
    }
}

struct Shared {
    epoch: Instant,
    flags: [AtomicU64; 2],
    /// Last GPU attempt signalled through the passive channel.
    event: Mutex<u64>,
    event_cv: Condvar,
    /// Measured work per role, double-buffered by attempt parity.
    work_ns: [[AtomicU64; 2]; 2],
    /// Global event order, for checking protocol safety after the run.
    ticket: AtomicU64,
    abort: AtomicBool,
}

impl Shared {
    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }
}

#[derive(Clone, Copy, Debug)]
struct RoleRound {
    attempt: u64,
    work_end_ns: u64,
    pass_ns: u64,
    set_ticket: u64,
    pass_ticket: u64,
    out_of_tolerance: bool,
}

#[derive(Default)]
struct RoleLog {
    rounds: Vec<RoleRound>,
    discarded: usize,
    failure: Option<String>,
}

enum Wait {
    Ready,
    TimedOut,
    Aborted,
}

/// Wait until `deadline` on the wall clock, yielding so the other role can
/// run on the same core.
fn spin_until(deadline: Instant, abort: &AtomicBool) {
    while Instant::now() < deadline {
        if abort.load(Ordering::Relaxed) {
            return;
        }
        thread::yield_now();
    }
}

fn poll(ready: impl Fn() -> bool, timeout: Duration, abort: &AtomicBool) -> Wait {
    let start = Instant::now();
    let mut spins = 0u32;
    loop {
        if ready() {
            return Wait::Ready;
        }
        if abort.load(Ordering::Relaxed) {
            return Wait::Aborted;
        }
        spins = spins.wrapping_add(1);
        if spins.is_multiple_of(16) {
            if start.elapsed() > timeout {
                return Wait::TimedOut;
            }
            thread::yield_now();
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Typical lateness of [`spin_until`] on this machine; work errors below a
/// small multiple of it are not meaningful.
fn calibrate_floor() -> Duration {
    let abort = AtomicBool::new(false);
    let mut late: Vec<Duration> = (0..64)
        .map(|_| {
            let deadline = Instant::now() + Duration::from_micros(20);
            spin_until(deadline, &abort);
            Instant::now().saturating_duration_since(deadline)
        })
        .collect();
    late.sort_unstable();
    (late[late.len() * 9 / 10] * 4).max(Duration::from_micros(5))
}

fn within(measured_ns: u64, target: Duration, tolerance: f64, floor: Duration) -> bool {
    let target_ns = target.as_nanos() as f64;
    let allowed = (target_ns * tolerance).max(floor.as_nanos() as f64);
    (measured_ns as f64 - target_ns).abs() <= allowed
}

fn run_role(role: usize, shared: &Shared, cfg: &RendezvousConfig, floor: Duration) -> RoleLog {
    let other = 1 - role;
    let work = [
        Duration::from_micros(cfg.t_cpu_work_us),
        Duration::from_micros(cfg.t_gpu_work_us),
    ];
    let timeout = Duration::from_millis(cfg.timeout_ms);
    let mut log = RoleLog::default();
    let mut attempt = 0u64;
    let mut retries = 0u32;
    while log.rounds.len() < cfg.rounds {
        attempt += 1;
        let parity = (attempt % 2) as usize;
        let start = Instant::now();
        spin_until(start + work[role], &shared.abort);
        let work_end_ns = shared.now_ns();
        shared.work_ns[role][parity].store(start.elapsed().as_nanos() as u64, Ordering::Relaxed);

        let silent = matches!(cfg.fault, Some(Fault::GpuSilentFromRound(r)) if role == GPU && log.rounds.len() >= r);
        let set_ticket;
        match cfg.mode {
            WaitMode::Passive { injected_delay_us } if role == GPU => {
                spin_until(Instant::now() + Duration::from_micros(injected_delay_us), &shared.abort);
                set_ticket = shared.ticket.fetch_add(1, Ordering::SeqCst);
                if !silent {
                    *shared.event.lock().expect("event lock") = attempt;
                    shared.event_cv.notify_all();
                }
            }
            _ => {
                set_ticket = shared.ticket.fetch_add(1, Ordering::SeqCst);
                if !silent {
                    shared.flags[role].store(attempt, Ordering::Release);
                }
            }
        }

        let outcome = match cfg.mode {
            WaitMode::Passive { .. } if role == CPU => {
                let guard = shared.event.lock().expect("event lock");
                let (guard, res) = shared
                    .event_cv
                    .wait_timeout_while(guard, timeout, |v| {
                        *v < attempt && !shared.abort.load(Ordering::Relaxed)
                    })
                    .expect("event lock");
                if *guard >= attempt {
                    Wait::Ready
                } else if res.timed_out() {
                    Wait::TimedOut
                } else {
                    Wait::Aborted
                }
            }
            _ => poll(
                || shared.flags[other].load(Ordering::Acquire) >= attempt,
                timeout,
                &shared.abort,
            ),
        };
        match outcome {
            Wait::Ready => {}
            Wait::TimedOut => {
                shared.abort.store(true, Ordering::SeqCst);
                shared.event_cv.notify_all();
                log.failure = Some(format!(
                    "round {} (attempt {attempt}): {} role waited more than {} ms for the {} role",
                    log.rounds.len(),
                    ROLE_NAMES[role],
                    cfg.timeout_ms,
                    ROLE_NAMES[other]
                ));
                return log;
            }
            Wait::Aborted => return log,
        }
        let pass_ticket = shared.ticket.fetch_add(1, Ordering::SeqCst);
        let pass_ns = shared.now_ns();

        // Both measurements are visible here: each was stored before its
        // owner published completion of this attempt.
        let mine = shared.work_ns[role][parity].load(Ordering::Relaxed);
        let theirs = shared.work_ns[other][parity].load(Ordering::Relaxed);
        let ok = within(mine, work[role], cfg.work_tolerance, floor)
            && within(theirs, work[other], cfg.work_tolerance, floor);
        if ok || retries >= cfg.max_retries {
            log.rounds.push(RoleRound {
                attempt,
                work_end_ns,
                pass_ns,
                set_ticket,
                pass_ticket,
                out_of_tolerance: !ok,
            });
            retries = 0;
        } else {
            log.discarded += 1;
            retries += 1;
        }
    }
    log
}

fn run(cfg: &RendezvousConfig) -> Result<RendezvousReport> {
    if cfg.timeout_ms == 0 || !(cfg.work_tolerance > 0.0) {
        return Err(Error::contract("timeout and work tolerance must be positive"));
    }
    let floor = calibrate_floor();
    let shared = Arc::new(Shared {
        epoch: Instant::now(),
        flags: [AtomicU64::new(0), AtomicU64::new(0)],
        event: Mutex::new(0),
        event_cv: Condvar::new(),
        work_ns: Default::default(),
        ticket: AtomicU64::new(0),
        abort: AtomicBool::new(false),
    });
    let handles: Vec<_> = [CPU, GPU]
        .into_iter()
        .map(|role| {
            let shared = Arc::clone(&shared);
            let cfg = cfg.clone();
            thread::Builder::new()
                .name(format!("rendezvous-{}", ROLE_NAMES[role]))
                .spawn(move || run_role(role, &shared, &cfg, floor))
                .map_err(|e| Error::contract(format!("cannot spawn worker: {e}")))
        })
        .collect::<Result<_>>()?;
    let logs: Vec<RoleLog> = handles
        .into_iter()
        .map(|h| h.join().expect("rendezvous worker panicked"))
        .collect();
    let (cpu, gpu) = (&logs[CPU], &logs[GPU]);

    let mut rounds = Vec::new();
    let mut violations = 0;
    for (i, (c, g)) in cpu.rounds.iter().zip(&gpu.rounds).enumerate() {
        debug_assert_eq!(c.attempt, g.attempt);
        let both_set = c.set_ticket.max(g.set_ticket);
        if c.pass_ticket < both_set || g.pass_ticket < both_set {
            violations += 1;
        }
        let join_ns = c.pass_ns.max(g.pass_ns);
        let work_done = c.work_end_ns.max(g.work_end_ns);
        rounds.push(RoundRecord {
            round: i,
            attempt: c.attempt,
            cpu_work_end_ns: c.work_end_ns,
            gpu_work_end_ns: g.work_end_ns,
            cpu_pass_ns: c.pass_ns,
            gpu_pass_ns: g.pass_ns,
            join_ns,
            overhead_ns: join_ns.saturating_sub(work_done),
            work_out_of_tolerance: c.out_of_tolerance || g.out_of_tolerance,
        });
    }
    let overheads: Vec<u64> = rounds.iter().map(|r| r.overhead_ns).collect();
    let mode = match cfg.mode {
        WaitMode::Polling => "busy polling".to_string(),
        WaitMode::Passive { injected_delay_us } => {
            format!("passive wait, {injected_delay_us} us injected notification delay")
        }
    };
    Ok(RendezvousReport {
        note: format!("emulation: both roles are CPU threads; {mode}"),
        config: cfg.clone(),
        completed_rounds: rounds.len(),
        discarded_attempts: cpu.discarded.max(gpu.discarded),
        timing_floor_ns: floor.as_nanos() as u64,
        stats: OverheadStats::from_samples(&overheads),
        ordering_violations: violations,
        liveness_failure: cpu.failure.clone().or_else(|| gpu.failure.clone()),
        rounds,
    })
}

/// Busy-polling rendezvous between a CPU-role and a GPU-role thread.
pub fn rendezvous_run(t_cpu_work_us: u64, t_gpu_work_us: u64, rounds: usize) -> Result<RendezvousReport> {
    run(&RendezvousConfig {
        rounds,
        t_cpu_work_us,
        t_gpu_work_us,
        ..RendezvousConfig::default()
    })
}

/// Same harness with the GPU role signalling through a delayed notification.
pub fn passive_baseline_run(
    t_cpu_work_us: u64,
    t_gpu_work_us: u64,
    rounds: usize,
    injected_delay_us: u64,
) -> Result<RendezvousReport> {
    run(&RendezvousConfig {
        rounds,
        t_cpu_work_us,
        t_gpu_work_us,
        mode: WaitMode::Passive { injected_delay_us },
        ..RendezvousConfig::default()
    })
}

/// Run with full control over the configuration.
pub fn run_with_config(cfg: &RendezvousConfig) -> Result<RendezvousReport> {
    run(cfg)
}
