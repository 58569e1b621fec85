use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use parking_lot::Mutex;

use super::barrier::StalenessBarrier;
use super::server::{CommitRecord, PushAck, PushRequest, ServerState, StepSize};
use crate::error::{invalid, Error, Result};
use crate::objective::LogisticProblem;
use crate::prox::ModelVector;
use crate::rng::{RngStream, StreamKind};
use crate::sim::{initial_point, measure, StepSchedule};
use crate::trajectory::{fmt_real, IterationRecord, TelemetryPoint, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockAssignment {
    /// Each iteration draws `j` uniformly from the worker's block stream.
    UniformRandom,
    /// Worker `w` always updates block `blocks[w]`.
    Pinned(Vec<usize>),
}

impl BlockAssignment {
    /// Worker `w` pinned to block `w mod M`.
    pub fn round_robin(workers: usize, blocks: usize) -> Self {
        BlockAssignment::Pinned((0..workers).map(|w| w % blocks).collect())
    }
}

/// Which counter indexes `eta_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StepClock {
    /// The global update counter at commit time.
    #[default]
    Server,
    /// The pushing worker's own iteration count.
    WorkerLocal,
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub workers: usize,
    /// Staleness bound `T`.
    pub staleness: u64,
    /// Total updates `K` across all workers.
    pub iterations: u64,
    pub batch_size: usize,
    pub steps: StepSchedule,
    pub clock: StepClock,
    pub assignment: BlockAssignment,
    pub seed: u64,
    pub telemetry_stride: u64,
    pub barrier_timeout: Duration,
    /// Keep every pushed gradient so per-block linearizability can be
    /// replayed after the run.
    pub audit: bool,
    pub x0: Option<ModelVector>,
    /// Test hook: worker `w` panics when starting local iteration `t`.
    pub panic_at: Option<(usize, u64)>,
}

impl ClusterConfig {
    pub fn new(workers: usize, staleness: u64, steps: StepSchedule, iterations: u64, batch_size: usize, seed: u64) -> Self {
        Self {
            workers,
            staleness,
            iterations,
            batch_size,
            steps,
            clock: StepClock::Server,
            assignment: BlockAssignment::UniformRandom,
            seed,
            telemetry_stride: 50,
            barrier_timeout: Duration::from_secs(60),
            audit: false,
            x0: None,
            panic_at: None,
        }
    }

    fn validate(&self, p: &LogisticProblem) -> Result<ModelVector> {
        if self.workers == 0 {
            return invalid("at least one worker is required");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if self.telemetry_stride == 0 {
            return invalid("telemetry stride must be at least 1");
        }
        if self.barrier_timeout.is_zero() {
            return invalid("barrier timeout must be positive");
        }
        if let BlockAssignment::Pinned(blocks) = &self.assignment {
            if blocks.len() != self.workers {
                return invalid(format!("{} pinned blocks given for {} workers", blocks.len(), self.workers));
            }
            for &j in blocks {
                p.layout().check_block(j)?;
            }
        }
        self.steps.require(self.iterations + 1)?;
        initial_point(p, self.x0.as_ref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReport {
    pub worker: usize,
    pub iters: u64,
    pub pushes: u64,
    /// Individual block pulls.
    pub pulls: u64,
    pub mean_wait_s: f64,
    /// Largest `t - s` over versions the worker's snapshot missed, where `t`
    /// is its own iteration and `s` the iteration of the missed push.
    pub max_observed_staleness: u64,
}

pub const WORKER_HEADER: &str = "worker,iters,pushes,pulls,mean_wait_s,max_observed_staleness";

pub fn worker_reports_csv(reports: &[WorkerReport]) -> String {
    let mut out = String::from(WORKER_HEADER);
    out.push('\n');
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.worker,
            r.iters,
            r.pushes,
            r.pulls,
            fmt_real(r.mean_wait_s),
            r.max_observed_staleness
        )
        .expect("writing to a String");
    }
    out
}

/// One push as the worker saw it.
#[derive(Debug, Clone, PartialEq)]
pub struct PushTrace {
    pub worker: usize,
    pub clock: u64,
    pub block: usize,
    pub commit_k: u64,
    pub version: u64,
    pub eta: f64,
    /// Version of every block in the snapshot the gradient used.
    pub seen: Vec<u64>,
    /// Smallest completed count when the barrier let this iteration through.
    pub min_watermark: u64,
}

#[derive(Debug, Clone)]
pub struct ClusterRun {
    pub trajectory: Trajectory,
    pub workers: Vec<WorkerReport>,
    pub pushes: Vec<PushTrace>,
    /// Pushes whose snapshot missed an update that the staleness barrier
    /// requires to be visible, or that passed with `min_watermark < t - T`.
    pub barrier_violations: u64,
    /// Audited commits replayed serially (0 without auditing).
    pub linearizable_commits: u64,
    pub elapsed_s: f64,
}

impl ClusterRun {
    pub fn max_observed_staleness(&self) -> u64 {
        self.workers.iter().map(|w| w.max_observed_staleness).max().unwrap_or(0)
    }
}

/// A run that stopped early; `partial` holds whatever telemetry exists.
#[derive(Debug)]
pub struct ClusterFailure {
    pub error: Error,
    pub partial: Option<ClusterRun>,
}

impl From<Box<ClusterFailure>> for Error {
    fn from(f: Box<ClusterFailure>) -> Error {
        f.error
    }
}

fn fail(error: Error) -> Box<ClusterFailure> {
    Box::new(ClusterFailure { error, partial: None })
}

struct Snapshot {
    k: u64,
    x: Vec<f64>,
    elapsed_s: f64,
}

struct Shared<'a> {
    problem: &'a LogisticProblem,
    cfg: &'a ClusterConfig,
    server: ServerState,
    barrier: StalenessBarrier,
    tickets: AtomicU64,
    abort: AtomicBool,
    start: Instant,
    snapshots: Mutex<Vec<Snapshot>>,
}

impl Shared<'_> {
    fn halt(&self) {
        self.abort.store(true, Ordering::SeqCst);
        self.barrier.abort();
    }

    fn take_snapshot(&self) {
        let (k, x) = self.server.snapshot();
        let elapsed_s = self.start.elapsed().as_secs_f64();
        self.snapshots.lock().push(Snapshot { k, x, elapsed_s });
    }
}

type Reply = Sender<Result<PushAck>>;

fn server_loop(shared: &Shared<'_>, requests: Receiver<(PushRequest, Reply)>) {
    let stride = shared.cfg.telemetry_stride;
    for (req, reply) in requests {
        let result = shared.server.push(&req);
        if let Ok(ack) = &result {
            if (ack.commit_k + 1) % stride == 0 {
                shared.take_snapshot();
            }
        }
        // The worker may already be gone after an abort.
        let _ = reply.send(result);
    }
}

struct WorkerOutput {
    traces: Vec<PushTrace>,
    wait: Duration,
    pulls: u64,
}

fn worker_loop(shared: &Shared<'_>, w: usize, servers: &[Sender<(PushRequest, Reply)>]) -> Result<WorkerOutput> {
    let cfg = shared.cfg;
    let p = shared.problem;
    let layout = p.layout();
    let m = layout.num_blocks();
    let n = p.data().num_samples();
    let mut batch_rng = RngStream::for_kind(cfg.seed, StreamKind::Batch, w);
    let mut block_rng = RngStream::for_kind(cfg.seed, StreamKind::Block, w);
    let (reply_tx, reply_rx) = bounded(1);
    let mut out = WorkerOutput { traces: Vec::new(), wait: Duration::ZERO, pulls: 0 };
    let mut x_hat = vec![0.0; p.dim()];
    let mut seen = vec![0u64; m];
    let mut batch = vec![0usize; cfg.batch_size];

    for t in 0u64.. {
        if shared.abort.load(Ordering::SeqCst) {
            return Err(Error::Aborted);
        }
        if shared.tickets.fetch_add(1, Ordering::SeqCst) >= cfg.iterations {
            break;
        }
        if cfg.panic_at == Some((w, t)) {
            panic!("injected failure in worker {w} at iteration {t}");
        }
        let pass = shared.barrier.wait(w, t)?;
        out.wait += pass.waited;

        for (i, v) in seen.iter_mut().enumerate() {
            let r = shared.server.pull(i)?;
            *v = r.version();
            x_hat[layout.range(i)].copy_from_slice(r.value());
        }
        out.pulls += m as u64;

        for b in batch.iter_mut() {
            *b = batch_rng.uniform_index(n);
        }
        let j = match &cfg.assignment {
            BlockAssignment::UniformRandom => block_rng.uniform_index(m),
            BlockAssignment::Pinned(blocks) => blocks[w],
        };
        let gradient = p.block_gradient_unchecked(&x_hat, &batch, layout.range(j));
        let step = match cfg.clock {
            StepClock::Server => StepSize::ServerClock,
            StepClock::WorkerLocal => StepSize::Explicit(cfg.steps.eta(t)),
        };
        let req = PushRequest { worker: w, clock: t, block: j, gradient, step };
        servers[j]
            .send((req, reply_tx.clone()))
            .map_err(|_| Error::Protocol(format!("server {j} is gone")))?;
        let ack = reply_rx
            .recv()
            .map_err(|_| Error::Protocol(format!("server {j} dropped the reply")))??;

        out.traces.push(PushTrace {
            worker: w,
            clock: t,
            block: j,
            commit_k: ack.commit_k,
            version: ack.version,
            eta: ack.eta,
            seen: seen.clone(),
            min_watermark: pass.min_watermark,
        });
        shared.barrier.advance(w, t + 1);
    }
    Ok(out)
}

/// Runs `K` updates with `p` worker threads and one server thread per block.
pub fn run_cluster(p: &LogisticProblem, cfg: &ClusterConfig) -> std::result::Result<ClusterRun, Box<ClusterFailure>> {
    let x0 = cfg.validate(p).map_err(fail)?;
    let server = ServerState::new(p.layout().clone(), p.regularizer().clone(), cfg.steps.clone(), &x0, cfg.audit)
        .map_err(fail)?;
    let m = p.layout().num_blocks();
    let shared = Shared {
        problem: p,
        cfg,
        server,
        barrier: StalenessBarrier::new(cfg.workers, cfg.staleness, cfg.barrier_timeout),
        tickets: AtomicU64::new(0),
        abort: AtomicBool::new(false),
        start: Instant::now(),
        snapshots: Mutex::new(vec![Snapshot { k: 0, x: x0.to_vec(), elapsed_s: 0.0 }]),
    };

    let results: Vec<Result<WorkerOutput>> = thread::scope(|s| {
        let mut senders = Vec::with_capacity(m);
        for _ in 0..m {
            let (tx, rx) = unbounded::<(PushRequest, Reply)>();
            senders.push(tx);
            let shared = &shared;
            s.spawn(move || server_loop(shared, rx));
        }
        let handles: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let servers = senders.clone();
                let shared = &shared;
                s.spawn(move || {
                    let result = catch_unwind(AssertUnwindSafe(|| worker_loop(shared, w, &servers)))
                        .unwrap_or_else(|payload| {
                            let message = payload
                                .downcast_ref::<String>()
                                .cloned()
                                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                                .unwrap_or_else(|| "panic".into());
                            Err(Error::WorkerFailed { worker: w, message })
                        });
                    match &result {
                        Ok(_) => shared.barrier.retire(w),
                        Err(_) => shared.halt(),
                    }
                    result
                })
            })
            .collect();
        drop(senders);
        handles.into_iter().map(|h| h.join().expect("worker panics are caught")).collect()
    });
    let elapsed_s = shared.start.elapsed().as_secs_f64();

    let mut error = None;
    let mut outputs = Vec::with_capacity(cfg.workers);
    for r in results {
        match r {
            Ok(o) => outputs.push(o),
            Err(e) => {
                // Keep the root cause rather than the aborts it triggered.
                if error.is_none() || matches!(error, Some(Error::Aborted)) {
                    error = Some(e);
                }
                outputs.push(WorkerOutput { traces: Vec::new(), wait: Duration::ZERO, pulls: 0 });
            }
        }
    }

    let run = assemble(&shared, outputs, elapsed_s, error.is_none());
    match (error, run) {
        (None, Ok(run)) => Ok(run),
        (None, Err(e)) => Err(fail(e)),
        (Some(e), run) => Err(Box::new(ClusterFailure { error: e, partial: run.ok() })),
    }
}

fn assemble(shared: &Shared<'_>, outputs: Vec<WorkerOutput>, elapsed_s: f64, complete: bool) -> Result<ClusterRun> {
    let cfg = shared.cfg;
    let p = shared.problem;
    let m = p.layout().num_blocks();
    let logs: Vec<Vec<CommitRecord>> = (0..m).map(|j| shared.server.commit_log(j)).collect();

    let mut reports = Vec::with_capacity(outputs.len());
    let mut pushes = Vec::new();
    // (block, version) of each worker's push at each local iteration.
    let mut by_clock: Vec<Vec<(usize, u64)>> = Vec::with_capacity(outputs.len());
    for (w, o) in outputs.into_iter().enumerate() {
        let iters = o.traces.len() as u64;
        by_clock.push(o.traces.iter().map(|t| (t.block, t.version)).collect());
        let mean_wait_s = if iters == 0 { 0.0 } else { o.wait.as_secs_f64() / iters as f64 };
        reports.push(WorkerReport {
            worker: w,
            iters,
            pushes: iters,
            pulls: o.pulls,
            mean_wait_s,
            max_observed_staleness: 0,
        });
        pushes.extend(o.traces);
    }
    pushes.sort_by_key(|t| t.commit_k);
    if complete && (pushes.len() as u64 != cfg.iterations || pushes.iter().enumerate().any(|(i, t)| t.commit_k != i as u64)) {
        return Err(Error::Protocol(format!(
            "expected commits 0..{}, workers reported {}",
            cfg.iterations,
            pushes.len()
        )));
    }

    let mut iterations = Vec::with_capacity(pushes.len());
    let mut barrier_violations = 0;
    for tr in &pushes {
        let k = tr.commit_k;
        let mut max_delay = 0;
        let mut clock_staleness = 0;
        for (i, log) in logs.iter().enumerate() {
            let first_missed = tr.seen[i] as usize;
            if let Some(rec) = log.get(first_missed).filter(|r| r.commit_k < k) {
                max_delay = max_delay.max(k - rec.commit_k);
            }
            for rec in log[first_missed.min(log.len())..].iter().take_while(|r| r.commit_k < k) {
                clock_staleness = clock_staleness.max(tr.clock.saturating_sub(rec.clock));
            }
        }
        let need = tr.clock.saturating_sub(cfg.staleness);
        if tr.min_watermark < need {
            barrier_violations += 1;
        } else if need > 0 {
            // Every worker's push at local iteration need - 1 must be visible.
            for (w2, pushes_of) in by_clock.iter().enumerate() {
                if w2 == tr.worker {
                    continue;
                }
                if let Some(&(b, v)) = pushes_of.get((need - 1) as usize) {
                    if tr.seen[b] < v {
                        barrier_violations += 1;
                        break;
                    }
                }
            }
        }
        let r = &mut reports[tr.worker];
        r.max_observed_staleness = r.max_observed_staleness.max(clock_staleness);
        iterations.push(IterationRecord { k, block: Some(tr.block), eta: tr.eta, max_delay });
    }

    let linearizable_commits = if cfg.audit { shared.server.verify_linearizability()? } else { 0 };

    let (final_k, final_x) = shared.server.snapshot();
    let mut snaps = std::mem::take(&mut *shared.snapshots.lock());
    snaps.push(Snapshot { k: final_k, x: final_x, elapsed_s });
    snaps.sort_by_key(|s| s.k);
    snaps.dedup_by_key(|s| s.k);

    let mut telemetry = Vec::with_capacity(snaps.len());
    let mut prev = 0u64;
    for s in &snaps {
        let eta = cfg.steps.get(s.k).unwrap_or_else(|| cfg.steps.eta(cfg.iterations));
        let (psi, gm_sq) = measure(p, &s.x, eta)?;
        let window = iterations.get(prev as usize..s.k as usize).unwrap_or(&[]);
        telemetry.push(TelemetryPoint {
            k: s.k,
            block: s.k.checked_sub(1).and_then(|k| iterations.get(k as usize)).and_then(|r| r.block),
            eta,
            psi,
            gm_sq,
            max_delay: window.iter().map(|r| r.max_delay).max().unwrap_or(0),
            elapsed_s: s.elapsed_s,
        });
        prev = s.k;
    }

    let final_model = ModelVector::new(snaps.last().expect("initial snapshot exists").x.clone())?;
    Ok(ClusterRun {
        trajectory: Trajectory { iterations, telemetry, final_model },
        workers: reports,
        pushes,
        barrier_violations,
        linearizable_commits,
        elapsed_s,
    })
}
