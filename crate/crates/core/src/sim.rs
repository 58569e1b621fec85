//! Deterministic single-threaded executor of the global-view algorithm:
//! every iteration draws a minibatch and a block, reads a stale snapshot
//! assembled from per-block delays, and prox-updates that one block.
//!
//! Also hosts the full-vector serial ProxSGD baseline and the long-run
//! estimate of `Psi*`.

use std::collections::VecDeque;
use std::time::Instant;

use crate::error::{invalid, Error, Result};
use crate::objective::LogisticProblem;
use crate::prox::{gradient_mapping_sq, BlockLayout, ModelVector};
use crate::rng::{RngStream, StreamKind};
use crate::trajectory::{IterationRecord, TelemetryPoint, Trajectory};

/// Any coordinate above this magnitude counts as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `eta_k = c / sqrt(1 + k)`, `k` from 0.
    InverseSqrt(f64),
    /// Explicit finite prefix `eta_0, eta_1, ...`.
    Table(Vec<f64>),
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        let valid = match self {
            StepSchedule::Constant(eta) => ok(*eta),
            StepSchedule::InverseSqrt(c) => ok(*c),
            StepSchedule::Table(t) => !t.is_empty() && t.iter().all(|&v| ok(v)),
        };
        if valid {
            Ok(())
        } else {
            invalid(format!("step sizes must be positive and finite: {self:?}"))
        }
    }

    /// Number of defined steps, `None` if unbounded.
    pub fn len(&self) -> Option<u64> {
        match self {
            StepSchedule::Table(t) => Some(t.len() as u64),
            _ => None,
        }
    }

    pub fn get(&self, k: u64) -> Option<f64> {
        match self {
            StepSchedule::Constant(eta) => Some(*eta),
            StepSchedule::InverseSqrt(c) => Some(c / (1.0 + k as f64).sqrt()),
            StepSchedule::Table(t) => usize::try_from(k).ok().and_then(|k| t.get(k).copied()),
        }
    }

    /// `eta_k` for a `k` already covered by `require`.
    pub fn eta(&self, k: u64) -> f64 {
        self.get(k).expect("step index checked against schedule length")
    }

    /// Errors unless `eta_0..eta_{count-1}` are all defined.
    pub fn require(&self, count: u64) -> Result<()> {
        self.validate()?;
        match self.len() {
            Some(len) if len < count => invalid(format!("step table has {len} entries, {count} needed")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub enum DelaySchedule {
    Zero,
    /// Fixed delay per block.
    ConstantPerBlock(Vec<u64>),
    /// Independent uniform delays on `0..=bound` per block and iteration.
    UniformRandom { bound: u64, rng: RngStream },
    /// Row `k` holds the `M` delays used at iteration `k`.
    Trace(Vec<Vec<u64>>),
}

impl DelaySchedule {
    pub fn uniform(bound: u64, seed: u64) -> Self {
        DelaySchedule::UniformRandom {
            bound,
            rng: RngStream::for_kind(seed, StreamKind::Delay, 0),
        }
    }

    /// Staleness bound `T`.
    pub fn bound(&self) -> u64 {
        match self {
            DelaySchedule::Zero => 0,
            DelaySchedule::ConstantPerBlock(d) => d.iter().copied().max().unwrap_or(0),
            DelaySchedule::UniformRandom { bound, .. } => *bound,
            DelaySchedule::Trace(rows) => rows.iter().flatten().copied().max().unwrap_or(0),
        }
    }

    fn validate(&self, blocks: usize, iterations: u64) -> Result<()> {
        match self {
            DelaySchedule::ConstantPerBlock(d) if d.len() != blocks => {
                invalid(format!("{} constant delays given for {blocks} blocks", d.len()))
            }
            DelaySchedule::Trace(rows) if (rows.len() as u64) < iterations => {
                invalid(format!("delay trace has {} rows, {iterations} needed", rows.len()))
            }
            DelaySchedule::Trace(rows) => match rows.iter().position(|r| r.len() != blocks) {
                Some(k) => invalid(format!("delay trace row {k} does not have {blocks} entries")),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Delays for iteration `k` (0-based), clamped to `min(T, k)` so no
    /// version before `x^0` is referenced.
    fn fill(&mut self, k: u64, out: &mut [u64]) {
        match self {
            DelaySchedule::Zero => out.fill(0),
            DelaySchedule::ConstantPerBlock(d) => out.copy_from_slice(d),
            DelaySchedule::UniformRandom { bound, rng } => {
                let span = usize::try_from(*bound + 1).expect("delay bound fits in usize");
                for o in out.iter_mut() {
                    *o = rng.uniform_index(span) as u64;
                }
            }
            DelaySchedule::Trace(rows) => out.copy_from_slice(&rows[k as usize]),
        }
        for o in out.iter_mut() {
            *o = (*o).min(k);
        }
    }
}

/// Last `T + 1` committed versions of each block.
#[derive(Debug, Clone)]
pub struct VersionBuffer {
    depth: u64,
    blocks: Vec<VecDeque<(u64, Vec<f64>)>>,
}

impl VersionBuffer {
    pub fn new(x0: &[f64], layout: &BlockLayout, depth: u64) -> Self {
        let blocks = (0..layout.num_blocks())
            .map(|j| VecDeque::from([(0, x0[layout.range(j)].to_vec())]))
            .collect();
        Self { depth, blocks }
    }

    /// Records that block `j` took `value` in `x^{k_new}`.
    pub fn commit(&mut self, j: usize, k_new: u64, value: Vec<f64>) {
        let versions = &mut self.blocks[j];
        debug_assert!(versions.back().is_some_and(|(from, _)| *from < k_new));
        versions.push_back((k_new, value));
        let horizon = k_new.saturating_sub(self.depth);
        while versions.len() >= 2 && versions[1].0 <= horizon {
            versions.pop_front();
        }
    }

    /// Block `j` of `x^{k - s}`. Panics if `s > T` or `s > k`.
    pub fn read(&self, j: usize, k: u64, s: u64) -> &[f64] {
        assert!(s <= self.depth, "delay {s} exceeds staleness bound {}", self.depth);
        assert!(s <= k, "delay {s} reaches before x^0 at iteration {k}");
        let target = k - s;
        let versions = &self.blocks[j];
        let pos = versions.partition_point(|(from, _)| *from <= target);
        assert!(pos > 0, "version for iteration {target} of block {j} was pruned");
        &versions[pos - 1].1
    }

    pub fn len(&self, j: usize) -> usize {
        self.blocks[j].len()
    }

    pub fn is_empty(&self, j: usize) -> bool {
        self.blocks[j].is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub steps: StepSchedule,
    /// Number of updates `K`.
    pub iterations: u64,
    /// Minibatch size `N`.
    pub batch_size: usize,
    pub seed: u64,
    pub telemetry_stride: u64,
    /// Starting point; zeros if absent.
    pub x0: Option<ModelVector>,
    /// Record wall-clock `elapsed_s` (excluding telemetry cost). When off
    /// the column is 0 and the trajectory is a pure function of the inputs.
    pub wall_clock: bool,
}

impl SimOptions {
    pub fn new(steps: StepSchedule, iterations: u64, batch_size: usize, seed: u64) -> Self {
        Self {
            steps,
            iterations,
            batch_size,
            seed,
            telemetry_stride: 50,
            x0: None,
            wall_clock: false,
        }
    }

    fn validate(&self, p: &LogisticProblem) -> Result<ModelVector> {
        if self.batch_size == 0 {
            return invalid("batch size must be at least 1");
        }
        if self.telemetry_stride == 0 {
            return invalid("telemetry stride must be at least 1");
        }
        self.steps.require(self.iterations + 1)?;
        initial_point(p, self.x0.as_ref())
    }
}

pub(crate) fn initial_point(p: &LogisticProblem, x0: Option<&ModelVector>) -> Result<ModelVector> {
    match x0 {
        Some(x) if x.len() != p.dim() => invalid(format!("x0 has {} entries, expected {}", x.len(), p.dim())),
        Some(x) => Ok(x.clone()),
        None => Ok(ModelVector::zeros(p.dim())),
    }
}

pub(crate) fn exceeds_guard(values: &[f64]) -> bool {
    values.iter().any(|v| !(v.abs() <= DIVERGENCE_BOUND))
}

/// `Psi(x)` and `||P(x, grad f(x), eta)||^2`.
pub(crate) fn measure(p: &LogisticProblem, x: &[f64], eta: f64) -> Result<(f64, f64)> {
    let psi = p.full_objective(x)?.psi;
    let g = p.full_gradient(x)?;
    let gm = gradient_mapping_sq(x, &g, eta, p.regularizer())?;
    Ok((psi, gm))
}

struct Recorder<'a> {
    problem: &'a LogisticProblem,
    steps: &'a StepSchedule,
    stride: u64,
    last_k: u64,
    window_delay: u64,
    start: Option<Instant>,
    excluded: f64,
    points: Vec<TelemetryPoint>,
}

impl<'a> Recorder<'a> {
    fn new(problem: &'a LogisticProblem, opts: &'a SimOptions) -> Self {
        Self {
            problem,
            steps: &opts.steps,
            stride: opts.telemetry_stride,
            last_k: u64::MAX,
            window_delay: 0,
            start: opts.wall_clock.then(Instant::now),
            excluded: 0.0,
            points: Vec::new(),
        }
    }

    fn due(&self, k: u64, total: u64) -> bool {
        k == 0 || k.is_multiple_of(self.stride) || k == total
    }

    fn record(&mut self, k: u64, block: Option<usize>, x: &[f64]) -> Result<()> {
        if k == self.last_k {
            return Ok(());
        }
        let before = Instant::now();
        let elapsed_s = self.start.map_or(0.0, |s| (before - s).as_secs_f64() - self.excluded);
        let eta = self.steps.eta(k);
        let (psi, gm_sq) = measure(self.problem, x, eta)?;
        self.points.push(TelemetryPoint {
            k,
            block,
            eta,
            psi,
            gm_sq,
            max_delay: self.window_delay,
            elapsed_s,
        });
        self.window_delay = 0;
        self.last_k = k;
        if self.start.is_some() {
            self.excluded += before.elapsed().as_secs_f64();
        }
        Ok(())
    }
}

/// Runs `K` block updates of the global-view algorithm.
///
/// Per iteration `k`: `N` samples from the batch stream, then `j_k` from
/// the block stream, then the delay vector; the gradient block is computed
/// at `x^{k - d_k}` and only block `j_k` is prox-updated with `eta_k`.
pub fn run_global(p: &LogisticProblem, opts: &SimOptions, mut delays: DelaySchedule) -> Result<Trajectory> {
    let x0 = opts.validate(p)?;
    let layout = p.layout();
    let m = layout.num_blocks();
    let k_total = opts.iterations;
    delays.validate(m, k_total)?;
    let depth = delays.bound();
    let n = p.data().num_samples();

    let mut batch_rng = RngStream::for_kind(opts.seed, StreamKind::Batch, 0);
    let mut block_rng = RngStream::for_kind(opts.seed, StreamKind::Block, 0);
    let mut x = x0.into_vec();
    let mut history = (depth > 0).then(|| VersionBuffer::new(&x, layout, depth));
    let mut recorder = Recorder::new(p, opts);
    let mut iterations = Vec::with_capacity(k_total as usize);
    let mut batch = vec![0usize; opts.batch_size];
    let mut d = vec![0u64; m];
    let mut x_hat = vec![0.0; x.len()];

    recorder.record(0, None, &x)?;
    for k in 0..k_total {
        for b in batch.iter_mut() {
            *b = batch_rng.uniform_index(n);
        }
        let j = block_rng.uniform_index(m);
        delays.fill(k, &mut d);
        let max_delay = d.iter().copied().max().unwrap_or(0);

        let snapshot: &[f64] = match &history {
            Some(h) if max_delay > 0 => {
                for i in 0..m {
                    x_hat[layout.range(i)].copy_from_slice(h.read(i, k, d[i]));
                }
                &x_hat
            }
            _ => &x,
        };
        let range = layout.range(j);
        let g = p.block_gradient_unchecked(snapshot, &batch, range.clone());
        let eta = opts.steps.eta(k);
        let xj = &mut x[range];
        p.regularizer().penalty(j).prox_step(eta, xj, &g);
        if exceeds_guard(xj) {
            return Err(Error::Diverged { k });
        }
        if let Some(h) = history.as_mut() {
            h.commit(j, k + 1, xj.to_vec());
        }

        iterations.push(IterationRecord { k, block: Some(j), eta, max_delay });
        recorder.window_delay = recorder.window_delay.max(max_delay);
        if recorder.due(k + 1, k_total) {
            recorder.record(k + 1, Some(j), &x)?;
        }
    }

    Ok(Trajectory {
        iterations,
        telemetry: recorder.points,
        final_model: ModelVector::from_finite(x),
    })
}

/// Full-vector ProxSGD: `x <- prox_{eta_k h}(x - eta_k G_k)` with the
/// minibatch drawn from the same batch stream as `run_global`.
pub fn run_serial_proxsgd(p: &LogisticProblem, opts: &SimOptions) -> Result<Trajectory> {
    let x0 = opts.validate(p)?;
    let layout = p.layout();
    let reg = p.regularizer();
    let n = p.data().num_samples();
    let k_total = opts.iterations;

    let mut batch_rng = RngStream::for_kind(opts.seed, StreamKind::Batch, 0);
    let mut x = x0.into_vec();
    let mut recorder = Recorder::new(p, opts);
    let mut iterations = Vec::with_capacity(k_total as usize);
    let mut batch = vec![0usize; opts.batch_size];

    recorder.record(0, None, &x)?;
    for k in 0..k_total {
        for b in batch.iter_mut() {
            *b = batch_rng.uniform_index(n);
        }
        let g = p.block_gradient_unchecked(&x, &batch, 0..x.len());
        let eta = opts.steps.eta(k);
        for j in 0..layout.num_blocks() {
            let r = layout.range(j);
            reg.penalty(j).prox_step(eta, &mut x[r.clone()], &g[r]);
        }
        if exceeds_guard(&x) {
            return Err(Error::Diverged { k });
        }
        iterations.push(IterationRecord { k, block: None, eta, max_delay: 0 });
        if recorder.due(k + 1, k_total) {
            recorder.record(k + 1, None, &x)?;
        }
    }

    Ok(Trajectory {
        iterations,
        telemetry: recorder.points,
        final_model: ModelVector::from_finite(x),
    })
}

/// Smallest `Psi` seen along a serial run of `opts.iterations` updates.
pub fn estimate_psi_star(p: &LogisticProblem, opts: &SimOptions) -> Result<f64> {
    if opts.iterations == 0 {
        return invalid("estimating Psi* needs at least one iteration");
    }
    let traj = run_serial_proxsgd(p, opts)?;
    Ok(traj.telemetry.iter().map(|t| t.psi).fold(f64::INFINITY, f64::min))
}
