//! Step-size condition checkers, convergence metrics and speedups.

use std::fmt::Write as _;

use crate::engine::{run_cluster, BlockAssignment, ClusterConfig};
use crate::error::{invalid, Result};
use crate::objective::LogisticProblem;
use crate::sim::StepSchedule;
use crate::trajectory::{fmt_real, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionRow {
    pub k: u64,
    pub eta: f64,
    /// `eta_k <= 1 / (16 L_max)`
    pub cond1: bool,
    /// `6 eta_k L^2 T sum_{l=1..T} eta_{k+l}`
    pub cond2_lhs: f64,
    /// `cond2_lhs <= M^2`
    pub cond2: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub l: f64,
    pub l_max: f64,
    pub staleness: u64,
    pub blocks: usize,
    /// One row per `k = 1..=K`.
    pub rows: Vec<ConditionRow>,
    pub first_violation: Option<u64>,
    /// For a constant step, `6 eta^2 L^2 T^2` (the second condition with
    /// every `eta_{k+l}` equal to `eta`).
    pub constant_lhs: Option<f64>,
}

impl ConditionReport {
    pub fn holds(&self) -> bool {
        self.first_violation.is_none()
    }

    pub fn cond1_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.cond1).count()
    }

    pub fn cond2_violations(&self) -> usize {
        self.rows.iter().filter(|r| !r.cond2).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,eta,cond1,cond2_lhs,cond2\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.k, fmt_real(r.eta), r.cond1, fmt_real(r.cond2_lhs), r.cond2)
                .expect("writing to a String");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m2 = (self.blocks * self.blocks) as f64;
        writeln!(out, "L = {}  L_max = {}  T = {}  M = {}", fmt_real(self.l), fmt_real(self.l_max), self.staleness, self.blocks).unwrap();
        writeln!(out, "iterations checked: {}", self.rows.len()).unwrap();
        writeln!(out, "eta_k <= 1/(16 L_max) = {}: {} violations", fmt_real(1.0 / (16.0 * self.l_max)), self.cond1_violations()).unwrap();
        writeln!(out, "6 eta_k L^2 T sum eta_(k+l) <= M^2 = {}: {} violations", fmt_real(m2), self.cond2_violations()).unwrap();
        if let Some(lhs) = self.constant_lhs {
            writeln!(out, "constant step: 6 eta^2 L^2 T^2 = {} ({})", fmt_real(lhs), if lhs <= m2 { "holds" } else { "fails" }).unwrap();
        }
        match self.first_violation {
            Some(k) => writeln!(out, "first violation at k = {k}").unwrap(),
            None => writeln!(out, "all conditions hold").unwrap(),
        }
        out
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

/// Evaluates both step-size conditions at every `k = 1..=K`, with
/// `eta_k = steps.get(k)`. The second condition looks ahead to
/// `eta_{k+T}`, so the schedule must cover indices up to `K + T`.
pub fn check_step_conditions(steps: &StepSchedule, iterations: u64, l: f64, l_max: f64, staleness: u64, blocks: usize) -> Result<ConditionReport> {
    positive("L", l)?;
    positive("L_max", l_max)?;
    if blocks == 0 {
        return invalid("M must be at least 1");
    }
    if iterations == 0 {
        return invalid("K must be at least 1");
    }
    steps.validate()?;
    let horizon = iterations + staleness;
    if let Some(len) = steps.len() {
        if len <= horizon {
            return invalid(format!("step table has {len} entries; indices up to K + T = {horizon} are referenced"));
        }
    }

    let t = staleness as f64;
    let m2 = (blocks * blocks) as f64;
    let cap = 1.0 / (16.0 * l_max);
    let mut rows = Vec::with_capacity(iterations as usize);
    let mut first_violation = None;
    for k in 1..=iterations {
        let eta = steps.eta(k);
        let ahead: f64 = (1..=staleness).map(|s| steps.eta(k + s)).sum();
        let cond2_lhs = 6.0 * eta * l * l * t * ahead;
        let row = ConditionRow { k, eta, cond1: eta <= cap, cond2_lhs, cond2: cond2_lhs <= m2 };
        if first_violation.is_none() && !(row.cond1 && row.cond2) {
            first_violation = Some(k);
        }
        rows.push(row);
    }
    let constant_lhs = match steps {
        StepSchedule::Constant(eta) => Some(6.0 * eta * eta * l * l * t * t),
        _ => None,
    };
    Ok(ConditionReport { l, l_max, staleness, blocks, rows, first_violation, constant_lhs })
}

/// Constant-step choices and horizon for a given budget `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub psi_gap: f64,
    pub blocks: usize,
    pub batch_size: usize,
    pub l: f64,
    pub iterations: u64,
    pub sigma_sq: f64,
    /// `sqrt(gap M N / (L K sigma^2))`
    pub eta: f64,
    /// `32 sqrt(2 gap L M sigma^2 / (K N))`
    pub bound_stated: f64,
}

impl RateConstants {
    /// `128 gap N L / (M^3 sigma^2) (T + 1)^4`
    pub fn k_min(&self, staleness: u64) -> f64 {
        let m = self.blocks as f64;
        128.0 * self.psi_gap * self.batch_size as f64 * self.l / (m * m * m * self.sigma_sq)
            * ((staleness + 1) as f64).powi(4)
    }

    /// The bound carrying the extra `(T + 1)` factor:
    /// `32 sqrt(2 gap L M (T + 1) sigma^2 / (K N))`.
    pub fn bound_proof(&self, staleness: u64) -> f64 {
        32.0 * (2.0 * self.psi_gap * self.l * self.blocks as f64 * (staleness + 1) as f64 * self.sigma_sq
            / (self.iterations as f64 * self.batch_size as f64))
            .sqrt()
    }

    pub fn to_text(&self, staleness: u64) -> String {
        format!(
            "eta = {}\nK_min(T={staleness}) = {}\nbound_stated = {}\nbound_proof(T={staleness}) = {}\n",
            fmt_real(self.eta),
            fmt_real(self.k_min(staleness)),
            fmt_real(self.bound_stated),
            fmt_real(self.bound_proof(staleness))
        )
    }
}

pub fn rate_constants(psi_gap: f64, blocks: usize, batch_size: usize, l: f64, iterations: u64, sigma_sq: f64) -> Result<RateConstants> {
    positive("objective gap", psi_gap)?;
    positive("L", l)?;
    positive("sigma^2", sigma_sq)?;
    if blocks == 0 || batch_size == 0 || iterations == 0 {
        return invalid("M, N and K must be at least 1");
    }
    let (m, n, k) = (blocks as f64, batch_size as f64, iterations as f64);
    Ok(RateConstants {
        psi_gap,
        blocks,
        batch_size,
        l,
        iterations,
        sigma_sq,
        eta: (psi_gap * m * n / (l * k * sigma_sq)).sqrt(),
        bound_stated: 32.0 * (2.0 * psi_gap * l * m * sigma_sq / (k * n)).sqrt(),
    })
}

/// `(k, Psi(x^k) - Psi*)` per telemetry point; not clamped at 0.
pub fn suboptimality_gap(traj: &Trajectory, psi_star: f64) -> Vec<(u64, f64)> {
    traj.telemetry.iter().map(|t| (t.k, t.psi - psi_star)).collect()
}

pub fn min_gradient_mapping(traj: &Trajectory) -> Result<f64> {
    if traj.telemetry.is_empty() {
        return invalid("trajectory has no telemetry");
    }
    Ok(traj.telemetry.iter().map(|t| t.gm_sq).fold(f64::INFINITY, f64::min))
}

/// First telemetry point with gap `<= target`: `(k, elapsed_s)`.
pub fn first_reaching(traj: &Trajectory, psi_star: f64, target_gap: f64) -> Option<(u64, f64)> {
    traj.telemetry
        .iter()
        .find(|t| t.psi - psi_star <= target_gap)
        .map(|t| (t.k, t.elapsed_s))
}

/// `p T_1 / T_p`.
pub fn iteration_speedup(workers: usize, t1: u64, tp: u64) -> f64 {
    workers as f64 * t1 as f64 / tp as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupRecord {
    pub workers: usize,
    pub iters_to_target: Option<u64>,
    pub time_to_target_s: Option<f64>,
    pub iteration_speedup: Option<f64>,
    pub time_speedup: Option<f64>,
    pub reached: bool,
}

pub const SPEEDUP_HEADER: &str = "workers,iters_to_target,time_to_target_s,iteration_speedup,time_speedup,reached";

pub fn speedup_csv(records: &[SpeedupRecord]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_real).unwrap_or_default();
    let mut out = String::from(SPEEDUP_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.workers,
            r.iters_to_target.map(|k| k.to_string()).unwrap_or_default(),
            opt(r.time_to_target_s),
            opt(r.iteration_speedup),
            opt(r.time_speedup),
            r.reached
        )
        .expect("writing to a String");
    }
    out
}

/// Speedups relative to the `p = 1` run, sorted by worker count. Speedups
/// are `None` when either run misses the target or reaches it at `k = 0`.
pub fn speedup_table(runs: &[(usize, Trajectory)], target_gap: f64, psi_star: f64) -> Result<Vec<SpeedupRecord>> {
    if !psi_star.is_finite() {
        return invalid("Psi* must be finite");
    }
    let mut sorted: Vec<&(usize, Trajectory)> = runs.iter().collect();
    sorted.sort_by_key(|(p, _)| *p);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return invalid("each worker count may appear only once");
    }
    if sorted.iter().any(|(p, _)| *p == 0) {
        return invalid("worker counts must be positive");
    }
    let Some((_, base)) = sorted.iter().find(|(p, _)| *p == 1) else {
        return invalid("a single-worker run is required as the baseline");
    };
    let base = first_reaching(base, psi_star, target_gap);

    Ok(sorted
        .iter()
        .map(|(p, traj)| {
            let hit = first_reaching(traj, psi_star, target_gap);
            let pair = base.zip(hit).filter(|(_, (tp, _))| *tp > 0);
            SpeedupRecord {
                workers: *p,
                iters_to_target: hit.map(|h| h.0),
                time_to_target_s: hit.map(|h| h.1),
                iteration_speedup: pair.map(|((t1, _), (tp, _))| iteration_speedup(*p, t1, tp)),
                time_speedup: pair.filter(|(_, (_, s))| *s > 0.0).map(|((_, s1), (_, sp))| s1 / sp),
                reached: hit.is_some(),
            }
        })
        .collect())
}

/// Runs the cluster once per worker count with otherwise identical
/// settings and tabulates speedups. A pinned base assignment is re-derived
/// round-robin for each worker count.
pub fn run_speedup_sweep(
    problem: &LogisticProblem,
    base: &ClusterConfig,
    workers: &[usize],
    target_gap: f64,
    psi_star: f64,
) -> Result<Vec<SpeedupRecord>> {
    if !workers.contains(&1) {
        return invalid("the worker list must include 1");
    }
    let mut runs = Vec::with_capacity(workers.len());
    for &p in workers {
        let mut cfg = base.clone();
        cfg.workers = p;
        if let BlockAssignment::Pinned(_) = cfg.assignment {
            cfg.assignment = BlockAssignment::round_robin(p, problem.layout().num_blocks());
        }
        let run = run_cluster(problem, &cfg)?;
        runs.push((p, run.trajectory));
    }
    speedup_table(&runs, target_gap, psi_star)
}
