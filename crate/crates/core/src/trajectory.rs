//! Run telemetry shared by the simulator and the cluster runtime.

use std::fmt::Write as _;

use crate::prox::ModelVector;

/// One applied update. `block == None` marks a full-vector update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// 0-based update index; the update turns `x^k` into `x^{k+1}`.
    pub k: u64,
    pub block: Option<usize>,
    pub eta: f64,
    /// Largest per-block delay of the snapshot the gradient was computed at.
    pub max_delay: u64,
}

/// Full-objective sample of the committed model `x^k` (after `k` updates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TelemetryPoint {
    pub k: u64,
    /// Block touched by update `k - 1`; `None` at `k = 0` and for
    /// full-vector runs.
    pub block: Option<usize>,
    /// `eta_k`, also the step used for `gm_sq`.
    pub eta: f64,
    pub psi: f64,
    /// `||P(x^k, grad f(x^k), eta_k)||^2`.
    pub gm_sq: f64,
    /// Largest delay over the updates since the previous point.
    pub max_delay: u64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub iterations: Vec<IterationRecord>,
    pub telemetry: Vec<TelemetryPoint>,
    pub final_model: ModelVector,
}

pub const TRAJECTORY_HEADER: &str = "k,j,eta,psi,gm_sq,max_delay,elapsed_s";

/// Reals with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn num_updates(&self) -> u64 {
        self.iterations.len() as u64
    }

    pub fn last(&self) -> Option<&TelemetryPoint> {
        self.telemetry.last()
    }

    pub fn max_delay(&self) -> u64 {
        self.iterations.iter().map(|r| r.max_delay).max().unwrap_or(0)
    }

    /// Telemetry as CSV; `j` is 1-based and empty where undefined.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.telemetry.len() + 1));
        out.push_str(TRAJECTORY_HEADER);
        out.push('\n');
        for p in &self.telemetry {
            let j = p.block.map(|j| (j + 1).to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.k,
                j,
                fmt_real(p.eta),
                fmt_real(p.psi),
                fmt_real(p.gm_sq),
                p.max_delay,
                fmt_real(p.elapsed_s)
            )
            .expect("writing to a String");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema() {
        let t = Trajectory {
            iterations: vec![IterationRecord { k: 0, block: Some(2), eta: 0.1, max_delay: 0 }],
            telemetry: vec![
                TelemetryPoint { k: 0, block: None, eta: 0.1, psi: 0.5, gm_sq: 1.0, max_delay: 0, elapsed_s: 0.0 },
                TelemetryPoint { k: 1, block: Some(2), eta: 0.1 / 2f64.sqrt(), psi: 0.25, gm_sq: 0.5, max_delay: 3, elapsed_s: 0.0 },
            ],
            final_model: ModelVector::zeros(1),
        };
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        assert_eq!(
            lines[1],
            "0,,1.0000000000000001e-1,5.0000000000000000e-1,1.0000000000000000e0,0,0.0000000000000000e0"
        );
        assert!(lines[2].starts_with("1,3,7.0710678118654752e-2,"));
        let eta: f64 = lines[2].split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(eta, 0.1 / 2f64.sqrt());
    }
}
