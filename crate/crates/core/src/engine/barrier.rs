use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};

use crate::error::{Error, Result};

/// Bounded-staleness barrier over per-worker completed-iteration counts.
/// A worker about to run local iteration `t` (0-based) proceeds once every
/// worker has completed at least `t - T` iterations.
#[derive(Debug)]
pub struct StalenessBarrier {
    bound: u64,
    timeout: Duration,
    state: Mutex<State>,
    wake: Condvar,
}

#[derive(Debug)]
struct State {
    completed: Vec<u64>,
    aborted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierPass {
    pub waited: Duration,
    /// Smallest completed count seen when the worker was let through.
    pub min_watermark: u64,
}

/// Marks a worker that will not run any more iterations.
pub const RETIRED: u64 = u64::MAX;

impl StalenessBarrier {
    pub fn new(workers: usize, bound: u64, timeout: Duration) -> Self {
        Self {
            bound,
            timeout,
            state: Mutex::new(State { completed: vec![0; workers], aborted: false }),
            wake: Condvar::new(),
        }
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn wait(&self, worker: usize, t: u64) -> Result<BarrierPass> {
        let start = Instant::now();
        let need = t.saturating_sub(self.bound);
        let mut st = self.state.lock();
        loop {
            if st.aborted {
                return Err(Error::Aborted);
            }
            let min = st.completed.iter().copied().min().unwrap_or(RETIRED);
            if min >= need {
                return Ok(BarrierPass { waited: start.elapsed(), min_watermark: min });
            }
            let waited = start.elapsed();
            if waited >= self.timeout {
                return Err(Error::BarrierTimeout {
                    worker,
                    iteration: t,
                    waited,
                    watermarks: st.completed.clone(),
                });
            }
            self.wake.wait_for(&mut st, self.timeout - waited);
        }
    }

    /// Records that `worker` has finished `completed` iterations.
    pub fn advance(&self, worker: usize, completed: u64) {
        let mut st = self.state.lock();
        debug_assert!(st.completed[worker] <= completed);
        st.completed[worker] = completed;
        self.wake.notify_all();
    }

    pub fn retire(&self, worker: usize) {
        self.advance(worker, RETIRED);
    }

    pub fn abort(&self) {
        self.state.lock().aborted = true;
        self.wake.notify_all();
    }

    pub fn watermarks(&self) -> Vec<u64> {
        self.state.lock().completed.clone()
    }
}
