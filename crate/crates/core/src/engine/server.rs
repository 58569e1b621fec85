use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::Mutex;

use crate::error::{invalid, Error, Result};
use crate::prox::{BlockLayout, Regularizer};
use crate::sim::{exceeds_guard, StepSchedule};

/// One committed value of a block. Immutable once published.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVersion {
    pub version: u64,
    /// Global index of the update that produced it; `None` for `x^0`.
    pub commit_k: Option<u64>,
    /// `(worker, local iteration)` of the producing push.
    pub stamp: Option<(usize, u64)>,
    pub value: Vec<f64>,
    checksum: u64,
}

impl BlockVersion {
    fn new(version: u64, commit_k: Option<u64>, stamp: Option<(usize, u64)>, value: Vec<f64>) -> Self {
        let checksum = checksum(version, &value);
        Self { version, commit_k, stamp, value, checksum }
    }

    /// Recomputes the checksum written together with the value.
    pub fn is_intact(&self) -> bool {
        self.checksum == checksum(self.version, &self.value)
    }
}

fn checksum(version: u64, value: &[f64]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for word in std::iter::once(version).chain(value.iter().map(|v| v.to_bits())) {
        for byte in word.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(PRIME);
        }
    }
    h
}

#[derive(Debug, Clone)]
pub struct PullResponse {
    pub block: usize,
    committed: Arc<BlockVersion>,
}

impl PullResponse {
    pub fn version(&self) -> u64 {
        self.committed.version
    }

    pub fn value(&self) -> &[f64] {
        &self.committed.value
    }

    pub fn committed(&self) -> &BlockVersion {
        &self.committed
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Explicit(f64),
    /// `eta_k` indexed by the global commit counter at commit time.
    ServerClock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushRequest {
    pub worker: usize,
    /// Worker-local iteration `t`.
    pub clock: u64,
    pub block: usize,
    pub gradient: Vec<f64>,
    pub step: StepSize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushAck {
    pub block: usize,
    pub version: u64,
    pub commit_k: u64,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommitRecord {
    pub commit_k: u64,
    pub worker: usize,
    pub clock: u64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct AuditEntry {
    gradient: Vec<f64>,
    eta: f64,
    value: Vec<f64>,
}

#[derive(Debug, Default)]
struct CellLog {
    commits: Vec<CommitRecord>,
    audit: Option<Vec<AuditEntry>>,
}

#[derive(Debug)]
struct Cell {
    current: ArcSwap<BlockVersion>,
    log: Mutex<CellLog>,
}

/// Per-block cells plus the global update counter. Each cell has a single
/// writer at a time (its mutex); reads are wait-free loads of the last
/// published version.
#[derive(Debug)]
pub struct ServerState {
    layout: BlockLayout,
    reg: Regularizer,
    steps: StepSchedule,
    x0: Vec<f64>,
    cells: Vec<Cell>,
    global: AtomicU64,
}

impl ServerState {
    pub fn new(layout: BlockLayout, reg: Regularizer, steps: StepSchedule, x0: &[f64], audit: bool) -> Result<Self> {
        if x0.len() != layout.total_dim() {
            return invalid(format!("x0 has {} entries, layout covers {}", x0.len(), layout.total_dim()));
        }
        reg.check_layout(&layout)?;
        steps.validate()?;
        let cells = (0..layout.num_blocks())
            .map(|j| Cell {
                current: ArcSwap::from_pointee(BlockVersion::new(0, None, None, x0[layout.range(j)].to_vec())),
                log: Mutex::new(CellLog {
                    commits: Vec::new(),
                    audit: audit.then(Vec::new),
                }),
            })
            .collect();
        Ok(Self {
            layout,
            reg,
            steps,
            x0: x0.to_vec(),
            cells,
            global: AtomicU64::new(0),
        })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// Number of updates applied so far.
    pub fn global_count(&self) -> u64 {
        self.global.load(Ordering::SeqCst)
    }

    fn check_block(&self, j: usize) -> Result<()> {
        if j >= self.cells.len() {
            return Err(Error::Protocol(format!("block {j} out of range for {} blocks", self.cells.len())));
        }
        Ok(())
    }

    pub fn pull(&self, j: usize) -> Result<PullResponse> {
        self.check_block(j)?;
        let committed = self.cells[j].current.load_full();
        if !committed.is_intact() {
            return Err(Error::Protocol(format!("block {j} version {} failed its checksum", committed.version)));
        }
        Ok(PullResponse { block: j, committed })
    }

    /// Applies `x_j <- prox_{eta h_j}(x_j - eta G_j)` atomically.
    pub fn push(&self, req: &PushRequest) -> Result<PushAck> {
        let j = req.block;
        self.check_block(j)?;
        if req.gradient.len() != self.layout.block_size(j) {
            return Err(Error::Protocol(format!(
                "gradient for block {j} has {} entries, block has {}",
                req.gradient.len(),
                self.layout.block_size(j)
            )));
        }
        if let Some(i) = req.gradient.iter().position(|g| !g.is_finite()) {
            return invalid(format!("worker {} pushed a non-finite gradient entry {i} for block {j}", req.worker));
        }
        if let StepSize::Explicit(eta) = req.step {
            if !(eta > 0.0 && eta.is_finite()) {
                return invalid(format!("step size must be positive and finite, got {eta}"));
            }
        }

        let cell = &self.cells[j];
        let mut log = cell.log.lock();
        let current = cell.current.load_full();
        let k = self.global.fetch_add(1, Ordering::SeqCst);
        let eta = match req.step {
            StepSize::Explicit(eta) => eta,
            StepSize::ServerClock => self
                .steps
                .get(k)
                .ok_or_else(|| Error::Protocol(format!("step schedule has no entry for update {k}")))?,
        };
        let mut value = current.value.clone();
        self.reg.penalty(j).prox_step(eta, &mut value, &req.gradient);
        if exceeds_guard(&value) {
            return Err(Error::Diverged { k });
        }
        let version = current.version + 1;
        if let Some(audit) = log.audit.as_mut() {
            audit.push(AuditEntry { gradient: req.gradient.clone(), eta, value: value.clone() });
        }
        log.commits.push(CommitRecord { commit_k: k, worker: req.worker, clock: req.clock, eta });
        cell.current
            .store(Arc::new(BlockVersion::new(version, Some(k), Some((req.worker, req.clock)), value)));
        Ok(PushAck { block: j, version, commit_k: k, eta })
    }

    /// Consistent model: holds every cell's writer lock (in index order)
    /// while reading, so no push is half-way. Returns `(updates, x)`.
    pub fn snapshot(&self) -> (u64, Vec<f64>) {
        let guards: Vec<_> = self.cells.iter().map(|c| c.log.lock()).collect();
        let count = self.global.load(Ordering::SeqCst);
        let mut x = vec![0.0; self.layout.total_dim()];
        for (j, cell) in self.cells.iter().enumerate() {
            x[self.layout.range(j)].copy_from_slice(&cell.current.load().value);
        }
        drop(guards);
        (count, x)
    }

    /// Commits of block `j`; entry `v` produced version `v + 1`.
    pub fn commit_log(&self, j: usize) -> Vec<CommitRecord> {
        self.cells[j].log.lock().commits.clone()
    }

    /// Replays each block's audited pushes serially from `x^0` in commit
    /// order and compares against what was published. Returns the number of
    /// commits checked.
    pub fn verify_linearizability(&self) -> Result<u64> {
        let mut checked = 0;
        for (j, cell) in self.cells.iter().enumerate() {
            let log = cell.log.lock();
            let Some(audit) = log.audit.as_ref() else {
                return invalid("server was started without the audit log");
            };
            let penalty = self.reg.penalty(j);
            let mut x = self.x0[self.layout.range(j)].to_vec();
            for (v, entry) in audit.iter().enumerate() {
                penalty.prox_step(entry.eta, &mut x, &entry.gradient);
                if x != entry.value {
                    return Err(Error::Protocol(format!("block {j} version {} differs from serial replay", v + 1)));
                }
            }
            let published = cell.current.load();
            if published.version != audit.len() as u64 || published.value != x {
                return Err(Error::Protocol(format!("block {j} published state differs from serial replay")));
            }
            checked += audit.len() as u64;
        }
        Ok(checked)
    }
}
