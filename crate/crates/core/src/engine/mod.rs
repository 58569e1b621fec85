//! In-process parameter server: one logical server per block applying
//! prox updates on push, worker threads computing block gradients at
//! possibly inconsistent snapshots, and a bounded-staleness barrier.

mod barrier;
mod cluster;
mod server;

pub use barrier::{BarrierPass, StalenessBarrier, RETIRED};
pub use cluster::{
    run_cluster, worker_reports_csv, BlockAssignment, ClusterConfig, ClusterFailure, ClusterRun, PushTrace,
    StepClock, WorkerReport, WORKER_HEADER,
};
pub use server::{BlockVersion, CommitRecord, PullResponse, PushAck, PushRequest, ServerState, StepSize};
