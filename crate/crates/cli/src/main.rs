mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use asyprox::analysis::{
    check_step_conditions, min_gradient_mapping, rate_constants, run_speedup_sweep, speedup_csv,
};
use asyprox::data::{parse_libsvm, synthesize, write_libsvm, write_x_true, SynthesisParams};
use asyprox::engine::{run_cluster, worker_reports_csv, BlockAssignment, ClusterConfig, StepClock};
use asyprox::error::Error;
use asyprox::objective::LogisticProblem;
use asyprox::prox::{BlockLayout, Regularizer};
use asyprox::rng::{RngStream, StreamKind};
use asyprox::sim::{estimate_psi_star, run_global, DelaySchedule, SimOptions, StepSchedule};
use asyprox::trajectory::{fmt_real, Trajectory};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asyprox", version, about = "Asynchronous block proximal SGD experiments")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic sparse logistic dataset and its planted model.
    GenData(GenDataArgs),
    /// Run the global-view simulator or the threaded parameter server.
    Run(RunArgs),
    /// Evaluate the step-size conditions and rate constants.
    Check(CheckArgs),
    /// Run the cluster once per worker count and tabulate speedups.
    Speedup(SpeedupArgs),
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// Number of samples.
    #[arg(long = "n", default_value_t = 2000, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    /// Feature dimension.
    #[arg(long = "d", default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,
    #[arg(long, default_value_t = 1.0)]
    density: f64,
    /// Nonzeros in the planted model.
    #[arg(long, default_value_t = 2)]
    support: usize,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
}

impl SynthArgs {
    fn params(&self) -> SynthesisParams {
        SynthesisParams {
            samples: self.samples as usize,
            dim: self.dim as usize,
            density: self.density,
            support: self.support,
            noise: self.noise,
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    synth: SynthArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "out-dir", env = "ASYPROX_OUT", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// LIBSVM file; a synthetic instance is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dimension override for LIBSVM input.
    #[arg(long = "data-dim")]
    data_dim: Option<usize>,
    #[command(flatten)]
    synth: SynthArgs,
    /// Seed for the synthetic instance.
    #[arg(long = "data-seed", default_value_t = 1)]
    data_seed: u64,
    /// Number of blocks M.
    #[arg(long = "M", alias = "blocks", default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    blocks: u64,
    #[arg(long, default_value_t = 0.1)]
    lambda1: f64,
    #[arg(long, default_value_t = 0.001)]
    lambda2: f64,
}

impl ProblemArgs {
    fn build(&self) -> Result<LogisticProblem, Failure> {
        let data = match &self.data {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                parse_libsvm(&text, self.data_dim)?
            }
            None => {
                let mut rng = RngStream::for_kind(self.data_seed, StreamKind::Synthesis, 0);
                synthesize(&self.synth.params(), &mut rng)?.0
            }
        };
        let layout = BlockLayout::even(data.dim(), self.blocks as usize)?;
        let reg = Regularizer::elastic_net(self.lambda1, self.lambda2)?;
        Ok(LogisticProblem::new(data, reg, layout)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Schedule {
    /// `eta_k = c / sqrt(1 + k)`
    InverseSqrt,
    /// `eta_k = c`
    Constant,
}

#[derive(Args, Clone)]
struct StepArgs {
    #[arg(long, value_enum, default_value_t = Schedule::InverseSqrt)]
    schedule: Schedule,
    /// Step scale `c`, or the constant step.
    #[arg(long, default_value_t = 0.1)]
    c: f64,
}

impl StepArgs {
    fn schedule(&self) -> StepSchedule {
        match self.schedule {
            Schedule::InverseSqrt => StepSchedule::InverseSqrt(self.c),
            Schedule::Constant => StepSchedule::Constant(self.c),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sim,
    Cluster,
}

#[derive(Clone, Copy, ValueEnum)]
enum Assignment {
    Random,
    RoundRobin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Clock {
    Server,
    Worker,
}

#[derive(Args, Clone)]
struct ExecArgs {
    /// Staleness bound T.
    #[arg(long = "T", alias = "staleness", default_value_t = 0)]
    staleness: u64,
    /// Minibatch size N.
    #[arg(long = "N", alias = "batch", default_value_t = 8192, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    /// Total block updates K.
    #[arg(long = "K", alias = "iterations", default_value_t = 20_000)]
    iterations: u64,
    #[command(flatten)]
    steps: StepArgs,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Telemetry every this many updates.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    stride: u64,
    #[arg(long, value_enum, default_value_t = Assignment::Random)]
    assignment: Assignment,
    /// Counter indexing the step size in cluster mode.
    #[arg(long, value_enum, default_value_t = Clock::Server)]
    clock: Clock,
    /// Seconds a worker may wait at the staleness barrier.
    #[arg(long = "barrier-timeout", default_value_t = 60.0)]
    barrier_timeout: f64,
    /// Record pushed gradients and replay them after the run.
    #[arg(long)]
    audit: bool,
}

impl ExecArgs {
    fn cluster(&self, workers: usize, blocks: usize) -> Result<ClusterConfig, Failure> {
        if !(self.barrier_timeout > 0.0 && self.barrier_timeout.is_finite()) {
            return Err(Failure::Usage("barrier timeout must be positive".into()));
        }
        let mut cfg = ClusterConfig::new(
            workers,
            self.staleness,
            self.steps.schedule(),
            self.iterations,
            self.batch as usize,
            self.seed,
        );
        cfg.telemetry_stride = self.stride;
        cfg.assignment = match self.assignment {
            Assignment::Random => BlockAssignment::UniformRandom,
            Assignment::RoundRobin => BlockAssignment::round_robin(workers, blocks),
        };
        cfg.clock = match self.clock {
            Clock::Server => StepClock::Server,
            Clock::Worker => StepClock::WorkerLocal,
        };
        cfg.barrier_timeout = Duration::from_secs_f64(self.barrier_timeout);
        cfg.audit = self.audit;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Mode::Sim)]
    mode: Mode,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    exec: ExecArgs,
    /// Stamp simulator telemetry with wall-clock time.
    #[arg(long = "wall-clock")]
    wall_clock: bool,
    #[arg(long = "out-dir", env = "ASYPROX_OUT", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// Smoothness constant L.
    #[arg(long = "L")]
    l: Option<f64>,
    /// Largest block smoothness constant.
    #[arg(long = "L-max")]
    l_max: Option<f64>,
    /// Single-sample gradient variance.
    #[arg(long = "sigma-sq")]
    sigma_sq: Option<f64>,
    /// Initial objective gap; defaults to `Psi(0)`, an upper bound since
    /// `Psi >= 0`.
    #[arg(long)]
    gap: Option<f64>,
    /// Estimate missing constants from the problem instance.
    #[arg(long)]
    estimate: bool,
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long = "T", alias = "staleness", default_value_t = 0)]
    staleness: u64,
    #[arg(long = "N", alias = "batch", default_value_t = 8192, value_parser = clap::value_parser!(u64).range(1..))]
    batch: u64,
    #[arg(long = "K", alias = "iterations", default_value_t = 20_000, value_parser = clap::value_parser!(u64).range(1..))]
    iterations: u64,
    #[command(flatten)]
    steps: StepArgs,
    #[arg(long = "variance-trials", default_value_t = 20_000)]
    variance_trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long = "out-dir", env = "ASYPROX_OUT", default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SpeedupArgs {
    /// Comma-separated worker counts; must include 1.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    workers: Vec<usize>,
    /// Target suboptimality gap.
    #[arg(long, default_value_t = 0.1)]
    target: f64,
    /// Known `Psi*`; estimated by a long serial run when absent.
    #[arg(long = "psi-star")]
    psi_star: Option<f64>,
    #[arg(long = "psi-star-iterations", default_value_t = 100_000)]
    psi_star_iterations: u64,
    #[arg(long = "psi-star-seed", default_value_t = 99)]
    psi_star_seed: u64,
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    exec: ExecArgs,
    #[arg(long = "out-dir", env = "ASYPROX_OUT", default_value = "out")]
    out_dir: PathBuf,
}

enum Failure {
    Usage(String),
    Condition,
    Diverged(u64),
    Unreached,
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io(_) => Failure::Usage(e.to_string()),
            Error::Diverged { k } => Failure::Diverged(k),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn gen_data(args: &GenDataArgs) -> Result<(), Failure> {
    let mut rng = RngStream::for_kind(args.seed, StreamKind::Synthesis, 0);
    let (data, x_true) = synthesize(&args.synth.params(), &mut rng)?;
    let data_path = write_file(&args.out_dir, "data.libsvm", &write_libsvm(&data))?;
    let x_path = write_file(&args.out_dir, "x_true.txt", &write_x_true(x_true.as_slice()))?;
    println!("n = {}", data.num_samples());
    println!("d = {}", data.dim());
    println!("nnz = {}", data.nnz());
    println!("data = {}", data_path.display());
    println!("x_true = {}", x_path.display());
    Ok(())
}

/// One coordinate per line.
fn model_text(traj: &Trajectory) -> String {
    traj.final_model.as_slice().iter().map(|&v| fmt_real(v) + "\n").collect()
}

fn print_summary(traj: &Trajectory) -> Result<(), Failure> {
    let last = traj.last().ok_or_else(|| Failure::Runtime("empty trajectory".into()))?;
    println!("updates = {}", traj.num_updates());
    println!("final_psi = {}", fmt_real(last.psi));
    println!("min_gm_sq = {}", fmt_real(min_gradient_mapping(traj)?));
    println!("max_delay = {}", traj.max_delay());
    Ok(())
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let problem = args.problem.build()?;
    let exec = &args.exec;
    let start = Instant::now();
    match args.mode {
        Mode::Sim => {
            if args.workers != 1 {
                return Err(Failure::Usage("--workers applies to cluster mode only".into()));
            }
            let mut opts = SimOptions::new(exec.steps.schedule(), exec.iterations, exec.batch as usize, exec.seed);
            opts.telemetry_stride = exec.stride;
            opts.wall_clock = args.wall_clock;
            let delays = if exec.staleness == 0 {
                DelaySchedule::Zero
            } else {
                DelaySchedule::uniform(exec.staleness, exec.seed)
            };
            let traj = run_global(&problem, &opts, delays)?;
            let path = write_file(&args.out_dir, "trajectory.csv", &traj.to_csv())?;
            let model = write_file(&args.out_dir, "model.txt", &model_text(&traj))?;
            println!("mode = sim");
            print_summary(&traj)?;
            println!("elapsed_s = {}", fmt_real(start.elapsed().as_secs_f64()));
            println!("trajectory = {}", path.display());
            println!("model = {}", model.display());
        }
        Mode::Cluster => {
            let cfg = exec.cluster(args.workers as usize, problem.layout().num_blocks())?;
            let run = match run_cluster(&problem, &cfg) {
                Ok(run) => run,
                Err(failure) => {
                    if let Some(partial) = &failure.partial {
                        write_file(&args.out_dir, "trajectory.csv", &partial.trajectory.to_csv())?;
                        write_file(&args.out_dir, "workers.csv", &worker_reports_csv(&partial.workers))?;
                    }
                    return Err(failure.error.into());
                }
            };
            let path = write_file(&args.out_dir, "trajectory.csv", &run.trajectory.to_csv())?;
            let workers = write_file(&args.out_dir, "workers.csv", &worker_reports_csv(&run.workers))?;
            let model = write_file(&args.out_dir, "model.txt", &model_text(&run.trajectory))?;
            println!("mode = cluster");
            print_summary(&run.trajectory)?;
            println!("max_observed_staleness = {}", run.max_observed_staleness());
            println!("barrier_violations = {}", run.barrier_violations);
            if cfg.audit {
                println!("linearizable_commits = {}", run.linearizable_commits);
            }
            println!("elapsed_s = {}", fmt_real(run.elapsed_s));
            println!("trajectory = {}", path.display());
            println!("workers = {}", workers.display());
            println!("model = {}", model.display());
        }
    }
    Ok(())
}

fn check(args: &CheckArgs) -> Result<(), Failure> {
    let problem = if args.estimate { Some(args.problem.build()?) } else { None };
    let lip = problem.as_ref().map(|p| p.estimate_lipschitz());
    let l = args.l.or(lip.map(|e| e.l));
    let l_max = args.l_max.or(lip.map(|e| e.l_max));
    let (Some(l), Some(l_max)) = (l, l_max) else {
        return Err(Failure::Usage("need --L and --L-max, or --estimate".into()));
    };
    let blocks = args.problem.blocks as usize;
    let report = check_step_conditions(&args.steps.schedule(), args.iterations, l, l_max, args.staleness, blocks)?;
    print!("{}", report.to_text());
    let path = write_file(&args.out_dir, "conditions.csv", &report.to_csv())?;
    println!("conditions = {}", path.display());

    let x0 = vec![0.0; problem.as_ref().map_or(0, |p| p.dim())];
    let sigma_sq = match (args.sigma_sq, &problem) {
        (Some(s), _) => Some(s),
        (None, Some(p)) => {
            let mut rng = RngStream::for_kind(args.seed, StreamKind::Variance, 0);
            Some(p.estimate_variance(&x0, args.variance_trials, &mut rng)?)
        }
        (None, None) => None,
    };
    let gap = match (args.gap, &problem) {
        (Some(g), _) => Some(g),
        (None, Some(p)) => Some(p.full_objective(&x0)?.psi),
        (None, None) => None,
    };
    if let (Some(sigma_sq), Some(gap)) = (sigma_sq, gap) {
        let c = rate_constants(gap, blocks, args.batch as usize, l, args.iterations, sigma_sq)?;
        println!("gap = {}", fmt_real(gap));
        println!("sigma_sq = {}", fmt_real(sigma_sq));
        print!("{}", c.to_text(args.staleness));
    }
    if report.holds() {
        Ok(())
    } else {
        Err(Failure::Condition)
    }
}

fn speedup(args: &SpeedupArgs) -> Result<(), Failure> {
    if !args.workers.contains(&1) {
        return Err(Failure::Usage("--workers must include 1".into()));
    }
    if args.workers.contains(&0) {
        return Err(Failure::Usage("worker counts must be positive".into()));
    }
    let problem = args.problem.build()?;
    let exec = &args.exec;
    let psi_star = match args.psi_star {
        Some(v) => v,
        None => {
            let opts = SimOptions::new(exec.steps.schedule(), args.psi_star_iterations, exec.batch as usize, args.psi_star_seed);
            let v = estimate_psi_star(&problem, &opts)?;
            println!("psi_star = {}", fmt_real(v));
            v
        }
    };
    let base = exec.cluster(1, problem.layout().num_blocks())?;
    let records = run_speedup_sweep(&problem, &base, &args.workers, args.target, psi_star)?;
    let path = write_file(&args.out_dir, "speedup.csv", &speedup_csv(&records))?;
    for r in &records {
        let show = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_real);
        println!(
            "workers = {}  iters = {}  iteration_speedup = {}  time_speedup = {}",
            r.workers,
            r.iters_to_target.map_or_else(|| "-".to_string(), |k| k.to_string()),
            show(r.iteration_speedup),
            show(r.time_speedup)
        );
    }
    println!("speedup = {}", path.display());
    if records.iter().all(|r| r.reached) {
        Ok(())
    } else {
        Err(Failure::Unreached)
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    let result = match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Run(a) => run(a),
        Command::Check(a) => check(a),
        Command::Speedup(a) => speedup(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Condition) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(k)) => {
            eprintln!("error: diverged at update {k}; last good iterate is x^{k}");
            ExitCode::from(3)
        }
        Err(Failure::Unreached) => {
            eprintln!("error: target gap not reached by every run");
            ExitCode::from(4)
        }
    }
}
