//! Independent oracles shared by the property suites and the acceptance
//! target. Every check returns `true` when the inequality holds.

#![allow(dead_code)]

use asyprox::data::{synthesize, SynthesisParams};
use asyprox::objective::LogisticProblem;
use asyprox::prox::{gradient_mapping, prox, BlockLayout, Penalty, Regularizer};
use asyprox::rng::{RngStream, StreamKind};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `x - eta g`
pub fn step(x: &[f64], g: &[f64], eta: f64) -> Vec<f64> {
    x.iter().zip(g).map(|(xi, gi)| xi - eta * gi).collect()
}

/// `<g, y - x> + h(y) - h(x) <= -||y - x||^2 / eta` with `y = prox(x - eta g)`.
pub fn prox_inequality_holds(reg: &Regularizer, x: &[f64], g: &[f64], eta: f64, tol: f64) -> bool {
    let y = prox(reg, eta, &step(x, g, eta)).unwrap();
    let yx = diff(&y, x);
    let lhs = dot(g, &yx) + reg.value(&y).unwrap() - reg.value(x).unwrap();
    lhs <= -norm_sq(&yx) / eta + tol
}

/// `||prox(x - eta G) - prox(x - eta g)|| <= eta ||G - g||`
pub fn prox_nonexpansive(reg: &Regularizer, x: &[f64], big_g: &[f64], g: &[f64], eta: f64, tol: f64) -> bool {
    let a = prox(reg, eta, &step(x, big_g, eta)).unwrap();
    let b = prox(reg, eta, &step(x, g, eta)).unwrap();
    norm_sq(&diff(&a, &b)).sqrt() <= eta * norm_sq(&diff(big_g, g)).sqrt() + tol
}

/// `||P(x, g1) - P(x, g2)|| <= ||g1 - g2||`
pub fn mapping_lipschitz(reg: &Regularizer, x: &[f64], g1: &[f64], g2: &[f64], eta: f64, tol: f64) -> bool {
    let p1 = gradient_mapping(x, g1, eta, reg).unwrap();
    let p2 = gradient_mapping(x, g2, eta, reg).unwrap();
    norm_sq(&diff(&p1, &p2)).sqrt() <= norm_sq(&diff(g1, g2)).sqrt() + tol
}

/// `<a, b> <= ||a||^2 / (2 delta) + delta ||b||^2 / 2`
pub fn young(a: &[f64], b: &[f64], delta: f64, tol: f64) -> bool {
    dot(a, b) <= norm_sq(a) / (2.0 * delta) + delta * norm_sq(b) / 2.0 + tol
}

/// Separable quadratic `f(x) = sum_i q_i x_i^2 / 2 + c_i x_i`; `grad f` is
/// Lipschitz with constant `max |q_i|`, and over a block with the max
/// restricted to that block.
pub struct Quadratic {
    pub q: Vec<f64>,
    pub c: Vec<f64>,
}

impl Quadratic {
    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.q).zip(&self.c).map(|((xi, qi), ci)| 0.5 * qi * xi * xi + ci * xi).sum()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.q).zip(&self.c).map(|((xi, qi), ci)| qi * xi + ci).collect()
    }

    pub fn lipschitz(&self, range: std::ops::Range<usize>) -> f64 {
        self.q[range].iter().fold(0.0f64, |m, q| m.max(q.abs()))
    }
}

/// `Psi(y) <= Psi(z) + <y - z, grad f(x) - g> + (L/2 - 1/(2 eta)) ||y - x||^2
///   + (L/2 + 1/(2 eta)) ||z - x||^2 - ||y - z||^2 / (2 eta)`
pub fn grad_diff(f: &Quadratic, reg: &Regularizer, x: &[f64], g: &[f64], z: &[f64], eta: f64, tol: f64) -> bool {
    let l = f.lipschitz(0..x.len());
    let y = prox(reg, eta, &step(x, g, eta)).unwrap();
    let psi = |v: &[f64]| f.value(v) + reg.value(v).unwrap();
    let rhs = psi(z) + dot(&diff(&y, z), &diff(&f.grad(x), g))
        + (l / 2.0 - 1.0 / (2.0 * eta)) * norm_sq(&diff(&y, x))
        + (l / 2.0 + 1.0 / (2.0 * eta)) * norm_sq(&diff(z, x))
        - norm_sq(&diff(&y, z)) / (2.0 * eta);
    psi(&y) <= rhs + tol
}

/// Block form: only block `j` moves (`y_j = prox(x_j - eta g_j)`, other
/// blocks of `y` and `z` equal `x`), `L_j` is the block constant.
pub fn block_grad_diff(
    f: &Quadratic,
    reg: &Regularizer,
    layout: &BlockLayout,
    j: usize,
    x: &[f64],
    g: &[f64],
    zj: &[f64],
    eta: f64,
    tol: f64,
) -> bool {
    let r = layout.range(j);
    let lj = f.lipschitz(r.clone());
    let pen = reg.penalty(j);
    let mut y = x.to_vec();
    pen.prox_step(eta, &mut y[r.clone()], &g[r.clone()]);
    let mut z = x.to_vec();
    z[r.clone()].copy_from_slice(zj);
    let psi = |v: &[f64]| f.value(v) + reg.value(v).unwrap();
    let (xj, yj, gj) = (&x[r.clone()], &y[r.clone()], &g[r.clone()]);
    let grad_j = &f.grad(x)[r];
    let rhs = psi(&z) + dot(&diff(grad_j, gj), &diff(yj, zj))
        + (lj / 2.0 - 1.0 / (2.0 * eta)) * norm_sq(&diff(yj, xj))
        + (lj / 2.0 + 1.0 / (2.0 * eta)) * norm_sq(&diff(zj, xj))
        - norm_sq(&diff(yj, zj)) / (2.0 * eta);
    psi(&y) <= rhs + tol
}

pub fn block_prox_inequality(pen: Penalty, xj: &[f64], gj: &[f64], eta: f64, tol: f64) -> bool {
    let mut y = xj.to_vec();
    pen.prox_step(eta, &mut y, gj);
    let yx = diff(&y, xj);
    dot(gj, &yx) + pen.value(&y) - pen.value(xj) <= -norm_sq(&yx) / eta + tol
}

pub fn block_prox_nonexpansive(pen: Penalty, xj: &[f64], big_gj: &[f64], gj: &[f64], eta: f64, tol: f64) -> bool {
    let mut a = xj.to_vec();
    pen.prox_step(eta, &mut a, big_gj);
    let mut b = xj.to_vec();
    pen.prox_step(eta, &mut b, gj);
    norm_sq(&diff(&a, &b)).sqrt() <= eta * norm_sq(&diff(big_gj, gj)).sqrt() + tol
}

/// Random vectors, step and regularizer for the inequality suites.
pub struct Case {
    pub x: Vec<f64>,
    pub g: Vec<f64>,
    pub g2: Vec<f64>,
    pub z: Vec<f64>,
    pub eta: f64,
    pub delta: f64,
    pub layout: BlockLayout,
    pub reg: Regularizer,
    pub quad: Quadratic,
}

pub fn random_penalty(rng: &mut RngStream, variant: usize) -> Penalty {
    let mut coef = || 2.0 * rng.next_f64();
    match variant % 4 {
        0 => Penalty::Zero,
        1 => Penalty::L1 { lambda1: coef() },
        2 => Penalty::SquaredL2 { lambda2: coef() },
        _ => Penalty::ElasticNet { lambda1: coef(), lambda2: coef() },
    }
}

fn vector(rng: &mut RngStream, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.standard_normal()).collect()
}

/// Case `i` of a suite; variant `i mod 4` for the first block, the rest
/// drawn at random so mixed per-block regularizers are covered.
pub fn random_case(rng: &mut RngStream, i: usize) -> Case {
    let d = 1 + rng.uniform_index(64);
    let m = 1 + rng.uniform_index(d.min(8));
    let layout = BlockLayout::even(d, m).unwrap();
    let mut pens = vec![random_penalty(rng, i)];
    for _ in 1..m {
        let v = rng.uniform_index(4);
        pens.push(random_penalty(rng, v));
    }
    let reg = Regularizer::per_block(&layout, pens).unwrap();
    // eta in (1e-3, 1]
    let eta = 1e-3 + (1.0 - 1e-3) * (1.0 - rng.next_f64());
    let delta = (10f64).powf(4.0 * rng.next_f64() - 2.0);
    let scale = 0.1 + 3.0 * rng.next_f64();
    let l = 5.0 * rng.next_f64();
    let quad = Quadratic {
        q: (0..d).map(|_| l * (2.0 * rng.next_f64() - 1.0)).collect(),
        c: vector(rng, d, 1.0),
    };
    Case {
        x: vector(rng, d, scale),
        g: vector(rng, d, scale),
        g2: vector(rng, d, scale),
        z: vector(rng, d, scale),
        eta,
        delta,
        layout,
        reg,
        quad,
    }
}

pub struct SuiteResult {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
}

/// Runs every inequality and its block form on `cases` random cases each.
pub fn inequality_suites(seed: u64, cases: usize) -> Vec<SuiteResult> {
    let names = ["prox inequality", "prox inequality, block", "prox nonexpansive", "prox nonexpansive, block", "mapping lipschitz", "mapping lipschitz, block", "grad_diff", "grad_diff block", "young"];
    let mut failures = [0usize; 9];
    let mut rng = RngStream::for_kind(seed, StreamKind::Audit, 0);
    for i in 0..cases {
        let c = random_case(&mut rng, i);
        let j = rng.uniform_index(c.layout.num_blocks());
        let r = c.layout.range(j);
        let pen = c.reg.penalty(j);
        let checks = [
            prox_inequality_holds(&c.reg, &c.x, &c.g, c.eta, 1e-9),
            block_prox_inequality(pen, &c.x[r.clone()], &c.g[r.clone()], c.eta, 1e-9),
            prox_nonexpansive(&c.reg, &c.x, &c.g, &c.g2, c.eta, 1e-12),
            block_prox_nonexpansive(pen, &c.x[r.clone()], &c.g[r.clone()], &c.g2[r.clone()], c.eta, 1e-12),
            mapping_lipschitz(&c.reg, &c.x, &c.g, &c.g2, c.eta, 1e-12),
            {
                let p1 = asyprox::prox::block_gradient_mapping(&c.x, &c.g, c.eta, &c.reg, &c.layout, j).unwrap();
                let p2 = asyprox::prox::block_gradient_mapping(&c.x, &c.g2, c.eta, &c.reg, &c.layout, j).unwrap();
                norm_sq(&diff(&p1, &p2)).sqrt() <= norm_sq(&diff(&c.g[r.clone()], &c.g2[r.clone()])).sqrt() + 1e-12
            },
            grad_diff(&c.quad, &c.reg, &c.x, &c.g, &c.z, c.eta, 1e-8),
            block_grad_diff(&c.quad, &c.reg, &c.layout, j, &c.x, &c.g, &c.z[r.clone()], c.eta, 1e-8),
            young(&c.g, &c.g2, c.delta, 1e-12 * (1.0 + norm_sq(&c.g) / c.delta + c.delta * norm_sq(&c.g2))),
        ];
        for (f, ok) in failures.iter_mut().zip(checks) {
            *f += usize::from(!ok);
        }
    }
    names
        .iter()
        .zip(failures)
        .map(|(&name, failures)| SuiteResult { name, cases, failures })
        .collect()
}

/// Central finite differences of `f` at `x` with step `h`.
pub fn finite_difference(p: &LogisticProblem, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = p.smooth_loss(&xp).unwrap();
            xp[i] = orig - h;
            let down = p.smooth_loss(&xp).unwrap();
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Small random logistic instance with a random point to evaluate at.
pub fn small_instance(rng: &mut RngStream, max_n: usize, max_d: usize) -> (LogisticProblem, Vec<f64>) {
    let n = 1 + rng.uniform_index(max_n);
    let d = 1 + rng.uniform_index(max_d);
    let params = SynthesisParams {
        samples: n,
        dim: d,
        density: 0.2 + 0.8 * rng.next_f64(),
        support: rng.uniform_index(d + 1),
        noise: rng.next_f64(),
    };
    let (data, _) = synthesize(&params, rng).unwrap();
    let layout = BlockLayout::even(d, 1 + rng.uniform_index(d.min(4))).unwrap();
    let p = LogisticProblem::new(data, Regularizer::zero(), layout).unwrap();
    let x = vector(rng, d, 1.0);
    (p, x)
}

/// Largest `||fd - grad|| / ||grad||` (absolute when the gradient is 0)
/// over `instances` random problems.
pub fn worst_gradient_error(seed: u64, instances: usize) -> f64 {
    let mut rng = RngStream::for_kind(seed, StreamKind::Audit, 1);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (p, x) = small_instance(&mut rng, 50, 20);
        let g = p.full_gradient(&x).unwrap();
        let fd = finite_difference(&p, &x, 1e-6);
        let err = norm_sq(&diff(&fd, &g)).sqrt();
        let scale = norm_sq(&g).sqrt();
        worst = worst.max(if scale > 0.0 { err / scale } else { err });
    }
    worst
}

/// Largest `|closed form - grid|` over `cases` random 1-D problems per
/// penalty variant.
pub fn worst_prox_grid_gap(seed: u64, cases: usize) -> [f64; 4] {
    let mut rng = RngStream::for_kind(seed, StreamKind::Audit, 2);
    let mut worst = [0.0f64; 4];
    for (variant, w) in worst.iter_mut().enumerate() {
        for _ in 0..cases {
            let pen = random_penalty(&mut rng, variant);
            let eta = 1e-3 + (1.0 - 1e-3) * (1.0 - rng.next_f64());
            let v = 8.0 * rng.next_f64() - 4.0;
            let closed = pen.prox_scalar(eta, v);
            let grid = asyprox::prox::oracle::prox_objective_oracle(pen, eta, v, 5.0, 1e-4).unwrap();
            *w = w.max((closed - grid).abs());
        }
    }
    worst
}

/// The benchmark instance used throughout the acceptance checks:
/// 2000 dense samples in 128 dimensions, 8 blocks, elastic net.
pub fn desk_params() -> SynthesisParams {
    SynthesisParams { samples: 2000, dim: 128, density: 1.0, support: 2, noise: 0.5 }
}

pub fn desk_problem() -> LogisticProblem {
    let mut rng = RngStream::for_kind(1, StreamKind::Synthesis, 0);
    let (data, _) = synthesize(&desk_params(), &mut rng).unwrap();
    LogisticProblem::new(
        data,
        Regularizer::elastic_net(0.1, 0.001).unwrap(),
        BlockLayout::even(128, 8).unwrap(),
    )
    .unwrap()
}

/// Small instance for quick engine checks.
pub fn tiny_problem(seed: u64, blocks: usize) -> LogisticProblem {
    let params = SynthesisParams { samples: 60, dim: 16, density: 0.5, support: 4, noise: 0.3 };
    let (data, _) = synthesize(&params, &mut RngStream::new(seed, 0)).unwrap();
    LogisticProblem::new(
        data,
        Regularizer::elastic_net(0.01, 0.001).unwrap(),
        BlockLayout::even(16, blocks).unwrap(),
    )
    .unwrap()
}

/// Small instance where all `n` single-sample gradients can be enumerated.
pub fn unbiasedness_instance() -> LogisticProblem {
    let params = SynthesisParams { samples: 30, dim: 8, density: 0.6, support: 3, noise: 0.5 };
    let (data, _) = synthesize(&params, &mut RngStream::new(2, 0)).unwrap();
    LogisticProblem::new(data, Regularizer::zero(), BlockLayout::even(8, 2).unwrap()).unwrap()
}

/// Mean of the `n` single-sample gradients, summed in sample order.
pub fn enumerated_mean(p: &LogisticProblem, x: &[f64]) -> Vec<f64> {
    let n = p.data().num_samples();
    let mut acc = vec![0.0; x.len()];
    for i in 0..n {
        for (a, g) in acc.iter_mut().zip(p.sample_gradient(x, i).unwrap()) {
            *a += g;
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}

/// Largest `|mean - target| / se` over the coordinates of block `j`, with
/// the mean taken over `draws` minibatches of size `batch`.
pub fn monte_carlo_block_z(p: &LogisticProblem, x: &[f64], j: usize, draws: usize, batch: usize, seed: u64) -> f64 {
    let full = p.full_gradient(x).unwrap();
    let target = full.block(p.layout(), j);
    let n = p.data().num_samples();
    let mut rng = RngStream::for_kind(seed, StreamKind::Batch, 0);
    let mut sum = vec![0.0; target.len()];
    let mut sum_sq = vec![0.0; target.len()];
    for _ in 0..draws {
        let b = asyprox::data::sample_with_replacement(&mut rng, n, batch).unwrap();
        for (c, g) in p.stochastic_block_gradient(x, &b, j).unwrap().into_iter().enumerate() {
            sum[c] += g;
            sum_sq[c] += g * g;
        }
    }
    let dn = draws as f64;
    (0..target.len())
        .map(|c| {
            let mean = sum[c] / dn;
            let var = (sum_sq[c] / dn - mean * mean) * dn / (dn - 1.0);
            (mean - target[c]).abs() / (var / dn).sqrt()
        })
        .fold(0.0, f64::max)
}
