//! Block-partitioned vectors, separable regularizers and their proximal
//! operators, and the gradient mapping used as the stationarity measure.
//!
//! Every regularizer here is a sum of per-block terms
//! `h(x) = sum_j h_j(x_j)`, and each `h_j` is itself coordinate-separable,
//! so the proximal operator is evaluated coordinate by coordinate in closed
//! form.

use std::ops::{Deref, Range};

use crate::error::{invalid, Result};

/// Partition of a `d`-dimensional vector into `M` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    /// `offsets[j]..offsets[j + 1]` is block `j`; `offsets.len() == M + 1`.
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return invalid("a block layout needs at least one block");
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return invalid(format!("block {j} is empty"));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0usize;
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { offsets })
    }

    /// Near-equal contiguous blocks; the first `d mod M` blocks get one
    /// extra coordinate.
    pub fn even(total_dim: usize, blocks: usize) -> Result<Self> {
        if blocks == 0 || total_dim == 0 {
            return invalid("total_dim and blocks must both be positive");
        }
        if blocks > total_dim {
            return invalid(format!(
                "cannot split {total_dim} coordinates into {blocks} non-empty blocks"
            ));
        }
        let base = total_dim / blocks;
        let extra = total_dim % blocks;
        let sizes: Vec<usize> = (0..blocks)
            .map(|j| base + usize::from(j < extra))
            .collect();
        Self::from_sizes(&sizes)
    }

    pub fn single(total_dim: usize) -> Result<Self> {
        Self::even(total_dim, 1)
    }

    pub fn num_blocks(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total_dim(&self) -> usize {
        *self.offsets.last().expect("layout has offsets")
    }

    pub fn block_size(&self, j: usize) -> usize {
        self.offsets[j + 1] - self.offsets[j]
    }

    pub fn range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn check_block(&self, j: usize) -> Result<()> {
        if j >= self.num_blocks() {
            return invalid(format!(
                "block index {j} out of range for {} blocks",
                self.num_blocks()
            ));
        }
        Ok(())
    }

    /// Block that owns coordinate `i`.
    pub fn block_of(&self, i: usize) -> usize {
        self.offsets.partition_point(|&o| o <= i) - 1
    }
}

/// Dense model vector. Every constructor and every operation in this crate
/// that hands one back guarantees all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector(Vec<f64>);

impl ModelVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        ensure_finite(&values, "model vector")?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn block<'a>(&'a self, layout: &BlockLayout, j: usize) -> &'a [f64] {
        &self.0[layout.range(j)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Wraps values the caller has already checked.
    pub(crate) fn from_finite(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }
}

impl Deref for ModelVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => invalid(format!("{what} has a non-finite entry at index {i}")),
        None => Ok(()),
    }
}

/// One block's convex penalty `h_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Zero,
    /// `lambda1 * ||x||_1`
    L1 { lambda1: f64 },
    /// `lambda2 / 2 * ||x||^2`
    SquaredL2 { lambda2: f64 },
    /// `lambda1 * ||x||_1 + lambda2 / 2 * ||x||^2`
    ElasticNet { lambda1: f64, lambda2: f64 },
}

impl Penalty {
    pub fn validate(&self) -> Result<()> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        let valid = match *self {
            Penalty::Zero => true,
            Penalty::L1 { lambda1 } => ok(lambda1),
            Penalty::SquaredL2 { lambda2 } => ok(lambda2),
            Penalty::ElasticNet { lambda1, lambda2 } => ok(lambda1) && ok(lambda2),
        };
        if valid {
            Ok(())
        } else {
            invalid(format!("penalty coefficients must be finite and nonnegative: {self:?}"))
        }
    }

    fn coefficients(&self) -> (f64, f64) {
        match *self {
            Penalty::Zero => (0.0, 0.0),
            Penalty::L1 { lambda1 } => (lambda1, 0.0),
            Penalty::SquaredL2 { lambda2 } => (0.0, lambda2),
            Penalty::ElasticNet { lambda1, lambda2 } => (lambda1, lambda2),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (l1, l2) = self.coefficients();
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        for &v in x {
            abs_sum += v.abs();
            sq_sum += v * v;
        }
        l1 * abs_sum + 0.5 * l2 * sq_sum
    }

    /// Scalar prox: `argmin_y p(y) + (y - v)^2 / (2 eta)`.
    #[inline]
    pub fn prox_scalar(&self, eta: f64, v: f64) -> f64 {
        match *self {
            Penalty::Zero => v,
            Penalty::L1 { lambda1 } => soft_threshold(v, eta * lambda1),
            Penalty::SquaredL2 { lambda2 } => v / (1.0 + eta * lambda2),
            Penalty::ElasticNet { lambda1, lambda2 } => {
                soft_threshold(v, eta * lambda1) / (1.0 + eta * lambda2)
            }
        }
    }

    /// One coordinate of `(x - prox(x - eta g)) / eta`. With no penalty the
    /// prox is the identity and the mapping is `g` itself.
    #[inline]
    pub fn mapping_scalar(&self, eta: f64, x: f64, g: f64) -> f64 {
        match self {
            Penalty::Zero => g,
            _ => (x - self.prox_scalar(eta, x - eta * g)) / eta,
        }
    }

    /// In-place prox of a gradient step: `x <- prox(x - eta * g)`.
    #[inline]
    pub fn prox_step(&self, eta: f64, x: &mut [f64], g: &[f64]) {
        debug_assert_eq!(x.len(), g.len());
        for (xi, &gi) in x.iter_mut().zip(g) {
            *xi = self.prox_scalar(eta, *xi - eta * gi);
        }
    }
}

/// `sign(v) * max(|v| - t, 0)`; `|v| == t` maps to exactly `0.0`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v.abs() <= t {
        0.0
    } else {
        v - t.copysign(v)
    }
}

/// Separable regularizer `h(x) = sum_j h_j(x_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularizer {
    assignment: Assignment,
}

#[derive(Debug, Clone, PartialEq)]
enum Assignment {
    Uniform(Penalty),
    PerBlock {
        layout: BlockLayout,
        penalties: Vec<Penalty>,
    },
}

impl Regularizer {
    pub fn uniform(penalty: Penalty) -> Result<Self> {
        penalty.validate()?;
        Ok(Self {
            assignment: Assignment::Uniform(penalty),
        })
    }

    pub fn zero() -> Self {
        Self {
            assignment: Assignment::Uniform(Penalty::Zero),
        }
    }

    /// The experiment objective's `lambda1 ||x||_1 + lambda2/2 ||x||^2`.
    pub fn elastic_net(lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::uniform(Penalty::ElasticNet { lambda1, lambda2 })
    }

    pub fn per_block(layout: &BlockLayout, penalties: Vec<Penalty>) -> Result<Self> {
        if penalties.len() != layout.num_blocks() {
            return invalid(format!(
                "{} penalties given for {} blocks",
                penalties.len(),
                layout.num_blocks()
            ));
        }
        for p in &penalties {
            p.validate()?;
        }
        Ok(Self {
            assignment: Assignment::PerBlock {
                layout: layout.clone(),
                penalties,
            },
        })
    }

    /// Penalty applied to block `j` of `layout`. For a per-block regularizer
    /// the layout must be the one it was built with.
    pub fn penalty(&self, j: usize) -> Penalty {
        match &self.assignment {
            Assignment::Uniform(p) => *p,
            Assignment::PerBlock { penalties, .. } => penalties[j],
        }
    }

    /// Checks that this regularizer can be applied blockwise over `layout`.
    pub fn check_layout(&self, layout: &BlockLayout) -> Result<()> {
        match &self.assignment {
            Assignment::Uniform(_) => Ok(()),
            Assignment::PerBlock { layout: own, .. } if own == layout => Ok(()),
            Assignment::PerBlock { .. } => {
                invalid("per-block regularizer used with a different block layout")
            }
        }
    }

    fn segments(&self, dim: usize) -> Result<Vec<(Range<usize>, Penalty)>> {
        match &self.assignment {
            Assignment::Uniform(p) => Ok(vec![(0..dim, *p)]),
            Assignment::PerBlock { layout, penalties } => {
                if layout.total_dim() != dim {
                    return invalid(format!(
                        "regularizer covers {} coordinates, vector has {dim}",
                        layout.total_dim()
                    ));
                }
                Ok((0..layout.num_blocks())
                    .map(|j| (layout.range(j), penalties[j]))
                    .collect())
            }
        }
    }

    /// `h(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self
            .segments(x.len())?
            .into_iter()
            .map(|(r, p)| p.value(&x[r]))
            .sum())
    }

    /// `h_j(x_j)` for one block.
    pub fn block_value(&self, j: usize, xj: &[f64]) -> f64 {
        self.penalty(j).value(xj)
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        invalid(format!("step size must be positive and finite, got {eta}"))
    }
}

/// `prox_{eta h}(v)`.
pub fn prox(reg: &Regularizer, eta: f64, v: &[f64]) -> Result<ModelVector> {
    check_eta(eta)?;
    ensure_finite(v, "prox input")?;
    let mut out = v.to_vec();
    for (range, p) in reg.segments(v.len())? {
        for y in &mut out[range] {
            *y = p.prox_scalar(eta, *y);
        }
    }
    ModelVector::new(out)
}

/// `P(x, g, eta) = (x - prox_{eta h}(x - eta g)) / eta`.
pub fn gradient_mapping(x: &[f64], g: &[f64], eta: f64, reg: &Regularizer) -> Result<ModelVector> {
    check_eta(eta)?;
    if x.len() != g.len() {
        return invalid(format!(
            "dimension mismatch: x has {} entries, g has {}",
            x.len(),
            g.len()
        ));
    }
    ensure_finite(x, "x")?;
    ensure_finite(g, "g")?;
    let mut out = vec![0.0; x.len()];
    for (range, p) in reg.segments(x.len())? {
        for i in range {
            out[i] = p.mapping_scalar(eta, x[i], g[i]);
        }
    }
    ModelVector::new(out)
}

/// `P_j(x, g, eta) = (x_j - prox_{eta h_j}(x_j - eta g_j)) / eta`.
pub fn block_gradient_mapping(
    x: &[f64],
    g: &[f64],
    eta: f64,
    reg: &Regularizer,
    layout: &BlockLayout,
    j: usize,
) -> Result<Vec<f64>> {
    check_eta(eta)?;
    layout.check_block(j)?;
    reg.check_layout(layout)?;
    if x.len() != layout.total_dim() || g.len() != layout.total_dim() {
        return invalid("x and g must both match the layout dimension");
    }
    let p = reg.penalty(j);
    let out: Vec<f64> = layout
        .range(j)
        .map(|i| p.mapping_scalar(eta, x[i], g[i]))
        .collect();
    ensure_finite(&out, "block gradient mapping")?;
    Ok(out)
}

/// Squared Euclidean norm of the gradient mapping.
pub fn gradient_mapping_sq(x: &[f64], g: &[f64], eta: f64, reg: &Regularizer) -> Result<f64> {
    Ok(gradient_mapping(x, g, eta, reg)?
        .iter()
        .map(|v| v * v)
        .sum())
}

pub mod oracle {
    //! Brute-force grid minimizer used to cross-check the closed-form prox.

    use super::Penalty;
    use crate::error::{invalid, Result};

    /// Grid point in `[-halfwidth, halfwidth]` (spacing `step`) minimizing
    /// `p(y) + (y - v)^2 / (2 eta)`.
    pub fn prox_objective_oracle(
        penalty: Penalty,
        eta: f64,
        v: f64,
        halfwidth: f64,
        step: f64,
    ) -> Result<f64> {
        if !(step > 0.0) || !step.is_finite() {
            return invalid("grid step must be positive");
        }
        if !(halfwidth >= 0.0) || !halfwidth.is_finite() {
            return invalid("grid halfwidth must be nonnegative");
        }
        if !(eta > 0.0) {
            return invalid("eta must be positive");
        }
        let points = (2.0 * halfwidth / step).floor() as usize + 1;
        if points == 0 {
            return invalid("empty grid");
        }
        let mut best = (f64::INFINITY, f64::NAN);
        for i in 0..points {
            let y = -halfwidth + i as f64 * step;
            let obj = penalty.value(&[y]) + (y - v) * (y - v) / (2.0 * eta);
            if obj < best.0 {
                best = (obj, y);
            }
        }
        Ok(best.1)
    }
}
