//! Sparse logistic regression: the smooth loss `f`, its full and minibatch
//! gradients, and estimators for the constants the step-size conditions
//! consume (Lipschitz constants and gradient variance).

use crate::error::{invalid, Result};
use crate::prox::{ensure_finite, BlockLayout, ModelVector, Regularizer};
use crate::rng::RngStream;

/// CSR-encoded samples `a_i` with labels `b_i in {-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDataset {
    dim: usize,
    row_ptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    labels: Vec<f64>,
}

impl SparseDataset {
    /// Builds a dataset from per-row `(index, value)` lists (0-based,
    /// strictly increasing, nonzero finite values).
    pub fn from_rows(dim: usize, rows: Vec<Vec<(usize, f64)>>, labels: Vec<f64>) -> Result<Self> {
        if rows.len() != labels.len() {
            return invalid(format!("{} rows but {} labels", rows.len(), labels.len()));
        }
        if let Some(i) = labels.iter().position(|&b| b != 1.0 && b != -1.0) {
            return invalid(format!("label of row {i} is {}, expected +1 or -1", labels[i]));
        }
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (r, row) in rows.into_iter().enumerate() {
            let mut prev: Option<usize> = None;
            for (idx, val) in row {
                if idx >= dim {
                    return invalid(format!("row {r}: feature index {idx} >= dimension {dim}"));
                }
                if prev.is_some_and(|p| idx <= p) {
                    return invalid(format!("row {r}: feature indices not strictly increasing"));
                }
                if !val.is_finite() || val == 0.0 {
                    return invalid(format!("row {r}: feature {idx} has value {val}"));
                }
                prev = Some(idx);
                indices.push(idx);
                values.push(val);
            }
            row_ptr.push(indices.len());
        }
        Ok(Self {
            dim,
            row_ptr,
            indices,
            values,
            labels,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    /// `a_i^T x`, accumulated in row order.
    #[inline]
    pub fn dot(&self, i: usize, x: &[f64]) -> f64 {
        let (idx, val) = self.row(i);
        let mut m = 0.0;
        for (&c, &v) in idx.iter().zip(val) {
            m += v * x[c];
        }
        m
    }
}

/// `N` sample indices, duplicates allowed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleBatch(Vec<usize>);

impl SampleBatch {
    pub fn new(indices: Vec<usize>, num_samples: usize) -> Result<Self> {
        if indices.is_empty() {
            return invalid("a sample batch needs at least one index");
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= num_samples) {
            return invalid(format!("sample index {i} out of range for {num_samples} samples"));
        }
        Ok(Self(indices))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `log(1 + exp(-t))` without overflow.
#[inline]
pub fn logistic_loss(t: f64) -> f64 {
    if t >= 0.0 {
        (-t).exp().ln_1p()
    } else {
        -t + t.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `d/dm log(1 + exp(-b m)) = -b * sigmoid(-b m)`.
#[inline]
pub fn loss_derivative(b: f64, margin: f64) -> f64 {
    -b * sigmoid(-b * margin)
}

/// Sparse logistic regression `Psi(x) = f(x) + h(x)` with `h` separable over
/// `layout`.
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    data: SparseDataset,
    reg: Regularizer,
    layout: BlockLayout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveValue {
    pub f: f64,
    pub h: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzEstimate {
    pub l: f64,
    pub l_max: f64,
    /// The design matrix is identically zero; `l` and `l_max` are a floor.
    pub degenerate: bool,
}

const POWER_ITERATIONS: usize = 20;
const LIPSCHITZ_INFLATION: f64 = 1.1;
const DEGENERATE_LIPSCHITZ: f64 = 1e-12;

impl LogisticProblem {
    pub fn new(data: SparseDataset, reg: Regularizer, layout: BlockLayout) -> Result<Self> {
        if layout.total_dim() != data.dim() {
            return invalid(format!(
                "layout covers {} coordinates, dataset has {} features",
                layout.total_dim(),
                data.dim()
            ));
        }
        if data.num_samples() == 0 {
            return invalid("dataset has no samples");
        }
        reg.check_layout(&layout)?;
        Ok(Self { data, reg, layout })
    }

    pub fn data(&self) -> &SparseDataset {
        &self.data
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.reg
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Same data and regularizer over a different block partition.
    pub fn with_layout(&self, layout: BlockLayout) -> Result<Self> {
        Self::new(self.data.clone(), self.reg.clone(), layout)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return invalid(format!("x has {} entries, problem dimension is {}", x.len(), self.dim()));
        }
        ensure_finite(x, "x")
    }

    /// `f(x) = (1/n) sum_i log(1 + exp(-b_i a_i^T x))`.
    pub fn smooth_loss(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let n = self.data.num_samples();
        let mut total = 0.0;
        for i in 0..n {
            total += logistic_loss(self.data.label(i) * self.data.dot(i, x));
        }
        Ok(total / n as f64)
    }

    pub fn full_objective(&self, x: &[f64]) -> Result<ObjectiveValue> {
        let f = self.smooth_loss(x)?;
        let h = self.reg.value(x)?;
        Ok(ObjectiveValue { f, h, psi: f + h })
    }

    /// `grad f(x)`; the regularizer is not included.
    pub fn full_gradient(&self, x: &[f64]) -> Result<ModelVector> {
        self.check_dim(x)?;
        let n = self.data.num_samples();
        let mut g = vec![0.0; self.dim()];
        for i in 0..n {
            let coef = loss_derivative(self.data.label(i), self.data.dot(i, x));
            let (idx, val) = self.data.row(i);
            for (&c, &v) in idx.iter().zip(val) {
                g[c] += coef * v;
            }
        }
        for gc in &mut g {
            *gc /= n as f64;
        }
        ModelVector::new(g)
    }

    /// `grad F(x; i)` for a single sample, as a dense vector.
    pub fn sample_gradient(&self, x: &[f64], i: usize) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        if i >= self.data.num_samples() {
            return invalid(format!("sample index {i} out of range"));
        }
        let mut g = vec![0.0; self.dim()];
        let coef = loss_derivative(self.data.label(i), self.data.dot(i, x));
        let (idx, val) = self.data.row(i);
        for (&c, &v) in idx.iter().zip(val) {
            g[c] += coef * v;
        }
        Ok(g)
    }

    fn check_batch(&self, batch: &SampleBatch) -> Result<()> {
        let n = self.data.num_samples();
        if batch.is_empty() {
            return invalid("empty batch");
        }
        if let Some(&i) = batch.indices().iter().find(|&&i| i >= n) {
            return invalid(format!("sample index {i} out of range for {n} samples"));
        }
        Ok(())
    }

    /// Block `j` of `(1/N) sum_{i in batch} grad F(x_hat; xi_i)`.
    pub fn stochastic_block_gradient(&self, x_hat: &[f64], batch: &SampleBatch, j: usize) -> Result<Vec<f64>> {
        self.check_dim(x_hat)?;
        self.layout.check_block(j)?;
        self.check_batch(batch)?;
        Ok(self.block_gradient_unchecked(x_hat, batch.indices(), self.layout.range(j)))
    }

    /// Full minibatch gradient `(1/N) sum_{i in batch} grad F(x; xi_i)`.
    pub fn stochastic_gradient(&self, x: &[f64], batch: &SampleBatch) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.check_batch(batch)?;
        Ok(self.block_gradient_unchecked(x, batch.indices(), 0..self.dim()))
    }

    /// Shared kernel behind every minibatch gradient: per-sample margins use
    /// the whole row, accumulation is restricted to `cols`, division by `N`
    /// happens last.
    pub(crate) fn block_gradient_unchecked(
        &self,
        x: &[f64],
        batch: &[usize],
        cols: std::ops::Range<usize>,
    ) -> Vec<f64> {
        let offset = cols.start;
        let mut out = vec![0.0; cols.len()];
        for &i in batch {
            let coef = loss_derivative(self.data.label(i), self.data.dot(i, x));
            let (idx, val) = self.data.row(i);
            let lo = idx.partition_point(|&c| c < cols.start);
            let hi = idx.partition_point(|&c| c < cols.end);
            for (&c, &v) in idx[lo..hi].iter().zip(&val[lo..hi]) {
                out[c - offset] += coef * v;
            }
        }
        let count = batch.len() as f64;
        for o in &mut out {
            *o /= count;
        }
        out
    }

    /// Power-iteration Lipschitz bounds for `grad f`: `L = 1.1 * lambda / 4`
    /// with `lambda` the top eigenvalue estimate of `A^T A / n`, and `L_max`
    /// the same over each block's columns (clamped to `L`).
    pub fn estimate_lipschitz(&self) -> LipschitzEstimate {
        let top = self.gram_top_eigenvalue(0..self.dim());
        if top <= 0.0 {
            return LipschitzEstimate {
                l: DEGENERATE_LIPSCHITZ,
                l_max: DEGENERATE_LIPSCHITZ,
                degenerate: true,
            };
        }
        let l = LIPSCHITZ_INFLATION * top / 4.0;
        let block_top = (0..self.layout.num_blocks())
            .map(|j| self.gram_top_eigenvalue(self.layout.range(j)))
            .fold(0.0f64, f64::max);
        let l_max = (LIPSCHITZ_INFLATION * block_top / 4.0).clamp(DEGENERATE_LIPSCHITZ, l);
        LipschitzEstimate {
            l,
            l_max,
            degenerate: false,
        }
    }

    /// Top eigenvalue of `A_S^T A_S / n` for the column range `S`.
    fn gram_top_eigenvalue(&self, cols: std::ops::Range<usize>) -> f64 {
        let n = self.data.num_samples() as f64;
        let width = cols.len();
        let mut v = vec![1.0 / (width as f64).sqrt(); width];
        let mut estimate = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let mut w = vec![0.0; width];
            for i in 0..self.data.num_samples() {
                let (idx, val) = self.data.row(i);
                let lo = idx.partition_point(|&c| c < cols.start);
                let hi = idx.partition_point(|&c| c < cols.end);
                let mut m = 0.0;
                for (&c, &a) in idx[lo..hi].iter().zip(&val[lo..hi]) {
                    m += a * v[c - cols.start];
                }
                if m != 0.0 {
                    for (&c, &a) in idx[lo..hi].iter().zip(&val[lo..hi]) {
                        w[c - cols.start] += a * m;
                    }
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt() / n;
            if norm == 0.0 {
                return 0.0;
            }
            estimate = norm;
            let scale = 1.0 / (norm * n);
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi * scale;
            }
        }
        estimate
    }

    /// Monte Carlo estimate of `E ||grad F(x; xi) - grad f(x)||^2` over
    /// single-sample draws.
    pub fn estimate_variance(&self, x: &[f64], trials: usize, rng: &mut RngStream) -> Result<f64> {
        if trials < 2 {
            return invalid("variance estimation needs at least two trials");
        }
        let full = self.full_gradient(x)?;
        let n = self.data.num_samples();
        let mut total = 0.0;
        for _ in 0..trials {
            let i = rng.uniform_index(n);
            total += self.sample_deviation_sq(x, &full, i);
        }
        Ok(total / trials as f64)
    }

    /// `||grad F(x; i) - g||^2`.
    pub(crate) fn sample_deviation_sq(&self, x: &[f64], g: &[f64], i: usize) -> f64 {
        let coef = loss_derivative(self.data.label(i), self.data.dot(i, x));
        let mut diff: Vec<f64> = g.iter().map(|v| -v).collect();
        let (idx, val) = self.data.row(i);
        for (&c, &v) in idx.iter().zip(val) {
            diff[c] += coef * v;
        }
        diff.iter().map(|v| v * v).sum()
    }
}
