//! libsvm text I/O, synthetic instance generation, and with-replacement
//! minibatch sampling.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::objective::{SampleBatch, SparseDataset};
use crate::prox::ModelVector;
use crate::rng::RngStream;

fn parse_error<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line,
        column,
        message: message.into(),
    })
}

/// Parses `<label> <idx>:<val> ...` lines with 1-based ascending indices.
///
/// Labels `> 0` become `+1`, everything else `-1` (so both `0/1` and `+-1`
/// files load). Explicit zero values are dropped. Blank lines and lines
/// starting with `#` are skipped. The dimension is `max index` unless
/// `dim_override` is given.
pub fn parse_libsvm(text: &str, dim_override: Option<usize>) -> Result<SparseDataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;

    for (line_no, raw) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim_start();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = tokens_with_columns(line);
        let (label_col, label_tok) = tokens.next().expect("nonblank line has a token");
        let label: f64 = match label_tok.parse() {
            Ok(v) if f64::is_finite(v) => v,
            _ => return parse_error(line_no, label_col, format!("malformed label `{label_tok}`")),
        };

        let mut row = Vec::new();
        let mut prev: Option<usize> = None;
        for (col, tok) in tokens {
            let Some((idx_s, val_s)) = tok.split_once(':') else {
                return parse_error(line_no, col, format!("malformed token `{tok}`, expected index:value"));
            };
            let idx: usize = match idx_s.parse() {
                Ok(i) if i >= 1 => i,
                Ok(_) => return parse_error(line_no, col, "feature indices are 1-based"),
                Err(_) => return parse_error(line_no, col, format!("malformed index `{idx_s}`")),
            };
            let val: f64 = match val_s.parse() {
                Ok(v) if f64::is_finite(v) => v,
                _ => {
                    return parse_error(line_no, col + idx_s.len() + 1, format!("malformed value `{val_s}`"))
                }
            };
            match prev {
                Some(p) if idx == p => return parse_error(line_no, col, format!("duplicate index {idx}")),
                Some(p) if idx < p => {
                    return parse_error(line_no, col, format!("non-ascending index {idx} after {p}"))
                }
                _ => {}
            }
            prev = Some(idx);
            max_index = max_index.max(idx);
            if val != 0.0 {
                row.push((idx - 1, val));
            }
        }
        rows.push(row);
        labels.push(if label > 0.0 { 1.0 } else { -1.0 });
    }

    if rows.is_empty() {
        return parse_error(1, 1, "empty input");
    }
    let dim = match dim_override {
        Some(d) if d < max_index => {
            return invalid(format!("dimension override {d} is smaller than max feature index {max_index}"))
        }
        Some(d) => d,
        None => max_index,
    };
    if dim == 0 {
        return invalid("dataset has no features");
    }
    SparseDataset::from_rows(dim, rows, labels)
}

fn tokens_with_columns(line: &str) -> impl Iterator<Item = (usize, &str)> {
    line.split([' ', '\t'])
        .scan(0usize, |pos, tok| {
            let col = *pos;
            *pos += tok.len() + 1;
            Some((col + 1, tok))
        })
        .filter(|(_, tok)| !tok.is_empty())
}

/// Canonical libsvm text: labels `1`/`-1`, 1-based indices, shortest
/// round-tripping decimal values, one `\n`-terminated line per sample.
pub fn write_libsvm(data: &SparseDataset) -> String {
    let mut out = String::new();
    for i in 0..data.num_samples() {
        out.push_str(if data.label(i) > 0.0 { "1" } else { "-1" });
        let (idx, val) = data.row(i);
        for (&c, &v) in idx.iter().zip(val) {
            write!(out, " {}:{}", c + 1, v).expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Sidecar for a planted model: one `index value` line (1-based) per nonzero.
pub fn write_x_true(x: &[f64]) -> String {
    let mut out = String::new();
    for (i, &v) in x.iter().enumerate().filter(|(_, &v)| v != 0.0) {
        writeln!(out, "{} {}", i + 1, v).expect("writing to a String");
    }
    out
}

pub fn parse_x_true(text: &str, dim: usize) -> Result<ModelVector> {
    let mut x = vec![0.0; dim];
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(i), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return parse_error(line_no, 1, "expected `index value`");
        };
        let i: usize = match i.parse() {
            Ok(i) if i >= 1 && i <= dim => i,
            _ => return parse_error(line_no, 1, format!("bad index `{i}`")),
        };
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Parse { line: line_no, column: 1, message: format!("bad value `{v}`") })?;
        x[i - 1] = v;
    }
    ModelVector::new(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisParams {
    pub samples: usize,
    pub dim: usize,
    /// Fraction of feature positions that are populated, in `(0, 1]`.
    pub density: f64,
    /// Number of nonzeros in the planted model.
    pub support: usize,
    /// Standard deviation of the Gaussian noise added to the margin before
    /// taking its sign.
    pub noise: f64,
}

/// Planted sparse logistic instance: standard normal features at `density`,
/// a `support`-sparse standard normal `x_true`, labels
/// `sign(a_i^T x_true + noise * eps_i)` with `sign(0) = +1`.
pub fn synthesize(params: &SynthesisParams, rng: &mut RngStream) -> Result<(SparseDataset, ModelVector)> {
    let SynthesisParams {
        samples,
        dim,
        density,
        support,
        noise,
    } = *params;
    if samples == 0 || dim == 0 {
        return invalid("synthesize needs n >= 1 and d >= 1");
    }
    if !(density > 0.0 && density <= 1.0) {
        return invalid(format!("density must lie in (0, 1], got {density}"));
    }
    if support > dim {
        return invalid(format!("support {support} exceeds dimension {dim}"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return invalid("noise must be finite and nonnegative");
    }

    let mut perm: Vec<usize> = (0..dim).collect();
    for s in 0..support {
        let pick = s + rng.uniform_index(dim - s);
        perm.swap(s, pick);
    }
    let mut x_true = vec![0.0; dim];
    for &c in &perm[..support] {
        x_true[c] = nonzero_normal(rng);
    }

    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut row = Vec::new();
        let mut margin = 0.0;
        for (c, &xc) in x_true.iter().enumerate() {
            if density >= 1.0 || rng.next_f64() < density {
                let v = nonzero_normal(rng);
                margin += v * xc;
                row.push((c, v));
            }
        }
        let eps = rng.standard_normal();
        let m = margin + noise * eps;
        labels.push(if m >= 0.0 { 1.0 } else { -1.0 });
        rows.push(row);
    }
    Ok((SparseDataset::from_rows(dim, rows, labels)?, ModelVector::new(x_true)?))
}

fn nonzero_normal(rng: &mut RngStream) -> f64 {
    loop {
        let v = rng.standard_normal();
        if v != 0.0 {
            return v;
        }
    }
}

/// `N` i.i.d. uniform indices in `0..n`.
pub fn sample_with_replacement(rng: &mut RngStream, n: usize, batch_size: usize) -> Result<SampleBatch> {
    if n == 0 {
        return invalid("cannot sample from an empty dataset");
    }
    if batch_size == 0 {
        return invalid("batch size must be at least 1");
    }
    let indices = (0..batch_size).map(|_| rng.uniform_index(n)).collect();
    SampleBatch::new(indices, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_err(text: &str) -> (usize, usize, String) {
        match parse_libsvm(text, None) {
            Err(Error::Parse { line, column, message }) => (line, column, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parses_the_documented_examples() {
        let d = parse_libsvm("1 3:0.5 7:1.0\n", None).unwrap();
        assert_eq!(d.labels(), &[1.0]);
        assert_eq!(d.row(0), (&[2usize, 6][..], &[0.5, 1.0][..]));
        assert_eq!(d.dim(), 7);

        let d = parse_libsvm("0 1:2\n", None).unwrap();
        assert_eq!(d.labels(), &[-1.0]);
        assert_eq!(d.row(0), (&[0usize][..], &[2.0][..]));

        let d = parse_libsvm("-1 2:1\n+1 1:3\n", Some(10)).unwrap();
        assert_eq!(d.labels(), &[-1.0, 1.0]);
        assert_eq!(d.dim(), 10);
    }

    #[test]
    fn reports_line_and_column() {
        let (line, col, msg) = parse_err("1 5:1 3:2\n");
        assert_eq!((line, col), (1, 7));
        assert!(msg.contains("non-ascending index"), "{msg}");

        let (line, _, msg) = parse_err("1 1:1\n\n-1 2:1 2:3\n");
        assert_eq!(line, 3);
        assert!(msg.contains("duplicate index"));

        let (line, col, _) = parse_err("1 1:1\n1 2-3\n");
        assert_eq!((line, col), (2, 3));
        let (_, col, _) = parse_err("1 4:abc\n");
        assert_eq!(col, 5);
        let (_, col, _) = parse_err("yes 1:1\n");
        assert_eq!(col, 1);
        assert!(parse_err("1 0:1\n").2.contains("1-based"));
        assert!(parse_err("").2.contains("empty"));
        assert!(parse_err("\n# only a comment\n").2.contains("empty"));
        assert!(parse_libsvm("1 5:1\n", Some(3)).is_err());
    }

    #[test]
    fn x_true_sidecar_round_trips() {
        let x = [0.0, -1.25, 0.0, 3.0];
        let text = write_x_true(&x);
        assert_eq!(text, "2 -1.25\n4 3\n");
        assert_eq!(parse_x_true(&text, 4).unwrap().as_slice(), &x);
        assert!(parse_x_true("5 1\n", 4).is_err());
    }

    fn params(n: usize, d: usize, density: f64) -> SynthesisParams {
        SynthesisParams {
            samples: n,
            dim: d,
            density,
            support: d.min(2),
            noise: 0.0,
        }
    }

    #[test]
    fn synthesize_is_deterministic_and_dense_when_asked() {
        let p = params(20, 3, 1.0);
        let (a, xa) = synthesize(&p, &mut RngStream::new(7, 0)).unwrap();
        let (b, xb) = synthesize(&p, &mut RngStream::new(7, 0)).unwrap();
        assert_eq!(write_libsvm(&a), write_libsvm(&b));
        assert_eq!(xa, xb);
        for i in 0..a.num_samples() {
            assert_eq!(a.row(i).0.len(), 3);
        }
        assert_eq!(xa.iter().filter(|v| **v != 0.0).count(), 2);
    }

    #[test]
    fn noiseless_labels_are_separated_by_the_planted_model() {
        let p = SynthesisParams { support: 5, ..params(300, 20, 0.5) };
        let (data, x) = synthesize(&p, &mut RngStream::new(3, 1)).unwrap();
        for i in 0..data.num_samples() {
            let m = data.dot(i, &x);
            assert!(data.label(i) * m >= 0.0 || m == 0.0);
        }
    }

    #[test]
    fn synthesize_rejects_bad_parameters() {
        let rng = &mut RngStream::new(0, 0);
        assert!(synthesize(&params(0, 3, 1.0), rng).is_err());
        assert!(synthesize(&params(3, 0, 1.0), rng).is_err());
        assert!(synthesize(&params(3, 3, 0.0), rng).is_err());
        assert!(synthesize(&params(3, 3, 1.5), rng).is_err());
        assert!(synthesize(&SynthesisParams { support: 4, ..params(3, 3, 1.0) }, rng).is_err());
    }

    #[test]
    fn sampling_examples() {
        let mut r = RngStream::new(1, 2);
        assert_eq!(sample_with_replacement(&mut r, 1, 5).unwrap().indices(), &[0; 5]);
        let a = sample_with_replacement(&mut RngStream::at(9, 4, 100), 50, 16).unwrap();
        let b = sample_with_replacement(&mut RngStream::at(9, 4, 100), 50, 16).unwrap();
        assert_eq!(a, b);
        assert!(sample_with_replacement(&mut r, 0, 5).is_err());
    }

    fn dataset_strategy() -> impl Strategy<Value = SparseDataset> {
        (1usize..12, 1usize..8).prop_flat_map(|(d, n)| {
            let row = prop::collection::btree_map(0..d, -1e3..1e3f64, 0..=d);
            (
                Just(d),
                prop::collection::vec(row, n),
                prop::collection::vec(prop::bool::ANY, n),
            )
                .prop_map(|(d, rows, labels)| {
                    let rows = rows
                        .into_iter()
                        .map(|r| r.into_iter().filter(|(_, v)| *v != 0.0).collect())
                        .collect();
                    let labels = labels.into_iter().map(|b| if b { 1.0 } else { -1.0 }).collect();
                    SparseDataset::from_rows(d, rows, labels).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn canonical_text_is_a_fixed_point(data in dataset_strategy()) {
            let text = write_libsvm(&data);
            let parsed = parse_libsvm(&text, Some(data.dim())).unwrap();
            prop_assert_eq!(&parsed, &data);
            prop_assert_eq!(write_libsvm(&parsed), text);
        }
    }
}
