use super::{BlockError, BlockScheme};
use crate::sum::VecSum;

/// A finite adapted array `X_s, ..., X_{k_n}` of `dim`-vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPath {
    start: i64,
    dim: usize,
    values: Vec<f64>,
}

impl SeriesPath {
    pub fn scalar(start: i64, values: Vec<f64>) -> Self {
        Self { start, dim: 1, values }
    }

    pub fn vector(start: i64, dim: usize, values: Vec<f64>) -> Result<Self, BlockError> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(BlockError::Dimension(format!(
                "{} values do not form rows of width {dim}",
                values.len()
            )));
        }
        Ok(Self { start, dim, values })
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last index `k_n`.
    pub fn end(&self) -> i64 {
        self.start + self.len() as i64 - 1
    }

    /// `X_k` as a slice of length `dim`.
    #[inline]
    pub fn at(&self, k: i64) -> &[f64] {
        let i = (k - self.start) as usize * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Truncates to `X_s, ..., X_{k_n}`.
    pub fn truncated(&self, k_n: i64) -> Self {
        let len = (k_n - self.start + 1).clamp(0, self.len() as i64) as usize;
        Self { start: self.start, dim: self.dim, values: self.values[..len * self.dim].to_vec() }
    }

    /// Direct compensated sum over every index.
    pub fn total(&self) -> Vec<f64> {
        let mut acc = VecSum::zeros(self.dim);
        for row in self.values.chunks_exact(self.dim) {
            acc.add(row);
        }
        acc.value()
    }
}

/// Block-sum decomposition `S_n = S_n^(A) + S_n^(B) + S_n^(C)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// `A_nj` for `j = 1..=j_a`, truncated at `k_n`.
    pub minor_sums: Vec<Vec<f64>>,
    /// `B_nj` for the complete major blocks `j = 1..=j_b`.
    pub major_sums: Vec<Vec<f64>>,
    pub s_a: Vec<f64>,
    pub s_b: Vec<f64>,
    /// The incomplete final major block, or zero.
    pub s_c: Vec<f64>,
    /// Direct sum over the whole path.
    pub s_n: Vec<f64>,
    pub j_a: usize,
    pub j_b: usize,
    pub k_n: i64,
}

impl Decomposition {
    /// `true` when the path ends inside a major block (`S_n^(C)` is active).
    pub fn has_incomplete_block(&self, scheme: &BlockScheme) -> bool {
        incomplete_block(scheme, self.j_b, self.k_n)
    }

    /// Largest element-wise `|S_A + S_B + S_C - S_n|`.
    pub fn identity_residual(&self) -> f64 {
        (0..self.s_n.len())
            .map(|i| (self.s_a[i] + self.s_b[i] + self.s_c[i] - self.s_n[i]).abs())
            .fold(0.0, f64::max)
    }
}

/// The case split for `S_n^(C)`: active iff `k_n in [b_{j_b+1}, a_{j_b+1} - 2]`.
fn incomplete_block(scheme: &BlockScheme, j_b: usize, k_n: i64) -> bool {
    let next = j_b + 1;
    next <= scheme.num_blocks() && k_n >= scheme.b(next) && k_n <= scheme.a(next) - 2
}

fn range_sum(path: &SeriesPath, lo: i64, hi: i64) -> Vec<f64> {
    let mut acc = VecSum::zeros(path.dim());
    for k in lo..=hi {
        acc.add(path.at(k));
    }
    acc.value()
}

fn sum_rows(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = VecSum::zeros(dim);
    for r in rows {
        acc.add(r);
    }
    acc.value()
}

/// Splits the partial sum of `path` into minor-block, complete-major-block
/// and incomplete-final-block parts using `min(., k_n)` truncation.
pub fn decompose(path: &SeriesPath, scheme: &BlockScheme) -> Result<Decomposition, BlockError> {
    if path.is_empty() {
        return Err(BlockError::EmptyPath);
    }
    if path.start() != scheme.start() {
        return Err(BlockError::IndexMismatch { path_start: path.start(), scheme_start: scheme.start() });
    }
    let k_n = path.end();
    if k_n > scheme.covered_through() {
        return Err(BlockError::BeyondHorizon { k_n, covered_through: scheme.covered_through() });
    }
    let dim = path.dim();
    let j_a = scheme.minor_block_count(k_n);
    let j_b = scheme.complete_major_count(k_n);

    let minor_sums: Vec<Vec<f64>> = (1..=j_a)
        .map(|j| range_sum(path, scheme.a(j), (scheme.b(j + 1) - 1).min(k_n)))
        .collect();
    let major_sums: Vec<Vec<f64>> = (1..=j_b)
        .map(|j| range_sum(path, scheme.b(j), (scheme.a(j) - 1).min(k_n)))
        .collect();
    let s_c = if incomplete_block(scheme, j_b, k_n) {
        range_sum(path, scheme.b(j_b + 1), k_n)
    } else {
        vec![0.0; dim]
    };

    Ok(Decomposition {
        s_a: sum_rows(&minor_sums, dim),
        s_b: sum_rows(&major_sums, dim),
        s_c,
        s_n: path.total(),
        minor_sums,
        major_sums,
        j_a,
        j_b,
        k_n,
    })
}
