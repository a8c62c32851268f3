//! Conditional-variance estimators for lag martingale partial sums.
//!
//! With `V_k = Var(X_k | F_{k-p_k-1})` and `C_{k,l} = Cov(X_k, X_{k-l} | F_{k-p_k-1})`:
//!
//! * per major block: `Psi_nj = sum_{k=b_j}^{a_j-1} [V_k + sum_{l=1}^{min(p_k, k-b_j)} (C_{k,l} + C_{k,l}^T)]`
//! * complete major blocks only: `Psi_n = sum_{j<=j_b} Psi_nj`
//! * every index: `Psi_bar_n = sum_{k=s}^{k_n} [V_k + sum_{l=1}^{min(p_k, k-s)} (C_{k,l} + C_{k,l}^T)]`
//!
//! All sums run in ascending `k` with compensated accumulation.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::blocks::{BlockScheme, LagSpec, MaProcess};
use crate::sum::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ProviderError(pub String);

#[derive(Debug, Error)]
pub enum VarianceError {
    #[error("moment provider failed at k = {k}: {source}")]
    Provider { k: i64, source: ProviderError },
    #[error("block {j} is not materialized (scheme has {available})")]
    BlockNotMaterialized { j: usize, available: usize },
    #[error("horizon k_n = {k_n} is invalid: {reason}")]
    Horizon { k_n: i64, reason: String },
    #[error("provider returned a {got:?} matrix, expected ({dim}, {dim})")]
    Dimension { got: (usize, usize), dim: usize },
}

/// Conditional second moments of a `q`-dimensional lag martingale array.
pub trait CondMomentProvider {
    fn dim(&self) -> usize;
    /// `Var(X_k | F_{k-p_k-1})`.
    fn var_at(&self, k: i64) -> Result<DMatrix<f64>, ProviderError>;
    /// `Cov(X_k, X_{k-l} | F_{k-p_k-1})` for `1 <= l <= p_k`.
    fn cov_at(&self, k: i64, l: usize) -> Result<DMatrix<f64>, ProviderError>;
}

/// Scalar specialization of [`CondMomentProvider`].
pub trait ScalarMomentProvider {
    fn var_at(&self, k: i64) -> Result<f64, ProviderError>;
    fn cov_at(&self, k: i64, l: usize) -> Result<f64, ProviderError>;
}

/// Lifts a scalar provider to 1x1 matrices.
#[derive(Debug, Clone)]
pub struct AsMatrix<P>(pub P);

impl<P: ScalarMomentProvider> CondMomentProvider for AsMatrix<P> {
    fn dim(&self) -> usize {
        1
    }

    fn var_at(&self, k: i64) -> Result<DMatrix<f64>, ProviderError> {
        Ok(DMatrix::from_element(1, 1, self.0.var_at(k)?))
    }

    fn cov_at(&self, k: i64, l: usize) -> Result<DMatrix<f64>, ProviderError> {
        Ok(DMatrix::from_element(1, 1, self.0.cov_at(k, l)?))
    }
}

impl<P: ScalarMomentProvider + ?Sized> ScalarMomentProvider for &P {
    fn var_at(&self, k: i64) -> Result<f64, ProviderError> {
        (**self).var_at(k)
    }

    fn cov_at(&self, k: i64, l: usize) -> Result<f64, ProviderError> {
        (**self).cov_at(k, l)
    }
}

/// Constant moments: `V_k = var`, `C_{k,l} = cov` for every `k, l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantScalarProvider {
    pub var: f64,
    pub cov: f64,
}

impl ScalarMomentProvider for ConstantScalarProvider {
    fn var_at(&self, _k: i64) -> Result<f64, ProviderError> {
        Ok(self.var)
    }

    fn cov_at(&self, _k: i64, _l: usize) -> Result<f64, ProviderError> {
        Ok(self.cov)
    }
}

/// Tabulated scalar moments starting at index `start`; `cov[l - 1][i]` holds
/// `C_{start+i, l}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedScalarProvider {
    pub start: i64,
    pub var: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl TabulatedScalarProvider {
    fn index(&self, k: i64, len: usize) -> Result<usize, ProviderError> {
        let i = k - self.start;
        if i < 0 || i as usize >= len {
            return Err(ProviderError(format!("index {k} outside the table [{}, {})", self.start, self.start + len as i64)));
        }
        Ok(i as usize)
    }
}

impl ScalarMomentProvider for TabulatedScalarProvider {
    fn var_at(&self, k: i64) -> Result<f64, ProviderError> {
        Ok(self.var[self.index(k, self.var.len())?])
    }

    fn cov_at(&self, k: i64, l: usize) -> Result<f64, ProviderError> {
        let col = l
            .checked_sub(1)
            .and_then(|i| self.cov.get(i))
            .ok_or_else(|| ProviderError(format!("no covariance table for lag {l}")))?;
        Ok(col[self.index(k, col.len())?])
    }
}

/// Exact conditional moments of a moving-average process.
#[derive(Debug, Clone)]
pub struct MaMoments {
    autocov: Vec<DMatrix<f64>>,
}

impl MaMoments {
    pub fn new(process: &MaProcess) -> Self {
        Self { autocov: (0..=process.lag()).map(|l| process.autocov(l)).collect() }
    }
}

impl CondMomentProvider for MaMoments {
    fn dim(&self) -> usize {
        self.autocov[0].nrows()
    }

    fn var_at(&self, _k: i64) -> Result<DMatrix<f64>, ProviderError> {
        Ok(self.autocov[0].clone())
    }

    fn cov_at(&self, _k: i64, l: usize) -> Result<DMatrix<f64>, ProviderError> {
        self.autocov
            .get(l)
            .cloned()
            .ok_or_else(|| ProviderError(format!("lag {l} exceeds the MA order {}", self.autocov.len() - 1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PsiKind {
    PerBlock { j: usize },
    MajorOnly,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiEstimate {
    pub matrix: DMatrix<f64>,
    pub kind: PsiKind,
    pub k_n: i64,
    /// Fingerprint of the scheme used, if any.
    pub scheme_id: Option<u64>,
    /// Set when the estimate is asymmetric or not positive semidefinite.
    pub warning: Option<String>,
}

impl PsiEstimate {
    fn new(matrix: DMatrix<f64>, kind: PsiKind, k_n: i64, scheme_id: Option<u64>) -> Self {
        let warning = psd_warning(&matrix);
        Self { matrix, kind, k_n, scheme_id, warning }
    }

    /// The 1x1 value (first entry for larger matrices).
    pub fn scalar(&self) -> f64 {
        self.matrix[(0, 0)]
    }

    /// Row-major CSV with header `row,col,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,value\n");
        for r in 0..self.matrix.nrows() {
            for c in 0..self.matrix.ncols() {
                out.push_str(&format!("{r},{c},{:.16e}\n", self.matrix[(r, c)]));
            }
        }
        out
    }
}

fn psd_warning(m: &DMatrix<f64>) -> Option<String> {
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let asym = (m - m.transpose()).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Some(format!("asymmetric estimate (max |M - M^T| = {asym:e})"));
    }
    if m.nrows() == 1 {
        return (m[(0, 0)] < 0.0).then(|| format!("negative scalar estimate {}", m[(0, 0)]));
    }
    let trace = m.trace().abs();
    let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
    (min_eig < -1e-10 * trace).then(|| format!("estimate not positive semidefinite (min eigenvalue {min_eig:e})"))
}

struct MatrixSum {
    dim: usize,
    parts: Vec<NeumaierSum>,
}

impl MatrixSum {
    fn zeros(dim: usize) -> Self {
        Self { dim, parts: vec![NeumaierSum::new(); dim * dim] }
    }

    fn add(&mut self, m: &DMatrix<f64>) {
        for (acc, &v) in self.parts.iter_mut().zip(m.iter()) {
            acc.add(v);
        }
    }

    fn value(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(self.dim, self.dim, self.parts.iter().map(NeumaierSum::value))
    }
}

fn checked_dim(m: DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>, VarianceError> {
    if m.shape() != (dim, dim) {
        return Err(VarianceError::Dimension { got: m.shape(), dim });
    }
    Ok(m)
}

/// `V_k + sum_{l=1}^{min(p_k, k - window_start)} (C_{k,l} + C_{k,l}^T)`.
fn term_at<P: CondMomentProvider + ?Sized>(
    provider: &P,
    lag: &LagSpec,
    k: i64,
    window_start: i64,
) -> Result<DMatrix<f64>, VarianceError> {
    let dim = provider.dim();
    let wrap = |source| VarianceError::Provider { k, source };
    let mut term = checked_dim(provider.var_at(k).map_err(wrap)?, dim)?;
    let max_l = (lag.lag_at(k) as i64).min(k - window_start).max(0) as usize;
    for l in 1..=max_l {
        let c = checked_dim(provider.cov_at(k, l).map_err(wrap)?, dim)?;
        term += &c + c.transpose();
    }
    Ok(term)
}

fn scalar_term_at<P: ScalarMomentProvider + ?Sized>(
    provider: &P,
    lag: &LagSpec,
    k: i64,
    window_start: i64,
) -> Result<f64, VarianceError> {
    let wrap = |source| VarianceError::Provider { k, source };
    let mut term = provider.var_at(k).map_err(wrap)?;
    let max_l = (lag.lag_at(k) as i64).min(k - window_start).max(0) as usize;
    for l in 1..=max_l {
        let c = provider.cov_at(k, l).map_err(wrap)?;
        term += c + c;
    }
    Ok(term)
}

fn check_block(scheme: &BlockScheme, j: usize) -> Result<(), VarianceError> {
    if j == 0 || j > scheme.num_blocks() {
        return Err(VarianceError::BlockNotMaterialized { j, available: scheme.num_blocks() });
    }
    Ok(())
}

fn complete_blocks(scheme: &BlockScheme, k_n: i64) -> Result<usize, VarianceError> {
    if k_n < scheme.a(1) - 1 {
        return Err(VarianceError::Horizon { k_n, reason: format!("ends before the first major block ends at {}", scheme.a(1) - 1) });
    }
    if k_n > scheme.covered_through() {
        return Err(VarianceError::Horizon { k_n, reason: format!("beyond the scheme horizon {}", scheme.covered_through()) });
    }
    Ok(scheme.complete_major_count(k_n))
}

fn block_sum<P: CondMomentProvider + ?Sized>(provider: &P, scheme: &BlockScheme, j: usize, acc: &mut MatrixSum) -> Result<(), VarianceError> {
    let b = scheme.b(j);
    for k in b..scheme.a(j) {
        acc.add(&term_at(provider, scheme.lag(), k, b)?);
    }
    Ok(())
}

fn scalar_block_sum<P: ScalarMomentProvider + ?Sized>(
    provider: &P,
    scheme: &BlockScheme,
    j: usize,
    acc: &mut NeumaierSum,
) -> Result<(), VarianceError> {
    let b = scheme.b(j);
    for k in b..scheme.a(j) {
        acc.add(scalar_term_at(provider, scheme.lag(), k, b)?);
    }
    Ok(())
}

/// `Psi_nj` for major block `j`; lags are cut at `k - b_j` so no covariance
/// reaches across the block boundary.
pub fn psi_block<P: CondMomentProvider + ?Sized>(provider: &P, scheme: &BlockScheme, j: usize) -> Result<PsiEstimate, VarianceError> {
    check_block(scheme, j)?;
    let mut acc = MatrixSum::zeros(provider.dim());
    block_sum(provider, scheme, j, &mut acc)?;
    Ok(PsiEstimate::new(acc.value(), PsiKind::PerBlock { j }, scheme.a(j) - 1, Some(scheme.fingerprint())))
}

/// `Psi_n`: the sum of `Psi_nj` over complete major blocks through `k_n`.
pub fn psi_major<P: CondMomentProvider + ?Sized>(provider: &P, scheme: &BlockScheme, k_n: i64) -> Result<PsiEstimate, VarianceError> {
    let j_b = complete_blocks(scheme, k_n)?;
    let mut acc = MatrixSum::zeros(provider.dim());
    for j in 1..=j_b {
        block_sum(provider, scheme, j, &mut acc)?;
    }
    Ok(PsiEstimate::new(acc.value(), PsiKind::MajorOnly, k_n, Some(scheme.fingerprint())))
}

/// `Psi_bar_n`: every index `s..=k_n` with lags cut at `k - s`.
pub fn psi_bar<P: CondMomentProvider + ?Sized>(provider: &P, lag: &LagSpec, s: i64, k_n: i64) -> Result<PsiEstimate, VarianceError> {
    if k_n < s {
        return Err(VarianceError::Horizon { k_n, reason: format!("precedes the start {s}") });
    }
    let mut acc = MatrixSum::zeros(provider.dim());
    for k in s..=k_n {
        acc.add(&term_at(provider, lag, k, s)?);
    }
    Ok(PsiEstimate::new(acc.value(), PsiKind::Full, k_n, None))
}

pub fn psi_block_scalar<P: ScalarMomentProvider + ?Sized>(provider: &P, scheme: &BlockScheme, j: usize) -> Result<f64, VarianceError> {
    check_block(scheme, j)?;
    let mut acc = NeumaierSum::new();
    scalar_block_sum(provider, scheme, j, &mut acc)?;
    Ok(acc.value())
}

pub fn psi_major_scalar<P: ScalarMomentProvider + ?Sized>(provider: &P, scheme: &BlockScheme, k_n: i64) -> Result<f64, VarianceError> {
    let j_b = complete_blocks(scheme, k_n)?;
    let mut acc = NeumaierSum::new();
    for j in 1..=j_b {
        scalar_block_sum(provider, scheme, j, &mut acc)?;
    }
    Ok(acc.value())
}

pub fn psi_bar_scalar<P: ScalarMomentProvider + ?Sized>(provider: &P, lag: &LagSpec, s: i64, k_n: i64) -> Result<f64, VarianceError> {
    if k_n < s {
        return Err(VarianceError::Horizon { k_n, reason: format!("precedes the start {s}") });
    }
    let mut acc = NeumaierSum::new();
    for k in s..=k_n {
        acc.add(scalar_term_at(provider, lag, k, s)?);
    }
    Ok(acc.value())
}

/// Negligibility of the omitted terms: `||Psi_bar_n - Psi_n||_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VnReport {
    pub frobenius: f64,
    /// `frobenius / ||Psi_bar_n||_F` (NaN when `Psi_bar_n` vanishes).
    pub normalized: f64,
}

impl VnReport {
    fn from_difference(diff: f64, full_norm: f64) -> Self {
        let normalized = if full_norm > 0.0 { diff / full_norm } else { f64::NAN };
        Self { frobenius: diff, normalized }
    }
}

pub fn vn_diagnostic<P: CondMomentProvider + ?Sized>(
    provider: &P,
    scheme: &BlockScheme,
    lag: &LagSpec,
    s: i64,
    k_n: i64,
) -> Result<VnReport, VarianceError> {
    let full = psi_bar(provider, lag, s, k_n)?;
    let major = psi_major(provider, scheme, k_n)?;
    let diff = (&full.matrix - &major.matrix).norm();
    let normalized = if full.matrix.norm() == 0.0 && diff == 0.0 { 0.0 } else { f64::NAN };
    let mut report = VnReport::from_difference(diff, full.matrix.norm());
    if report.normalized.is_nan() {
        report.normalized = normalized;
    }
    Ok(report)
}

pub fn vn_diagnostic_scalar<P: ScalarMomentProvider + ?Sized>(
    provider: &P,
    scheme: &BlockScheme,
    lag: &LagSpec,
    s: i64,
    k_n: i64,
) -> Result<VnReport, VarianceError> {
    let full = psi_bar_scalar(provider, lag, s, k_n)?;
    let major = psi_major_scalar(provider, scheme, k_n)?;
    let mut report = VnReport::from_difference((full - major).abs(), full.abs());
    if full == 0.0 && major == 0.0 {
        report.normalized = 0.0;
    }
    Ok(report)
}
