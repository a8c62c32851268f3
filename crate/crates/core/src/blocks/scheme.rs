use serde::Serialize;

use super::{BlockError, LagSpec};

/// How a scheme was constructed; decides which structural invariants apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    /// Minor blocks of length exactly `p`.
    FixedLag,
    /// Closed-form polynomial-growth sequences for sublinear lags.
    Diverging,
    /// User-supplied boundaries.
    Custom,
}

/// Materialized major/minor block boundaries.
///
/// Block `j` (1-based) is the major block `[b_j, a_j - 1]` followed by the
/// minor block `[a_j, b_{j+1} - 1]`. The scheme stores `num_blocks() + 1`
/// major starts so every `c_j` is defined; the final start is the first one
/// beyond the requested horizon.
#[derive(Debug, Clone)]
pub struct BlockScheme {
    start: i64,
    b: Vec<i64>,
    a: Vec<i64>,
    lag: LagSpec,
    kind: SchemeKind,
}

/// Default major-block growth for fixed-lag schemes: `d_j = ceil((j B)^beta)`.
pub const DEFAULT_GROWTH_B: f64 = 1.0;
pub const DEFAULT_GROWTH_BETA: f64 = 0.5;

const MAX_BLOCKS: usize = 200_000_000;

impl BlockScheme {
    /// Builds a scheme from explicit boundaries and checks every invariant.
    ///
    /// `b` must hold one more entry than `a`.
    pub fn from_boundaries(
        start: i64,
        b: Vec<i64>,
        a: Vec<i64>,
        lag: LagSpec,
        kind: SchemeKind,
    ) -> Result<Self, BlockError> {
        let scheme = Self { start, b, a, lag, kind };
        scheme.validate()?;
        Ok(scheme)
    }

    fn validate(&self) -> Result<(), BlockError> {
        let invalid = |j: usize, reason: String| Err(BlockError::InvalidScheme { j, reason });
        if self.a.is_empty() || self.b.len() != self.a.len() + 1 {
            return invalid(0, format!("need b.len() == a.len() + 1 >= 2, got {} and {}", self.b.len(), self.a.len()));
        }
        if self.b[0] != self.start {
            return invalid(1, format!("b_1 = {} differs from the array start {}", self.b[0], self.start));
        }
        if self.kind == SchemeKind::FixedLag {
            if let Some(p) = self.lag.fixed_lag() {
                if self.start != p as i64 + 1 {
                    return invalid(1, format!("fixed-lag schemes start at b_1 = p + 1 = {}", p + 1));
                }
            }
        }
        for j in 1..=self.num_blocks() {
            let (b, a, b_next) = (self.b(j), self.a(j), self.b(j + 1));
            if a <= b {
                return invalid(j, format!("d_j = a_j - b_j = {} < 1", a - b));
            }
            if a > b_next {
                return invalid(j, format!("a_j = {a} exceeds b_(j+1) = {b_next}"));
            }
            let c = b_next - a;
            match (self.kind, self.lag.fixed_lag()) {
                (SchemeKind::FixedLag, Some(p)) if c != p as i64 => {
                    return invalid(j, format!("minor block length c_j = {c} differs from p = {p}"));
                }
                (SchemeKind::Diverging, _) if c < 1 => {
                    return invalid(j, format!("c_j = {c} < 1"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn lag(&self) -> &LagSpec {
        &self.lag
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    /// Number of materialized blocks (major plus following minor).
    pub fn num_blocks(&self) -> usize {
        self.a.len()
    }

    /// Major block start `b_j`, `1 <= j <= num_blocks() + 1`.
    #[inline]
    pub fn b(&self, j: usize) -> i64 {
        self.b[j - 1]
    }

    /// Minor block start `a_j`, `1 <= j <= num_blocks()`.
    #[inline]
    pub fn a(&self, j: usize) -> i64 {
        self.a[j - 1]
    }

    #[inline]
    pub fn c(&self, j: usize) -> i64 {
        self.b(j + 1) - self.a(j)
    }

    #[inline]
    pub fn d(&self, j: usize) -> i64 {
        self.a(j) - self.b(j)
    }

    pub fn major_starts(&self) -> &[i64] {
        &self.b
    }

    pub fn minor_starts(&self) -> &[i64] {
        &self.a
    }

    /// Last index covered by the materialized blocks.
    pub fn covered_through(&self) -> i64 {
        self.b[self.b.len() - 1] - 1
    }

    /// `j_n^(A) = max{j : a_j <= k_n}` (zero if none).
    pub fn minor_block_count(&self, k_n: i64) -> usize {
        self.a.partition_point(|&a| a <= k_n)
    }

    /// `j_n^(B) = max{j : a_j - 1 <= k_n}`, the number of complete major blocks.
    pub fn complete_major_count(&self, k_n: i64) -> usize {
        self.a.partition_point(|&a| a - 1 <= k_n)
    }

    /// Block `j` containing index `k`, with `true` when `k` lies in the major part.
    pub fn locate(&self, k: i64) -> Option<(usize, bool)> {
        if k < self.start || k > self.covered_through() {
            return None;
        }
        let j = self.b.partition_point(|&b| b <= k);
        Some((j, k < self.a(j)))
    }

    /// Stable fingerprint of the boundaries (FNV-1a).
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in std::iter::once(&self.start).chain(&self.b).chain(&self.a) {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }

    /// CSV rendering with header `j,b_j,a_j,c_j,d_j`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,b_j,a_j,c_j,d_j\n");
        for j in 1..=self.num_blocks() {
            out.push_str(&format!("{},{},{},{},{}\n", j, self.b(j), self.a(j), self.c(j), self.d(j)));
        }
        out
    }
}

/// Parameters of the closed-form diverging-lag construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergingParams {
    pub a_scale: f64,
    pub b_scale: f64,
    pub alpha: f64,
    pub beta: f64,
    pub start: i64,
    pub k_max: i64,
}

/// Real-valued running sum held as an exact integer part plus a fractional
/// remainder, so floors and ceilings stay exact far beyond 2^53.
#[derive(Debug, Clone, Copy, Default)]
struct SplitSum {
    int: i128,
    frac: crate::sum::NeumaierSum,
}

impl SplitSum {
    fn add(&mut self, x: f64) {
        let ip = x.floor();
        self.int += ip as i128;
        self.frac.add(x - ip);
    }

    fn floor(&self) -> i128 {
        self.int + self.frac.value().floor() as i128
    }

    fn ceil(&self) -> i128 {
        self.int + self.frac.value().ceil() as i128
    }
}

fn term(scale: f64, exponent: f64, l: usize) -> Result<f64, BlockError> {
    let v = (l as f64 * scale).powf(exponent);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(BlockError::Overflow { j: l })
    }
}

fn to_index(v: i128, j: usize) -> Result<i64, BlockError> {
    i64::try_from(v).map_err(|_| BlockError::Overflow { j })
}

/// Closed-form blocking sequences for sublinear lags:
///
/// `a_j = ceil(sum_{l<=j} (lB)^beta + sum_{l<j} (lA)^alpha) + s` and
/// `b_j = floor(sum_{l<j} {(lB)^beta + (lA)^alpha}) + s`.
///
/// The scheme is materialized through the first `j` with `b_j > k_max`.
/// Requires `alpha < beta` and `gamma < alpha / (1 + beta)` where `gamma`
/// is the order of `lag`.
pub fn build_diverging_blocks(params: DivergingParams, lag: LagSpec) -> Result<BlockScheme, BlockError> {
    let DivergingParams { a_scale, b_scale, alpha, beta, start, k_max } = params;
    for (name, v) in [("A", a_scale), ("B", b_scale), ("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(BlockError::InvalidParameter { name, reason: format!("must be positive, got {v}") });
        }
    }
    if alpha >= beta {
        return Err(BlockError::Constraint(format!("alpha < beta violated: alpha = {alpha}, beta = {beta}")));
    }
    let gamma = lag.order();
    let bound = alpha / (1.0 + beta);
    if gamma >= bound {
        return Err(BlockError::Constraint(format!(
            "gamma < alpha / (1 + beta) violated: gamma = {gamma}, alpha / (1 + beta) = {bound}"
        )));
    }
    if k_max < start {
        return Err(BlockError::HorizonTooShort { start, k_max });
    }

    let s = start as i128;
    // S_{j-1} = sum_{l<j} {(lB)^beta + (lA)^alpha}
    let mut acc = SplitSum::default();
    let mut b = Vec::new();
    let mut a = Vec::new();
    let mut j = 1usize;
    loop {
        let b_j = to_index(acc.floor() + s, j)?;
        b.push(b_j);
        if b_j > k_max && j > 1 {
            break;
        }
        if j > MAX_BLOCKS {
            return Err(BlockError::Overflow { j });
        }
        let major = term(b_scale, beta, j)?;
        let mut with_major = acc;
        with_major.add(major);
        a.push(to_index(with_major.ceil() + s, j)?);
        let minor = term(a_scale, alpha, j)?;
        acc.add(major);
        acc.add(minor);
        j += 1;
    }
    BlockScheme::from_boundaries(start, b, a, lag, SchemeKind::Diverging)
}

/// Fixed-lag scheme: `b_1 = p + 1`, `a_j = b_j + d_j`, `b_{j+1} = a_j + p`,
/// with `d_j = ceil((j B)^beta)` so that `d_j` grows without bound.
pub fn build_fixed_lag_blocks(
    p: usize,
    start: i64,
    k_max: i64,
    growth_b: f64,
    growth_beta: f64,
) -> Result<BlockScheme, BlockError> {
    if start != p as i64 + 1 {
        return Err(BlockError::InvalidParameter {
            name: "s",
            reason: format!("fixed-lag schemes start at s = p + 1 = {}, got {start}", p + 1),
        });
    }
    for (name, v) in [("growth_B", growth_b), ("growth_beta", growth_beta)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(BlockError::InvalidParameter { name, reason: format!("must be positive, got {v}") });
        }
    }
    if k_max < start {
        return Err(BlockError::HorizonTooShort { start, k_max });
    }
    let p_i = p as i64;
    let mut b = vec![start];
    let mut a = Vec::new();
    let mut j = 1usize;
    while *b.last().unwrap() <= k_max {
        if j > MAX_BLOCKS {
            return Err(BlockError::Overflow { j });
        }
        let d = term(growth_b, growth_beta, j)?.ceil();
        if d > i64::MAX as f64 {
            return Err(BlockError::Overflow { j });
        }
        let a_j = b[j - 1].checked_add(d as i64).ok_or(BlockError::Overflow { j })?;
        let b_next = a_j.checked_add(p_i).ok_or(BlockError::Overflow { j })?;
        a.push(a_j);
        b.push(b_next);
        j += 1;
    }
    BlockScheme::from_boundaries(start, b, a, LagSpec::fixed(p), SchemeKind::FixedLag)
}

/// Fixed-lag scheme with the default growth `d_j = ceil(sqrt(j))`.
pub fn default_fixed_lag_blocks(p: usize, k_max: i64) -> Result<BlockScheme, BlockError> {
    build_fixed_lag_blocks(p, p as i64 + 1, k_max, DEFAULT_GROWTH_B, DEFAULT_GROWTH_BETA)
}
