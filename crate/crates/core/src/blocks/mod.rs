//! Bernstein blocking: lag specifications, major/minor block schemes, the
//! block-sum decomposition of partial sums, finite-horizon diagnostics of the
//! blocking conditions, and a vector moving-average generator for exercising
//! them.

use thiserror::Error;

mod decompose;
mod diagnostics;
mod lag;
mod ma;
mod scheme;

pub use decompose::{decompose, Decomposition, SeriesPath};
pub use diagnostics::{diagnose_conditions, lag_condition_holds, ConditionReport};
pub use lag::{DivergingLag, LagFn, LagSpec};
pub use ma::{generate_ma_process, MaProcess};
pub use scheme::{
    build_diverging_blocks, build_fixed_lag_blocks, default_fixed_lag_blocks, BlockScheme, DivergingParams,
    SchemeKind, DEFAULT_GROWTH_B, DEFAULT_GROWTH_BETA,
};

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("parameter constraint violated: {0}")]
    Constraint(String),
    #[error("index arithmetic overflow at block {j}")]
    Overflow { j: usize },
    #[error("invalid scheme at block {j}: {reason}")]
    InvalidScheme { j: usize, reason: String },
    #[error("horizon k_max = {k_max} precedes the array start {start}")]
    HorizonTooShort { start: i64, k_max: i64 },
    #[error("path starts at {path_start} but the scheme starts at {scheme_start}")]
    IndexMismatch { path_start: i64, scheme_start: i64 },
    #[error("path ends at {k_n}, beyond the materialized scheme (covers through {covered_through})")]
    BeyondHorizon { k_n: i64, covered_through: i64 },
    #[error("empty path")]
    EmptyPath,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lag p_{k} = {p_k} exceeds the order bound {bound}")]
    LagOrder { k: i64, p_k: usize, bound: f64 },
}
