//! Simulation and inference for lag martingale difference arrays.
//!
//! * [`blocks`]: Bernstein blocking schemes and partial-sum decomposition.
//! * [`variance`]: block and aggregate conditional-variance estimators.
//! * [`brs`]: the lag-1 dynamic causal effect, its inverse-probability
//!   estimator and closed-form conditional moments.
//! * [`simulate`]: the Monte Carlo study built on top of them.
//! * [`stats`]: KS and t tests, two-component Gaussian mixtures, KDE.
//! * [`checks`] and [`verify`]: reference bands for a study and oracle suites.

pub mod blocks;
pub mod brs;
pub mod checks;
pub mod simulate;
pub mod stats;
pub mod sum;
pub mod variance;
pub mod verify;
