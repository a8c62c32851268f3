//! Tests and density tools used by the study summary.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::sum::NeumaierSum;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty evaluation grid")]
    EmptyGrid,
    #[error("EM did not converge in any of the restarts (best log-likelihood {})", best.log_likelihood)]
    NotConverged { best: Box<Gmm2Fit> },
}

/// Sample mean and standard deviation (`n - 1` denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Describe {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<NeumaierSum>().value() / xs.len() as f64
}

/// Sample variance with `n - 1` denominator; `NaN` for `n < 2`.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).collect::<NeumaierSum>().value() / (xs.len() as f64 - 1.0)
}

pub fn describe(xs: &[f64]) -> Describe {
    let sd = if xs.len() >= 2 { variance(xs).sqrt() } else { f64::NAN };
    Describe { n: xs.len(), mean: if xs.is_empty() { f64::NAN } else { mean(xs) }, sd }
}

fn median_of_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    median_of_sorted(&v)
}

fn all_equal(xs: &[f64]) -> bool {
    xs.iter().all(|&x| x == xs[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// `P(K > x)` for the Kolmogorov limit distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    const TOL: f64 = 1e-16;
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        // Jacobi theta form, fast for small x
        let c = -std::f64::consts::PI.powi(2) / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (c * m * m).exp();
            s += term;
            if term < TOL {
                break;
            }
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0)
    } else {
        let mut s = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            s += if k % 2 == 1 { term } else { -term };
            if term < TOL {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// One-sample KS test of `samples` against `N(mean, sd^2)`.
pub fn ks_gaussian(samples: &[f64], mean: f64, sd: f64) -> Result<KsResult, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
        return Err(StatsError::InvalidParameter(format!("reference N({mean}, {sd}^2)")));
    }
    if all_equal(samples) {
        return Err(StatsError::Degenerate("all samples equal".into()));
    }
    let normal = Normal::new(mean, sd).map_err(|e| StatsError::InvalidParameter(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = normal.cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(nf.sqrt() * d), n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Two-sided one-sample t-test of `E(X) = mu0`.
pub fn t_test_mean(samples: &[f64], mu0: f64) -> Result<TTest, StatsError> {
    let n = samples.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let v = variance(samples);
    if !(v > 0.0) {
        return Err(StatsError::Degenerate("zero sample variance".into()));
    }
    let t = (mean(samples) - mu0) / (v / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| StatsError::InvalidParameter(e.to_string()))?;
    Ok(TTest { statistic: t, p_value: (2.0 * dist.cdf(-t.abs())).min(1.0), n })
}

/// Two-sided t-test of `E(X^2) = 1` on the transformed sample `x^2 - 1`.
pub fn t_test_second_moment(samples: &[f64]) -> Result<TTest, StatsError> {
    let shifted: Vec<f64> = samples.iter().map(|z| z * z - 1.0).collect();
    t_test_mean(&shifted, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm2Fit {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    /// Ascending.
    pub variances: [f64; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Index of the restart that produced this fit.
    pub restart: usize,
    pub bic: f64,
    pub bic_single: f64,
    /// The single Gaussian fits at least as well by BIC.
    pub ambiguous: bool,
}

pub const GMM_RESTARTS: usize = 8;
pub const GMM_MAX_ITER: usize = 2000;
pub const GMM_TOL: f64 = 1e-10;

#[derive(Clone, Copy)]
struct Params {
    w: [f64; 2],
    m: [f64; 2],
    v: [f64; 2],
}

fn log_norm(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m) * (x - m) / v)
}

fn log_likelihood(xs: &[f64], p: &Params) -> f64 {
    let lw = [p.w[0].ln(), p.w[1].ln()];
    xs.iter()
        .map(|&x| {
            let l0 = lw[0] + log_norm(x, p.m[0], p.v[0]);
            let l1 = lw[1] + log_norm(x, p.m[1], p.v[1]);
            let hi = l0.max(l1);
            hi + ((l0 - hi).exp() + (l1 - hi).exp()).ln()
        })
        .collect::<NeumaierSum>()
        .value()
}

/// One EM update; returns the new parameters.
fn em_step(xs: &[f64], p: &Params, var_floor: f64) -> Params {
    let lw = [p.w[0].ln(), p.w[1].ln()];
    let mut r_sum = [NeumaierSum::new(), NeumaierSum::new()];
    let mut rx_sum = [NeumaierSum::new(), NeumaierSum::new()];
    let resp: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let l0 = lw[0] + log_norm(x, p.m[0], p.v[0]);
            let l1 = lw[1] + log_norm(x, p.m[1], p.v[1]);
            1.0 / (1.0 + (l0 - l1).exp())
        })
        .collect();
    for (&x, &r1) in xs.iter().zip(&resp) {
        let r0 = 1.0 - r1;
        r_sum[0].add(r0);
        r_sum[1].add(r1);
        rx_sum[0].add(r0 * x);
        rx_sum[1].add(r1 * x);
    }
    let n = xs.len() as f64;
    let nk = [r_sum[0].value(), r_sum[1].value()];
    let m = [rx_sum[0].value() / nk[0], rx_sum[1].value() / nk[1]];
    let mut rv = [NeumaierSum::new(), NeumaierSum::new()];
    for (&x, &r1) in xs.iter().zip(&resp) {
        rv[0].add((1.0 - r1) * (x - m[0]) * (x - m[0]));
        rv[1].add(r1 * (x - m[1]) * (x - m[1]));
    }
    Params {
        w: [nk[0] / n, nk[1] / n],
        m,
        v: [(rv[0].value() / nk[0]).max(var_floor), (rv[1].value() / nk[1]).max(var_floor)],
    }
}

fn initial_params(xs: &[f64], sorted: &[f64], restart: usize, seed: u64) -> Params {
    let med = median_of_sorted(sorted);
    let total_var = variance(xs);
    if restart == 0 {
        // split at the median absolute deviation into a low and a high variance group
        let mut dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = median_of_sorted(&dev);
        let (inner, outer): (Vec<f64>, Vec<f64>) = xs.iter().partition(|x| (*x - med).abs() <= mad);
        let moments = |g: &[f64]| {
            if g.len() >= 2 && variance(g) > 0.0 {
                (mean(g), variance(g))
            } else {
                (med, total_var)
            }
        };
        let (m0, v0) = moments(&inner);
        let (m1, v1) = moments(&outer);
        let w0 = inner.len() as f64 / xs.len() as f64;
        return Params { w: [w0, 1.0 - w0], m: [m0, m1], v: [v0, v1.max(v0)] };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let sd = total_var.sqrt();
    let w0: f64 = rng.random_range(0.2..0.8);
    let i = rng.random_range(0..xs.len());
    let j = rng.random_range(0..xs.len());
    Params {
        w: [w0, 1.0 - w0],
        m: [xs[i].clamp(med - sd, med + sd), xs[j].clamp(med - sd, med + sd)],
        v: [total_var * rng.random_range(0.05..0.6), total_var * rng.random_range(0.8..2.5)],
    }
}

struct Run {
    params: Params,
    ll: f64,
    iterations: usize,
    converged: bool,
}

fn run_em(xs: &[f64], init: Params, var_floor: f64) -> Run {
    let mut p = init;
    let mut ll = log_likelihood(xs, &p);
    for it in 1..=GMM_MAX_ITER {
        let next = em_step(xs, &p, var_floor);
        let next_ll = log_likelihood(xs, &next);
        assert!(
            next_ll >= ll - 1e-9 * ll.abs().max(1.0),
            "EM log-likelihood decreased from {ll} to {next_ll} at iteration {it}"
        );
        let rel = (next_ll - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        p = next;
        ll = next_ll;
        if rel < GMM_TOL {
            return Run { params: p, ll, iterations: it, converged: true };
        }
    }
    Run { params: p, ll, iterations: GMM_MAX_ITER, converged: false }
}

/// Two-component Gaussian mixture by EM, best of [`GMM_RESTARTS`] restarts.
pub fn gmm2_fit(samples: &[f64]) -> Result<Gmm2Fit, StatsError> {
    gmm2_fit_seeded(samples, 0)
}

pub fn gmm2_fit_seeded(samples: &[f64], seed: u64) -> Result<Gmm2Fit, StatsError> {
    let n = samples.len();
    if n < 10 {
        return Err(StatsError::TooFewSamples { needed: 10, got: n });
    }
    if all_equal(samples) {
        return Err(StatsError::Degenerate("all samples equal".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let total_var = variance(samples);
    let var_floor = total_var * 1e-8;
    let runs: Vec<Run> = (0..GMM_RESTARTS)
        .into_par_iter()
        .map(|r| run_em(samples, initial_params(samples, &sorted, r, seed), var_floor))
        .collect();

    let pick = |want_converged: bool| {
        runs.iter()
            .enumerate()
            .filter(|(_, r)| !want_converged || r.converged)
            .filter(|(_, r)| r.ll.is_finite())
            .fold(None, |best: Option<(usize, &Run)>, (i, r)| match best {
                Some((_, b)) if b.ll >= r.ll => best,
                _ => Some((i, r)),
            })
    };
    let (restart, best) = pick(true).or_else(|| pick(false)).ok_or_else(|| {
        StatsError::Degenerate("EM produced no finite log-likelihood".into())
    })?;

    let mut p = best.params;
    if p.v[0] > p.v[1] {
        p = Params { w: [p.w[1], p.w[0]], m: [p.m[1], p.m[0]], v: [p.v[1], p.v[0]] };
    }
    let nf = n as f64;
    let ll_single = log_likelihood(
        samples,
        &Params { w: [0.5, 0.5], m: [mean(samples); 2], v: [total_var * (nf - 1.0) / nf; 2] },
    );
    let bic = 5.0 * nf.ln() - 2.0 * best.ll;
    let bic_single = 2.0 * nf.ln() - 2.0 * ll_single;
    let fit = Gmm2Fit {
        weights: p.w,
        means: p.m,
        variances: p.v,
        log_likelihood: best.ll,
        iterations: best.iterations,
        converged: best.converged,
        restart,
        bic,
        bic_single,
        ambiguous: bic >= bic_single,
    };
    if fit.converged {
        Ok(fit)
    } else {
        Err(StatsError::NotConverged { best: Box::new(fit) })
    }
}

/// Silverman-type rule `sd * (3n / 4)^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: samples.len() });
    }
    let sd = variance(samples).sqrt();
    if !(sd > 0.0) {
        return Err(StatsError::Degenerate("zero sample variance".into()));
    }
    Ok(sd * (0.75 * samples.len() as f64).powf(-0.2))
}

/// Gaussian-kernel density estimate at `grid` with [`silverman_bandwidth`].
pub fn kde(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>, StatsError> {
    if grid.is_empty() {
        return Err(StatsError::EmptyGrid);
    }
    kde_with_bandwidth(samples, grid, silverman_bandwidth(samples)?)
}

pub fn kde_with_bandwidth(samples: &[f64], grid: &[f64], bandwidth: f64) -> Result<Vec<f64>, StatsError> {
    if grid.is_empty() {
        return Err(StatsError::EmptyGrid);
    }
    if samples.is_empty() {
        return Err(StatsError::TooFewSamples { needed: 1, got: 0 });
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(StatsError::InvalidParameter(format!("bandwidth {bandwidth}")));
    }
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .par_iter()
        .map(|&g| {
            let s: NeumaierSum = samples
                .iter()
                .map(|&x| {
                    let u = (g - x) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .collect();
            s.value() * norm
        })
        .collect())
}
