//! Oracle-equivalence and calibration suites, with random instance
//! generators shared by the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::blocks::{
    build_diverging_blocks, build_fixed_lag_blocks, decompose, BlockScheme, DivergingParams, LagSpec, MaProcess,
    SchemeKind, SeriesPath,
};
use crate::brs::{self, AssignmentPolicy, BrsError, LagOneContext, PolicyParams, PotentialBranch, Regime};

/// `Cov(W_{t-1}, W_t | F_{t-2})` formula under test.
pub type CovFormula = dyn Fn(&PotentialBranch, &PotentialBranch, &LagOneContext) -> Result<f64, BrsError> + Sync;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub cases: usize,
    /// Largest discrepancy seen, in the suite's own error measure.
    pub worst: f64,
    pub tolerance: f64,
    /// The first failing instance, if any.
    pub offending: Option<String>,
}

impl SuiteReport {
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("{tag} {}: {} cases, worst {:.3e} (tolerance {:.0e})", self.name, self.cases, self.worst, self.tolerance);
        if let Some(o) = &self.offending {
            s.push_str(&format!("; first failure: {o}"));
        }
        s
    }
}

/// Conditioning state and the two consecutive branches at a time `t >= 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrsInstance {
    pub ctx: LagOneContext,
    pub prev: PotentialBranch,
    pub cur: PotentialBranch,
}

/// Random policy state, probabilities and outcomes. Some instances sit one
/// treatment away from the regime switch so the counterfactual `A_{t-1}`
/// changes the design at `t`.
pub fn random_brs_instance<R: Rng + ?Sized>(rng: &mut R) -> BrsInstance {
    let params = PolicyParams {
        switch_count: rng.random_range(1..=5),
        base_prob: rng.random_range(0.05..0.95),
        low_prob: rng.random_range(0.05..0.95),
    };
    let (count, regime) = match rng.random_range(0..3) {
        0 => (params.switch_count - 1 - rng.random_range(0..params.switch_count.min(2)), Regime::Pre),
        1 => (params.switch_count + rng.random_range(0..5), Regime::Even),
        _ => (params.switch_count + rng.random_range(0..5), Regime::Odd),
    };
    let policy = AssignmentPolicy::with_state(params, count, regime).expect("valid parameters");
    let t = rng.random_range(3..1000u64);
    let a_prev_prev = rng.random_range(0..2u8);
    let ctx = LagOneContext { t, policy, a_prev_prev, prob_prev_prev: rng.random_range(0.05..0.95) };
    let mut outcomes = || {
        let mut y = [[0.0; 2]; 2];
        for row in y.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-3.0..10.0);
            }
        }
        y
    };
    let (y_prev, y_cur) = (outcomes(), outcomes());
    let prev = PotentialBranch { t: t - 1, y: y_prev, realized_prev: a_prev_prev, realized_cur: rng.random_range(0..2) };
    let cur = PotentialBranch { t, y: y_cur, realized_prev: rng.random_range(0..2), realized_cur: rng.random_range(0..2) };
    BrsInstance { ctx, prev, cur }
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub const MOMENT_RTOL: f64 = 1e-10;
pub const MEAN_ATOL: f64 = 1e-12;
pub const DECOMPOSITION_RTOL: f64 = 1e-12;

/// `var_w` and `cov` against enumeration of the four treatment paths.
pub fn moment_oracle_suite(instances: usize, seed: u64, cov: &CovFormula) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut offending = None;
    for i in 0..instances {
        let inst = random_brs_instance(&mut rng);
        let result = (|| {
            let exact = brs::enumerate_moments(&inst.prev, &inst.cur, &inst.ctx)?;
            let v = brs::var_w(&inst.cur, &inst.ctx)?;
            let c = cov(&inst.prev, &inst.cur, &inst.ctx)?;
            Ok::<_, BrsError>((relative(v, exact.var_w_cur), relative(c, exact.cov), v, c, exact))
        })();
        match result {
            Ok((ev, ec, v, c, exact)) => {
                worst = worst.max(ev).max(ec);
                if (ev > MOMENT_RTOL || ec > MOMENT_RTOL) && offending.is_none() {
                    offending = Some(format!(
                        "instance {i}: var {v:.12e} vs {:.12e}, cov {c:.12e} vs {:.12e}; {inst:?}",
                        exact.var_w_cur, exact.cov
                    ));
                }
            }
            Err(e) => {
                worst = f64::INFINITY;
                offending.get_or_insert_with(|| format!("instance {i}: {e}"));
            }
        }
    }
    SuiteReport {
        name: "moment_oracle".into(),
        passed: offending.is_none(),
        cases: instances,
        worst,
        tolerance: MOMENT_RTOL,
        offending,
    }
}

/// `cov_w` with the sign of its `tau_t` term flipped; must fail the oracle suite.
pub fn sign_flipped_cov(prev: &PotentialBranch, cur: &PotentialBranch, ctx: &LagOneContext) -> Result<f64, BrsError> {
    let c = brs::cov_w(prev, cur, ctx)?;
    let s = if ctx.a_prev_prev == 1 { 1.0 } else { -1.0 };
    let y = &prev.y[ctx.a_prev_prev as usize];
    let tau_part = -brs::tau_t(cur) * s / (2.0 * ctx.prob_prev_prev) * (y[0] + y[1]);
    Ok(c - 2.0 * tau_part)
}

/// `E(W_t | F_{t-2}) = 0` by enumeration, and `E(W_t | F_{t-3}) = 0`.
pub fn unbiasedness_suite(instances: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut offending = None;
    for i in 0..instances {
        let inst = random_brs_instance(&mut rng);
        let mut y3 = [[[0.0; 2]; 2]; 2];
        y3[0] = inst.cur.y;
        y3[1] = inst.prev.y;
        let t = inst.ctx.t.max(4);
        let result = brs::enumerate_moments(&inst.prev, &inst.cur, &inst.ctx).and_then(|m| {
            let three = brs::mean_w_given_three_back(&y3, &inst.ctx.policy, inst.ctx.a_prev_prev, t)?;
            Ok(m.mean_w_cur.abs().max(three.abs()))
        });
        match result {
            Ok(e) => {
                worst = worst.max(e);
                if e > MEAN_ATOL && offending.is_none() {
                    offending = Some(format!("instance {i}: |E(W_t | F)| = {e:.3e}; {inst:?}"));
                }
            }
            Err(e) => {
                worst = f64::INFINITY;
                offending.get_or_insert_with(|| format!("instance {i}: {e}"));
            }
        }
    }
    SuiteReport {
        name: "conditional_unbiasedness".into(),
        passed: offending.is_none(),
        cases: instances,
        worst,
        tolerance: MEAN_ATOL,
        offending,
    }
}

/// A random fixed-lag, diverging or hand-built scheme.
pub fn random_scheme<R: Rng + ?Sized>(rng: &mut R) -> BlockScheme {
    match rng.random_range(0..3) {
        0 => {
            let p = rng.random_range(0..4);
            let k_max = rng.random_range(p as i64 + 1..400);
            build_fixed_lag_blocks(p, p as i64 + 1, k_max, rng.random_range(0.3..3.0), rng.random_range(0.2..1.5))
                .expect("valid fixed-lag parameters")
        }
        1 => {
            let alpha = rng.random_range(0.3..1.5);
            let beta = alpha + rng.random_range(0.1..1.5);
            let start = rng.random_range(1..6);
            // (lA)^alpha >= 2 keeps every minor block nonempty after rounding
            let params = DivergingParams {
                a_scale: 2f64.powf(1.0 / alpha) * rng.random_range(1.0..2.0),
                b_scale: rng.random_range(0.3..3.0),
                alpha,
                beta,
                start,
                k_max: start + rng.random_range(0..400),
            };
            build_diverging_blocks(params, LagSpec::fixed(0)).expect("valid diverging parameters")
        }
        _ => {
            let start = rng.random_range(1..6i64);
            let blocks = rng.random_range(1..25);
            let mut b = vec![start];
            let mut a = Vec::new();
            for _ in 0..blocks {
                let a_j = b.last().unwrap() + rng.random_range(1..8);
                a.push(a_j);
                b.push(a_j + rng.random_range(0..5));
            }
            BlockScheme::from_boundaries(start, b, a, LagSpec::fixed(0), SchemeKind::Custom).expect("valid boundaries")
        }
    }
}

/// A random path covering a prefix of `scheme`, of dimension 1 to 3.
pub fn random_path<R: Rng + ?Sized>(rng: &mut R, scheme: &BlockScheme) -> SeriesPath {
    let max_len = (scheme.covered_through() - scheme.start() + 1) as usize;
    let len = rng.random_range(1..=max_len);
    let dim = rng.random_range(1..=3);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let shift = if rng.random_bool(0.3) { rng.random_range(-5.0..5.0) * scale } else { 0.0 };
    let values = (0..len * dim).map(|_| shift + scale * rng.sample::<f64, _>(StandardNormal)).collect();
    SeriesPath::vector(scheme.start(), dim, values).expect("consistent dimensions")
}

/// `S_A + S_B + S_C = S_n` relative to `sum |X_k|`.
pub fn decomposition_suite(pairs: usize, seed: u64) -> (SuiteReport, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut offending = None;
    let mut incomplete = 0;
    for i in 0..pairs {
        let scheme = random_scheme(&mut rng);
        let path = random_path(&mut rng, &scheme);
        match decompose(&path, &scheme) {
            Ok(d) => {
                if d.has_incomplete_block(&scheme) {
                    incomplete += 1;
                }
                let dim = path.dim();
                for c in 0..dim {
                    let abs: f64 = path.values().iter().skip(c).step_by(dim).map(|x| x.abs()).sum();
                    let err = (d.s_a[c] + d.s_b[c] + d.s_c[c] - d.s_n[c]).abs() / abs.max(f64::MIN_POSITIVE);
                    worst = worst.max(err);
                    if err > DECOMPOSITION_RTOL && offending.is_none() {
                        offending = Some(format!("pair {i}, coordinate {c}: relative error {err:.3e}"));
                    }
                }
            }
            Err(e) => {
                worst = f64::INFINITY;
                offending.get_or_insert_with(|| format!("pair {i}: {e}"));
            }
        }
    }
    let report = SuiteReport {
        name: "decomposition_identity".into(),
        passed: offending.is_none() && incomplete > 0,
        cases: pairs,
        worst,
        tolerance: DECOMPOSITION_RTOL,
        offending,
    };
    (report, incomplete)
}

/// Sample variance and lag-1 autocovariance of a scalar MA(1) path against
/// `1 + theta^2` and `theta`, within 4 batch-means standard errors.
pub fn ma1_moments_suite(theta: f64, n: usize, seed: u64) -> SuiteReport {
    let process = MaProcess::scalar(&[1.0, theta]).expect("scalar MA(1)");
    let x = process.simulate(n, seed).expect("n > 1").values().to_vec();
    let targets = [1.0 + theta * theta, theta];
    let mut worst: f64 = 0.0;
    let mut offending = None;
    for (lag, target) in targets.iter().enumerate() {
        let prods: Vec<f64> = (lag..x.len()).map(|k| x[k] * x[k - lag]).collect();
        let batches = 100;
        let size = prods.len() / batches;
        let means: Vec<f64> = prods.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
        let m = means.iter().sum::<f64>() / batches as f64;
        let se = (means.iter().map(|b| (b - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0) / batches as f64).sqrt();
        let z = (m - target).abs() / se;
        worst = worst.max(z);
        if z > 4.0 && offending.is_none() {
            offending = Some(format!("lag {lag}: sample {m:.5} vs {target:.5} ({z:.2} SE)"));
        }
    }
    SuiteReport { name: "ma1_moments".into(), passed: offending.is_none(), cases: 2, worst, tolerance: 4.0, offending }
}

/// Every suite with the production formulas.
pub fn verify_all(seed: u64) -> Vec<SuiteReport> {
    vec![
        moment_oracle_suite(1000, seed, &brs::cov_w),
        unbiasedness_suite(1000, seed.wrapping_add(1)),
        decomposition_suite(10_000, seed.wrapping_add(2)).0,
        ma1_moments_suite(0.6, 200_000, seed.wrapping_add(3)),
    ]
}
