use lagmart::blocks::{build_fixed_lag_blocks, default_fixed_lag_blocks, BlockScheme, LagSpec, MaProcess, SchemeKind};
use lagmart::simulate::{run_replication_traced, SimConfig};
use lagmart::variance::{
    psi_bar, psi_bar_scalar, psi_block, psi_block_scalar, psi_major, psi_major_scalar, vn_diagnostic_scalar, AsMatrix,
    MaMoments, ScalarMomentProvider, TabulatedScalarProvider,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_moments(rng: &mut ChaCha8Rng, start: i64, len: usize, p: usize) -> TabulatedScalarProvider {
    TabulatedScalarProvider {
        start,
        var: (0..len).map(|_| rng.random_range(0.1..5.0)).collect(),
        cov: (0..p.max(1)).map(|_| (0..len).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
    }
}

fn random_custom_scheme(rng: &mut ChaCha8Rng, start: i64, p: usize) -> BlockScheme {
    let mut b = vec![start];
    let mut a = Vec::new();
    for _ in 0..rng.random_range(1..8) {
        let a_j = b.last().unwrap() + rng.random_range(1..7);
        a.push(a_j);
        b.push(a_j + rng.random_range(0..4));
    }
    BlockScheme::from_boundaries(start, b, a, LagSpec::fixed(p), SchemeKind::Custom).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    /// Psi_bar - Psi_n is exactly the (k, l) terms outside every complete major block.
    #[test]
    fn gap_equals_brute_force_omitted_terms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(0..4usize);
        let s = rng.random_range(1..5i64);
        let scheme = random_custom_scheme(&mut rng, s, p);
        let k_lo = scheme.a(1) - 1;
        let k_n = rng.random_range(k_lo..=scheme.covered_through().min(s + 49));
        let provider = random_moments(&mut rng, s, (scheme.covered_through() - s + 1) as usize, p);

        let full = psi_bar_scalar(&provider, &LagSpec::fixed(p), s, k_n).unwrap();
        let major = psi_major_scalar(&provider, &scheme, k_n).unwrap();
        let j_b = scheme.complete_major_count(k_n);
        let (mut omitted, mut scale) = (0.0, 0.0);
        for k in s..=k_n {
            for l in 0..=(p as i64).min(k - s) {
                let term = if l == 0 { provider.var_at(k).unwrap() } else { 2.0 * provider.cov_at(k, l as usize).unwrap() };
                scale += term.abs();
                let inside = (1..=j_b).any(|j| scheme.b(j) <= k - l && k < scheme.a(j));
                if !inside {
                    omitted += term;
                }
            }
        }
        prop_assert!(((full - major) - omitted).abs() <= 1e-12 * scale);
    }

    #[test]
    fn matrix_estimates_are_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = rng.random_range(1..4);
        let p = rng.random_range(0..3);
        let coeffs = (0..=p).map(|_| DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0))).collect();
        let sd = DMatrix::from_fn(q, q, |r, c| if r >= c { rng.random_range(0.1..1.0) } else { 0.0 });
        let moments = MaMoments::new(&MaProcess::new(q, coeffs, sd).unwrap());
        let scheme = default_fixed_lag_blocks(p, 60).unwrap();
        for est in [psi_bar(&moments, &LagSpec::fixed(p), p as i64 + 1, 60).unwrap(), psi_major(&moments, &scheme, 60).unwrap()] {
            let m = &est.matrix;
            let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            prop_assert!((m - m.transpose()).iter().all(|v| v.abs() <= 1e-12 * scale));
            prop_assert!(est.warning.is_none());
        }
    }
}

fn sample_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    // Gaussian sums: SE of the sample variance is v sqrt(2 / (n - 1))
    (v, v * (2.0 / (n - 1.0)).sqrt())
}

#[test]
fn ma1_partial_sum_variance_matches_psi_bar() {
    let theta = 0.7;
    let process = MaProcess::scalar(&[1.0, theta]).unwrap();
    let n = 200;
    let sums: Vec<f64> = (0..10_000).map(|r| process.simulate(n, 1000 + r).unwrap().total()[0]).collect();
    let (v, se) = sample_variance(&sums);
    let exact = psi_bar(&MaMoments::new(&process), &LagSpec::fixed(1), 2, n as i64).unwrap().scalar();
    // n - 1 terms with Var = 1 + theta^2 and n - 2 adjacent pairs
    assert!((exact - ((n - 1) as f64 * (1.0 + theta * theta) + 2.0 * (n - 2) as f64 * theta)).abs() < 1e-9);
    assert!((v - exact).abs() <= 3.0 * se, "Var(S_n) = {v} vs {exact} (SE {se})");
}

#[test]
fn ma1_block_variance_matches_psi_block() {
    let theta = -0.4;
    let process = MaProcess::scalar(&[1.0, theta]).unwrap();
    let moments = AsMatrix(lagmart::variance::ConstantScalarProvider { var: 1.0 + theta * theta, cov: theta });
    let scheme = build_fixed_lag_blocks(1, 2, 60, 2.0, 1.0).unwrap();
    let j = 3;
    let (b, a) = (scheme.b(j), scheme.a(j));
    let d = (a - b) as f64;
    let analytic = psi_block(&moments, &scheme, j).unwrap().scalar();
    assert!((analytic - (d * (1.0 + theta * theta) + 2.0 * (d - 1.0) * theta)).abs() < 1e-12);
    assert_eq!(psi_block(&MaMoments::new(&process), &scheme, j).unwrap().scalar(), analytic);
    let sums: Vec<f64> = (0..10_000)
        .map(|r| {
            let path = process.simulate(a as usize, 50_000 + r).unwrap();
            (b..a).map(|k| path.at(k)[0]).sum()
        })
        .collect();
    let (v, se) = sample_variance(&sums);
    assert!((v - analytic).abs() <= 3.0 * se, "Var(B_nj) = {v} vs {analytic} (SE {se})");
}

fn traced_provider(horizon: u64, rep: u64) -> (f64, TabulatedScalarProvider) {
    let config = SimConfig { horizon, reps: 1, workers: 1, ..SimConfig::default() };
    let (record, trace) = run_replication_traced(&config, rep).unwrap();
    (record.psi_bar, trace.provider(1.0 / (horizon as f64).sqrt()))
}

#[test]
fn traced_moments_reproduce_the_record() {
    let (psi, provider) = traced_provider(20_000, 2);
    let again = psi_bar_scalar(&provider, &LagSpec::fixed(1), 2, 20_000).unwrap();
    assert!((again - psi).abs() <= 1e-10 * psi);
}

#[test]
fn major_block_estimate_is_close_to_psi_bar_on_the_study_process() {
    let horizon = 100_000;
    let scheme = build_fixed_lag_blocks(1, 2, horizon as i64, 1.0, 1.0).unwrap();
    for rep in 0..3 {
        let (_, provider) = traced_provider(horizon, rep);
        let full = psi_bar_scalar(&provider, &LagSpec::fixed(1), 2, horizon as i64).unwrap();
        let major = psi_major_scalar(&provider, &scheme, horizon as i64).unwrap();
        assert!((major / full - 1.0).abs() < 0.02, "rep {rep}: psi_n = {major}, psi_bar = {full}");
    }
}

#[test]
fn vn_diagnostic_shrinks_with_the_horizon() {
    let mut last = f64::INFINITY;
    for horizon in [1_000u64, 10_000, 100_000] {
        let (_, provider) = traced_provider(horizon, 0);
        let scheme = default_fixed_lag_blocks(1, horizon as i64).unwrap();
        let vn = vn_diagnostic_scalar(&provider, &scheme, &LagSpec::fixed(1), 2, horizon as i64).unwrap();
        assert!(vn.normalized < last, "T = {horizon}: {} not below {last}", vn.normalized);
        last = vn.normalized;
    }
}

#[test]
fn block_estimates_sum_to_the_major_estimate() {
    let (_, provider) = traced_provider(5_000, 1);
    let scheme = default_fixed_lag_blocks(1, 5_000).unwrap();
    let j_b = scheme.complete_major_count(5_000);
    let by_block: f64 = (1..=j_b).map(|j| psi_block_scalar(&provider, &scheme, j).unwrap()).sum();
    let major = psi_major_scalar(&provider, &scheme, 5_000).unwrap();
    assert!((by_block - major).abs() <= 1e-12 * major.abs());
}
