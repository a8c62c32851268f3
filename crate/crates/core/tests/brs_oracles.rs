use lagmart::brs::{self, AssignmentPolicy, LagOneContext, PolicyParams, PotentialBranch, Regime};
use lagmart::verify::{self, random_brs_instance};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_forms_match_enumeration_on_random_instances() {
    let report = verify::moment_oracle_suite(1000, 11, &brs::cov_w);
    assert!(report.passed, "{}", report.line());
    assert!(report.worst <= 1e-10);
}

#[test]
fn sign_flipped_covariance_is_caught() {
    let report = verify::moment_oracle_suite(1000, 11, &verify::sign_flipped_cov);
    assert!(!report.passed);
    let echoed = report.offending.expect("offending instance");
    assert!(echoed.contains("instance") && echoed.contains("cov"), "{echoed}");
}

#[test]
fn estimator_is_conditionally_unbiased_two_steps_back() {
    let report = verify::unbiasedness_suite(1000, 12);
    assert!(report.passed, "{}", report.line());
}

#[test]
fn estimator_is_not_unbiased_one_step_back() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let biased = (0..200)
        .filter(|_| {
            let inst = random_brs_instance(&mut rng);
            brs::mean_w_given_prev(&inst.cur, &inst.ctx).unwrap().abs() > 1e-6
        })
        .count();
    assert!(biased > 150, "only {biased} of 200 instances have E(W_t | F_(t-1)) != 0");
}

#[test]
fn uniform_design_moments_by_hand() {
    // P = 1/2 everywhere with Y == 1: W_t = +-2 - 0 each w.p. 1/2 given F_(t-2)
    let policy = AssignmentPolicy::new(PolicyParams::default()).unwrap();
    let ctx = LagOneContext { t: 5, policy, a_prev_prev: 1, prob_prev_prev: 0.5 };
    let cur = PotentialBranch { t: 5, y: [[1.0; 2]; 2], realized_prev: 1, realized_cur: 0 };
    let prev = PotentialBranch { t: 4, y: [[1.0; 2]; 2], realized_prev: 1, realized_cur: 1 };
    assert_eq!(brs::var_w(&cur, &ctx).unwrap(), 4.0);
    // W_(t-1) carries the sign of A_(t-2), which is fixed given F_(t-2)
    assert_eq!(brs::cov_w(&prev, &cur, &ctx).unwrap(), 0.0);
    let m = brs::enumerate_moments(&prev, &cur, &ctx).unwrap();
    assert_eq!((m.var_w_cur, m.cov), (4.0, 0.0));
}

#[test]
fn odd_regime_probabilities_enter_the_weights() {
    let policy = AssignmentPolicy::with_state(PolicyParams::default(), 150, Regime::Odd).unwrap();
    let ctx = LagOneContext { t: 300, policy, a_prev_prev: 1, prob_prev_prev: 0.1 };
    let cur = PotentialBranch { t: 300, y: [[2.0, 2.0], [3.0, 3.0]], realized_prev: 1, realized_cur: 1 };
    // P_(t-1)(1) = 0.1 after a treated period, then p_t(1; 1) = 0.1
    assert!((brs::tau_hat_t(&cur, &ctx).unwrap() - 3.0 / (2.0 * 0.01)).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn var_w_is_nonnegative_and_matches_enumeration(seed in any::<u64>()) {
        let inst = random_brs_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let v = brs::var_w(&inst.cur, &inst.ctx).unwrap();
        let m = brs::enumerate_moments(&inst.prev, &inst.cur, &inst.ctx).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!((v - m.var_w_cur).abs() <= 1e-10 * v.max(m.var_w_cur));
        prop_assert!(m.mean_w_cur.abs() <= 1e-12);
    }

    #[test]
    fn cov_w_matches_enumeration(seed in any::<u64>()) {
        let inst = random_brs_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let c = brs::cov_w(&inst.prev, &inst.cur, &inst.ctx).unwrap();
        let m = brs::enumerate_moments(&inst.prev, &inst.cur, &inst.ctx).unwrap();
        prop_assert!((c - m.cov).abs() <= 1e-10 * c.abs().max(m.cov.abs()));
    }

    #[test]
    fn joint_probabilities_sum_to_one(seed in any::<u64>()) {
        let inst = random_brs_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let total: f64 = [(0, 0), (0, 1), (1, 0), (1, 1)].iter().map(|&(a, b)| inst.ctx.joint_prob(a, b)).sum();
        prop_assert!((total - 1.0).abs() < 1e-14);
    }
}
