use serde::Serialize;

use super::{BlockScheme, LagSpec};

/// Finite-horizon evaluation of the blocking conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Number of blocks actually evaluated (the request clamped to the
    /// materialized scheme).
    pub evaluated_through: usize,
    /// `sum_{j<=J} c_j / sum_{j<=J} (c_j + d_j)` for `J = 1..=evaluated_through`.
    pub minor_fraction: Vec<f64>,
    /// `max_{j<=J} d_j / sum_{j<=J} d_j`.
    pub max_major_share: Vec<f64>,
    /// Smallest `j0` such that every major block `j0..=J` conditions on
    /// information no later than the end of the previous major block:
    /// `k - p_k - 1 >= a_{j-1} - 1` for all `k` in `[b_j, a_j)`. `None` if the
    /// last evaluated block already fails.
    pub lag_holds_from: Option<usize>,
    /// Growth proxy for `d_j -> infinity`: `d_j >= d_1` throughout and
    /// `d_J > d_1`.
    pub major_sizes_grow: bool,
}

/// Whether major block `j` satisfies the structural lag condition. Block 1
/// conditions on the trivial sigma-field (`a_0 - 1 := 0`).
pub fn lag_condition_holds(scheme: &BlockScheme, lag: &LagSpec, j: usize) -> bool {
    let floor = if j == 1 { 0 } else { scheme.a(j - 1) - 1 };
    lag.min_headroom(scheme.b(j), scheme.a(j) - 1) >= floor
}

pub fn diagnose_conditions(scheme: &BlockScheme, lag: &LagSpec, blocks: usize) -> ConditionReport {
    let n = blocks.min(scheme.num_blocks());
    let mut minor_fraction = Vec::with_capacity(n);
    let mut max_major_share = Vec::with_capacity(n);
    let (mut sum_c, mut sum_d, mut max_d) = (0i128, 0i128, 0i64);
    for j in 1..=n {
        let (c, d) = (scheme.c(j), scheme.d(j));
        sum_c += c as i128;
        sum_d += d as i128;
        max_d = max_d.max(d);
        minor_fraction.push(sum_c as f64 / (sum_c + sum_d) as f64);
        max_major_share.push(max_d as f64 / sum_d as f64);
    }

    let mut lag_holds_from = None;
    for j in (1..=n).rev() {
        if lag_condition_holds(scheme, lag, j) {
            lag_holds_from = Some(j);
        } else {
            break;
        }
    }

    let d1 = if n > 0 { scheme.d(1) } else { 0 };
    let major_sizes_grow = n >= 2 && (1..=n).all(|j| scheme.d(j) >= d1) && scheme.d(n) > d1;

    ConditionReport { evaluated_through: n, minor_fraction, max_major_share, lag_holds_from, major_sizes_grow }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{build_diverging_blocks, default_fixed_lag_blocks, DivergingParams, SchemeKind};

    fn prop2(k_max: i64) -> BlockScheme {
        let params = DivergingParams { a_scale: 1.0, b_scale: 1.0, alpha: 1.0, beta: 2.0, start: 1, k_max };
        build_diverging_blocks(params, LagSpec::fixed(0)).unwrap()
    }

    #[test]
    fn minor_fraction_vanishes_for_polynomial_schemes() {
        // sum_{j<=1000} 1000^3/3-scale indices
        let s = prop2(400_000_000);
        assert!(s.num_blocks() >= 1000);
        let r = diagnose_conditions(&s, s.lag(), 1000);
        assert!(r.minor_fraction[999] < 0.01);
        assert!(r.minor_fraction.windows(2).skip(1).all(|w| w[1] < w[0]));
        assert!(r.major_sizes_grow);
    }

    #[test]
    fn fixed_lag_scheme_satisfies_lag_condition_everywhere() {
        let s = default_fixed_lag_blocks(3, 10_000).unwrap();
        let r = diagnose_conditions(&s, s.lag(), 50);
        assert_eq!(r.lag_holds_from, Some(1));
    }

    #[test]
    fn constant_major_sizes_fail_the_growth_proxy() {
        let b: Vec<i64> = (0..=100).map(|j| 2 + 4 * j).collect();
        let a: Vec<i64> = (0..100).map(|j| 5 + 4 * j).collect();
        let s = BlockScheme::from_boundaries(2, b, a, LagSpec::fixed(1), SchemeKind::FixedLag).unwrap();
        let r = diagnose_conditions(&s, s.lag(), 100);
        assert!(!r.major_sizes_grow);
        assert!((r.max_major_share[99] - 1.0 / 100.0).abs() < 1e-15);
    }

    #[test]
    fn diverging_lag_eventually_satisfies_lag_condition() {
        // p_k = floor(k^0.25) with alpha = 1, beta = 2: 0.25 < 1/3
        let lag = LagSpec::power_law(1.0, 0.25).unwrap();
        let params = DivergingParams { a_scale: 1.0, b_scale: 1.0, alpha: 1.0, beta: 2.0, start: 1, k_max: 1_000_000 };
        let s = build_diverging_blocks(params, lag.clone()).unwrap();
        let r = diagnose_conditions(&s, &lag, s.num_blocks());
        let j0 = r.lag_holds_from.expect("lag condition should hold eventually");
        assert!(j0 <= 3);
        assert!((j0..=s.num_blocks()).all(|j| lag_condition_holds(&s, &lag, j)));
    }

    #[test]
    fn long_lag_breaks_lag_condition() {
        let s = default_fixed_lag_blocks(1, 1000).unwrap();
        let r = diagnose_conditions(&s, &LagSpec::fixed(5), 20);
        assert_eq!(r.lag_holds_from, None);
    }

    #[test]
    fn request_is_clamped_to_the_scheme() {
        let s = default_fixed_lag_blocks(1, 20).unwrap();
        let r = diagnose_conditions(&s, s.lag(), 10_000);
        assert_eq!(r.evaluated_through, s.num_blocks());
    }
}
