use std::fmt;
use std::sync::Arc;

use super::BlockError;

/// Map from an array index `k` to its lag length `p_k`.
pub type LagFn = Arc<dyn Fn(i64) -> usize + Send + Sync>;

/// Lag structure of a lag martingale difference array.
///
/// For a fixed lag `p`, `E(X_k | F_{k-p-1}) = 0` at every index. A diverging
/// lag lets `p_k` grow with `k`, bounded by `order_c * k^order_gamma`.
#[derive(Clone)]
pub enum LagSpec {
    Fixed { p: usize },
    Diverging(DivergingLag),
}

#[derive(Clone)]
pub struct DivergingLag {
    lag_fn: LagFn,
    order_gamma: f64,
    order_c: f64,
    /// `k - p_k` is nondecreasing in `k`, so the smallest headroom in a range
    /// sits at its left end.
    monotone_headroom: bool,
}

impl fmt::Debug for LagSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LagSpec::Fixed { p } => f.debug_struct("Fixed").field("p", p).finish(),
            LagSpec::Diverging(d) => f
                .debug_struct("Diverging")
                .field("order_gamma", &d.order_gamma)
                .field("order_c", &d.order_c)
                .field("monotone_headroom", &d.monotone_headroom)
                .finish_non_exhaustive(),
        }
    }
}

impl LagSpec {
    pub fn fixed(p: usize) -> Self {
        LagSpec::Fixed { p }
    }

    /// Arbitrary diverging lag. `order_gamma` must lie in `[0, 1)` and
    /// `order_c` must be positive; the bound `p_k <= C k^gamma` itself is
    /// checked on demand with [`LagSpec::check_order`].
    pub fn diverging(lag_fn: LagFn, order_gamma: f64, order_c: f64) -> Result<Self, BlockError> {
        validate_order(order_gamma, order_c)?;
        Ok(LagSpec::Diverging(DivergingLag {
            lag_fn,
            order_gamma,
            order_c,
            monotone_headroom: false,
        }))
    }

    /// `p_k = floor(C k^gamma)`.
    pub fn power_law(order_c: f64, order_gamma: f64) -> Result<Self, BlockError> {
        validate_order(order_gamma, order_c)?;
        let lag_fn: LagFn =
            Arc::new(move |k: i64| (order_c * (k.max(0) as f64).powf(order_gamma)).floor() as usize);
        Ok(LagSpec::Diverging(DivergingLag {
            lag_fn,
            order_gamma,
            order_c,
            // derivative C*gamma*k^(gamma-1) <= 1 for k >= 1, so p_k steps by at most one
            monotone_headroom: order_c * order_gamma <= 1.0,
        }))
    }

    #[inline]
    pub fn lag_at(&self, k: i64) -> usize {
        match self {
            LagSpec::Fixed { p } => *p,
            LagSpec::Diverging(d) => (d.lag_fn)(k),
        }
    }

    /// Lag order `gamma` (zero for a fixed lag).
    pub fn order(&self) -> f64 {
        match self {
            LagSpec::Fixed { .. } => 0.0,
            LagSpec::Diverging(d) => d.order_gamma,
        }
    }

    pub fn fixed_lag(&self) -> Option<usize> {
        match self {
            LagSpec::Fixed { p } => Some(*p),
            LagSpec::Diverging(_) => None,
        }
    }

    /// Verifies `p_k <= C k^gamma` on `1..=k_max` (diverging case only).
    pub fn check_order(&self, k_max: i64) -> Result<(), BlockError> {
        if let LagSpec::Diverging(d) = self {
            for k in 1..=k_max {
                let bound = d.order_c * (k as f64).powf(d.order_gamma);
                if (d.lag_fn)(k) as f64 > bound {
                    return Err(BlockError::LagOrder { k, p_k: (d.lag_fn)(k), bound });
                }
            }
        }
        Ok(())
    }

    /// Smallest `k - p_k - 1` over `lo..=hi`.
    pub fn min_headroom(&self, lo: i64, hi: i64) -> i64 {
        match self {
            LagSpec::Fixed { p } => lo - *p as i64 - 1,
            LagSpec::Diverging(d) if d.monotone_headroom => lo - (d.lag_fn)(lo) as i64 - 1,
            LagSpec::Diverging(d) => (lo..=hi)
                .map(|k| k - (d.lag_fn)(k) as i64 - 1)
                .min()
                .unwrap_or(i64::MAX),
        }
    }

    /// Verifies that every index in `start..=k_max` conditions on an existing
    /// sigma-field, i.e. `k - p_k - 1 >= 0`.
    pub fn check_measurable(&self, start: i64, k_max: i64) -> Result<(), BlockError> {
        if start > k_max {
            return Ok(());
        }
        let headroom = self.min_headroom(start, k_max);
        if headroom < 0 {
            return Err(BlockError::InvalidParameter {
                name: "lag",
                reason: format!("k - p_k - 1 >= 0 fails within [{start}, {k_max}]"),
            });
        }
        Ok(())
    }
}

fn validate_order(order_gamma: f64, order_c: f64) -> Result<(), BlockError> {
    if !(0.0..1.0).contains(&order_gamma) {
        return Err(BlockError::InvalidParameter {
            name: "order_gamma",
            reason: format!("must lie in [0, 1), got {order_gamma}"),
        });
    }
    if !(order_c > 0.0 && order_c.is_finite()) {
        return Err(BlockError::InvalidParameter {
            name: "order_c",
            reason: format!("must be positive, got {order_c}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_lag_is_constant() {
        let lag = LagSpec::fixed(3);
        assert!((1..100).all(|k| lag.lag_at(k) == 3));
        assert_eq!(lag.order(), 0.0);
        assert_eq!(lag.min_headroom(4, 100), 0);
    }

    #[test]
    fn power_law_respects_its_order() {
        let lag = LagSpec::power_law(1.0, 0.5).unwrap();
        lag.check_order(10_000).unwrap();
        assert_eq!(lag.lag_at(100), 10);
        assert_eq!(lag.min_headroom(100, 200), 100 - 10 - 1);
    }

    #[test]
    fn rejects_superlinear_order() {
        assert!(LagSpec::power_law(1.0, 1.0).is_err());
        assert!(LagSpec::power_law(0.0, 0.5).is_err());
    }

    #[test]
    fn check_order_catches_violations() {
        let lag = LagSpec::diverging(Arc::new(|k| k as usize), 0.5, 1.0).unwrap();
        assert!(matches!(lag.check_order(10), Err(BlockError::LagOrder { k: 2, .. })));
    }

    #[test]
    fn scanned_headroom_matches_direct_minimum() {
        let lag = LagSpec::diverging(Arc::new(|k| if k % 7 == 0 { 3 } else { 0 }), 0.5, 3.0).unwrap();
        assert_eq!(lag.min_headroom(5, 20), 7 - 3 - 1);
        assert!(lag.check_measurable(1, 20).is_ok());
    }
}
