//! Lag-1 dynamic causal effects under sequential randomization.
//!
//! A single unit receives binary treatments `A_1, ..., A_T`. At time `t` the
//! four potential outcomes `Y_t(A_{t-2}, a_{t-1}, a_t)` that share the
//! realized prefix make up a [`PotentialBranch`]. From them:
//!
//! * `tau_t = {Y(.,1,1) - Y(.,0,1)}/2 + {Y(.,1,0) - Y(.,0,0)}/2`
//! * `tau_hat_t = (-1)^(1 - A_{t-1}) Y_t / (2 P_{t-1}(A_{t-1}, A_t))`
//! * `W_t = tau_hat_t - tau_t`, a lag-1 martingale difference:
//!   `E(W_t | F_{t-2}) = 0` but `E(W_t | F_{t-1}) != 0` in general.
//!
//! [`var_w`] and [`cov_w`] give `Var(W_t | F_{t-2})` and
//! `Cov(W_{t-1}, W_t | F_{t-2})` in closed form; [`enumerate_moments`]
//! recomputes the same moments by summing over the four treatment paths.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities closer than this to 0 or 1 are treated as positivity violations.
pub const POSITIVITY_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrsError {
    #[error("positivity violation at t = {t}: probability {prob} outside [{POSITIVITY_EPS:e}, 1 - {POSITIVITY_EPS:e}]")]
    Positivity { t: u64, prob: f64 },
    #[error("inconsistent branches: {0}")]
    Inconsistent(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    /// Number of treated time points after which the design changes.
    pub switch_count: u32,
    pub base_prob: f64,
    /// Treatment probability after a treated period in the odd regime.
    pub low_prob: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self { switch_count: 100, base_prob: 0.5, low_prob: 0.1 }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<(), BrsError> {
        for (name, p) in [("base_prob", self.base_prob), ("low_prob", self.low_prob)] {
            if !(POSITIVITY_EPS..=1.0 - POSITIVITY_EPS).contains(&p) {
                return Err(BrsError::Policy(format!("{name} = {p} must lie strictly inside (0, 1)")));
            }
        }
        if self.switch_count == 0 {
            return Err(BrsError::Policy("switch_count must be positive".into()));
        }
        Ok(())
    }
}

/// Design regime. Before the switch and in the even regime every period is
/// treated with `base_prob`; in the odd regime a treated period is followed
/// by treatment with `low_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Pre,
    Even,
    Odd,
}

/// Adaptive assignment rule: after the `switch_count`-th treated period at
/// time `t0`, the regime becomes even or odd by the parity of `t0` and
/// applies from `t0 + 1` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignmentPolicy {
    params: PolicyParams,
    treated_count: u32,
    regime: Regime,
    switch_time: Option<u64>,
}

impl AssignmentPolicy {
    pub fn new(params: PolicyParams) -> Result<Self, BrsError> {
        params.validate()?;
        Ok(Self { params, treated_count: 0, regime: Regime::Pre, switch_time: None })
    }

    /// State with explicit history summary, for building test instances.
    pub fn with_state(params: PolicyParams, treated_count: u32, regime: Regime) -> Result<Self, BrsError> {
        let mut p = Self::new(params)?;
        p.treated_count = treated_count;
        p.regime = regime;
        Ok(p)
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn treated_count(&self) -> u32 {
        self.treated_count
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn switch_time(&self) -> Option<u64> {
        self.switch_time
    }

    /// `P(A_t = 1 | history through t-1)` given the realized `A_{t-1}`.
    #[inline]
    pub fn assignment_prob(&self, a_prev: u8) -> f64 {
        match self.regime {
            Regime::Pre | Regime::Even => self.params.base_prob,
            Regime::Odd if a_prev == 1 => self.params.low_prob,
            Regime::Odd => self.params.base_prob,
        }
    }

    /// Records the realized `A_t = a` at time `t`.
    #[inline]
    pub fn observe(&mut self, a: u8, t: u64) {
        if a == 1 {
            self.treated_count += 1;
            if self.regime == Regime::Pre && self.treated_count == self.params.switch_count {
                self.regime = if t.is_multiple_of(2) { Regime::Even } else { Regime::Odd };
                self.switch_time = Some(t);
            }
        }
    }

    #[inline]
    pub fn after(&self, a: u8, t: u64) -> Self {
        let mut next = *self;
        next.observe(a, t);
        next
    }
}

/// Everything in `F_{t-2}` the time-`t` moments depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagOneContext {
    pub t: u64,
    /// Policy state after observing `A_{t-2}`.
    pub policy: AssignmentPolicy,
    /// Realized `A_{t-2}` (ignored at `t = 2`).
    pub a_prev_prev: u8,
    /// `P_{t-2}(A_{t-2})`, the probability with which `A_{t-2}` was assigned.
    pub prob_prev_prev: f64,
}

#[inline]
fn bernoulli(p1: f64, a: u8) -> f64 {
    if a == 1 {
        p1
    } else {
        1.0 - p1
    }
}

#[inline]
fn sign(a: u8) -> f64 {
    if a == 1 {
        1.0
    } else {
        -1.0
    }
}

#[inline]
fn positive(t: u64, p: f64) -> Result<f64, BrsError> {
    if (POSITIVITY_EPS..=1.0 - POSITIVITY_EPS).contains(&p) {
        Ok(p)
    } else {
        Err(BrsError::Positivity { t, prob: p })
    }
}

impl LagOneContext {
    /// Context for `t = 2`, where `F_0` is trivial.
    pub fn initial(policy: AssignmentPolicy) -> Self {
        Self { t: 2, policy, a_prev_prev: 0, prob_prev_prev: 1.0 }
    }

    /// `P_{t-1}(a) = P(A_{t-1} = a | F_{t-2})`.
    #[inline]
    pub fn prob_prev(&self, a: u8) -> f64 {
        bernoulli(self.policy.assignment_prob(self.a_prev_prev), a)
    }

    /// `p_t(a_cur; A_{t-2}, a_prev) = P(A_t = a_cur | F_{t-2}, A_{t-1} = a_prev)`.
    #[inline]
    pub fn prob_cur(&self, a_cur: u8, a_prev: u8) -> f64 {
        bernoulli(self.policy.after(a_prev, self.t - 1).assignment_prob(a_prev), a_cur)
    }

    /// `P_{t-1}(a_prev, a_cur) = P_{t-1}(a_prev) p_t(a_cur; a_prev)`.
    #[inline]
    pub fn joint_prob(&self, a_prev: u8, a_cur: u8) -> f64 {
        self.prob_prev(a_prev) * self.prob_cur(a_cur, a_prev)
    }

    /// The four conditional probabilities `(P_{t-1}(a), p_t(1; a))` for
    /// `a = 0, 1`, checked for positivity.
    #[inline]
    fn probs(&self) -> Result<[[f64; 2]; 2], BrsError> {
        let t = self.t;
        let p1 = positive(t, self.policy.assignment_prob(self.a_prev_prev))?;
        let q0 = positive(t, self.policy.after(0, t - 1).assignment_prob(0))?;
        let q1 = positive(t, self.policy.after(1, t - 1).assignment_prob(1))?;
        Ok([[1.0 - p1, q0], [p1, q1]])
    }
}

/// `Y_t(A_{t-2}, a_{t-1}, a_t)` for the four `(a_{t-1}, a_t)` with the realized pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialBranch {
    pub t: u64,
    /// `y[a_prev][a_cur]`.
    pub y: [[f64; 2]; 2],
    pub realized_prev: u8,
    pub realized_cur: u8,
}

impl PotentialBranch {
    #[inline]
    pub fn observed(&self) -> f64 {
        self.y[self.realized_prev as usize][self.realized_cur as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectEstimate {
    pub tau_t: f64,
    pub tau_hat_t: f64,
    pub w_t: f64,
}

#[inline]
pub fn tau_t(branch: &PotentialBranch) -> f64 {
    let y = &branch.y;
    0.5 * (y[1][1] - y[0][1]) + 0.5 * (y[1][0] - y[0][0])
}

#[inline]
pub fn tau_hat_t(branch: &PotentialBranch, ctx: &LagOneContext) -> Result<f64, BrsError> {
    let joint = ctx.joint_prob(branch.realized_prev, branch.realized_cur);
    if joint < POSITIVITY_EPS {
        return Err(BrsError::Positivity { t: ctx.t, prob: joint });
    }
    Ok(sign(branch.realized_prev) * branch.observed() / (2.0 * joint))
}

#[inline]
pub fn estimate(branch: &PotentialBranch, ctx: &LagOneContext) -> Result<EffectEstimate, BrsError> {
    let tau = tau_t(branch);
    let tau_hat = tau_hat_t(branch, ctx)?;
    Ok(EffectEstimate { tau_t: tau, tau_hat_t: tau_hat, w_t: tau_hat - tau })
}

/// `Var(W_t | F_{t-2})`:
///
/// `P(0)P(1)/4 * {sum_a Y(1,a)/P(1) + sum_a Y(0,a)/P(0)}^2
///  + sum_a {Y(a,1)/p(1;a) - Y(a,0)/p(0;a)}^2 p(1;a) p(0;a) / (4 P(a))`.
#[inline]
pub fn var_w(branch: &PotentialBranch, ctx: &LagOneContext) -> Result<f64, BrsError> {
    let [[p0, q0], [p1, q1]] = ctx.probs()?;
    let y = &branch.y;
    let between = {
        let s = (y[1][0] + y[1][1]) / p1 + (y[0][0] + y[0][1]) / p0;
        p0 * p1 / 4.0 * s * s
    };
    let within = |a: usize, pa: f64, q: f64| {
        let d = y[a][1] / q - y[a][0] / (1.0 - q);
        d * d * q * (1.0 - q) / (4.0 * pa)
    };
    Ok(between + within(0, p0, q0) + within(1, p1, q1))
}

/// `Cov(W_{t-1}, W_t | F_{t-2})`:
///
/// `(-1)^(1-A_{t-2}) / (4 P_{t-2}(A_{t-2})) * sum_a (-1)^(1-a) Y_{t-1}(a)/P_{t-1}(a) * sum_b Y_t(a, b)
///  - tau_t (-1)^(1-A_{t-2}) / (2 P_{t-2}(A_{t-2})) * sum_a Y_{t-1}(a)`
///
/// where `Y_{t-1}(a)` is `branch_prev.y[A_{t-2}][a]`.
#[inline]
pub fn cov_w(branch_prev: &PotentialBranch, branch_cur: &PotentialBranch, ctx: &LagOneContext) -> Result<f64, BrsError> {
    check_consecutive(branch_prev, branch_cur, ctx)?;
    let [[p0, _], [p1, _]] = ctx.probs()?;
    let pp = positive(ctx.t, ctx.prob_prev_prev)?;
    let s = sign(ctx.a_prev_prev);
    let y_prev = &branch_prev.y[ctx.a_prev_prev as usize];
    let y = &branch_cur.y;
    let alternating = y_prev[1] / p1 * (y[1][0] + y[1][1]) - y_prev[0] / p0 * (y[0][0] + y[0][1]);
    Ok(s / (4.0 * pp) * alternating - tau_t(branch_cur) * s / (2.0 * pp) * (y_prev[0] + y_prev[1]))
}

fn check_consecutive(branch_prev: &PotentialBranch, branch_cur: &PotentialBranch, ctx: &LagOneContext) -> Result<(), BrsError> {
    if ctx.t < 3 {
        return Err(BrsError::Inconsistent(format!("covariance needs t >= 3, got {}", ctx.t)));
    }
    if branch_cur.t != ctx.t || branch_prev.t + 1 != ctx.t {
        return Err(BrsError::Inconsistent(format!(
            "branches at t = {} and {} do not precede context time {}",
            branch_prev.t, branch_cur.t, ctx.t
        )));
    }
    if branch_prev.realized_prev != ctx.a_prev_prev {
        return Err(BrsError::Inconsistent("branch_prev.realized_prev differs from A_{t-2}".into()));
    }
    Ok(())
}

/// Exact conditional moments given `F_{t-2}` by enumerating the four
/// `(a_{t-1}, a_t)` paths, weighted by their joint assignment probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumeratedMoments {
    pub mean_w_prev: f64,
    pub mean_w_cur: f64,
    pub var_w_cur: f64,
    pub cov: f64,
}

pub fn enumerate_moments(
    branch_prev: &PotentialBranch,
    branch_cur: &PotentialBranch,
    ctx: &LagOneContext,
) -> Result<EnumeratedMoments, BrsError> {
    check_consecutive(branch_prev, branch_cur, ctx)?;
    ctx.probs()?;
    let pp = positive(ctx.t, ctx.prob_prev_prev)?;
    let tau_prev = tau_t(branch_prev);
    let tau_cur = tau_t(branch_cur);
    let mut paths = Vec::with_capacity(4);
    for a in 0..2u8 {
        // realized path through t-1: tau_hat_{t-1} uses P_{t-2}(A_{t-2}, a) = P_{t-2}(A_{t-2}) P_{t-1}(a)
        let prev = PotentialBranch { realized_cur: a, ..*branch_prev };
        let w_prev = sign(ctx.a_prev_prev) * prev.observed() / (2.0 * pp * ctx.prob_prev(a)) - tau_prev;
        for b in 0..2u8 {
            let cur = PotentialBranch { realized_prev: a, realized_cur: b, ..*branch_cur };
            let w_cur = tau_hat_t(&cur, ctx)? - tau_cur;
            paths.push((ctx.joint_prob(a, b), w_prev, w_cur));
        }
    }
    let mean_w_prev: f64 = paths.iter().map(|(p, wp, _)| p * wp).sum();
    let mean_w_cur: f64 = paths.iter().map(|(p, _, wc)| p * wc).sum();
    let var_w_cur = paths.iter().map(|(p, _, wc)| p * (wc - mean_w_cur).powi(2)).sum();
    let cov = paths.iter().map(|(p, wp, wc)| p * (wp - mean_w_prev) * (wc - mean_w_cur)).sum();
    Ok(EnumeratedMoments { mean_w_prev, mean_w_cur, var_w_cur, cov })
}

/// `E(W_t | F_{t-1})` for the realized `A_{t-1} = branch.realized_prev`.
pub fn mean_w_given_prev(branch: &PotentialBranch, ctx: &LagOneContext) -> Result<f64, BrsError> {
    let a = branch.realized_prev;
    let mut mean = 0.0;
    for b in 0..2u8 {
        let cur = PotentialBranch { realized_cur: b, ..*branch };
        mean += ctx.prob_cur(b, a) * tau_hat_t(&cur, ctx)?;
    }
    Ok(mean - tau_t(branch))
}

/// `E(W_t | F_{t-3})` by enumerating `(a_{t-2}, a_{t-1}, a_t)`.
///
/// `y[a2][a1][a0]` holds `Y_t(A_{t-3}, a2, a1, a0)`; `policy` is the state
/// after `A_{t-3}`, which was `a_prev3`.
pub fn mean_w_given_three_back(
    y: &[[[f64; 2]; 2]; 2],
    policy: &AssignmentPolicy,
    a_prev3: u8,
    t: u64,
) -> Result<f64, BrsError> {
    if t < 4 {
        return Err(BrsError::Inconsistent(format!("three-step enumeration needs t >= 4, got {t}")));
    }
    let mut mean = 0.0;
    for a2 in 0..2u8 {
        let p_a2 = bernoulli(policy.assignment_prob(a_prev3), a2);
        let ctx = LagOneContext { t, policy: policy.after(a2, t - 2), a_prev_prev: a2, prob_prev_prev: p_a2 };
        let tau = tau_t(&PotentialBranch { t, y: y[a2 as usize], realized_prev: 0, realized_cur: 0 });
        for a1 in 0..2u8 {
            for a0 in 0..2u8 {
                let branch = PotentialBranch { t, y: y[a2 as usize], realized_prev: a1, realized_cur: a0 };
                mean += p_a2 * ctx.joint_prob(a1, a0) * (tau_hat_t(&branch, &ctx)? - tau);
            }
        }
    }
    Ok(mean)
}
