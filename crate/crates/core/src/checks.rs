//! Pass/fail checks of a study summary against the reference bands.

use serde::{Deserialize, Serialize};

use crate::simulate::{Outcome, StudySummary};

/// Fewer replicates than this and the statistical checks are skipped.
pub const MIN_REPS_FOR_CHECKS: usize = 1000;

/// Significance level for the "fail to reject" tests on `Z`.
pub const ALPHA: f64 = 0.01;
/// Threshold for the "reject" tests on `W` and `Z`-naive.
pub const REJECT_P: f64 = 1e-6;

pub const EVEN_PSI_BAND: (f64, f64) = (31.5, 33.5);
pub const ODD_PSI_BAND: (f64, f64) = (238.0, 253.0);
pub const GROUP_FRACTION_TOL: f64 = 0.03;

pub const MIXTURE_HIGH_WEIGHT: f64 = 0.52;
pub const MIXTURE_WEIGHT_TOL: f64 = 0.04;
pub const MIXTURE_VARIANCES: [f64; 2] = [30.8, 241.4];
pub const MIXTURE_VARIANCE_RTOL: f64 = 0.10;
pub const MIXTURE_MEAN_TOL: f64 = 0.5;
pub const MIXTURE_MIN_REPS: usize = 10_000;

pub const VAR_Z_BAND: (f64, f64) = (0.97, 1.03);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.to_string(), status: if pass { Status::Pass } else { Status::Fail }, detail }
    }

    pub fn skipped(name: &str, detail: String) -> Self {
        Self { name: name.to_string(), status: Status::Skipped, detail }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// One line: `PASS name: detail`.
    pub fn line(&self) -> String {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

fn within(x: f64, (lo, hi): (f64, f64)) -> bool {
    x >= lo && x <= hi
}

pub fn group_concentration(s: &StudySummary) -> CheckResult {
    const NAME: &str = "group_variance_concentration";
    let (Some(even), Some(odd)) = (s.groups.even, s.groups.odd) else {
        return CheckResult::new(NAME, false, "a parity group is empty".into());
    };
    let frac_ok = |f: f64| (f - 0.5).abs() <= GROUP_FRACTION_TOL;
    let pass = within(even.psi_bar_mean, EVEN_PSI_BAND)
        && within(odd.psi_bar_mean, ODD_PSI_BAND)
        && frac_ok(even.fraction)
        && frac_ok(odd.fraction);
    CheckResult::new(
        NAME,
        pass,
        format!(
            "even mean {:.3} (band {:?}), odd mean {:.3} (band {:?}), fractions {:.4} / {:.4} (0.5 +/- {})",
            even.psi_bar_mean, EVEN_PSI_BAND, odd.psi_bar_mean, ODD_PSI_BAND, even.fraction, odd.fraction, GROUP_FRACTION_TOL
        ),
    )
}

pub fn mixture_recovery(s: &StudySummary) -> CheckResult {
    const NAME: &str = "mixture_recovery";
    if s.reps < MIXTURE_MIN_REPS {
        return CheckResult::skipped(NAME, format!("needs at least {MIXTURE_MIN_REPS} replicates, have {}", s.reps));
    }
    let fit = match &s.mixture {
        Outcome::Ok(f) => f,
        Outcome::Unavailable(why) => return CheckResult::new(NAME, false, format!("fit unavailable: {why}")),
    };
    // components are in ascending variance order
    let weights_ok = (fit.weights[1] - MIXTURE_HIGH_WEIGHT).abs() <= MIXTURE_WEIGHT_TOL
        && (fit.weights[0] - (1.0 - MIXTURE_HIGH_WEIGHT)).abs() <= MIXTURE_WEIGHT_TOL;
    let vars_ok = (0..2).all(|i| (fit.variances[i] / MIXTURE_VARIANCES[i] - 1.0).abs() <= MIXTURE_VARIANCE_RTOL);
    let means_ok = fit.means.iter().all(|m| m.abs() <= MIXTURE_MEAN_TOL);
    CheckResult::new(
        NAME,
        weights_ok && vars_ok && means_ok,
        format!(
            "weights {:.4} / {:.4}, variances {:.2} / {:.2}, means {:.3} / {:.3}",
            fit.weights[0], fit.weights[1], fit.variances[0], fit.variances[1], fit.means[0], fit.means[1]
        ),
    )
}

/// KS, mean and second-moment tests of `Z` all fail to reject at [`ALPHA`].
pub fn z_gaussian(s: &StudySummary) -> CheckResult {
    const NAME: &str = "z_gaussian";
    let t = &s.tests;
    match (t.ks_z.ok(), t.t_mean_z.ok(), t.t_second_moment_z.ok()) {
        (Some(ks), Some(m), Some(m2)) => CheckResult::new(
            NAME,
            ks.p_value > ALPHA && m.p_value > ALPHA && m2.p_value > ALPHA,
            format!("p-values KS {:.4}, E(Z) {:.4}, E(Z^2) {:.4}", ks.p_value, m.p_value, m2.p_value),
        ),
        _ => CheckResult::new(NAME, false, "tests unavailable".into()),
    }
}

pub fn var_z(s: &StudySummary) -> CheckResult {
    const NAME: &str = "var_z";
    match s.var_z {
        Some(v) => CheckResult::new(NAME, within(v, VAR_Z_BAND), format!("Var(Z) = {v:.4} (band {VAR_Z_BAND:?})")),
        None => CheckResult::new(NAME, false, "variance unavailable".into()),
    }
}

pub fn w_and_z_naive_non_gaussian(s: &StudySummary) -> CheckResult {
    const NAME: &str = "w_and_z_naive_non_gaussian";
    match (s.tests.ks_w.ok(), s.tests.t_second_moment_z_naive.ok()) {
        (Some(ks), Some(t2)) => CheckResult::new(
            NAME,
            ks.p_value < REJECT_P && t2.p_value < REJECT_P,
            format!("KS(W) p = {:.3e}, E(Z-naive^2) p = {:.3e} (threshold {REJECT_P:e})", ks.p_value, t2.p_value),
        ),
        _ => CheckResult::new(NAME, false, "tests unavailable".into()),
    }
}

pub fn tau_hat_unbiased(s: &StudySummary) -> CheckResult {
    const NAME: &str = "tau_hat_unbiased";
    match s.tau_hat.se {
        Some(se) if se > 0.0 => {
            let k = (s.tau_hat.mean - 1.0) / se;
            CheckResult::new(NAME, k.abs() <= 3.0, format!("mean(tau_hat) = {:.5}, {:.2} SE from 1", s.tau_hat.mean, k))
        }
        _ => CheckResult::new(NAME, false, "standard error unavailable".into()),
    }
}

/// Every single-study check; all skipped below [`MIN_REPS_FOR_CHECKS`].
pub fn study_checks(s: &StudySummary) -> Vec<CheckResult> {
    let checks: [(&str, fn(&StudySummary) -> CheckResult); 6] = [
        ("group_variance_concentration", group_concentration),
        ("mixture_recovery", mixture_recovery),
        ("z_gaussian", z_gaussian),
        ("var_z", var_z),
        ("w_and_z_naive_non_gaussian", w_and_z_naive_non_gaussian),
        ("tau_hat_unbiased", tau_hat_unbiased),
    ];
    checks
        .iter()
        .map(|(name, f)| {
            if s.reps < MIN_REPS_FOR_CHECKS {
                CheckResult::skipped(name, format!("insufficient replicates ({} < {MIN_REPS_FOR_CHECKS})", s.reps))
            } else {
                f(s)
            }
        })
        .collect()
}
