//! Monte Carlo study of the lag-1 causal effect under an adaptive design.
//!
//! Each replication runs `t = 1..=T`. At every `t >= 2` the four potential
//! outcomes `Y_t(A_{t-2}, a, b)` are drawn independently from
//! `Gamma(theta(a), 1)`, then the treatment uniform decides `A_t`. The
//! replication reports `tau`, `tau_hat`, `W = tau_hat - tau` and the oracle
//! variance `psi_bar` (with and without the lag-1 covariance terms).

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brs::{self, AssignmentPolicy, BrsError, LagOneContext, PolicyParams, PotentialBranch};
use crate::stats::{self, Gmm2Fit, KsResult, StatsError, TTest};
use crate::sum::NeumaierSum;
use crate::variance::TabulatedScalarProvider;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("replication {rep_id} failed: {source}")]
    Replication { rep_id: u64, source: BrsError },
    #[error("replication {rep_id}: psi_bar = {psi_bar} is not positive")]
    NonPositiveVariance { rep_id: u64, psi_bar: f64 },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("replication CSV, row {row}: {reason}")]
    Csv { row: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    #[serde(rename = "T")]
    pub horizon: u64,
    pub reps: u64,
    pub master_seed: u64,
    pub theta0: f64,
    pub theta1: f64,
    pub policy: PolicyParams,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

pub const DEFAULT_MASTER_SEED: u64 = 20240521;

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 100_000,
            reps: 10_000,
            master_seed: DEFAULT_MASTER_SEED,
            theta0: 2.0,
            theta1: 3.0,
            policy: PolicyParams::default(),
            workers: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon < 3 {
            return Err(SimError::Config(format!("T = {} must be at least 3", self.horizon)));
        }
        if self.reps < 1 {
            return Err(SimError::Config("reps must be at least 1".into()));
        }
        for (name, v) in [("theta0", self.theta0), ("theta1", self.theta1)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("{name} = {v} must be positive")));
            }
        }
        self.policy.validate().map_err(|e| SimError::Config(e.to_string()))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Per-replication stream seed, a function of `(master_seed, rep_id)` only.
pub fn derive_seed(master_seed: u64, rep_id: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ rep_id)
}

/// One `Gamma(shape, rate)` draw.
pub fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("shape and rate must be positive").sample(rng)
}

/// Outcome samplers for `theta(0)` and `theta(1)`, rate 1.
#[derive(Debug, Clone, Copy)]
pub struct GammaSampler {
    by_prev: [Gamma<f64>; 2],
}

impl GammaSampler {
    pub fn new(theta0: f64, theta1: f64) -> Result<Self, SimError> {
        let g = |s: f64| Gamma::new(s, 1.0).map_err(|e| SimError::Config(format!("gamma shape {s}: {e}")));
        Ok(Self { by_prev: [g(theta0)?, g(theta1)?] })
    }

    #[inline]
    pub fn draw<R: Rng + ?Sized>(&self, a_prev: u8, rng: &mut R) -> f64 {
        self.by_prev[a_prev as usize].sample(rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParityGroup {
    Even,
    Odd,
    /// The design never switched within the horizon.
    None,
}

impl ParityGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParityGroup::Even => "even",
            ParityGroup::Odd => "odd",
            ParityGroup::None => "none",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "even" => Some(ParityGroup::Even),
            "odd" => Some(ParityGroup::Odd),
            "none" => Some(ParityGroup::None),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep_id: u64,
    pub seed: u64,
    pub parity_group: ParityGroup,
    /// 0 when the design never switched.
    pub switch_time: u64,
    pub tau: f64,
    pub tau_hat: f64,
    pub w: f64,
    pub psi_bar: f64,
    pub psi_naive: f64,
    pub z: f64,
    pub z_naive: f64,
}

/// Per-time conditional moments of `W_t` from one replication, `t = 2..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub var_w: Vec<f64>,
    /// `Cov(W_{t-1}, W_t | F_{t-2})`; the `t = 2` entry is 0.
    pub cov_w: Vec<f64>,
}

impl Trace {
    /// Moments of `X_t = scale * W_t` indexed from `t = 2`, lag 1.
    pub fn provider(&self, scale: f64) -> TabulatedScalarProvider {
        let s2 = scale * scale;
        TabulatedScalarProvider {
            start: 2,
            var: self.var_w.iter().map(|v| v * s2).collect(),
            cov: vec![self.cov_w.iter().map(|c| c * s2).collect()],
        }
    }
}

struct Accum {
    tau: NeumaierSum,
    tau_hat: NeumaierSum,
    var: NeumaierSum,
    cov: NeumaierSum,
}

fn simulate_path<F: FnMut(f64, f64)>(config: &SimConfig, rep_id: u64, mut observe: F) -> Result<ReplicationRecord, SimError> {
    let seed = derive_seed(config.master_seed, rep_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = GammaSampler::new(config.theta0, config.theta1)?;
    let err = |source| SimError::Replication { rep_id, source };

    // t = 1: only the treatment is drawn
    let mut policy = AssignmentPolicy::new(config.policy).map_err(|e| SimError::Config(e.to_string()))?;
    let mut policy_before_prev = policy;
    let p1 = policy.assignment_prob(0);
    let mut a_prev = u8::from(rng.random::<f64>() < p1);
    let mut prob_prev = if a_prev == 1 { p1 } else { 1.0 - p1 };
    policy.observe(a_prev, 1);

    let mut ctx = LagOneContext::initial(policy_before_prev);
    let mut prev_branch: Option<PotentialBranch> = None;
    let mut acc = Accum { tau: NeumaierSum::new(), tau_hat: NeumaierSum::new(), var: NeumaierSum::new(), cov: NeumaierSum::new() };

    for t in 2..=config.horizon {
        let mut y = [[0.0; 2]; 2];
        for (a, row) in y.iter_mut().enumerate() {
            for cell in row.iter_mut() {
                *cell = sampler.draw(a as u8, &mut rng);
            }
        }
        let p_cur = policy.assignment_prob(a_prev);
        let a_cur = u8::from(rng.random::<f64>() < p_cur);
        let branch = PotentialBranch { t, y, realized_prev: a_prev, realized_cur: a_cur };

        let est = brs::estimate(&branch, &ctx).map_err(err)?;
        let v = brs::var_w(&branch, &ctx).map_err(err)?;
        let c = match &prev_branch {
            Some(pb) => brs::cov_w(pb, &branch, &ctx).map_err(err)?,
            None => 0.0,
        };
        acc.tau.add(est.tau_t);
        acc.tau_hat.add(est.tau_hat_t);
        acc.var.add(v);
        acc.cov.add(c);
        observe(v, c);

        // advance: the context for t + 1 conditions on F_{t-1}
        policy_before_prev = policy;
        policy.observe(a_cur, t);
        ctx = LagOneContext { t: t + 1, policy: policy_before_prev, a_prev_prev: a_prev, prob_prev_prev: prob_prev };
        prob_prev = if a_cur == 1 { p_cur } else { 1.0 - p_cur };
        a_prev = a_cur;
        prev_branch = Some(branch);
    }

    let horizon = config.horizon as f64;
    let tau = acc.tau.value() / (horizon - 1.0);
    let tau_hat = acc.tau_hat.value() / (horizon - 1.0);
    let var_sum = acc.var.value();
    let psi_bar = (var_sum + 2.0 * acc.cov.value()) / horizon;
    let psi_naive = var_sum / horizon;
    if !(psi_bar > 0.0) {
        return Err(SimError::NonPositiveVariance { rep_id, psi_bar });
    }
    let w = tau_hat - tau;
    let (parity_group, switch_time) = match policy.switch_time() {
        Some(t0) if t0 % 2 == 0 => (ParityGroup::Even, t0),
        Some(t0) => (ParityGroup::Odd, t0),
        None => (ParityGroup::None, 0),
    };
    Ok(ReplicationRecord {
        rep_id,
        seed,
        parity_group,
        switch_time,
        tau,
        tau_hat,
        w,
        psi_bar,
        psi_naive,
        z: (horizon / psi_bar).sqrt() * w,
        z_naive: (horizon / psi_naive).sqrt() * w,
    })
}

pub fn run_replication(config: &SimConfig, rep_id: u64) -> Result<ReplicationRecord, SimError> {
    simulate_path(config, rep_id, |_, _| {})
}

/// As [`run_replication`], also returning the per-time moments.
pub fn run_replication_traced(config: &SimConfig, rep_id: u64) -> Result<(ReplicationRecord, Trace), SimError> {
    let cap = config.horizon.saturating_sub(1) as usize;
    let mut trace = Trace { var_w: Vec::with_capacity(cap), cov_w: Vec::with_capacity(cap) };
    let record = simulate_path(config, rep_id, |v, c| {
        trace.var_w.push(v);
        trace.cov_w.push(c);
    })?;
    Ok((record, trace))
}

const CHUNK: u64 = 256;

/// Runs every replication, handing records to `sink` in `rep_id` order.
pub fn run_study_with<F>(config: &SimConfig, mut sink: F) -> Result<Vec<ReplicationRecord>, SimError>
where
    F: FnMut(&ReplicationRecord) -> Result<(), SimError>,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
    let mut records = Vec::with_capacity(config.reps as usize);
    let mut lo = 0;
    while lo < config.reps {
        let hi = (lo + CHUNK).min(config.reps);
        let chunk: Vec<ReplicationRecord> =
            pool.install(|| (lo..hi).into_par_iter().map(|r| run_replication(config, r)).collect::<Result<_, _>>())?;
        for rec in &chunk {
            sink(rec)?;
        }
        records.extend(chunk);
        lo = hi;
    }
    Ok(records)
}

pub fn run_study(config: &SimConfig) -> Result<(Vec<ReplicationRecord>, StudySummary), SimError> {
    let records = run_study_with(config, |_| Ok(()))?;
    let summary = summarize(&records, config.horizon);
    Ok((records, summary))
}

pub const CSV_HEADER: [&str; 11] =
    ["rep_id", "seed", "parity_group", "switch_time", "tau", "tau_hat", "w", "psi_bar", "psi_naive", "z", "z_naive"];

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Streaming writer for the replication CSV.
pub struct RecordWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> RecordWriter<W> {
    pub fn new(out: W) -> Result<Self, SimError> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        inner.write_record(CSV_HEADER).map_err(csv_io)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, r: &ReplicationRecord) -> Result<(), SimError> {
        self.inner
            .write_record([
                r.rep_id.to_string(),
                r.seed.to_string(),
                r.parity_group.as_str().to_string(),
                r.switch_time.to_string(),
                fmt_f64(r.tau),
                fmt_f64(r.tau_hat),
                fmt_f64(r.w),
                fmt_f64(r.psi_bar),
                fmt_f64(r.psi_naive),
                fmt_f64(r.z),
                fmt_f64(r.z_naive),
            ])
            .map_err(csv_io)
    }

    pub fn finish(mut self) -> Result<W, SimError> {
        self.inner.flush()?;
        self.inner.into_inner().map_err(|e| SimError::Io(std::io::Error::other(e.to_string())))
    }
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e.to_string()))
}

pub fn write_records<W: Write>(out: W, records: &[ReplicationRecord]) -> Result<W, SimError> {
    let mut w = RecordWriter::new(out)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

/// Parses a replication CSV; the error names the first offending row
/// (1-based, header is row 1).
pub fn read_records<R: Read>(input: R) -> Result<Vec<ReplicationRecord>, SimError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| SimError::Csv { row: 1, reason: e.to_string() })?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(SimError::Csv { row: 1, reason: format!("expected header {}", CSV_HEADER.join(",")) });
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 2;
        let bad = |reason: String| SimError::Csv { row: row_no, reason };
        let row = row.map_err(|e| bad(e.to_string()))?;
        let int = |j: usize| row[j].parse::<u64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[j])));
        let num = |j: usize| row[j].parse::<f64>().map_err(|e| bad(format!("{}: {e}", CSV_HEADER[j])));
        let parity_group =
            ParityGroup::parse(&row[2]).ok_or_else(|| bad(format!("parity_group: unknown value {:?}", &row[2])))?;
        records.push(ReplicationRecord {
            rep_id: int(0)?,
            seed: int(1)?,
            parity_group,
            switch_time: int(3)?,
            tau: num(4)?,
            tau_hat: num(5)?,
            w: num(6)?,
            psi_bar: num(7)?,
            psi_naive: num(8)?,
            z: num(9)?,
            z_naive: num(10)?,
        });
    }
    if records.is_empty() {
        return Err(SimError::Csv { row: 2, reason: "no replication rows".into() });
    }
    Ok(records)
}

/// Recovers `T` from `z^2 = T w^2 / psi_bar` (median over records).
pub fn infer_horizon(records: &[ReplicationRecord]) -> Option<u64> {
    let est: Vec<f64> = records
        .iter()
        .filter(|r| r.w != 0.0 && r.w.is_finite() && r.z.is_finite())
        .map(|r| r.psi_bar * (r.z / r.w).powi(2))
        .collect();
    if est.is_empty() {
        None
    } else {
        Some(stats::median(&est).round() as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub fraction: f64,
    pub psi_bar_mean: f64,
    pub psi_bar_sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityGroups {
    pub even: Option<GroupStats>,
    pub odd: Option<GroupStats>,
    pub none: Option<GroupStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    /// `sd / sqrt(n)`.
    pub se: Option<f64>,
}

impl Moments {
    fn of(xs: &[f64]) -> Self {
        let d = stats::describe(xs);
        let sd = (xs.len() >= 2).then_some(d.sd);
        Self { n: d.n, mean: d.mean, sd, se: sd.map(|s| s / (d.n as f64).sqrt()) }
    }
}

/// A test result or the reason it could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome<T> {
    Ok(T),
    Unavailable(String),
}

impl<T> Outcome<T> {
    fn from(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(v) => Outcome::Ok(v),
            Err(e) => Outcome::Unavailable(e.to_string()),
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok(v) => Some(v),
            Outcome::Unavailable(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResults {
    /// `W` against `N(0, SD(W)^2)`.
    pub ks_w: Outcome<KsResult>,
    pub ks_z: Outcome<KsResult>,
    pub t_mean_z: Outcome<TTest>,
    pub t_second_moment_z: Outcome<TTest>,
    pub ks_z_naive: Outcome<KsResult>,
    pub t_mean_z_naive: Outcome<TTest>,
    pub t_second_moment_z_naive: Outcome<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub reps: usize,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub groups: ParityGroups,
    /// Two-component mixture fitted to `sqrt(T) W`.
    pub mixture: Outcome<Gmm2Fit>,
    pub tests: TestResults,
    pub tau: Moments,
    pub tau_hat: Moments,
    pub w: Moments,
    pub z: Moments,
    pub z_naive: Moments,
    /// Sample variance of `Z`.
    pub var_z: Option<f64>,
    pub kde_bandwidth_rule: String,
}

pub const KDE_BANDWIDTH_RULE: &str = "silverman: sd * (3n/4)^(-1/5)";

fn group_stats(records: &[ReplicationRecord], g: ParityGroup) -> Option<GroupStats> {
    let psi: Vec<f64> = records.iter().filter(|r| r.parity_group == g).map(|r| r.psi_bar).collect();
    if psi.is_empty() {
        return None;
    }
    let m = Moments::of(&psi);
    Some(GroupStats { count: psi.len(), fraction: psi.len() as f64 / records.len() as f64, psi_bar_mean: m.mean, psi_bar_sd: m.sd })
}

/// Computes the study summary from the records alone.
pub fn summarize(records: &[ReplicationRecord], horizon: u64) -> StudySummary {
    let col = |f: fn(&ReplicationRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let w = col(|r| r.w);
    let z = col(|r| r.z);
    let z_naive = col(|r| r.z_naive);
    let root_t = (horizon as f64).sqrt();
    let scaled_w: Vec<f64> = w.iter().map(|x| root_t * x).collect();
    let w_moments = Moments::of(&w);
    let ks_w = match w_moments.sd {
        Some(sd) => Outcome::from(stats::ks_gaussian(&w, 0.0, sd)),
        None => Outcome::Unavailable(StatsError::TooFewSamples { needed: 2, got: w.len() }.to_string()),
    };
    let z_moments = Moments::of(&z);
    StudySummary {
        reps: records.len(),
        horizon,
        groups: ParityGroups {
            even: group_stats(records, ParityGroup::Even),
            odd: group_stats(records, ParityGroup::Odd),
            none: group_stats(records, ParityGroup::None),
        },
        mixture: Outcome::from(stats::gmm2_fit(&scaled_w)),
        tests: TestResults {
            ks_w,
            ks_z: Outcome::from(stats::ks_gaussian(&z, 0.0, 1.0)),
            t_mean_z: Outcome::from(stats::t_test_mean(&z, 0.0)),
            t_second_moment_z: Outcome::from(stats::t_test_second_moment(&z)),
            ks_z_naive: Outcome::from(stats::ks_gaussian(&z_naive, 0.0, 1.0)),
            t_mean_z_naive: Outcome::from(stats::t_test_mean(&z_naive, 0.0)),
            t_second_moment_z_naive: Outcome::from(stats::t_test_second_moment(&z_naive)),
        },
        tau: Moments::of(&col(|r| r.tau)),
        tau_hat: Moments::of(&col(|r| r.tau_hat)),
        w: w_moments,
        var_z: z_moments.sd.map(|s| s * s),
        z: z_moments,
        z_naive: Moments::of(&z_naive),
        kde_bandwidth_rule: KDE_BANDWIDTH_RULE.to_string(),
    }
}
