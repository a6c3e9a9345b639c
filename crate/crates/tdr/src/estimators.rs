//! Doubly robust (DR) and truncated doubly robust (TDR) off-policy value
//! estimators.
//!
//! For the discounted objective with start distribution `p0`,
//!
//! ```text
//! DR = (1 - gamma) sum_s p0(s) v(s)
//!      + (1/T) sum_t w_t eta_t (R_t + gamma v(S_{t+1}) - q(S_t, A_t))
//! ```
//!
//! with `eta_t = pi_e(A_t|S_t) / pi_b(A_t|S_t)` and weights
//! `w_t = omega(S_t)`. For the long-run average objective the estimator is
//! self-normalized,
//!
//! ```text
//! DR = sum_t w_t eta_t (R_t + V(S_{t+1}) - Q(S_t, A_t)) / sum_t w_t eta_t ,
//! ```
//!
//! TDR replaces `w_t` by `min(omega(S_t), tau_t)` everywhere, including the
//! long-run denominator. The truncation level `tau_t` comes from a
//! `TruncationSchedule`; the untruncated schedule reproduces DR exactly.

use crate::dist::StateDist;
use crate::error::{Result, TdrError};
use crate::mdp::{self, PolicyTable, Trajectory};
use crate::ratio::DensityRatioTable;
use crate::value::{QKind, QTable};
use std::fmt;

/// How the truncation level `tau_t` evolves over a trajectory of length `T`.
/// Time is one-based inside the levels, so the per-step schedule starts at
/// `tau_0 = 1` rather than zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruncationSchedule {
    /// No truncation: DR.
    Untruncated,
    /// `tau_t = (t + 1)^alpha`.
    PerStep { alpha: f64 },
    /// `tau_t = T^alpha` for the full horizon `T`.
    Horizon { alpha: f64 },
    /// A constant level.
    Fixed { level: f64 },
}

impl TruncationSchedule {
    pub fn per_step(alpha: f64) -> Result<Self> {
        check_exponent(alpha)?;
        Ok(Self::PerStep { alpha })
    }

    pub fn horizon(alpha: f64) -> Result<Self> {
        check_exponent(alpha)?;
        Ok(Self::Horizon { alpha })
    }

    pub fn fixed(level: f64) -> Result<Self> {
        if !level.is_finite() || level < 0.0 {
            return Err(TdrError::InvalidInput(format!(
                "truncation level {level} must be nonnegative"
            )));
        }
        Ok(Self::Fixed { level })
    }

    /// The level applied to the term at zero-based time `t` of a trajectory
    /// with `horizon` transitions.
    pub fn level(&self, t: usize, horizon: usize) -> f64 {
        match *self {
            TruncationSchedule::Untruncated => f64::INFINITY,
            TruncationSchedule::PerStep { alpha } => ((t + 1) as f64).powf(alpha),
            TruncationSchedule::Horizon { alpha } => (horizon as f64).powf(alpha),
            TruncationSchedule::Fixed { level } => level,
        }
    }

    /// Parses the compact notation used by configs and result files:
    /// `none`, `t^0.7`, `T^0.7`, or `fixed:2.5`. Lowercase `t` grows with
    /// time, uppercase `T` is pinned to the horizon.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "none" {
            return Ok(Self::Untruncated);
        }
        if let Some(alpha) = text.strip_prefix("t^") {
            return Self::per_step(parse_float("schedule exponent", alpha)?);
        }
        if let Some(alpha) = text.strip_prefix("T^") {
            return Self::horizon(parse_float("schedule exponent", alpha)?);
        }
        if let Some(level) = text.strip_prefix("fixed:") {
            return Self::fixed(parse_float("truncation level", level)?);
        }
        Err(TdrError::Parse(format!(
            "unknown schedule {text:?}, expected none, t^A, T^A, or fixed:L"
        )))
    }
}

impl fmt::Display for TruncationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruncationSchedule::Untruncated => write!(f, "none"),
            TruncationSchedule::PerStep { alpha } => write!(f, "t^{alpha}"),
            TruncationSchedule::Horizon { alpha } => write!(f, "T^{alpha}"),
            TruncationSchedule::Fixed { level } => write!(f, "fixed:{level}"),
        }
    }
}

fn check_exponent(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(TdrError::InvalidInput(format!(
            "schedule exponent {alpha} must be nonnegative"
        )));
    }
    Ok(())
}

fn parse_float(what: &str, text: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| TdrError::Parse(format!("{what} {text:?} is not a number")))
}

/// A point estimate together with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResult {
    pub estimate: f64,
    pub schedule: TruncationSchedule,
    pub horizon: usize,
    /// Terms whose density-ratio weight was clipped by the schedule.
    pub n_truncated: usize,
    /// Plug-in variance of the estimator's per-step terms, using the same
    /// clipped weights as the estimate.
    pub plug_in_variance: Option<f64>,
    /// Nuisance lookups that fell back to a table default.
    pub n_missing_nuisance: usize,
}

impl EstimatorResult {
    /// Half width of the normal-approximation confidence interval
    /// `z * sqrt(variance / T)`, when a plug-in variance is available.
    pub fn ci_halfwidth(&self, z: f64) -> Option<f64> {
        self.plug_in_variance.map(|v| z * (v / self.horizon as f64).sqrt())
    }
}

struct MissingCounter(usize);

impl MissingCounter {
    fn q(&mut self, table: &QTable, state: usize, action: usize) -> f64 {
        if !table.contains(state, action) {
            self.0 += 1;
        }
        table.q(state, action)
    }

    /// Implied state value, counting only lookups the policy actually weights.
    fn value(&mut self, table: &QTable, pi_e: &PolicyTable, state: usize) -> f64 {
        let u = pi_e.treat_prob(state);
        let mut v = 0.0;
        if u < 1.0 {
            v += (1.0 - u) * self.q(table, state, 0);
        }
        if u > 0.0 {
            v += u * self.q(table, state, 1);
        }
        v
    }

    fn omega(&mut self, table: &DensityRatioTable, state: usize) -> f64 {
        if !table.contains(state) {
            self.0 += 1;
        }
        table.omega(state)
    }
}

fn check_nonempty(traj: &Trajectory) -> Result<()> {
    if traj.is_empty() {
        return Err(TdrError::InvalidInput("empty trajectory".into()));
    }
    Ok(())
}

/// TDR for the discounted objective.
#[allow(clippy::too_many_arguments)]
pub fn tdr_discounted(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
    gamma: f64,
    p0: &StateDist,
    schedule: TruncationSchedule,
) -> Result<EstimatorResult> {
    check_nonempty(traj)?;
    match q_hat.kind() {
        QKind::Discounted { gamma: g } if g == gamma => {}
        _ => {
            return Err(TdrError::InvalidInput(format!(
                "Q-table kind {:?} does not match a discounted objective with gamma = {gamma}",
                q_hat.kind()
            )))
        }
    }
    let horizon = traj.len();
    let mut missing = MissingCounter(0);

    let mut base = 0.0;
    for (s, p) in p0.iter() {
        if p > 0.0 {
            base += p * missing.value(q_hat, pi_e, s);
        }
    }
    base *= 1.0 - gamma;

    let mut correction = 0.0;
    let mut var_acc = 0.0;
    let mut n_truncated = 0;
    for (t, tr) in traj.transitions().iter().enumerate() {
        let eta = mdp::policy_ratio(pi_e, pi_b, tr.state, tr.action)?;
        let omega = missing.omega(omega_hat, tr.state);
        let tau = schedule.level(t, horizon);
        let w = if omega > tau {
            n_truncated += 1;
            tau
        } else {
            omega
        };
        let q_sa = missing.q(q_hat, tr.state, tr.action);
        let v_next = missing.value(q_hat, pi_e, tr.next_state);
        let term = w * eta * (tr.reward + gamma * v_next - q_sa);
        correction += term;
        var_acc += term * term;
    }
    let t_len = horizon as f64;
    Ok(EstimatorResult {
        estimate: base + correction / t_len,
        schedule,
        horizon,
        n_truncated,
        plug_in_variance: Some(var_acc / t_len),
        n_missing_nuisance: missing.0,
    })
}

/// DR for the discounted objective: TDR without truncation.
pub fn dr_discounted(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
    gamma: f64,
    p0: &StateDist,
) -> Result<EstimatorResult> {
    tdr_discounted(traj, q_hat, omega_hat, pi_e, pi_b, gamma, p0, TruncationSchedule::Untruncated)
}

/// Self-normalized TDR for the long-run average objective. The truncated
/// weights appear in both the numerator and the denominator.
pub fn tdr_longrun(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
    schedule: TruncationSchedule,
) -> Result<EstimatorResult> {
    check_nonempty(traj)?;
    if !matches!(q_hat.kind(), QKind::Differential { .. }) {
        return Err(TdrError::InvalidInput(
            "long-run estimators need a differential Q-table".into(),
        ));
    }
    let horizon = traj.len();
    let mut missing = MissingCounter(0);

    let mut numerator = 0.0;
    let mut denominator = 0.0;
    // Accumulate sum w^2 b^2, sum w^2 b, sum w^2 so the centered variance
    // needs no second pass.
    let mut m2_bb = 0.0;
    let mut m2_b = 0.0;
    let mut m2 = 0.0;
    let mut n_truncated = 0;
    for (t, tr) in traj.transitions().iter().enumerate() {
        let eta = mdp::policy_ratio(pi_e, pi_b, tr.state, tr.action)?;
        let omega = missing.omega(omega_hat, tr.state);
        let tau = schedule.level(t, horizon);
        let w = if omega > tau {
            n_truncated += 1;
            tau
        } else {
            omega
        };
        let weight = w * eta;
        let q_sa = missing.q(q_hat, tr.state, tr.action);
        let v_next = missing.value(q_hat, pi_e, tr.next_state);
        let b = tr.reward + v_next - q_sa;
        numerator += weight * b;
        denominator += weight;
        m2_bb += weight * weight * b * b;
        m2_b += weight * weight * b;
        m2 += weight * weight;
    }
    if !(denominator > 0.0) {
        return Err(TdrError::DegenerateWeights);
    }
    let estimate = numerator / denominator;
    let t_len = horizon as f64;
    let variance = (m2_bb - 2.0 * estimate * m2_b + estimate * estimate * m2) / t_len;
    Ok(EstimatorResult {
        estimate,
        schedule,
        horizon,
        n_truncated,
        plug_in_variance: Some(variance.max(0.0)),
        n_missing_nuisance: missing.0,
    })
}

/// DR for the long-run average objective: TDR without truncation.
pub fn dr_longrun(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
) -> Result<EstimatorResult> {
    tdr_longrun(traj, q_hat, omega_hat, pi_e, pi_b, TruncationSchedule::Untruncated)
}

/// The plug-in variance `sigma_b^2 = (1/T) sum_t [omega(S_t) eta_t (R_t +
/// gamma v(S_{t+1}) - q(S_t, A_t))]^2` of the untruncated discounted
/// estimator.
pub fn plug_in_variance_discounted(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
    gamma: f64,
) -> Result<f64> {
    let p0 = StateDist::point_mass(traj.transitions()[0].state);
    let result = tdr_discounted(
        traj,
        q_hat,
        omega_hat,
        pi_e,
        pi_b,
        gamma,
        &p0,
        TruncationSchedule::Untruncated,
    )?;
    Ok(result.plug_in_variance.unwrap())
}

/// The plug-in variance `Sigma_b^2 = (1/T) sum_t [omega(S_t) eta_t (R_t +
/// V(S_{t+1}) - Q(S_t, A_t) - theta_ref)]^2` of the untruncated long-run
/// estimator, centered at a reference value (typically the point estimate).
pub fn plug_in_variance_longrun(
    traj: &Trajectory,
    q_hat: &QTable,
    omega_hat: &DensityRatioTable,
    pi_e: &PolicyTable,
    pi_b: &PolicyTable,
    theta_ref: f64,
) -> Result<f64> {
    check_nonempty(traj)?;
    if !matches!(q_hat.kind(), QKind::Differential { .. }) {
        return Err(TdrError::InvalidInput(
            "long-run estimators need a differential Q-table".into(),
        ));
    }
    let mut missing = MissingCounter(0);
    let mut acc = 0.0;
    for tr in traj.transitions() {
        let eta = mdp::policy_ratio(pi_e, pi_b, tr.state, tr.action)?;
        let weight = missing.omega(omega_hat, tr.state) * eta;
        let b = tr.reward + missing.value(q_hat, pi_e, tr.next_state)
            - missing.q(q_hat, tr.state, tr.action);
        let term = weight * (b - theta_ref);
        acc += term * term;
    }
    Ok(acc / traj.len() as f64)
}

/// The target being estimated.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    Discounted { gamma: f64, p0: StateDist },
    LongRun,
}

/// Everything needed to evaluate a trajectory: policies, nuisances, and the
/// objective. Bundling them keeps the adaptive-truncation and experiment
/// layers agnostic to which objective is in play.
#[derive(Debug, Clone)]
pub struct OpeContext {
    pub pi_e: PolicyTable,
    pub pi_b: PolicyTable,
    pub q_hat: QTable,
    pub omega_hat: DensityRatioTable,
    pub objective: Objective,
}

impl OpeContext {
    pub fn validate(&self) -> Result<()> {
        match (&self.objective, self.q_hat.kind()) {
            (Objective::Discounted { gamma, .. }, QKind::Discounted { gamma: g }) if g == *gamma => Ok(()),
            (Objective::LongRun, QKind::Differential { .. }) => Ok(()),
            (objective, kind) => Err(TdrError::InvalidInput(format!(
                "Q-table kind {kind:?} does not match objective {objective:?}"
            ))),
        }
    }

    pub fn tdr(&self, traj: &Trajectory, schedule: TruncationSchedule) -> Result<EstimatorResult> {
        match &self.objective {
            Objective::Discounted { gamma, p0 } => tdr_discounted(
                traj,
                &self.q_hat,
                &self.omega_hat,
                &self.pi_e,
                &self.pi_b,
                *gamma,
                p0,
                schedule,
            ),
            Objective::LongRun => {
                tdr_longrun(traj, &self.q_hat, &self.omega_hat, &self.pi_e, &self.pi_b, schedule)
            }
        }
    }

    pub fn dr(&self, traj: &Trajectory) -> Result<EstimatorResult> {
        self.tdr(traj, TruncationSchedule::Untruncated)
    }
}
