//! Action-value nuisances: temporal-difference learners and exact
//! dynamic-programming oracles.
//!
//! Discounted tables approximate `q(s, a) = E[sum_t gamma^t R_t | S_0 = s,
//! A_0 = a]` under the evaluation policy. Differential tables approximate the
//! long-run pair `(Q, theta)` satisfying `Q(s, a) + theta = E[R + V(S') | s, a]`
//! with `V(s) = sum_a pi_e(a|s) Q(s, a)` normalized to mean zero under the
//! evaluation policy's stationary distribution.

use crate::error::{Result, TdrError};
use crate::mdp::{MdpSpec, PolicyTable, Trajectory};
use crate::{dist::StateDist, mdp};
use std::collections::BTreeMap;

const VALUE_ITERATION_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QKind {
    Discounted { gamma: f64 },
    Differential { theta_hat: f64 },
}

/// A tabular action-value function. States missing from the table fall back
/// to `default_value` (zero unless configured), so learners can start from an
/// empty table and estimators can be probed with partial nuisances.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: BTreeMap<(usize, usize), f64>,
    kind: QKind,
    default_value: f64,
}

impl QTable {
    pub fn discounted(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(TdrError::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
        }
        Ok(Self { values: BTreeMap::new(), kind: QKind::Discounted { gamma }, default_value: 0.0 })
    }

    pub fn differential() -> Self {
        Self {
            values: BTreeMap::new(),
            kind: QKind::Differential { theta_hat: 0.0 },
            default_value: 0.0,
        }
    }

    pub fn kind(&self) -> QKind {
        self.kind
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.kind {
            QKind::Discounted { gamma } => Some(gamma),
            QKind::Differential { .. } => None,
        }
    }

    pub fn theta_hat(&self) -> Option<f64> {
        match self.kind {
            QKind::Discounted { .. } => None,
            QKind::Differential { theta_hat } => Some(theta_hat),
        }
    }

    pub fn set_theta_hat(&mut self, theta: f64) -> Result<()> {
        match &mut self.kind {
            QKind::Differential { theta_hat } => {
                *theta_hat = theta;
                Ok(())
            }
            QKind::Discounted { .. } => {
                Err(TdrError::InvalidInput("theta_hat only applies to differential tables".into()))
            }
        }
    }

    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.values.get(&(state, action)).copied().unwrap_or(self.default_value)
    }

    pub fn contains(&self, state: usize, action: usize) -> bool {
        self.values.contains_key(&(state, action))
    }

    pub fn set(&mut self, state: usize, action: usize, value: f64) {
        self.values.insert((state, action), value);
    }

    pub fn default_value(&self) -> f64 {
        self.default_value
    }

    pub fn set_default_value(&mut self, value: f64) {
        self.default_value = value;
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Iterates over `((state, action), value)` entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        self.values.iter().map(|(&k, &v)| (k, v))
    }

    /// Adds `kappa` to every entry and to the default, shifting the whole
    /// function by a constant.
    pub fn shift(&mut self, kappa: f64) {
        for v in self.values.values_mut() {
            *v += kappa;
        }
        self.default_value += kappa;
    }

    pub fn max_abs(&self) -> f64 {
        self.values.values().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// The state value `v(s) = sum_a pi_e(a|s) q(s, a)` implied by a Q-table.
pub fn value_from_q(q: &QTable, pi_e: &PolicyTable, state: usize) -> f64 {
    let u = pi_e.treat_prob(state);
    (1.0 - u) * q.q(state, 0) + u * q.q(state, 1)
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if !rate.is_finite() || rate < 0.0 {
        return Err(TdrError::InvalidInput(format!("{name} {rate} must be nonnegative")));
    }
    Ok(())
}

/// One temporal-difference pass over a trajectory for the discounted
/// objective: `q(s, a) += nu * (r + gamma * v(s') - q(s, a))`.
pub fn td_discounted(
    traj: &Trajectory,
    pi_e: &PolicyTable,
    gamma: f64,
    learning_rate: f64,
    init: QTable,
) -> Result<QTable> {
    match init.kind() {
        QKind::Discounted { gamma: g } if g == gamma => {}
        _ => {
            return Err(TdrError::InvalidInput(format!(
                "initial table must be discounted with gamma = {gamma}"
            )))
        }
    }
    check_rate("learning rate", learning_rate)?;
    let mut q = init;
    for tr in traj.transitions() {
        let target = tr.reward + gamma * value_from_q(&q, pi_e, tr.next_state);
        let old = q.q(tr.state, tr.action);
        q.set(tr.state, tr.action, old + learning_rate * (target - old));
    }
    Ok(q)
}

/// One temporal-difference pass for the long-run average objective. Each
/// transition yields the residual `d = r - theta_hat + V(s') - Q(s, a)`
/// computed from the current table, then updates `Q(s, a) += nu1 * d` and
/// `theta_hat += nu2 * d`.
pub fn td_differential(
    traj: &Trajectory,
    pi_e: &PolicyTable,
    nu1: f64,
    nu2: f64,
    init: QTable,
) -> Result<QTable> {
    if !matches!(init.kind(), QKind::Differential { .. }) {
        return Err(TdrError::InvalidInput("initial table must be differential".into()));
    }
    check_rate("Q learning rate", nu1)?;
    check_rate("theta learning rate", nu2)?;
    let mut q = init;
    let mut theta = q.theta_hat().unwrap();
    for tr in traj.transitions() {
        let residual = tr.reward - theta + value_from_q(&q, pi_e, tr.next_state) - q.q(tr.state, tr.action);
        let old = q.q(tr.state, tr.action);
        q.set(tr.state, tr.action, old + nu1 * residual);
        theta += nu2 * residual;
    }
    q.set_theta_hat(theta)?;
    Ok(q)
}

/// Exact discounted action values by value iteration on the truncated state
/// space, run until successive sweeps differ by less than `tol` in sup norm.
pub fn exact_q_discounted(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    gamma: f64,
    s_max: usize,
    tol: f64,
) -> Result<QTable> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(TdrError::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(TdrError::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    let n = hi - lo + 1;
    let rows = kernel_by_action(mdp, s_max)?;
    let rewards: Vec<f64> = (lo..=hi).map(|s| mdp.mean_reward(s)).collect();
    let treat: Vec<f64> = (lo..=hi).map(|s| pi_e.treat_prob(s)).collect();

    let mut q = vec![[0.0f64; 2]; n];
    let mut residual = f64::INFINITY;
    for _ in 0..VALUE_ITERATION_CAP {
        let v: Vec<f64> = (0..n).map(|i| (1.0 - treat[i]) * q[i][0] + treat[i] * q[i][1]).collect();
        let mut next = vec![[0.0f64; 2]; n];
        residual = 0.0;
        for i in 0..n {
            for a in 0..2 {
                let mut future = 0.0;
                for &(s_next, p) in &rows[i][a] {
                    future += p * v[s_next - lo];
                }
                next[i][a] = rewards[i] + gamma * future;
                residual = residual.max((next[i][a] - q[i][a]).abs());
            }
        }
        q = next;
        if residual < tol {
            let mut table = QTable::discounted(gamma)?;
            for i in 0..n {
                table.set(lo + i, 0, q[i][0]);
                table.set(lo + i, 1, q[i][1]);
            }
            return Ok(table);
        }
    }
    Err(TdrError::NonConvergence { what: "discounted value iteration", cap: VALUE_ITERATION_CAP, residual })
}

/// Exact differential action values and long-run average reward by relative
/// value iteration. The returned table carries `theta_hat` equal to the
/// stationary mean reward under the evaluation policy, and its implied state
/// values are normalized to mean zero under that stationary distribution.
pub fn exact_q_differential(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    s_max: usize,
    tol: f64,
) -> Result<QTable> {
    if !(tol > 0.0) {
        return Err(TdrError::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    let n = hi - lo + 1;
    let p_e = mdp::stationary_numeric(mdp, pi_e, s_max, tol.min(1e-10))?;
    let rewards: Vec<f64> = (lo..=hi).map(|s| mdp.mean_reward(s)).collect();
    let theta: f64 = (0..n).map(|i| p_e.prob(lo + i) * rewards[i]).sum();
    let rows = kernel_by_action(mdp, s_max)?;
    let treat: Vec<f64> = (lo..=hi).map(|s| pi_e.treat_prob(s)).collect();

    let mut q = vec![[0.0f64; 2]; n];
    let mut residual = f64::INFINITY;
    for _ in 0..VALUE_ITERATION_CAP {
        let v: Vec<f64> = (0..n).map(|i| (1.0 - treat[i]) * q[i][0] + treat[i] * q[i][1]).collect();
        let mut next = vec![[0.0f64; 2]; n];
        for i in 0..n {
            for a in 0..2 {
                let mut future = 0.0;
                for &(s_next, p) in &rows[i][a] {
                    future += p * v[s_next - lo];
                }
                next[i][a] = rewards[i] - theta + future;
            }
        }
        // Pin E_{p_e}[V] to zero so the iteration has a unique fixed point.
        let mean_v: f64 = (0..n)
            .map(|i| p_e.prob(lo + i) * ((1.0 - treat[i]) * next[i][0] + treat[i] * next[i][1]))
            .sum();
        residual = 0.0;
        for i in 0..n {
            for a in 0..2 {
                next[i][a] -= mean_v;
                residual = residual.max((next[i][a] - q[i][a]).abs());
            }
        }
        q = next;
        if residual < tol {
            let mut table = QTable::differential();
            for i in 0..n {
                table.set(lo + i, 0, q[i][0]);
                table.set(lo + i, 1, q[i][1]);
            }
            table.set_theta_hat(theta)?;
            return Ok(table);
        }
    }
    Err(TdrError::NonConvergence { what: "relative value iteration", cap: VALUE_ITERATION_CAP, residual })
}

/// Per-state sparse transition rows, one per action.
type KernelRows = Vec<[Vec<(usize, f64)>; 2]>;

fn kernel_by_action(mdp: &MdpSpec, s_max: usize) -> Result<KernelRows> {
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    (lo..=hi)
        .map(|s| Ok([mdp.transition_probs(s, 0, s_max)?, mdp.transition_probs(s, 1, s_max)?]))
        .collect()
}

/// Sup-norm residual of the discounted Bellman identity
/// `q(s, a) = r(s) + gamma * E[v(S') | s, a]` over the truncated space.
pub fn bellman_residual_discounted(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    q: &QTable,
    s_max: usize,
) -> Result<f64> {
    let gamma = q
        .gamma()
        .ok_or_else(|| TdrError::InvalidInput("expected a discounted table".into()))?;
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    let mut worst = 0.0f64;
    for s in lo..=hi {
        for a in 0..2 {
            let mut future = 0.0;
            for (s_next, p) in mdp.transition_probs(s, a, s_max)? {
                future += p * value_from_q(q, pi_e, s_next);
            }
            worst = worst.max((q.q(s, a) - (mdp.mean_reward(s) + gamma * future)).abs());
        }
    }
    Ok(worst)
}

/// Sup-norm residual of the differential Bellman identity
/// `Q(s, a) + theta = r(s) + E[V(S') | s, a]` over the truncated space.
pub fn bellman_residual_differential(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    q: &QTable,
    s_max: usize,
) -> Result<f64> {
    let theta = q
        .theta_hat()
        .ok_or_else(|| TdrError::InvalidInput("expected a differential table".into()))?;
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    let mut worst = 0.0f64;
    for s in lo..=hi {
        for a in 0..2 {
            let mut future = 0.0;
            for (s_next, p) in mdp.transition_probs(s, a, s_max)? {
                future += p * value_from_q(q, pi_e, s_next);
            }
            worst = worst.max((q.q(s, a) + theta - (mdp.mean_reward(s) + future)).abs());
        }
    }
    Ok(worst)
}

/// Mean of the implied state values under `dist`, useful for checking the
/// normalization of differential tables.
pub fn mean_value_under(q: &QTable, pi_e: &PolicyTable, dist: &StateDist) -> f64 {
    dist.expectation(|s| value_from_q(q, pi_e, s))
}
