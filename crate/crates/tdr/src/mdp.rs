//! Tabular Markov decision processes, binary-action policies, and trajectory
//! sampling.
//!
//! Two environments are provided. `ChainMdp` is a chain on states `1..=Q`:
//! action 0 resets to state 1; action 1 advances to `min(s + 1, Q)` with
//! probability `1 - reset_prob` and otherwise resets to state 1. `QueueMdp`
//! is a single-server queue on `0, 1, 2, ...`: one job is served per step
//! while `B` new jobs arrive, `B ~ Poisson(lambda_a)` with the rate chosen by
//! the action, so `X' = max(X - 1 + B, 0)`. Both emit the reward
//! `level - dip / sqrt(s*)` plus uniform noise on `[-h, h]`, where `s*` is
//! the state for the chain and the state plus one for the queue.

use crate::dist::StateDist;
use crate::error::{Result, TdrError};
use rand::Rng;
use std::collections::BTreeMap;

const POISSON_CAP: usize = 10_000;
const STATIONARY_CAP: usize = 200_000;

/// A stationary Markov policy over the binary action set `{0, 1}`, stored as
/// the treatment probability `pi(1|s)` per state with a default for states
/// not listed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    default_treat: f64,
    overrides: BTreeMap<usize, f64>,
}

impl PolicyTable {
    /// A policy that treats with the same probability in every state.
    pub fn constant(treat_prob: f64) -> Result<Self> {
        Self::with_overrides(treat_prob, BTreeMap::new())
    }

    pub fn with_overrides(default_treat: f64, overrides: BTreeMap<usize, f64>) -> Result<Self> {
        for &p in overrides.values().chain(std::iter::once(&default_treat)) {
            if !(0.0..=1.0).contains(&p) {
                return Err(TdrError::InvalidInput(format!(
                    "treatment probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self { default_treat, overrides })
    }

    /// `pi(1|s)`.
    pub fn treat_prob(&self, state: usize) -> f64 {
        self.overrides.get(&state).copied().unwrap_or(self.default_treat)
    }

    /// `pi(a|s)` for `a` in `{0, 1}`.
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        let u = self.treat_prob(state);
        if action == 1 {
            u
        } else {
            1.0 - u
        }
    }

    pub fn sample(&self, state: usize, rng: &mut impl Rng) -> usize {
        usize::from(rng.random::<f64>() < self.treat_prob(state))
    }
}

/// The importance ratio `pi_e(a|s) / pi_b(a|s)`. Returns zero when both
/// policies put zero mass on the action and an overlap error when only the
/// behavior policy does.
pub fn policy_ratio(pi_e: &PolicyTable, pi_b: &PolicyTable, state: usize, action: usize) -> Result<f64> {
    if action > 1 {
        return Err(TdrError::InvalidInput(format!("action {action} outside {{0, 1}}")));
    }
    let pe = pi_e.prob(state, action);
    let pb = pi_b.prob(state, action);
    if pb == 0.0 {
        if pe == 0.0 {
            return Ok(0.0);
        }
        return Err(TdrError::PolicyOverlap { state, action, pi_e: pe });
    }
    Ok(pe / pb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMdp {
    pub num_states: usize,
    pub reset_prob: f64,
    pub reward_level: f64,
    pub reward_dip: f64,
    pub noise_halfwidth: f64,
}

impl ChainMdp {
    pub fn new(num_states: usize, reset_prob: f64) -> Result<Self> {
        let mdp = Self {
            num_states,
            reset_prob,
            reward_level: 10.0,
            reward_dip: 5.0,
            noise_halfwidth: 0.5,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn with_noise_halfwidth(mut self, h: f64) -> Result<Self> {
        self.noise_halfwidth = h;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(TdrError::InvalidInput(format!(
                "chain needs at least 2 states, got {}",
                self.num_states
            )));
        }
        if !(0.0..=1.0).contains(&self.reset_prob) {
            return Err(TdrError::InvalidInput(format!(
                "reset probability {} outside [0, 1]",
                self.reset_prob
            )));
        }
        check_reward_params(self.reward_level, self.reward_dip, self.noise_halfwidth)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueueMdp {
    pub lambda0: f64,
    pub lambda1: f64,
    pub reward_level: f64,
    pub reward_dip: f64,
    pub noise_halfwidth: f64,
}

impl QueueMdp {
    pub fn new(lambda0: f64, lambda1: f64) -> Result<Self> {
        let mdp = Self {
            lambda0,
            lambda1,
            reward_level: 10.0,
            reward_dip: 5.0,
            noise_halfwidth: 0.5,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn with_noise_halfwidth(mut self, h: f64) -> Result<Self> {
        self.noise_halfwidth = h;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        for lambda in [self.lambda0, self.lambda1] {
            if !(0.0..=700.0).contains(&lambda) {
                return Err(TdrError::InvalidInput(format!(
                    "arrival rate {lambda} outside [0, 700]"
                )));
            }
        }
        check_reward_params(self.reward_level, self.reward_dip, self.noise_halfwidth)
    }
}

fn check_reward_params(level: f64, dip: f64, h: f64) -> Result<()> {
    if !level.is_finite() || !dip.is_finite() {
        return Err(TdrError::InvalidInput("reward parameters must be finite".into()));
    }
    if !h.is_finite() || h < 0.0 {
        return Err(TdrError::InvalidInput(format!("noise halfwidth {h} must be nonnegative")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MdpSpec {
    Chain(ChainMdp),
    Queue(QueueMdp),
}

impl MdpSpec {
    /// Smallest valid state: 1 for the chain, 0 for the queue.
    pub fn min_state(&self) -> usize {
        match self {
            MdpSpec::Chain(_) => 1,
            MdpSpec::Queue(_) => 0,
        }
    }

    /// Largest state of the (possibly truncated) state space used by exact
    /// computations. The chain ignores `s_max` since its space is finite.
    pub fn max_state(&self, s_max: usize) -> usize {
        match self {
            MdpSpec::Chain(c) => c.num_states,
            MdpSpec::Queue(_) => s_max,
        }
    }

    pub fn check_state(&self, state: usize) -> Result<()> {
        match self {
            MdpSpec::Chain(c) => {
                if state < 1 || state > c.num_states {
                    return Err(TdrError::InvalidState {
                        state,
                        reason: format!("chain states are 1..={}", c.num_states),
                    });
                }
            }
            MdpSpec::Queue(_) => {}
        }
        Ok(())
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action > 1 {
            return Err(TdrError::InvalidInput(format!("action {action} outside {{0, 1}}")));
        }
        Ok(())
    }

    /// Mean reward of a state (the noise term averages to zero).
    pub fn mean_reward(&self, state: usize) -> f64 {
        match self {
            MdpSpec::Chain(c) => c.reward_level - c.reward_dip / (state as f64).sqrt(),
            MdpSpec::Queue(q) => q.reward_level - q.reward_dip / (state as f64 + 1.0).sqrt(),
        }
    }

    fn noise_halfwidth(&self) -> f64 {
        match self {
            MdpSpec::Chain(c) => c.noise_halfwidth,
            MdpSpec::Queue(q) => q.noise_halfwidth,
        }
    }

    /// Draws one environment step. The reward noise is drawn before the
    /// transition, so a fixed generator state yields a fixed `(next, reward)`
    /// pair.
    pub fn step(&self, state: usize, action: usize, rng: &mut impl Rng) -> Result<(usize, f64)> {
        self.check_state(state)?;
        self.check_action(action)?;
        let h = self.noise_halfwidth();
        let noise = if h > 0.0 { h * (2.0 * rng.random::<f64>() - 1.0) } else { 0.0 };
        let reward = self.mean_reward(state) + noise;
        let next = match self {
            MdpSpec::Chain(c) => {
                if action == 0 || rng.random::<f64>() < c.reset_prob {
                    1
                } else {
                    (state + 1).min(c.num_states)
                }
            }
            MdpSpec::Queue(q) => {
                let lambda = if action == 0 { q.lambda0 } else { q.lambda1 };
                let arrivals = sample_poisson(lambda, rng);
                (state + arrivals).saturating_sub(1)
            }
        };
        Ok((next, reward))
    }

    /// The transition law `P(. | state, action)` truncated at `s_max`: mass
    /// that would land beyond `s_max` is lumped onto `s_max`. Rows sum to one
    /// exactly.
    pub fn transition_probs(&self, state: usize, action: usize, s_max: usize) -> Result<Vec<(usize, f64)>> {
        self.check_state(state)?;
        self.check_action(action)?;
        match self {
            MdpSpec::Chain(c) => {
                let reset = if action == 0 { 1.0 } else { c.reset_prob };
                let advance = (state + 1).min(c.num_states);
                let mut row = Vec::new();
                if reset > 0.0 {
                    row.push((1, reset));
                }
                if reset < 1.0 {
                    row.push((advance, 1.0 - reset));
                }
                Ok(row)
            }
            MdpSpec::Queue(q) => {
                let lambda = if action == 0 { q.lambda0 } else { q.lambda1 };
                let mut row: Vec<(usize, f64)> = Vec::new();
                let mut push = |s: usize, p: f64| match row.last_mut() {
                    Some(last) if last.0 == s => last.1 += p,
                    _ => row.push((s, p)),
                };
                let mut pmf = (-lambda).exp();
                let mut cum = 0.0;
                let mut arrivals = 0usize;
                loop {
                    let next = (state + arrivals).saturating_sub(1);
                    if next >= s_max {
                        push(s_max, 1.0 - cum);
                        break;
                    }
                    cum += pmf;
                    if 1.0 - cum <= 1e-15 {
                        push(next, pmf + (1.0 - cum));
                        break;
                    }
                    push(next, pmf);
                    arrivals += 1;
                    pmf *= lambda / arrivals as f64;
                }
                Ok(row)
            }
        }
    }
}

/// Poisson sampling by inversion of the cumulative distribution.
fn sample_poisson(lambda: f64, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut k = 0usize;
    let mut pmf = (-lambda).exp();
    let mut cum = pmf;
    while u >= cum && k < POISSON_CAP {
        k += 1;
        pmf *= lambda / k as f64;
        cum += pmf;
    }
    k
}

/// One observed step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// A finite trajectory stored as `T` transitions. The source states of
/// consecutive transitions need not match: block-bootstrap resamples are
/// trajectories too.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>) -> Self {
        Self { transitions }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// Whether each transition starts in the state the previous one reached.
    pub fn is_contiguous(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }

    pub fn terminal_state(&self) -> Option<usize> {
        self.transitions.last().map(|tr| tr.next_state)
    }

    /// The first `len` transitions as a new trajectory.
    pub fn prefix(&self, len: usize) -> Trajectory {
        Trajectory::new(self.transitions[..len.min(self.transitions.len())].to_vec())
    }
}

/// Where a sampled trajectory starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(usize),
    Random(StateDist),
}

/// Rolls out `len` steps of `policy` in `mdp`.
pub fn sample_trajectory(
    mdp: &MdpSpec,
    policy: &PolicyTable,
    len: usize,
    init: &InitialState,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    if len == 0 {
        return Err(TdrError::InvalidInput("trajectory length must be positive".into()));
    }
    let mut state = match init {
        InitialState::Fixed(s) => *s,
        InitialState::Random(dist) => dist.sample(rng),
    };
    mdp.check_state(state)?;
    let mut transitions = Vec::with_capacity(len);
    for _ in 0..len {
        let action = policy.sample(state, rng);
        let (next, reward) = mdp.step(state, action, rng)?;
        transitions.push(Transition { state, action, reward, next_state: next });
        state = next;
    }
    Ok(Trajectory::new(transitions))
}

/// Closed-form stationary distribution of the chain under a constant
/// treatment probability `u`: with `v = u (1 - beta)`, state `s < Q` has mass
/// `(1 - v) v^(s-1)` and state `Q` has mass `v^(Q-1)`.
pub fn stationary_chain(treat_prob: f64, reset_prob: f64, num_states: usize) -> Result<StateDist> {
    if num_states < 2 {
        return Err(TdrError::InvalidInput(format!(
            "chain needs at least 2 states, got {num_states}"
        )));
    }
    for (name, p) in [("treatment probability", treat_prob), ("reset probability", reset_prob)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(TdrError::InvalidInput(format!("{name} {p} outside [0, 1]")));
        }
    }
    let v = treat_prob * (1.0 - reset_prob);
    let mut probs = Vec::with_capacity(num_states);
    for s in 1..num_states {
        probs.push((1.0 - v) * v.powi(s as i32 - 1));
    }
    probs.push(v.powi(num_states as i32 - 1));
    StateDist::new(1, probs)
}

/// Marginal one-step kernel rows `P_pi(s' | s)` on the truncated state space,
/// indexed by `s - min_state`.
pub(crate) fn marginal_kernel(
    mdp: &MdpSpec,
    policy: &PolicyTable,
    s_max: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    let mut rows = Vec::with_capacity(hi - lo + 1);
    for s in lo..=hi {
        let u = policy.treat_prob(s);
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for (action, weight) in [(0usize, 1.0 - u), (1usize, u)] {
            if weight == 0.0 {
                continue;
            }
            for (next, p) in mdp.transition_probs(s, action, s_max)? {
                *row.entry(next).or_insert(0.0) += weight * p;
            }
        }
        rows.push(row.into_iter().collect());
    }
    Ok(rows)
}

/// Stationary distribution of the policy-induced state chain by power
/// iteration on the truncated space, run until successive iterates differ by
/// less than `tol` in L1.
pub fn stationary_numeric(
    mdp: &MdpSpec,
    policy: &PolicyTable,
    s_max: usize,
    tol: f64,
) -> Result<StateDist> {
    if !(tol > 0.0) {
        return Err(TdrError::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    if hi < lo {
        return Err(TdrError::InvalidInput("empty truncated state space".into()));
    }
    let kernel = marginal_kernel(mdp, policy, s_max)?;
    let n = hi - lo + 1;
    let mut p = vec![1.0 / n as f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..STATIONARY_CAP {
        let mut next = vec![0.0; n];
        for (i, row) in kernel.iter().enumerate() {
            if p[i] == 0.0 {
                continue;
            }
            for &(s_next, prob) in row {
                next[s_next - lo] += p[i] * prob;
            }
        }
        let total: f64 = next.iter().sum();
        for x in next.iter_mut() {
            *x /= total;
        }
        residual = p.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if residual < tol {
            return StateDist::new(lo, p);
        }
    }
    Err(TdrError::NonConvergence {
        what: "stationary distribution power iteration",
        cap: STATIONARY_CAP,
        residual,
    })
}
