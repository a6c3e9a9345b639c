//! Stationary and discounted state-density ratios: exact oracles and
//! moment-matching estimation from behavior data.
//!
//! The long-run ratio is `omega(s) = p_e(s) / p_b(s)` for the stationary
//! distributions of the evaluation and behavior chains. The discounted ratio
//! replaces `p_e` with the normalized discounted visit distribution
//! `p^gamma(s) = (1 - gamma) sum_t gamma^t P(S_t = s)` started from `p0`
//! under the evaluation policy.
//!
//! Moment matching exploits the stationary flow identity
//! `E[omega(S) f(S)] = E[omega(S) eta(S, A) f(S')]`: with visit counts
//! `N_j`, the ratio-weighted transition counts `M_(j,i)`, and
//! `H = diag(N) - M`, the sample version asks `H beta ~ 0` subject to the
//! normalization `c' beta = 1` with `c = N / n` and `beta >= 0`. States never
//! visited as a pair source are excluded from the system and reported as
//! zero.

use crate::dist::StateDist;
use crate::error::{Result, TdrError};
use crate::mdp::{self, MdpSpec, PolicyTable, Trajectory};
use crate::qp::solve_constrained_ls;
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RatioKind {
    LongRun,
    Discounted { gamma: f64 },
}

/// A tabular state-density ratio. States missing from the table count as
/// zero, which downstream estimators surface in their diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRatioTable {
    values: BTreeMap<usize, f64>,
    kind: RatioKind,
}

impl DensityRatioTable {
    pub fn new(kind: RatioKind) -> Self {
        Self { values: BTreeMap::new(), kind }
    }

    pub fn kind(&self) -> RatioKind {
        self.kind
    }

    pub fn omega(&self, state: usize) -> f64 {
        self.values.get(&state).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, state: usize) -> bool {
        self.values.contains_key(&state)
    }

    pub fn set(&mut self, state: usize, value: f64) -> Result<()> {
        if !value.is_finite() || value < 0.0 {
            return Err(TdrError::InvalidInput(format!(
                "density ratio at state {state} is {value}, expected nonnegative"
            )));
        }
        self.values.insert(state, value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values.iter().map(|(&s, &w)| (s, w))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn ratio_table(p_num: &StateDist, p_den: &StateDist, kind: RatioKind) -> Result<DensityRatioTable> {
    let mut table = DensityRatioTable::new(kind);
    let lo = p_num.offset().min(p_den.offset());
    let hi = p_num.max_state().max(p_den.max_state());
    for s in lo..=hi {
        let num = p_num.prob(s);
        let den = p_den.prob(s);
        if den == 0.0 {
            if num > 0.0 {
                return Err(TdrError::DistributionalOverlap { state: s, p_e: num });
            }
            continue;
        }
        table.set(s, num / den)?;
    }
    Ok(table)
}

/// The long-run ratio `p_e / p_b` from explicit stationary distributions.
pub fn exact_omega(p_e: &StateDist, p_b: &StateDist) -> Result<DensityRatioTable> {
    ratio_table(p_e, p_b, RatioKind::LongRun)
}

/// The normalized discounted visit distribution under `pi_e` started from
/// `p0`, truncated at `s_max`. The series is cut once its remaining mass
/// drops below `tol` and renormalized.
pub fn discounted_visit_distribution(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    p0: &StateDist,
    gamma: f64,
    s_max: usize,
    tol: f64,
) -> Result<StateDist> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(TdrError::InvalidInput(format!("gamma {gamma} outside (0, 1)")));
    }
    if !(tol > 0.0) {
        return Err(TdrError::InvalidInput(format!("tolerance {tol} must be positive")));
    }
    let lo = mdp.min_state();
    let hi = mdp.max_state(s_max);
    if p0.offset() < lo || p0.max_state() > hi {
        return Err(TdrError::InvalidInput(format!(
            "initial distribution on states {}..={} leaves the truncated space {lo}..={hi}",
            p0.offset(),
            p0.max_state()
        )));
    }
    let kernel = mdp::marginal_kernel(mdp, pi_e, s_max)?;
    let n = hi - lo + 1;
    let mut current = vec![0.0f64; n];
    for (s, p) in p0.iter() {
        current[s - lo] = p;
    }
    let mut acc = vec![0.0f64; n];
    let mut weight = 1.0 - gamma;
    loop {
        for i in 0..n {
            acc[i] += weight * current[i];
        }
        // After accumulating step t the remaining series mass is gamma^(t+1).
        weight *= gamma;
        if weight / (1.0 - gamma) < tol {
            break;
        }
        let mut next = vec![0.0f64; n];
        for (i, row) in kernel.iter().enumerate() {
            if current[i] == 0.0 {
                continue;
            }
            for &(s_next, p) in row {
                next[s_next - lo] += current[i] * p;
            }
        }
        current = next;
    }
    StateDist::from_weights(lo, acc)
}

/// The discounted ratio `p^gamma(.; p0) / p_b`.
pub fn exact_omega_discounted(
    mdp: &MdpSpec,
    pi_e: &PolicyTable,
    p0: &StateDist,
    p_b: &StateDist,
    gamma: f64,
    s_max: usize,
    tol: f64,
) -> Result<DensityRatioTable> {
    let p_gamma = discounted_visit_distribution(mdp, pi_e, p0, gamma, s_max, tol)?;
    ratio_table(&p_gamma, p_b, RatioKind::Discounted { gamma })
}

/// Estimates the stationary density ratio from a contiguous behavior
/// trajectory by moment matching over the given state universe.
///
/// With `n` transitions, the first `n - 1` consecutive pairs enter the
/// system, so every state it references was visited as a source. Sources
/// outside `states` are an error; members of `states` never visited as a
/// source are returned as zero.
pub fn estimate_omega_moment_matching(
    traj: &Trajectory,
    pi_b: &PolicyTable,
    pi_e: &PolicyTable,
    states: &[usize],
) -> Result<DensityRatioTable> {
    if traj.len() < 2 {
        return Err(TdrError::InvalidInput(
            "moment matching needs at least 2 transitions".into(),
        ));
    }
    if !traj.is_contiguous() {
        return Err(TdrError::InvalidInput(
            "moment matching needs a contiguous trajectory".into(),
        ));
    }
    let mut index: BTreeMap<usize, usize> = BTreeMap::new();
    for &s in states {
        if index.insert(s, 0).is_some() {
            return Err(TdrError::InvalidInput(format!("duplicate state {s} in universe")));
        }
    }
    for (i, (_, slot)) in index.iter_mut().enumerate() {
        *slot = i;
    }
    let m = index.len();
    if m == 0 {
        return Err(TdrError::InvalidInput("empty state universe".into()));
    }

    let pairs = &traj.transitions()[..traj.len() - 1];
    let n_pairs = pairs.len();
    let mut counts = vec![0.0f64; m];
    let mut weighted = DMatrix::<f64>::zeros(m, m);
    for tr in pairs {
        let eta = mdp::policy_ratio(pi_e, pi_b, tr.state, tr.action)?;
        let i = *index.get(&tr.state).ok_or_else(|| {
            TdrError::InvalidInput(format!("trajectory visits state {} outside the universe", tr.state))
        })?;
        let j = *index.get(&tr.next_state).ok_or_else(|| {
            TdrError::InvalidInput(format!(
                "trajectory visits state {} outside the universe",
                tr.next_state
            ))
        })?;
        counts[i] += 1.0;
        weighted[(j, i)] += eta;
    }

    let visited: Vec<usize> = (0..m).filter(|&i| counts[i] > 0.0).collect();
    let mv = visited.len();
    let mut h = DMatrix::<f64>::zeros(mv, mv);
    for (col, &i) in visited.iter().enumerate() {
        for (row, &j) in visited.iter().enumerate() {
            h[(row, col)] = -weighted[(j, i)];
        }
        h[(col, col)] += counts[i];
    }
    let c = DVector::from_iterator(mv, visited.iter().map(|&i| counts[i] / n_pairs as f64));
    let solution = solve_constrained_ls(&h, &c)?;

    let mut table = DensityRatioTable::new(RatioKind::LongRun);
    let states_by_index: Vec<usize> = index.keys().copied().collect();
    for &s in &states_by_index {
        table.set(s, 0.0)?;
    }
    for (k, &i) in visited.iter().enumerate() {
        table.set(states_by_index[i], solution.beta[k])?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{sample_trajectory, stationary_chain, ChainMdp, InitialState, Transition};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn chain(q: usize, beta: f64) -> MdpSpec {
        MdpSpec::Chain(ChainMdp::new(q, beta).unwrap())
    }

    #[test]
    fn table_defaults_and_validation() {
        let mut t = DensityRatioTable::new(RatioKind::LongRun);
        assert_eq!(t.omega(4), 0.0);
        assert!(!t.contains(4));
        t.set(4, 2.5).unwrap();
        assert_eq!(t.omega(4), 2.5);
        assert!(t.set(1, -0.5).is_err());
        assert!(t.set(1, f64::INFINITY).is_err());
    }

    #[test]
    fn exact_omega_identical_distributions_give_ones() {
        let p = stationary_chain(0.2, 0.5, 20).unwrap();
        let omega = exact_omega(&p, &p).unwrap();
        for (_, w) in omega.iter() {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_omega_matches_chain_closed_form() {
        let p_e = stationary_chain(1.0, 0.5, 20).unwrap();
        let p_b = stationary_chain(0.2, 0.5, 20).unwrap();
        let omega = exact_omega(&p_e, &p_b).unwrap();
        for s in [1usize, 5, 12, 19] {
            let expect = (0.5 / 0.9) * 5.0f64.powi(s as i32 - 1);
            assert!(
                ((omega.omega(s) - expect) / expect).abs() < 1e-12,
                "state {s}: {} vs {expect}",
                omega.omega(s)
            );
        }
        let expect_top = 5.0f64.powi(19);
        assert!(((omega.omega(20) - expect_top) / expect_top).abs() < 1e-12);

        // The ratio integrates to one under the behavior distribution.
        let mean: f64 = p_b.iter().map(|(s, p)| p * omega.omega(s)).sum();
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_omega_flags_missing_overlap() {
        let p_e = stationary_chain(0.2, 0.5, 20).unwrap();
        let p_b = StateDist::point_mass(1);
        assert!(matches!(
            exact_omega(&p_e, &p_b),
            Err(TdrError::DistributionalOverlap { state: 2, .. })
        ));
    }

    #[test]
    fn discounted_visit_from_stationary_start_is_stationary() {
        let mdp = chain(20, 0.5);
        let pi_e = PolicyTable::constant(1.0).unwrap();
        let p_e = stationary_chain(1.0, 0.5, 20).unwrap();
        let p_gamma = discounted_visit_distribution(&mdp, &pi_e, &p_e, 0.5, 0, 1e-13).unwrap();
        assert!(p_gamma.total_variation(&p_e) < 1e-10);
    }

    #[test]
    fn discounted_visit_small_gamma_is_the_initial_distribution() {
        let mdp = chain(20, 0.5);
        let pi_e = PolicyTable::constant(1.0).unwrap();
        let p0 = StateDist::point_mass(3);
        let p_gamma = discounted_visit_distribution(&mdp, &pi_e, &p0, 1e-6, 0, 1e-13).unwrap();
        assert!((p_gamma.prob(3) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn discounted_visit_matches_monte_carlo() {
        let mdp = chain(20, 0.5);
        let pi_e = PolicyTable::constant(1.0).unwrap();
        let p0 = StateDist::point_mass(1);
        let gamma = 0.5;
        let p_gamma = discounted_visit_distribution(&mdp, &pi_e, &p0, gamma, 0, 1e-13).unwrap();

        // Draw K ~ Geometric(1 - gamma) and record S_K.
        let mut rng = stream_rng(31, 0);
        let draws = 500_000;
        let mut counts = [0usize; 21];
        for _ in 0..draws {
            let mut state = 1usize;
            while rng.random::<f64>() < gamma {
                let (next, _) = mdp.step(state, 1, &mut rng).unwrap();
                state = next;
            }
            counts[state] += 1;
        }
        let empirical =
            StateDist::from_weights(1, counts[1..].iter().map(|&c| c as f64).collect()).unwrap();
        let tv = p_gamma.total_variation(&empirical);
        assert!(tv < 0.01, "tv = {tv}");
    }

    #[test]
    fn exact_omega_discounted_stationary_start_matches_long_run_ratio() {
        let mdp = chain(20, 0.5);
        let pi_e = PolicyTable::constant(1.0).unwrap();
        let p_e = stationary_chain(1.0, 0.5, 20).unwrap();
        let p_b = stationary_chain(0.2, 0.5, 20).unwrap();
        let longrun = exact_omega(&p_e, &p_b).unwrap();
        let discounted =
            exact_omega_discounted(&mdp, &pi_e, &p_e, &p_b, 0.5, 0, 1e-13).unwrap();
        assert_eq!(discounted.kind(), RatioKind::Discounted { gamma: 0.5 });
        for s in 1..=20usize {
            let rel = (discounted.omega(s) - longrun.omega(s)) / longrun.omega(s).max(1.0);
            assert!(rel.abs() < 1e-8, "state {s}: {rel}");
        }
    }

    #[test]
    fn moment_matching_two_state_cycle_is_exact() {
        // Deterministic cycle 1 -> 2 -> 1 with matching policies: the flow
        // equations are solved exactly by beta = (1, 1).
        let mut transitions = Vec::new();
        for t in 0..11usize {
            let (s, s_next) = if t % 2 == 0 { (1, 2) } else { (2, 1) };
            transitions.push(Transition { state: s, action: t % 2, reward: 0.0, next_state: s_next });
        }
        let traj = Trajectory::new(transitions);
        let pi = PolicyTable::constant(0.5).unwrap();
        let omega = estimate_omega_moment_matching(&traj, &pi, &pi, &[1, 2]).unwrap();
        assert!((omega.omega(1) - 1.0).abs() < 1e-6);
        assert!((omega.omega(2) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn moment_matching_recovers_ones_for_matching_policies() {
        let mdp = chain(20, 0.5);
        let pi = PolicyTable::constant(0.2).unwrap();
        let mut rng = stream_rng(32, 0);
        let traj = sample_trajectory(&mdp, &pi, 50_000, &InitialState::Fixed(1), &mut rng).unwrap();
        let states: Vec<usize> = (1..=20).collect();
        let omega = estimate_omega_moment_matching(&traj, &pi, &pi, &states).unwrap();
        let p_b = stationary_chain(0.2, 0.5, 20).unwrap();
        let weighted_l1: f64 = p_b.iter().map(|(s, p)| p * (omega.omega(s) - 1.0).abs()).sum();
        assert!(weighted_l1 < 0.05, "weighted l1 = {weighted_l1}");
    }

    #[test]
    fn moment_matching_tracks_the_exact_ratio() {
        let mdp = chain(20, 0.5);
        let pi_b = PolicyTable::constant(0.2).unwrap();
        let pi_e = PolicyTable::constant(1.0).unwrap();
        let mut rng = stream_rng(33, 0);
        let traj = sample_trajectory(&mdp, &pi_b, 100_000, &InitialState::Fixed(1), &mut rng).unwrap();
        let states: Vec<usize> = (1..=20).collect();
        let omega = estimate_omega_moment_matching(&traj, &pi_b, &pi_e, &states).unwrap();
        let p_b = stationary_chain(0.2, 0.5, 20).unwrap();
        let p_e = stationary_chain(1.0, 0.5, 20).unwrap();
        let exact = exact_omega(&p_e, &p_b).unwrap();
        let weighted_l1: f64 =
            p_b.iter().map(|(s, p)| p * (omega.omega(s) - exact.omega(s)).abs()).sum();
        assert!(weighted_l1 < 0.2, "weighted l1 = {weighted_l1}");
    }

    #[test]
    fn moment_matching_pins_unvisited_states_to_zero() {
        let traj = Trajectory::new(vec![
            Transition { state: 1, action: 0, reward: 0.0, next_state: 1 },
            Transition { state: 1, action: 0, reward: 0.0, next_state: 1 },
            Transition { state: 1, action: 0, reward: 0.0, next_state: 1 },
        ]);
        let pi = PolicyTable::constant(0.5).unwrap();
        let omega = estimate_omega_moment_matching(&traj, &pi, &pi, &[1, 2, 3]).unwrap();
        assert!(omega.contains(2) && omega.contains(3));
        assert_eq!(omega.omega(2), 0.0);
        assert_eq!(omega.omega(3), 0.0);
        assert!((omega.omega(1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn moment_matching_rejects_bad_inputs() {
        let pi = PolicyTable::constant(0.5).unwrap();
        let t1 = Transition { state: 1, action: 0, reward: 0.0, next_state: 2 };
        let t2 = Transition { state: 2, action: 0, reward: 0.0, next_state: 1 };
        let t_gap = Transition { state: 5, action: 0, reward: 0.0, next_state: 1 };

        let short = Trajectory::new(vec![t1.clone()]);
        assert!(estimate_omega_moment_matching(&short, &pi, &pi, &[1, 2]).is_err());

        let broken = Trajectory::new(vec![t1.clone(), t_gap, t2.clone()]);
        assert!(estimate_omega_moment_matching(&broken, &pi, &pi, &[1, 2, 5]).is_err());

        let traj = Trajectory::new(vec![t1.clone(), t2.clone(), t1.clone()]);
        assert!(estimate_omega_moment_matching(&traj, &pi, &pi, &[1]).is_err());
        assert!(estimate_omega_moment_matching(&traj, &pi, &pi, &[1, 2, 2]).is_err());
        assert!(estimate_omega_moment_matching(&traj, &pi, &pi, &[]).is_err());
    }
}
