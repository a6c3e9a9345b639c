//! Monte-Carlo experiment harness: build a problem from a configuration,
//! prepare nuisances once, sweep horizons and replications in parallel, and
//! aggregate against the exact ground truth.
//!
//! Determinism contract: replication `r` of a sweep draws from stream `r` of
//! the configured seed, and nuisance training draws from a reserved stream,
//! so results are identical regardless of thread count and two configs
//! sharing a seed see identical evaluation data.

use crate::dist::StateDist;
use crate::error::{Result, TdrError};
use crate::estimators::{Objective, OpeContext, TruncationSchedule};
use crate::lepski::{lepski_select, LepskiConfig};
use crate::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable, QueueMdp, Trajectory};
use crate::ratio::{self, DensityRatioTable, RatioKind};
use crate::rng::{stream_rng, NUISANCE_STREAM};
use crate::value::{self, QTable};
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

pub const DEFAULT_ORACLE_S_MAX: usize = 500;
pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;
pub const DEFAULT_BURN_IN: usize = 1000;

/// Stationary distributions of the subcritical queue decay geometrically, so
/// far tail states underflow to zero in double precision long before they
/// could ever be visited. Oracle ratio tables only cover states whose
/// behavior probability stays above this floor.
const P_B_SUPPORT_FLOOR: f64 = 1e-250;

#[derive(Debug, Clone, PartialEq)]
pub enum SetupConfig {
    Chain { num_states: usize, reset_prob: f64 },
    Queue { lambda0: f64, lambda1: f64 },
}

/// How the start distribution of a discounted objective is resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum P0Config {
    EvalStationary,
    BehaviorStationary,
    State(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveConfig {
    Discounted { gamma: f64, p0: P0Config },
    LongRun,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QSource {
    Oracle,
    /// Temporal-difference learning on an auxiliary behavior trajectory.
    /// `rate2` is the average-reward learning rate of the differential
    /// learner and is ignored for discounted objectives.
    Td { train_len: usize, rate: f64, rate2: f64, epochs: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum RatioSource {
    Oracle,
    MomentMatching { train_len: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceConfig {
    pub q: QSource,
    pub ratio: RatioSource,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub setup: SetupConfig,
    pub objective: ObjectiveConfig,
    pub behavior_prob: f64,
    pub eval_prob: f64,
    pub nuisance: NuisanceConfig,
    pub schedules: Vec<TruncationSchedule>,
    pub lepski: Option<LepskiConfig>,
    pub horizons: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Truncation of the queue state space for exact computations.
    pub oracle_s_max: usize,
    pub oracle_tol: f64,
    /// Steps discarded before evaluation data collection on setups without a
    /// closed-form stationary start (the queue).
    pub burn_in: usize,
}

impl ExperimentConfig {
    pub fn new(name: &str, setup: SetupConfig, objective: ObjectiveConfig) -> Self {
        Self {
            name: name.to_string(),
            setup,
            objective,
            behavior_prob: 0.5,
            eval_prob: 0.5,
            nuisance: NuisanceConfig { q: QSource::Oracle, ratio: RatioSource::Oracle },
            schedules: vec![TruncationSchedule::Untruncated],
            lepski: None,
            horizons: vec![1000],
            replications: 100,
            seed: 0,
            oracle_s_max: DEFAULT_ORACLE_S_MAX,
            oracle_tol: DEFAULT_ORACLE_TOL,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("behavior_prob", self.behavior_prob), ("eval_prob", self.eval_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TdrError::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.schedules.is_empty() {
            return Err(TdrError::Config("no truncation schedules configured".into()));
        }
        if self.horizons.is_empty() {
            return Err(TdrError::Config("no horizons configured".into()));
        }
        if self.horizons.contains(&0) {
            return Err(TdrError::Config("horizons must be positive".into()));
        }
        if self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(TdrError::Config("horizons must be strictly increasing".into()));
        }
        if self.replications == 0 {
            return Err(TdrError::Config("need at least one replication".into()));
        }
        if !(self.oracle_tol > 0.0) {
            return Err(TdrError::Config(format!("oracle_tol {} must be positive", self.oracle_tol)));
        }
        if matches!(self.setup, SetupConfig::Queue { .. }) && self.oracle_s_max == 0 {
            return Err(TdrError::Config("oracle_s_max must be positive for the queue".into()));
        }
        if let ObjectiveConfig::Discounted { gamma, .. } = self.objective {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(TdrError::Config(format!("gamma {gamma} outside (0, 1)")));
            }
        }
        match &self.nuisance.q {
            QSource::Td { train_len, rate, rate2, epochs } => {
                if *train_len < 2 || *epochs == 0 {
                    return Err(TdrError::Config("TD needs train_len >= 2 and epochs >= 1".into()));
                }
                if !rate.is_finite() || *rate < 0.0 || !rate2.is_finite() || *rate2 < 0.0 {
                    return Err(TdrError::Config("TD learning rates must be nonnegative".into()));
                }
            }
            QSource::Oracle => {}
        }
        if let RatioSource::MomentMatching { train_len } = self.nuisance.ratio {
            if train_len < 2 {
                return Err(TdrError::Config("moment matching needs train_len >= 2".into()));
            }
        }
        if let Some(lepski) = &self.lepski {
            lepski.validate()?;
        }
        Ok(())
    }

    fn mdp(&self) -> Result<MdpSpec> {
        Ok(match self.setup {
            SetupConfig::Chain { num_states, reset_prob } => {
                MdpSpec::Chain(ChainMdp::new(num_states, reset_prob)?)
            }
            SetupConfig::Queue { lambda0, lambda1 } => {
                MdpSpec::Queue(QueueMdp::new(lambda0, lambda1)?)
            }
        })
    }

    /// The queue is positive recurrent only when the mean arrival rate under
    /// the policy stays below the unit service rate; otherwise no stationary
    /// distribution exists.
    fn check_ergodic(&self, treat_prob: f64, which: &str) -> Result<()> {
        if let SetupConfig::Queue { lambda0, lambda1 } = self.setup {
            let rate = (1.0 - treat_prob) * lambda0 + treat_prob * lambda1;
            if rate >= 1.0 {
                return Err(TdrError::Config(format!(
                    "queue is not ergodic under the {which} policy: \
                     mean arrival rate {rate} >= 1"
                )));
            }
        }
        Ok(())
    }

    fn stationary(&self, mdp: &MdpSpec, treat_prob: f64) -> Result<StateDist> {
        match self.setup {
            SetupConfig::Chain { num_states, reset_prob } => {
                mdp::stationary_chain(treat_prob, reset_prob, num_states)
            }
            SetupConfig::Queue { .. } => {
                let policy = PolicyTable::constant(treat_prob)?;
                mdp::stationary_numeric(mdp, &policy, self.oracle_s_max, self.oracle_tol)
            }
        }
    }

    fn resolve_p0(&self, p_e: &StateDist, p_b: &StateDist) -> Result<Option<StateDist>> {
        match &self.objective {
            ObjectiveConfig::LongRun => Ok(None),
            ObjectiveConfig::Discounted { p0, .. } => Ok(Some(match p0 {
                P0Config::EvalStationary => p_e.clone(),
                P0Config::BehaviorStationary => p_b.clone(),
                P0Config::State(s) => StateDist::point_mass(*s),
            })),
        }
    }
}

/// Oracle ratio table restricted to states whose denominator probability is
/// representable; see `P_B_SUPPORT_FLOOR`.
fn ratio_with_support_floor(
    p_num: &StateDist,
    p_den: &StateDist,
    kind: RatioKind,
) -> Result<DensityRatioTable> {
    let mut table = DensityRatioTable::new(kind);
    let lo = p_num.offset().min(p_den.offset());
    let hi = p_num.max_state().max(p_den.max_state());
    for s in lo..=hi {
        let den = p_den.prob(s);
        if den >= P_B_SUPPORT_FLOOR {
            table.set(s, p_num.prob(s) / den)?;
        }
    }
    Ok(table)
}

/// Everything `run_replication` needs, prepared once per configuration:
/// environment, policies, nuisances, the evaluation-data start, and the
/// ground truth.
#[derive(Debug, Clone)]
pub struct PreparedProblem {
    pub mdp: MdpSpec,
    pub ctx: OpeContext,
    pub eval_init: InitialState,
    pub burn_in: usize,
    pub oracle: f64,
}

/// The exact target value of a configuration.
pub fn ground_truth(cfg: &ExperimentConfig) -> Result<f64> {
    cfg.validate()?;
    cfg.check_ergodic(cfg.eval_prob, "evaluation")?;
    cfg.check_ergodic(cfg.behavior_prob, "behavior")?;
    let mdp = cfg.mdp()?;
    let pi_e = PolicyTable::constant(cfg.eval_prob)?;
    match &cfg.objective {
        ObjectiveConfig::LongRun => {
            let p_e = cfg.stationary(&mdp, cfg.eval_prob)?;
            Ok(p_e.expectation(|s| mdp.mean_reward(s)))
        }
        ObjectiveConfig::Discounted { gamma, .. } => {
            let q = value::exact_q_discounted(&mdp, &pi_e, *gamma, cfg.oracle_s_max, cfg.oracle_tol)?;
            let p_e = cfg.stationary(&mdp, cfg.eval_prob)?;
            let p_b = cfg.stationary(&mdp, cfg.behavior_prob)?;
            let p0 = cfg.resolve_p0(&p_e, &p_b)?.unwrap();
            Ok((1.0 - *gamma) * p0.expectation(|s| value::value_from_q(&q, &pi_e, s)))
        }
    }
}

fn rollout(
    mdp: &MdpSpec,
    policy: &PolicyTable,
    len: usize,
    init: &InitialState,
    burn_in: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let mut state = match init {
        InitialState::Fixed(s) => *s,
        InitialState::Random(dist) => dist.sample(rng),
    };
    for _ in 0..burn_in {
        let action = policy.sample(state, rng);
        let (next, _) = mdp.step(state, action, rng)?;
        state = next;
    }
    mdp::sample_trajectory(mdp, policy, len, &InitialState::Fixed(state), rng)
}

/// Builds the problem: exact stationary objects, the ground truth, and the
/// nuisances (oracle or estimated from one shared auxiliary trajectory drawn
/// on the reserved nuisance stream).
pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedProblem> {
    cfg.validate()?;
    cfg.check_ergodic(cfg.eval_prob, "evaluation")?;
    cfg.check_ergodic(cfg.behavior_prob, "behavior")?;
    let mdp = cfg.mdp()?;
    let pi_b = PolicyTable::constant(cfg.behavior_prob)?;
    let pi_e = PolicyTable::constant(cfg.eval_prob)?;
    // Constant policies: checking one state per action verifies overlap
    // everywhere.
    for action in 0..2 {
        mdp::policy_ratio(&pi_e, &pi_b, mdp.min_state(), action)?;
    }

    let p_e = cfg.stationary(&mdp, cfg.eval_prob)?;
    let p_b = cfg.stationary(&mdp, cfg.behavior_prob)?;
    let p0 = cfg.resolve_p0(&p_e, &p_b)?;
    if let Some(p0) = &p0 {
        mdp.check_state(p0.offset())?;
        mdp.check_state(p0.max_state())?;
    }

    let (eval_init, burn_in) = match cfg.setup {
        SetupConfig::Chain { .. } => (InitialState::Random(p_b.clone()), 0),
        SetupConfig::Queue { .. } => (InitialState::Fixed(0), cfg.burn_in),
    };

    // One auxiliary trajectory feeds every estimated nuisance.
    let aux_len = {
        let td = match cfg.nuisance.q {
            QSource::Td { train_len, .. } => train_len,
            QSource::Oracle => 0,
        };
        let mm = match cfg.nuisance.ratio {
            RatioSource::MomentMatching { train_len } => train_len,
            RatioSource::Oracle => 0,
        };
        td.max(mm)
    };
    let aux = if aux_len > 0 {
        let mut rng = stream_rng(cfg.seed, NUISANCE_STREAM);
        Some(rollout(&mdp, &pi_b, aux_len, &eval_init, burn_in, &mut rng)?)
    } else {
        None
    };

    let q_hat = match cfg.nuisance.q {
        QSource::Oracle => match &cfg.objective {
            ObjectiveConfig::Discounted { gamma, .. } => {
                value::exact_q_discounted(&mdp, &pi_e, *gamma, cfg.oracle_s_max, cfg.oracle_tol)?
            }
            ObjectiveConfig::LongRun => {
                value::exact_q_differential(&mdp, &pi_e, cfg.oracle_s_max, cfg.oracle_tol)?
            }
        },
        QSource::Td { train_len, rate, rate2, epochs } => {
            let data = aux.as_ref().unwrap().prefix(train_len);
            match &cfg.objective {
                ObjectiveConfig::Discounted { gamma, .. } => {
                    let mut q = QTable::discounted(*gamma)?;
                    for _ in 0..epochs {
                        q = value::td_discounted(&data, &pi_e, *gamma, rate, q)?;
                    }
                    q
                }
                ObjectiveConfig::LongRun => {
                    let mut q = QTable::differential();
                    for _ in 0..epochs {
                        q = value::td_differential(&data, &pi_e, rate, rate2, q)?;
                    }
                    q
                }
            }
        }
    };

    let omega_hat = match cfg.nuisance.ratio {
        RatioSource::Oracle => match (&cfg.objective, &p0) {
            (ObjectiveConfig::Discounted { gamma, .. }, Some(p0)) => {
                let p_gamma = ratio::discounted_visit_distribution(
                    &mdp,
                    &pi_e,
                    p0,
                    *gamma,
                    cfg.oracle_s_max,
                    cfg.oracle_tol.min(1e-12),
                )?;
                ratio_with_support_floor(&p_gamma, &p_b, RatioKind::Discounted { gamma: *gamma })?
            }
            _ => ratio_with_support_floor(&p_e, &p_b, RatioKind::LongRun)?,
        },
        RatioSource::MomentMatching { train_len } => {
            let data = aux.as_ref().unwrap().prefix(train_len);
            let universe: Vec<usize> = match cfg.setup {
                SetupConfig::Chain { num_states, .. } => (1..=num_states).collect(),
                SetupConfig::Queue { .. } => {
                    let max_source =
                        data.transitions().iter().map(|tr| tr.state).max().unwrap_or(0);
                    (0..=max_source).collect()
                }
            };
            ratio::estimate_omega_moment_matching(&data, &pi_b, &pi_e, &universe)?
        }
    };

    let objective = match &cfg.objective {
        ObjectiveConfig::Discounted { gamma, .. } => {
            Objective::Discounted { gamma: *gamma, p0: p0.unwrap() }
        }
        ObjectiveConfig::LongRun => Objective::LongRun,
    };
    let ctx = OpeContext { pi_e, pi_b, q_hat, omega_hat, objective };
    ctx.validate()?;
    let oracle = ground_truth(cfg)?;
    Ok(PreparedProblem { mdp, ctx, eval_init, burn_in: burn_in_for(cfg), oracle })
}

fn burn_in_for(cfg: &ExperimentConfig) -> usize {
    match cfg.setup {
        SetupConfig::Chain { .. } => 0,
        SetupConfig::Queue { .. } => cfg.burn_in,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LepskiPick {
    pub index: usize,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    /// One estimate per configured schedule, in order.
    pub estimates: Vec<f64>,
    pub lepski: Option<LepskiPick>,
}

/// Runs replication `rep` at horizon `t`: samples evaluation data on stream
/// `rep`, evaluates every configured schedule, and optionally runs the
/// adaptive selection.
pub fn run_replication(
    prep: &PreparedProblem,
    cfg: &ExperimentConfig,
    t: usize,
    rep: u64,
) -> Result<ReplicationOutcome> {
    let mut rng = stream_rng(cfg.seed, rep);
    let traj = rollout(&prep.mdp, &prep.ctx.pi_b, t, &prep.eval_init, prep.burn_in, &mut rng)?;
    let mut estimates = Vec::with_capacity(cfg.schedules.len());
    for &schedule in &cfg.schedules {
        estimates.push(prep.ctx.tdr(&traj, schedule)?.estimate);
    }
    let lepski = match &cfg.lepski {
        Some(lepski_cfg) => {
            let outcome = lepski_select(&traj, &prep.ctx, lepski_cfg, &mut rng)?;
            Some(LepskiPick { index: outcome.selected_index, estimate: outcome.selected_estimate() })
        }
        None => None,
    };
    Ok(ReplicationOutcome { estimates, lepski })
}

/// Moments of a batch of estimates against the ground truth. `variance` is
/// the population variance, so `mse = bias^2 + variance` holds exactly;
/// `sample_variance` carries the `n - 1` divisor.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub bias: f64,
    pub relative_bias: f64,
    pub variance: f64,
    pub sample_variance: f64,
    pub mse: f64,
}

pub fn aggregate(estimates: &[f64], oracle: f64) -> Result<Aggregate> {
    let n = estimates.len();
    if n == 0 {
        return Err(TdrError::InvalidInput("no estimates to aggregate".into()));
    }
    let mean = estimates.iter().sum::<f64>() / n as f64;
    let bias = mean - oracle;
    let ss: f64 = estimates.iter().map(|x| (x - mean) * (x - mean)).sum();
    let variance = ss / n as f64;
    let sample_variance = if n > 1 { ss / (n - 1) as f64 } else { 0.0 };
    let mse = estimates.iter().map(|x| (x - oracle) * (x - oracle)).sum::<f64>() / n as f64;
    Ok(Aggregate { n, mean, bias, relative_bias: bias / oracle, variance, sample_variance, mse })
}

/// Ordinary least squares slope of `log(mse)` against `log(t)`.
pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(TdrError::InvalidInput(format!(
            "rate fitting needs at least 3 horizons, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(t, mse) in points {
        if !(t > 0.0) || !(mse > 0.0) {
            return Err(TdrError::InvalidInput(format!(
                "rate fitting needs positive horizon and mse, got ({t}, {mse})"
            )));
        }
        xs.push(t.ln());
        ys.push(mse.ln());
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(TdrError::InvalidInput("rate fitting needs distinct horizons".into()));
    }
    let sxy: f64 =
        xs.iter().zip(&ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    Ok(sxy / sxx)
}

/// One row of the aggregated results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub config_name: String,
    /// `dr` for the untruncated schedule, `tdr` otherwise, or `lepski`.
    pub estimator: String,
    pub schedule: String,
    pub horizon: usize,
    pub replications: usize,
    pub oracle: f64,
    pub mean: f64,
    pub bias: f64,
    pub relative_bias: f64,
    pub variance: f64,
    pub sample_variance: f64,
    pub mse: f64,
    /// Wall time of the horizon batch this record came from. Kept out of the
    /// serialized results so output files stay byte-deterministic.
    pub wall_time_secs: f64,
}

/// How often each grid entry was selected at one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionCount {
    pub horizon: usize,
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    pub selections: Vec<SelectionCount>,
    /// Set when a replication failed; earlier horizons' records are kept.
    pub failure: Option<String>,
}

fn record_from(
    cfg: &ExperimentConfig,
    estimator: &str,
    schedule: &str,
    horizon: usize,
    oracle: f64,
    agg: &Aggregate,
    wall_time_secs: f64,
) -> ResultRecord {
    ResultRecord {
        config_name: cfg.name.clone(),
        estimator: estimator.to_string(),
        schedule: schedule.to_string(),
        horizon,
        replications: agg.n,
        oracle,
        mean: agg.mean,
        bias: agg.bias,
        relative_bias: agg.relative_bias,
        variance: agg.variance,
        sample_variance: agg.sample_variance,
        mse: agg.mse,
        wall_time_secs,
    }
}

/// Runs the full sweep. Configuration and preparation errors propagate;
/// a failure inside a replication stops the sweep but returns the records
/// of completed horizons with `failure` set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let prep = prepare(cfg)?;
    let mut output = ExperimentOutput::default();
    for &t in &cfg.horizons {
        let start = Instant::now();
        let outcomes: Vec<Result<ReplicationOutcome>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| run_replication(&prep, cfg, t, rep as u64))
            .collect();
        let mut batch = Vec::with_capacity(outcomes.len());
        let mut failed = None;
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(o) => batch.push(o),
                Err(err) => {
                    failed = Some(format!("horizon {t}, replication {rep}: {err}"));
                    break;
                }
            }
        }
        if let Some(message) = failed {
            output.failure = Some(message);
            break;
        }
        let wall = start.elapsed().as_secs_f64();
        for (k, &schedule) in cfg.schedules.iter().enumerate() {
            let estimates: Vec<f64> = batch.iter().map(|o| o.estimates[k]).collect();
            let agg = aggregate(&estimates, prep.oracle)?;
            let estimator =
                if schedule == TruncationSchedule::Untruncated { "dr" } else { "tdr" };
            output.records.push(record_from(
                cfg,
                estimator,
                &schedule.to_string(),
                t,
                prep.oracle,
                &agg,
                wall,
            ));
        }
        if let Some(lepski_cfg) = &cfg.lepski {
            let picks: Vec<&LepskiPick> =
                batch.iter().map(|o| o.lepski.as_ref().unwrap()).collect();
            let estimates: Vec<f64> = picks.iter().map(|p| p.estimate).collect();
            let agg = aggregate(&estimates, prep.oracle)?;
            output.records.push(record_from(cfg, "lepski", "lepski", t, prep.oracle, &agg, wall));
            let mut counts = vec![0usize; lepski_cfg.grid.len()];
            for pick in picks {
                counts[pick.index] += 1;
            }
            output.selections.push(SelectionCount { horizon: t, counts });
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_chain_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            "tiny",
            SetupConfig::Chain { num_states: 5, reset_prob: 0.5 },
            ObjectiveConfig::Discounted { gamma: 0.5, p0: P0Config::EvalStationary },
        );
        cfg.behavior_prob = 0.2;
        cfg.eval_prob = 0.8;
        cfg.schedules =
            vec![TruncationSchedule::Untruncated, TruncationSchedule::per_step(0.7).unwrap()];
        cfg.horizons = vec![40, 80];
        cfg.replications = 6;
        cfg.seed = 7;
        cfg
    }

    #[test]
    fn aggregate_arithmetic() {
        let agg = aggregate(&[9.0, 11.0], 10.0).unwrap();
        assert_eq!(agg.mean, 10.0);
        assert_eq!(agg.bias, 0.0);
        assert_eq!(agg.variance, 1.0);
        assert_eq!(agg.sample_variance, 2.0);
        assert_eq!(agg.mse, 1.0);

        let exact = aggregate(&[10.0, 10.0, 10.0], 10.0).unwrap();
        assert_eq!(exact.bias, 0.0);
        assert_eq!(exact.mse, 0.0);
        assert!(aggregate(&[], 1.0).is_err());
    }

    #[test]
    fn aggregate_mse_decomposition_holds() {
        let estimates = [1.5, -0.25, 3.75, 2.0, 0.125];
        let agg = aggregate(&estimates, 1.0).unwrap();
        assert!((agg.mse - (agg.bias * agg.bias + agg.variance)).abs() < 1e-14);
    }

    #[test]
    fn rate_slope_recovers_exact_power_laws() {
        let pts: Vec<(f64, f64)> =
            [100.0, 1000.0, 10_000.0].iter().map(|&t| (t, 7.0 / t)).collect();
        assert!((fit_rate_slope(&pts).unwrap() + 1.0).abs() < 1e-12);

        let pts: Vec<(f64, f64)> = [50.0, 600.0, 7200.0, 20_000.0]
            .iter()
            .map(|&t: &f64| (t, 3.0 * t.powf(-2.0 / 3.0)))
            .collect();
        assert!((fit_rate_slope(&pts).unwrap() + 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rate_slope_validates_inputs() {
        assert!(fit_rate_slope(&[(10.0, 1.0), (20.0, 0.5)]).is_err());
        assert!(fit_rate_slope(&[(10.0, 1.0), (20.0, 0.5), (30.0, -0.1)]).is_err());
        assert!(fit_rate_slope(&[(10.0, 1.0), (10.0, 0.5), (10.0, 0.2)]).is_err());
    }

    #[test]
    fn config_validation_catches_mistakes() {
        let mut cfg = tiny_chain_config();
        cfg.horizons = vec![40, 40];
        assert!(cfg.validate().is_err());
        cfg.horizons = vec![];
        assert!(cfg.validate().is_err());
        cfg.horizons = vec![40];
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        cfg.replications = 2;
        cfg.behavior_prob = 1.2;
        assert!(cfg.validate().is_err());
        cfg.behavior_prob = 0.2;
        cfg.schedules.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn prepare_builds_a_consistent_problem() {
        let cfg = tiny_chain_config();
        let prep = prepare(&cfg).unwrap();
        prep.ctx.validate().unwrap();
        assert!((prep.oracle - ground_truth(&cfg).unwrap()).abs() < 1e-12);
        // Oracle ratio at state 1 for u_e = 0.8, u_b = 0.2, beta = 0.5:
        // p_e(1) / p_b(1) = 0.6 / 0.9.
        assert!((prep.ctx.omega_hat.omega(1) - 0.6 / 0.9).abs() < 1e-9);
    }

    #[test]
    fn unstable_queue_is_rejected() {
        let mut cfg = ExperimentConfig::new(
            "unstable",
            SetupConfig::Queue { lambda0: 0.5, lambda1: 1.5 },
            ObjectiveConfig::LongRun,
        );
        cfg.eval_prob = 1.0;
        assert!(matches!(ground_truth(&cfg), Err(TdrError::Config(_))));
        assert!(matches!(prepare(&cfg), Err(TdrError::Config(_))));
    }

    #[test]
    fn prepare_rejects_overlap_violations() {
        let mut cfg = tiny_chain_config();
        cfg.behavior_prob = 0.0;
        cfg.eval_prob = 1.0;
        assert!(matches!(prepare(&cfg), Err(TdrError::PolicyOverlap { .. })));
    }

    #[test]
    fn replications_are_deterministic_and_distinct() {
        let cfg = tiny_chain_config();
        let prep = prepare(&cfg).unwrap();
        let a = run_replication(&prep, &cfg, 40, 3).unwrap();
        let b = run_replication(&prep, &cfg, 40, 3).unwrap();
        assert_eq!(a, b);
        let c = run_replication(&prep, &cfg, 40, 4).unwrap();
        assert_ne!(a.estimates, c.estimates);
    }

    #[test]
    fn run_experiment_produces_expected_records() {
        let mut cfg = tiny_chain_config();
        cfg.lepski = Some(LepskiConfig {
            grid: vec![
                TruncationSchedule::Untruncated,
                TruncationSchedule::per_step(0.5).unwrap(),
            ],
            bootstrap_draws: 10,
            z: 1.0,
            block_len: None,
        });
        let output = run_experiment(&cfg).unwrap();
        assert!(output.failure.is_none());
        // Two horizons, each with two schedules plus the adaptive row.
        assert_eq!(output.records.len(), 2 * 3);
        assert_eq!(output.selections.len(), 2);
        for sel in &output.selections {
            assert_eq!(sel.counts.iter().sum::<usize>(), cfg.replications);
        }
        let dr_rows: Vec<_> =
            output.records.iter().filter(|r| r.estimator == "dr").collect();
        assert_eq!(dr_rows.len(), 2);
        assert!(dr_rows.iter().all(|r| r.schedule == "none"));
        for r in &output.records {
            assert!((r.mse - (r.bias * r.bias + r.variance)).abs() < 1e-12);
            assert_eq!(r.replications, cfg.replications);
        }
    }

    #[test]
    fn run_experiment_is_thread_count_invariant() {
        let cfg = tiny_chain_config();
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let quad = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = single.install(|| run_experiment(&cfg)).unwrap();
        let b = quad.install(|| run_experiment(&cfg)).unwrap();
        assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.mean.to_bits(), y.mean.to_bits());
            assert_eq!(x.mse.to_bits(), y.mse.to_bits());
        }
    }

    #[test]
    fn queue_longrun_smoke() {
        let mut cfg = ExperimentConfig::new(
            "queue-smoke",
            SetupConfig::Queue { lambda0: 0.1, lambda1: 0.9 },
            ObjectiveConfig::LongRun,
        );
        cfg.behavior_prob = 0.1;
        cfg.eval_prob = 1.0;
        cfg.horizons = vec![200];
        cfg.replications = 4;
        cfg.burn_in = 50;
        cfg.oracle_s_max = 100;
        let output = run_experiment(&cfg).unwrap();
        assert!(output.failure.is_none());
        assert_eq!(output.records.len(), 1);
        // The long-run mean reward of the always-treat queue lies in the
        // reward range.
        let record = &output.records[0];
        assert!(record.oracle > 4.5 && record.oracle < 10.5);
        assert!((record.mean - record.oracle).abs() < 2.0);
    }

    #[test]
    fn estimated_nuisances_share_the_auxiliary_stream() {
        let mut cfg = tiny_chain_config();
        cfg.nuisance = NuisanceConfig {
            q: QSource::Td { train_len: 500, rate: 0.05, rate2: 0.0, epochs: 2 },
            ratio: RatioSource::MomentMatching { train_len: 400 },
        };
        let a = prepare(&cfg).unwrap();
        let b = prepare(&cfg).unwrap();
        assert_eq!(a.ctx.q_hat, b.ctx.q_hat);
        assert_eq!(a.ctx.omega_hat, b.ctx.omega_hat);
        assert!(!a.ctx.q_hat.is_empty());
        assert!(a.ctx.omega_hat.len() == 5);
    }
}
