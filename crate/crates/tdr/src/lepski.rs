//! Data-driven truncation selection: moving block bootstrap confidence
//! intervals combined with Lepski's rule.
//!
//! The truncation grid must be ordered from weakest truncation to strongest,
//! which for TDR means descending bias. Each grid entry gets a bootstrap
//! confidence interval for its estimate; walking down the grid, the running
//! intersection of intervals is maintained and the last index reached before
//! the intersection empties is selected. The selected entry's full-data TDR
//! estimate is the adaptive estimate.

use crate::error::{Result, TdrError};
use crate::estimators::{OpeContext, TruncationSchedule};
use crate::mdp::Trajectory;
use rand::Rng;

const RESAMPLE_RETRY_CAP: usize = 32;

/// `floor(T^(1/3))`, at least 1, computed without floating-point edge cases.
pub fn default_block_len(t: usize) -> usize {
    let mut l = (t as f64).cbrt().floor() as usize;
    while (l + 1).pow(3) <= t {
        l += 1;
    }
    while l > 1 && l.pow(3) > t {
        l -= 1;
    }
    l.max(1)
}

#[derive(Debug, Clone)]
pub struct LepskiConfig {
    /// Truncation schedules in descending bias order (weakest first).
    pub grid: Vec<TruncationSchedule>,
    /// Bootstrap draws per grid entry.
    pub bootstrap_draws: usize,
    /// Normal quantile scaling the bootstrap standard error.
    pub z: f64,
    /// Block length for the moving block bootstrap; `None` uses
    /// `floor(T^(1/3))`.
    pub block_len: Option<usize>,
}

impl LepskiConfig {
    pub fn with_grid(grid: Vec<TruncationSchedule>) -> Result<Self> {
        let cfg = Self { grid, bootstrap_draws: 100, z: 1.96, block_len: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(TdrError::InvalidInput("empty truncation grid".into()));
        }
        if self.bootstrap_draws < 2 {
            return Err(TdrError::InvalidInput(format!(
                "need at least 2 bootstrap draws, got {}",
                self.bootstrap_draws
            )));
        }
        if !self.z.is_finite() || self.z < 0.0 {
            return Err(TdrError::InvalidInput(format!("quantile {} must be nonnegative", self.z)));
        }
        if self.block_len == Some(0) {
            return Err(TdrError::InvalidInput("block length must be positive".into()));
        }
        Ok(())
    }

    pub fn resolved_block_len(&self, t: usize) -> usize {
        self.block_len.unwrap_or_else(|| default_block_len(t))
    }
}

/// One moving-block-bootstrap resample: draw `ceil(T / l)` of the `T - l + 1`
/// overlapping length-`l` blocks uniformly with replacement, concatenate, and
/// truncate to length `T`. The result is generally not contiguous at block
/// seams.
pub fn moving_block_resample(
    traj: &Trajectory,
    block_len: usize,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let t = traj.len();
    if t == 0 {
        return Err(TdrError::InvalidInput("empty trajectory".into()));
    }
    if block_len == 0 || block_len > t {
        return Err(TdrError::InvalidInput(format!(
            "block length {block_len} outside 1..={t}"
        )));
    }
    let n_starts = t - block_len + 1;
    let draws = t.div_ceil(block_len);
    let mut out = Vec::with_capacity(draws * block_len);
    let transitions = traj.transitions();
    for _ in 0..draws {
        let start = rng.random_range(0..n_starts);
        out.extend_from_slice(&transitions[start..start + block_len]);
    }
    out.truncate(t);
    Ok(Trajectory::new(out))
}

/// A bootstrap confidence interval `mean +/- z * sd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiSummary {
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Bootstrap distribution of an estimator over moving-block resamples. A
/// draw on which the estimator fails (for example with degenerate weights)
/// is retried with fresh blocks up to a small cap before the error
/// propagates.
pub fn bootstrap_ci(
    traj: &Trajectory,
    draws: usize,
    block_len: usize,
    z: f64,
    rng: &mut impl Rng,
    estimator: impl Fn(&Trajectory) -> Result<f64>,
) -> Result<CiSummary> {
    if draws < 2 {
        return Err(TdrError::InvalidInput(format!("need at least 2 bootstrap draws, got {draws}")));
    }
    if !z.is_finite() || z < 0.0 {
        return Err(TdrError::InvalidInput(format!("quantile {z} must be nonnegative")));
    }
    let mut values = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut attempt = 0;
        let value = loop {
            let resample = moving_block_resample(traj, block_len, rng)?;
            match estimator(&resample) {
                Ok(v) => break v,
                Err(err) => {
                    attempt += 1;
                    if attempt >= RESAMPLE_RETRY_CAP {
                        return Err(err);
                    }
                }
            }
        };
        values.push(value);
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (draws - 1) as f64).sqrt();
    Ok(CiSummary { mean, sd, lo: mean - z * sd, hi: mean + z * sd })
}

/// Lepski's rule over precomputed intervals: keep intersecting in grid order
/// and return the last index reached while the intersection is nonempty.
pub fn intersect_select(intervals: &[(f64, f64)]) -> usize {
    let (mut lo, mut hi) = intervals[0];
    let mut selected = 0;
    for (g, &(l, h)) in intervals.iter().enumerate().skip(1) {
        lo = lo.max(l);
        hi = hi.min(h);
        if lo <= hi {
            selected = g;
        } else {
            break;
        }
    }
    selected
}

/// Per-grid-entry report: the bootstrap interval and the full-data estimate.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub schedule: TruncationSchedule,
    pub ci: CiSummary,
    pub estimate: f64,
}

#[derive(Debug, Clone)]
pub struct LepskiOutcome {
    pub selected_index: usize,
    pub entries: Vec<GridEntry>,
    pub block_len: usize,
}

impl LepskiOutcome {
    pub fn selected(&self) -> &GridEntry {
        &self.entries[self.selected_index]
    }

    /// The adaptive estimate: full-data TDR at the selected truncation.
    pub fn selected_estimate(&self) -> f64 {
        self.selected().estimate
    }
}

/// Runs the full selection procedure on one trajectory.
pub fn lepski_select(
    traj: &Trajectory,
    ctx: &OpeContext,
    cfg: &LepskiConfig,
    rng: &mut impl Rng,
) -> Result<LepskiOutcome> {
    cfg.validate()?;
    ctx.validate()?;
    if traj.is_empty() {
        return Err(TdrError::InvalidInput("empty trajectory".into()));
    }
    let block_len = cfg.resolved_block_len(traj.len());
    if block_len > traj.len() {
        return Err(TdrError::InvalidInput(format!(
            "block length {block_len} exceeds trajectory length {}",
            traj.len()
        )));
    }
    let mut entries = Vec::with_capacity(cfg.grid.len());
    for &schedule in &cfg.grid {
        let ci = bootstrap_ci(traj, cfg.bootstrap_draws, block_len, cfg.z, rng, |resample| {
            ctx.tdr(resample, schedule).map(|r| r.estimate)
        })?;
        let estimate = ctx.tdr(traj, schedule)?.estimate;
        entries.push(GridEntry { schedule, ci, estimate });
    }
    let intervals: Vec<(f64, f64)> = entries.iter().map(|e| (e.ci.lo, e.ci.hi)).collect();
    let selected_index = intersect_select(&intervals);
    Ok(LepskiOutcome { selected_index, entries, block_len })
}
