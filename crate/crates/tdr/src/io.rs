//! CSV persistence. All writers emit UTF-8 with LF line endings and format
//! floats with Rust's shortest round-trip notation, so identical values
//! always produce identical bytes.
//!
//! Formats:
//! - trajectory: `t,state,action,reward` rows plus a final `T,state_T,,` row
//!   carrying the terminal state;
//! - q-table: `state,action,value` after a `# kind=...` comment;
//! - ratio table: `state,omega`, optionally after a `# kind=...` comment;
//! - estimator result: `estimator,schedule_mode,alpha,T,estimate,variance,n_truncated`;
//! - adaptive selection: `grid_index,alpha,mean,sd,lo,hi,selected`;
//! - experiment results: aggregated records after a comment header recording
//!   the sweep's scale.

use crate::error::{Result, TdrError};
use crate::estimators::{EstimatorResult, TruncationSchedule};
use crate::experiment::{ExperimentConfig, ExperimentOutput};
use crate::lepski::LepskiOutcome;
use crate::mdp::{Trajectory, Transition};
use crate::ratio::{DensityRatioTable, RatioKind};
use crate::value::{QKind, QTable};
use std::path::Path;

const TRAJECTORY_HEADER: &str = "t,state,action,reward";
const QTABLE_HEADER: &str = "state,action,value";
const RATIO_HEADER: &str = "state,omega";
const ESTIMATE_HEADER: &str = "estimator,schedule_mode,alpha,T,estimate,variance,n_truncated";
const LEPSKI_HEADER: &str = "grid_index,alpha,mean,sd,lo,hi,selected";
const RESULTS_HEADER: &str =
    "config,estimator,schedule,T,replications,oracle,mean,bias,relative_bias,variance,sample_variance,mse";
const SELECTIONS_HEADER: &str = "T,grid_index,alpha,count";

fn parse_field<T: std::str::FromStr>(raw: &str, what: &str, line_no: usize) -> Result<T> {
    raw.trim()
        .parse::<T>()
        .map_err(|_| TdrError::Parse(format!("line {line_no}: cannot parse {what} `{raw}`")))
}

/// Splits CSV text into (line number, line) pairs, dropping blank lines and
/// `#` comment lines.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn expect_header(found: Option<(usize, &str)>, want: &str) -> Result<()> {
    match found {
        Some((_, line)) if line == want => Ok(()),
        Some((line_no, line)) => Err(TdrError::Parse(format!(
            "line {line_no}: expected header `{want}`, got `{line}`"
        ))),
        None => Err(TdrError::Parse(format!("empty file, expected header `{want}`"))),
    }
}

pub fn trajectory_to_csv(traj: &Trajectory) -> Result<String> {
    if traj.is_empty() {
        return Err(TdrError::InvalidInput("cannot serialize an empty trajectory".into()));
    }
    if !traj.is_contiguous() {
        return Err(TdrError::InvalidInput(
            "trajectory file format only represents contiguous trajectories".into(),
        ));
    }
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (t, tr) in traj.transitions().iter().enumerate() {
        out.push_str(&format!("{t},{},{},{}\n", tr.state, tr.action, tr.reward));
    }
    out.push_str(&format!("{},{},,\n", traj.len(), traj.terminal_state().unwrap()));
    Ok(out)
}

/// Parses a trajectory file. A final row with empty action and reward fields
/// carries the terminal state; without one the last row closes the
/// trajectory and its action and reward are ignored.
pub fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    let mut lines = data_lines(text);
    expect_header(lines.next(), TRAJECTORY_HEADER)?;
    // (step, state, action and reward when present)
    type Row = (usize, usize, Option<(usize, f64)>);
    let mut rows: Vec<Row> = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TdrError::Parse(format!(
                "line {line_no}: expected 4 fields, got {}",
                fields.len()
            )));
        }
        let t: usize = parse_field(fields[0], "step index", line_no)?;
        if t != rows.len() {
            return Err(TdrError::Parse(format!(
                "line {line_no}: step index {t} out of order, expected {}",
                rows.len()
            )));
        }
        let state: usize = parse_field(fields[1], "state", line_no)?;
        let step = if fields[2].trim().is_empty() && fields[3].trim().is_empty() {
            None
        } else {
            let action: usize = parse_field(fields[2], "action", line_no)?;
            let reward: f64 = parse_field(fields[3], "reward", line_no)?;
            Some((action, reward))
        };
        if rows.last().is_some_and(|(_, _, s)| s.is_none()) {
            return Err(TdrError::Parse(format!(
                "line {line_no}: rows after the terminal row"
            )));
        }
        rows.push((t, state, step));
    }
    if rows.len() < 2 {
        return Err(TdrError::Parse("trajectory needs at least two rows".into()));
    }
    let mut transitions = Vec::with_capacity(rows.len() - 1);
    for pair in rows.windows(2) {
        let (_, state, ref step) = pair[0];
        let (_, next_state, _) = pair[1];
        let (action, reward) = step.as_ref().copied().unwrap();
        transitions.push(Transition { state, action, reward, next_state });
    }
    Ok(Trajectory::new(transitions))
}

pub fn qtable_to_csv(q: &QTable) -> String {
    let mut out = match q.kind() {
        QKind::Discounted { gamma } => format!("# kind=discounted gamma={gamma}"),
        QKind::Differential { theta_hat } => format!("# kind=differential theta_hat={theta_hat}"),
    };
    if q.default_value() != 0.0 {
        out.push_str(&format!(" default={}", q.default_value()));
    }
    out.push('\n');
    out.push_str(QTABLE_HEADER);
    out.push('\n');
    for ((state, action), value) in q.entries() {
        out.push_str(&format!("{state},{action},{value}\n"));
    }
    out
}

fn parse_kind_comment(text: &str) -> Result<Option<Vec<(String, String)>>> {
    let Some(line) = text.lines().map(str::trim).find(|l| !l.is_empty()) else {
        return Ok(None);
    };
    let Some(body) = line.strip_prefix('#') else {
        return Ok(None);
    };
    let mut pairs = Vec::new();
    for token in body.split_whitespace() {
        let Some((key, value)) = token.split_once('=') else {
            return Err(TdrError::Parse(format!("malformed header token `{token}`")));
        };
        pairs.push((key.to_string(), value.to_string()));
    }
    Ok(Some(pairs))
}

fn header_value<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn qtable_from_csv(text: &str) -> Result<QTable> {
    let pairs = parse_kind_comment(text)?
        .ok_or_else(|| TdrError::Parse("q-table file is missing its `# kind=...` header".into()))?;
    let mut q = match header_value(&pairs, "kind") {
        Some("discounted") => {
            let gamma = header_value(&pairs, "gamma")
                .ok_or_else(|| TdrError::Parse("discounted q-table header lacks gamma".into()))?;
            QTable::discounted(parse_field(gamma, "gamma", 1)?)?
        }
        Some("differential") => {
            let theta = header_value(&pairs, "theta_hat").ok_or_else(|| {
                TdrError::Parse("differential q-table header lacks theta_hat".into())
            })?;
            let mut q = QTable::differential();
            q.set_theta_hat(parse_field(theta, "theta_hat", 1)?)?;
            q
        }
        other => {
            return Err(TdrError::Parse(format!(
                "q-table kind must be discounted or differential, got {other:?}"
            )))
        }
    };
    if let Some(default) = header_value(&pairs, "default") {
        q.set_default_value(parse_field(default, "default value", 1)?);
    }
    let mut lines = data_lines(text);
    expect_header(lines.next(), QTABLE_HEADER)?;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(TdrError::Parse(format!(
                "line {line_no}: expected 3 fields, got {}",
                fields.len()
            )));
        }
        q.set(
            parse_field(fields[0], "state", line_no)?,
            parse_field(fields[1], "action", line_no)?,
            parse_field(fields[2], "value", line_no)?,
        );
    }
    Ok(q)
}

pub fn ratio_to_csv(table: &DensityRatioTable) -> String {
    let mut out = match table.kind() {
        RatioKind::LongRun => String::from("# kind=longrun"),
        RatioKind::Discounted { gamma } => format!("# kind=discounted gamma={gamma}"),
    };
    out.push('\n');
    out.push_str(RATIO_HEADER);
    out.push('\n');
    for (state, omega) in table.iter() {
        out.push_str(&format!("{state},{omega}\n"));
    }
    out
}

/// Parses a ratio table. Files without a `# kind=...` header are read as
/// long-run tables.
pub fn ratio_from_csv(text: &str) -> Result<DensityRatioTable> {
    let kind = match parse_kind_comment(text)? {
        None => RatioKind::LongRun,
        Some(pairs) => match header_value(&pairs, "kind") {
            Some("longrun") | None => RatioKind::LongRun,
            Some("discounted") => {
                let gamma = header_value(&pairs, "gamma").ok_or_else(|| {
                    TdrError::Parse("discounted ratio header lacks gamma".into())
                })?;
                RatioKind::Discounted { gamma: parse_field(gamma, "gamma", 1)? }
            }
            Some(other) => {
                return Err(TdrError::Parse(format!(
                    "ratio kind must be longrun or discounted, got `{other}`"
                )))
            }
        },
    };
    let mut table = DensityRatioTable::new(kind);
    let mut lines = data_lines(text);
    expect_header(lines.next(), RATIO_HEADER)?;
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(TdrError::Parse(format!(
                "line {line_no}: expected 2 fields, got {}",
                fields.len()
            )));
        }
        table.set(
            parse_field(fields[0], "state", line_no)?,
            parse_field(fields[1], "omega", line_no)?,
        )?;
    }
    Ok(table)
}

/// `(mode, alpha-or-level)` columns of a schedule; the untruncated schedule
/// leaves the second column empty.
fn schedule_columns(schedule: TruncationSchedule) -> (&'static str, String) {
    match schedule {
        TruncationSchedule::Untruncated => ("none", String::new()),
        TruncationSchedule::PerStep { alpha } => ("per-step", format!("{alpha}")),
        TruncationSchedule::Horizon { alpha } => ("horizon", format!("{alpha}")),
        TruncationSchedule::Fixed { level } => ("fixed", format!("{level}")),
    }
}

pub fn estimator_results_to_csv(results: &[EstimatorResult]) -> String {
    let mut out = String::from(ESTIMATE_HEADER);
    out.push('\n');
    for r in results {
        let estimator =
            if r.schedule == TruncationSchedule::Untruncated { "dr" } else { "tdr" };
        let (mode, alpha) = schedule_columns(r.schedule);
        let variance = match r.plug_in_variance {
            Some(v) => format!("{v}"),
            None => String::new(),
        };
        out.push_str(&format!(
            "{estimator},{mode},{alpha},{},{},{variance},{}\n",
            r.horizon, r.estimate, r.n_truncated
        ));
    }
    out
}

pub fn lepski_to_csv(outcome: &LepskiOutcome) -> String {
    let mut out = format!(
        "# selected_index={} estimate={} block_len={}\n{LEPSKI_HEADER}\n",
        outcome.selected_index,
        outcome.selected_estimate(),
        outcome.block_len
    );
    for (g, entry) in outcome.entries.iter().enumerate() {
        let (_, alpha) = schedule_columns(entry.schedule);
        let selected = usize::from(g == outcome.selected_index);
        out.push_str(&format!(
            "{g},{alpha},{},{},{},{},{selected}\n",
            entry.ci.mean, entry.ci.sd, entry.ci.lo, entry.ci.hi
        ));
    }
    out
}

/// Aggregated sweep results. The comment header records the sweep's scale so
/// desk-scale runs are distinguishable from full-scale ones.
pub fn experiment_results_to_csv(cfg: &ExperimentConfig, output: &ExperimentOutput) -> String {
    let horizons: Vec<String> = cfg.horizons.iter().map(|t| t.to_string()).collect();
    let mut out = format!(
        "# config={} seed={} replications={} horizons={}\n",
        cfg.name,
        cfg.seed,
        cfg.replications,
        horizons.join(";")
    );
    out.push_str(RESULTS_HEADER);
    out.push('\n');
    for r in &output.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.config_name,
            r.estimator,
            r.schedule,
            r.horizon,
            r.replications,
            r.oracle,
            r.mean,
            r.bias,
            r.relative_bias,
            r.variance,
            r.sample_variance,
            r.mse
        ));
    }
    if let Some(message) = &output.failure {
        out.push_str(&format!("# FAILED: {message}\n"));
    }
    out
}

/// Per-horizon counts of which grid entry the adaptive selection picked.
pub fn selections_to_csv(cfg: &ExperimentConfig, output: &ExperimentOutput) -> Result<String> {
    let lepski = cfg
        .lepski
        .as_ref()
        .ok_or_else(|| TdrError::InvalidInput("configuration has no selection grid".into()))?;
    let mut out = format!("# config={} seed={}\n{SELECTIONS_HEADER}\n", cfg.name, cfg.seed);
    for sel in &output.selections {
        for (g, count) in sel.counts.iter().enumerate() {
            let (_, alpha) = schedule_columns(lepski.grid[g]);
            out.push_str(&format!("{},{g},{alpha},{count}\n", sel.horizon));
        }
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    trajectory_from_csv(&std::fs::read_to_string(path)?)
}

pub fn read_qtable(path: &Path) -> Result<QTable> {
    qtable_from_csv(&std::fs::read_to_string(path)?)
}

pub fn read_ratio(path: &Path) -> Result<DensityRatioTable> {
    ratio_from_csv(&std::fs::read_to_string(path)?)
}
