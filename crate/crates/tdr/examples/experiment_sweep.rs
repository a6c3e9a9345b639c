//! A small replication sweep on the chain: mean squared error of DR and
//! truncated DR across horizons, with fitted log-log rate slopes. The sweep
//! is deterministic for a fixed seed regardless of thread count.

use tdr::estimators::TruncationSchedule;
use tdr::experiment::{
    self, ExperimentConfig, ObjectiveConfig, P0Config, SetupConfig,
};

fn main() -> tdr::Result<()> {
    let mut cfg = ExperimentConfig::new(
        "sweep-demo",
        SetupConfig::Chain { num_states: 20, reset_prob: 0.5 },
        ObjectiveConfig::Discounted { gamma: 0.5, p0: P0Config::EvalStationary },
    );
    cfg.behavior_prob = 0.2;
    cfg.eval_prob = 1.0;
    cfg.schedules = vec![
        TruncationSchedule::Untruncated,
        TruncationSchedule::per_step(0.7)?,
        TruncationSchedule::horizon(0.7)?,
    ];
    cfg.horizons = vec![50, 200, 800, 3200];
    cfg.replications = 200;
    cfg.seed = 1;

    let output = experiment::run_experiment(&cfg)?;
    println!(
        "{:>10} {:>6} {:>12} {:>12} {:>12}",
        "estimator", "T", "bias", "variance", "mse"
    );
    for r in &output.records {
        println!(
            "{:>10} {:>6} {:>12.6} {:>12.6} {:>12.6}",
            format!("{}({})", r.estimator, r.schedule),
            r.horizon,
            r.bias,
            r.variance,
            r.mse
        );
    }

    println!("\nfitted MSE rate slopes (log mse on log T):");
    for (k, schedule) in cfg.schedules.iter().enumerate() {
        let points: Vec<(f64, f64)> = output
            .records
            .iter()
            .filter(|r| r.schedule == schedule.to_string())
            .map(|r| (r.horizon as f64, r.mse))
            .collect();
        let slope = experiment::fit_rate_slope(&points)?;
        let label = if k == 0 { "dr".to_string() } else { format!("tdr {schedule}") };
        println!("  {label:>10}: {slope:+.3}");
    }
    Ok(())
}
