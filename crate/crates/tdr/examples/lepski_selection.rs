//! Data-driven truncation choice: moving-block bootstrap intervals over a
//! grid of schedules, intersected Lepski-style from weakest to strongest
//! truncation.

use tdr::estimators::{Objective, OpeContext, TruncationSchedule};
use tdr::lepski::{lepski_select, LepskiConfig};
use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable};
use tdr::ratio;
use tdr::rng::stream_rng;
use tdr::value;

fn main() -> tdr::Result<()> {
    let num_states = 20;
    let beta = 0.5;
    let gamma = 0.5;
    let mdp = MdpSpec::Chain(ChainMdp::new(num_states, beta)?);
    let pi_b = PolicyTable::constant(0.2)?;
    let pi_e = PolicyTable::constant(1.0)?;
    let p_b = mdp::stationary_chain(0.2, beta, num_states)?;
    let p_e = mdp::stationary_chain(1.0, beta, num_states)?;

    let q_hat = value::exact_q_discounted(&mdp, &pi_e, gamma, num_states, 1e-12)?;
    let omega_hat =
        ratio::exact_omega_discounted(&mdp, &pi_e, &p_e, &p_b, gamma, num_states, 1e-12)?;
    let theta = (1.0 - gamma) * p_e.expectation(|s| value::value_from_q(&q_hat, &pi_e, s));
    let ctx = OpeContext {
        pi_e,
        pi_b: pi_b.clone(),
        q_hat,
        omega_hat,
        objective: Objective::Discounted { gamma, p0: p_e },
    };

    let cfg = LepskiConfig {
        grid: vec![
            TruncationSchedule::Untruncated,
            TruncationSchedule::per_step(0.9)?,
            TruncationSchedule::per_step(0.7)?,
            TruncationSchedule::per_step(0.5)?,
            TruncationSchedule::per_step(0.3)?,
        ],
        bootstrap_draws: 100,
        z: 1.0,
        block_len: None,
    };

    let horizon = 2_000;
    let mut rng = stream_rng(29, 0);
    let traj = mdp::sample_trajectory(&mdp, &pi_b, horizon, &InitialState::Random(p_b), &mut rng)?;
    let outcome = lepski_select(&traj, &ctx, &cfg, &mut rng)?;

    println!("target {theta:.6}, block length {}\n", outcome.block_len);
    println!(
        "{:>10} {:>12} {:>10} {:>22} {:>12}",
        "schedule", "bootstrap", "sd", "interval", "full-data"
    );
    for (g, entry) in outcome.entries.iter().enumerate() {
        let marker = if g == outcome.selected_index { "  <- selected" } else { "" };
        println!(
            "{:>10} {:>12.5} {:>10.5} [{:>9.5}, {:>9.5}] {:>12.5}{marker}",
            entry.schedule.to_string(),
            entry.ci.mean,
            entry.ci.sd,
            entry.ci.lo,
            entry.ci.hi,
            entry.estimate
        );
    }
    println!(
        "\nselected estimate {:.6} (error {:+.6})",
        outcome.selected_estimate(),
        outcome.selected_estimate() - theta
    );
    Ok(())
}
