//! One off-policy evaluation run under weak overlap: the doubly robust
//! estimate against its truncated variants on the same trajectory, with
//! plug-in confidence intervals and the exact target for reference.

use tdr::estimators::{Objective, OpeContext, TruncationSchedule};
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
    let omega_hat = ratio::exact_omega_discounted(&mdp, &pi_e, &p_e, &p_b, gamma, num_states, 1e-12)?;

    let theta = (1.0 - gamma) * p_e.expectation(|s| value::value_from_q(&q_hat, &pi_e, s));
    println!("target theta_gamma(p_e) = {theta:.6}\n");

    let ctx = OpeContext {
        pi_e,
        pi_b: pi_b.clone(),
        q_hat,
        omega_hat,
        objective: Objective::Discounted { gamma, p0: p_e },
    };
    ctx.validate()?;

    let horizon = 2_000;
    let mut rng = stream_rng(3, 0);
    let traj = mdp::sample_trajectory(&mdp, &pi_b, horizon, &InitialState::Random(p_b), &mut rng)?;

    let schedules = [
        TruncationSchedule::Untruncated,
        TruncationSchedule::horizon(0.7)?,
        TruncationSchedule::per_step(0.7)?,
        TruncationSchedule::per_step(0.5)?,
        TruncationSchedule::fixed(5.0)?,
    ];
    println!("{:>10} {:>12} {:>12} {:>10} {:>10}", "schedule", "estimate", "error", "ci95", "clipped");
    for schedule in schedules {
        let r = ctx.tdr(&traj, schedule)?;
        let ci = r.ci_halfwidth(1.96).unwrap();
        println!(
            "{:>10} {:>12.6} {:>12.6} {:>10.4} {:>10}",
            schedule.to_string(),
            r.estimate,
            r.estimate - theta,
            ci,
            r.n_truncated
        );
    }
    Ok(())
}
