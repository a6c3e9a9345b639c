//! Nuisance q-functions: exact dynamic-programming oracles and their
//! temporal-difference approximations, for both the discounted and the
//! average-reward objective.

use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable};
use tdr::rng::stream_rng;
use tdr::value::{self, QTable};

fn main() -> tdr::Result<()> {
    let mdp = MdpSpec::Chain(ChainMdp::new(20, 0.5)?);
    let pi_e = PolicyTable::constant(1.0)?;
    let pi_b = PolicyTable::constant(0.2)?;
    let gamma = 0.5;

    let q_star = value::exact_q_discounted(&mdp, &pi_e, gamma, 20, 1e-12)?;
    let res = value::bellman_residual_discounted(&mdp, &pi_e, &q_star, 20)?;
    println!("exact discounted q: sup-norm Bellman residual {res:.2e}");

    let q_diff = value::exact_q_differential(&mdp, &pi_e, 20, 1e-12)?;
    let res = value::bellman_residual_differential(&mdp, &pi_e, &q_diff, 20)?;
    println!(
        "exact differential Q: theta = {:.6}, sup-norm residual {res:.2e}",
        q_diff.theta_hat().unwrap()
    );

    // TD on behavior data: error against the oracle shrinks as the training
    // trajectory grows.
    println!("\nTD learning (nu = 0.03) against the oracle:");
    let p_b = mdp::stationary_chain(0.2, 0.5, 20)?;
    for train_len in [1_000, 10_000, 100_000] {
        let mut rng = stream_rng(5, 0);
        let traj = mdp::sample_trajectory(
            &mdp,
            &pi_b,
            train_len,
            &InitialState::Random(p_b.clone()),
            &mut rng,
        )?;
        let q_hat = value::td_discounted(&traj, &pi_e, gamma, 0.03, QTable::discounted(gamma)?)?;
        let err = p_b.expectation(|s| {
            let d0 = q_hat.q(s, 0) - q_star.q(s, 0);
            let d1 = q_hat.q(s, 1) - q_star.q(s, 1);
            0.5 * (d0 * d0 + d1 * d1)
        });
        println!("  T = {train_len:>6}: visit-weighted squared error {err:.4}");
    }
    Ok(())
}
