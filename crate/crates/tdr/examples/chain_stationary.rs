//! The chain environment and its stationary behavior: closed form vs the
//! numeric solver vs a long rollout, and the overlap profile that makes
//! off-policy evaluation hard when the policies disagree.

use tdr::dist::StateDist;
use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable};
use tdr::ratio;
use tdr::rng::stream_rng;

fn main() -> tdr::Result<()> {
    let num_states = 20;
    let beta = 0.5;
    let mdp = MdpSpec::Chain(ChainMdp::new(num_states, beta)?);

    for (label, u) in [("behavior  (u = 0.2)", 0.2), ("evaluation (u = 1.0)", 1.0)] {
        let closed = mdp::stationary_chain(u, beta, num_states)?;
        let policy = PolicyTable::constant(u)?;
        let numeric = mdp::stationary_numeric(&mdp, &policy, num_states, 1e-12)?;
        println!("{label}: TV(closed form, power iteration) = {:.2e}", closed.total_variation(&numeric));
    }

    let u_b = 0.2;
    let p_b = mdp::stationary_chain(u_b, beta, num_states)?;
    let policy = PolicyTable::constant(u_b)?;
    let mut rng = stream_rng(11, 0);
    let steps = 200_000;
    let traj =
        mdp::sample_trajectory(&mdp, &policy, steps, &InitialState::Random(p_b.clone()), &mut rng)?;
    let mut counts = vec![0.0; num_states];
    for tr in traj.transitions() {
        counts[tr.state - 1] += 1.0;
    }
    let empirical = StateDist::from_weights(1, counts)?;
    println!("TV(closed form, {steps}-step rollout) = {:.4}", p_b.total_variation(&empirical));

    // Under u_b = 0.2 deep states are exponentially rare while the always-
    // treat policy spends most of its time there, so the density ratio
    // explodes along the chain.
    let p_e = mdp::stationary_chain(1.0, beta, num_states)?;
    let omega = ratio::exact_omega(&p_e, &p_b)?;
    println!("\nomega(s) = p_e(s) / p_b(s):");
    for s in [1, 2, 5, 10, 15, 20] {
        println!("  s = {s:>2}:  {:>14.3}", omega.omega(s));
    }
    println!("\nE_pb[omega] = {:.12} (should be 1)", p_b.expectation(|s| omega.omega(s)));
    Ok(())
}
