//! Estimating the stationary density ratio from behavior data alone by
//! moment matching: the empirical balance equations are solved as a
//! constrained least-squares program over the simplex.

use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable};
use tdr::ratio;
use tdr::rng::stream_rng;

fn main() -> tdr::Result<()> {
    let num_states = 20;
    let beta = 0.5;
    let mdp = MdpSpec::Chain(ChainMdp::new(num_states, beta)?);
    let pi_b = PolicyTable::constant(0.2)?;
    let pi_e = PolicyTable::constant(1.0)?;
    let p_b = mdp::stationary_chain(0.2, beta, num_states)?;
    let p_e = mdp::stationary_chain(1.0, beta, num_states)?;
    let exact = ratio::exact_omega(&p_e, &p_b)?;
    let universe: Vec<usize> = (1..=num_states).collect();

    println!("visit-weighted L1 error of the moment-matching estimate:");
    for train_len in [2_000, 20_000, 200_000] {
        let mut rng = stream_rng(17, 0);
        let traj = mdp::sample_trajectory(
            &mdp,
            &pi_b,
            train_len,
            &InitialState::Random(p_b.clone()),
            &mut rng,
        )?;
        let estimate = ratio::estimate_omega_moment_matching(&traj, &pi_b, &pi_e, &universe)?;
        let l1 = p_b.expectation(|s| (estimate.omega(s) - exact.omega(s)).abs());
        println!("  T = {train_len:>6}: {l1:.4}");

        if train_len == 200_000 {
            println!("\n  state-by-state at T = {train_len}:");
            println!("  {:>5} {:>12} {:>12}", "s", "exact", "estimated");
            for s in [1, 2, 4, 8, 12, 16, 20] {
                println!("  {s:>5} {:>12.4} {:>12.4}", exact.omega(s), estimate.omega(s));
            }
        }
    }
    Ok(())
}
