//! Bridges the library to the command-line workflow: computes oracle
//! nuisances for a chain problem and writes every file the `estimate` and
//! `lepski` subcommands consume.
//!
//! Try it:
//! ```text
//! cargo run --example export_nuisances
//! cargo run -- estimate --trajectory /tmp/tdr-demo/traj.csv \
//!     --qtable /tmp/tdr-demo/q.csv --ratio /tmp/tdr-demo/omega.csv \
//!     --policy-eval 1.0 --policy-behavior 0.2 --p0-state 1 \
//!     --schedule none --schedule t^0.7
//! ```

use std::path::Path;
use tdr::io;
use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable};
use tdr::ratio;
use tdr::rng::stream_rng;
use tdr::value;

fn main() -> tdr::Result<()> {
    let dir = Path::new("/tmp/tdr-demo");
    std::fs::create_dir_all(dir)?;

    let num_states = 20;
    let beta = 0.5;
    let gamma = 0.5;
    let mdp = MdpSpec::Chain(ChainMdp::new(num_states, beta)?);
    let pi_b = PolicyTable::constant(0.2)?;
    let pi_e = PolicyTable::constant(1.0)?;
    let p_b = mdp::stationary_chain(0.2, beta, num_states)?;

    let q = value::exact_q_discounted(&mdp, &pi_e, gamma, num_states, 1e-12)?;
    // Discounted ratio started from the point mass at state 1, matching the
    // CLI's --p0-state 1.
    let p0 = tdr::dist::StateDist::point_mass(1);
    let omega = ratio::exact_omega_discounted(&mdp, &pi_e, &p0, &p_b, gamma, num_states, 1e-12)?;

    let mut rng = stream_rng(1, 0);
    let traj =
        mdp::sample_trajectory(&mdp, &pi_b, 2_000, &InitialState::Random(p_b), &mut rng)?;

    for (name, text) in [
        ("traj.csv", io::trajectory_to_csv(&traj)?),
        ("q.csv", io::qtable_to_csv(&q)),
        ("omega.csv", io::ratio_to_csv(&omega)),
    ] {
        let path = dir.join(name);
        io::write_text(&path, &text)?;
        println!("wrote {}", path.display());
    }

    let theta = (1.0 - gamma) * value::value_from_q(&q, &pi_e, 1);
    println!("\nfor reference, theta_gamma(delta_1) = {theta:.6}");
    Ok(())
}
