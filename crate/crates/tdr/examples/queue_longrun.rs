//! Long-run average reward in the queue: the self-normalized estimators
//! under progressively weaker overlap. As the treated arrival rate grows,
//! the behavior policy sees less and less of where the evaluation policy
//! lives, and untruncated DR pays for it in variance.

use tdr::estimators::{Objective, OpeContext, TruncationSchedule};
use tdr::mdp::{self, InitialState, MdpSpec, PolicyTable, QueueMdp};
use tdr::ratio;
use tdr::rng::stream_rng;
use tdr::value;

fn main() -> tdr::Result<()> {
    let s_max = 300;
    let horizon = 500;
    let reps = 200;
    let pi_b = PolicyTable::constant(0.3)?;
    let pi_e = PolicyTable::constant(1.0)?;

    println!("{:>8} {:>10} {:>14} {:>16}", "lambda1", "theta", "var(DR)", "var(TDR t^0.5)");
    for lambda1 in [0.3, 0.5, 0.7, 0.9] {
        let mdp = MdpSpec::Queue(QueueMdp::new(0.1, lambda1)?);
        let p_b = mdp::stationary_numeric(&mdp, &pi_b, s_max, 1e-10)?;
        let p_e = mdp::stationary_numeric(&mdp, &pi_e, s_max, 1e-10)?;
        let theta = p_e.expectation(|s| mdp.mean_reward(s));

        let q_hat = value::exact_q_differential(&mdp, &pi_e, s_max, 1e-10)?;
        let omega_hat = ratio::exact_omega(&p_e, &p_b)?;
        let ctx = OpeContext {
            pi_e: pi_e.clone(),
            pi_b: pi_b.clone(),
            q_hat,
            omega_hat,
            objective: Objective::LongRun,
        };

        let mut dr = Vec::with_capacity(reps);
        let mut tdr = Vec::with_capacity(reps);
        for rep in 0..reps as u64 {
            let mut rng = stream_rng(lambda1.to_bits(), rep);
            // Burn in from empty so the data start near stationarity.
            let mut state = 0;
            for _ in 0..1_000 {
                let action = pi_b.sample(state, &mut rng);
                state = mdp.step(state, action, &mut rng)?.0;
            }
            let traj = mdp::sample_trajectory(
                &mdp,
                &pi_b,
                horizon,
                &InitialState::Fixed(state),
                &mut rng,
            )?;
            dr.push(ctx.dr(&traj)?.estimate);
            tdr.push(ctx.tdr(&traj, TruncationSchedule::per_step(0.5)?)?.estimate);
        }
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        println!("{lambda1:>8} {theta:>10.5} {:>14.6} {:>16.6}", var(&dr), var(&tdr));
    }
    Ok(())
}
