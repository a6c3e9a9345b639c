//! Thin command-line front end over the library: simulate trajectories,
//! estimate from files, run the adaptive truncation selection, and drive
//! configured experiment sweeps.

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tdr::dist::StateDist;
use tdr::estimators::{Objective, OpeContext, TruncationSchedule};
use tdr::lepski::{lepski_select, LepskiConfig};
use tdr::mdp::{self, ChainMdp, InitialState, MdpSpec, PolicyTable, QueueMdp};
use tdr::rng::stream_rng;
use tdr::value::QKind;
use tdr::{config, experiment, io, Result, TdrError};

#[derive(Parser)]
#[command(
    name = "tdr",
    version,
    about = "Off-policy evaluation with truncated doubly robust estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a behavior trajectory and emit it as CSV.
    Simulate(SimulateArgs),
    /// Estimate the target from a trajectory and nuisance files.
    Estimate(EstimateArgs),
    /// Select a truncation level adaptively and emit the grid summary.
    Lepski(LepskiArgs),
    /// Run a configured replication sweep and emit aggregated results.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct SetupArgs {
    /// Environment: `chain` or `queue`.
    #[arg(long)]
    setup: String,
    /// Number of chain states.
    #[arg(long)]
    num_states: Option<usize>,
    /// Chain reset probability.
    #[arg(long)]
    reset_prob: Option<f64>,
    /// Queue arrival rate without treatment.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Queue arrival rate under treatment.
    #[arg(long)]
    lambda1: Option<f64>,
}

impl SetupArgs {
    fn build(&self) -> Result<MdpSpec> {
        fn need<T: Copy>(opt: Option<T>, flag: &str, setup: &str) -> Result<T> {
            opt.ok_or_else(|| TdrError::Config(format!("--{flag} is required for --setup {setup}")))
        }
        match self.setup.as_str() {
            "chain" => Ok(MdpSpec::Chain(ChainMdp::new(
                need(self.num_states, "num-states", "chain")?,
                need(self.reset_prob, "reset-prob", "chain")?,
            )?)),
            "queue" => Ok(MdpSpec::Queue(QueueMdp::new(
                need(self.lambda0, "lambda0", "queue")?,
                need(self.lambda1, "lambda1", "queue")?,
            )?)),
            other => Err(TdrError::Config(format!(
                "--setup must be `chain` or `queue`, got `{other}`"
            ))),
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    setup: SetupArgs,
    /// Treatment probability of the logging policy.
    #[arg(long)]
    policy: f64,
    /// Number of steps to record.
    #[arg(long)]
    len: usize,
    /// Start state; defaults to a stationary draw (chain) or 0 (queue).
    #[arg(long)]
    init_state: Option<usize>,
    /// Steps discarded before recording begins.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NuisanceFiles {
    /// Trajectory CSV to evaluate.
    #[arg(long)]
    trajectory: PathBuf,
    /// Q-table CSV; its kind decides the objective.
    #[arg(long)]
    qtable: PathBuf,
    /// Density-ratio CSV.
    #[arg(long)]
    ratio: PathBuf,
    /// Treatment probability of the evaluation policy.
    #[arg(long)]
    policy_eval: f64,
    /// Treatment probability of the behavior policy.
    #[arg(long)]
    policy_behavior: f64,
    /// Start state of the discounted objective (point mass).
    #[arg(long)]
    p0_state: Option<usize>,
}

impl NuisanceFiles {
    fn build(&self) -> Result<(mdp::Trajectory, OpeContext)> {
        let traj = io::read_trajectory(&self.trajectory)?;
        let q_hat = io::read_qtable(&self.qtable)?;
        let omega_hat = io::read_ratio(&self.ratio)?;
        let objective = match q_hat.kind() {
            QKind::Discounted { gamma } => {
                let p0_state = self.p0_state.ok_or_else(|| {
                    TdrError::Config(
                        "--p0-state is required when the q-table is discounted".into(),
                    )
                })?;
                Objective::Discounted { gamma, p0: StateDist::point_mass(p0_state) }
            }
            QKind::Differential { .. } => {
                if self.p0_state.is_some() {
                    return Err(TdrError::Config(
                        "--p0-state only applies to discounted q-tables".into(),
                    ));
                }
                Objective::LongRun
            }
        };
        let ctx = OpeContext {
            pi_e: PolicyTable::constant(self.policy_eval)?,
            pi_b: PolicyTable::constant(self.policy_behavior)?,
            q_hat,
            omega_hat,
            objective,
        };
        ctx.validate()?;
        Ok((traj, ctx))
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    files: NuisanceFiles,
    /// Truncation schedule (`none`, `t^0.7`, `T^0.7`, `fixed:2.5`); repeatable.
    #[arg(long = "schedule", default_value = "none")]
    schedules: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LepskiArgs {
    #[command(flatten)]
    files: NuisanceFiles,
    /// Truncation grid, weakest first, comma separated.
    #[arg(long, default_value = "none,t^0.9,t^0.7,t^0.5,t^0.3")]
    grid: String,
    /// Bootstrap draws per grid entry.
    #[arg(long, default_value_t = 100)]
    draws: usize,
    /// Half-width multiplier of the bootstrap intervals.
    #[arg(long, default_value_t = 1.96)]
    z: f64,
    /// Bootstrap block length; defaults to floor(T^(1/3)).
    #[arg(long)]
    block_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the replication sweep; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Results file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Where to write adaptive selection counts, when configured.
    #[arg(long)]
    selections_out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => io::write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_schedules(raw: &[String]) -> Result<Vec<TruncationSchedule>> {
    let mut schedules = Vec::new();
    for item in raw.iter().flat_map(|s| s.split(',')) {
        let item = item.trim();
        if !item.is_empty() {
            schedules.push(TruncationSchedule::parse(item)?);
        }
    }
    if schedules.is_empty() {
        return Err(TdrError::Config("no truncation schedules given".into()));
    }
    Ok(schedules)
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let mdp = args.setup.build()?;
    let policy = PolicyTable::constant(args.policy)?;
    let mut rng = stream_rng(args.seed, 0);
    let init = match (args.init_state, &mdp) {
        (Some(s), _) => InitialState::Fixed(s),
        (None, MdpSpec::Chain(c)) => {
            InitialState::Random(mdp::stationary_chain(args.policy, c.reset_prob, c.num_states)?)
        }
        (None, MdpSpec::Queue(_)) => InitialState::Fixed(0),
    };
    let mut state = match &init {
        InitialState::Fixed(s) => *s,
        InitialState::Random(dist) => dist.sample(&mut rng),
    };
    for _ in 0..args.burn_in {
        let action = policy.sample(state, &mut rng);
        let (next, _) = mdp.step(state, action, &mut rng)?;
        state = next;
    }
    let traj =
        mdp::sample_trajectory(&mdp, &policy, args.len, &InitialState::Fixed(state), &mut rng)?;
    emit(args.out.as_deref(), &io::trajectory_to_csv(&traj)?)
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let (traj, ctx) = args.files.build()?;
    let schedules = parse_schedules(&args.schedules)?;
    let mut results = Vec::with_capacity(schedules.len());
    for schedule in schedules {
        results.push(ctx.tdr(&traj, schedule)?);
    }
    emit(args.out.as_deref(), &io::estimator_results_to_csv(&results))
}

fn run_lepski(args: &LepskiArgs) -> Result<()> {
    let (traj, ctx) = args.files.build()?;
    let cfg = LepskiConfig {
        grid: parse_schedules(std::slice::from_ref(&args.grid))?,
        bootstrap_draws: args.draws,
        z: args.z,
        block_len: args.block_len,
    };
    let mut rng = stream_rng(args.seed, 0);
    let outcome = lepski_select(&traj, &ctx, &cfg, &mut rng)?;
    emit(args.out.as_deref(), &io::lepski_to_csv(&outcome))
}

fn run_experiment_cmd(args: &ExperimentArgs) -> Result<()> {
    let mut cfg = config::load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let output = match args.threads {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| TdrError::Config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| experiment::run_experiment(&cfg))?
        }
        None => experiment::run_experiment(&cfg)?,
    };
    emit(args.out.as_deref(), &io::experiment_results_to_csv(&cfg, &output))?;
    if cfg.lepski.is_some() {
        if let Some(path) = &args.selections_out {
            io::write_text(path, &io::selections_to_csv(&cfg, &output)?)?;
        }
    }
    if let Some(message) = output.failure {
        return Err(TdrError::ReplicationFailed(message));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(args) => run_simulate(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Lepski(args) => run_lepski(args),
        Command::Experiment(args) => run_experiment_cmd(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
