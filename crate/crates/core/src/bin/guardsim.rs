use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use guardsim::harness::{self, apply_blacklist_overrides, Cell, EvalSettings, ExperimentPlan};
use guardsim::{payoff_matrix, wire, Checkpoint, Config, Mode, Params, PolicyTag};

#[derive(Parser)]
#[command(name = "guardsim", version, about = "On-guard negotiation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one learner per agent in self-play and evaluate the result.
    Train {
        #[arg(long)]
        agents: usize,
        #[arg(long)]
        mode: Mode,
        /// Environment-step budget.
        #[arg(long, default_value_t = 200_000)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        eval_episodes: usize,
        #[arg(long)]
        blacklist_m: Option<u32>,
        #[arg(long)]
        blacklist_duration: Option<u32>,
        /// JSON file with learner hyperparameters.
        #[arg(long)]
        learner: Option<PathBuf>,
    },
    /// Evaluate a checkpoint, or a scripted policy shared by all agents.
    Eval {
        #[arg(
            long,
            conflicts_with = "scripted",
            required_unless_present = "scripted"
        )]
        checkpoint: Option<PathBuf>,
        #[arg(long, requires = "agents")]
        scripted: Option<PolicyTag>,
        /// Agent count; must match the checkpoint when both are given.
        #[arg(long)]
        agents: Option<usize>,
        /// Service mode; defaults to the checkpoint's.
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        replays: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment plan.
    Grid {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the two-player payoffs built from the state costs.
    Payoffs {
        #[arg(long, default_value_t = -0.01, allow_hyphen_values = true)]
        o: f64,
        #[arg(long, default_value_t = -0.90, allow_hyphen_values = true)]
        a: f64,
        #[arg(long, default_value_t = -1.00, allow_hyphen_values = true)]
        g: f64,
    },
    /// Serve environments over the line-delimited JSON protocol.
    Serve {
        #[arg(long, value_enum, default_value_t = Transport::Stdio)]
        mode: Transport,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 3)]
        agents: usize,
        #[arg(long, default_value = "I")]
        service_mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Transport {
    Stdio,
    Tcp,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            agents,
            mode,
            steps,
            seed,
            out,
            eval_episodes,
            blacklist_m,
            blacklist_duration,
            learner,
        } => {
            let params: Params = match learner {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?)
                    .with_context(|| format!("reading {}", path.display()))?,
                None => Params::default(),
            };
            let mut config = Config::new(agents, mode).with_seed(seed);
            apply_blacklist_overrides(&mut config.blacklist, blacklist_m, blacklist_duration);
            config.gamma_learning = params.gamma;
            let training = harness::run_training(&config, &params, steps)?;
            training
                .checkpoint(mode)
                .save(&out.join("checkpoint.json"))?;
            let mut log = Vec::new();
            harness::write_training_log(&training.log, &mut log)?;
            harness::write_atomic(&out.join("training_log.csv"), &log)?;
            let policies = training
                .policies
                .iter()
                .cloned()
                .map(guardsim::Policy::Learner)
                .collect::<Vec<_>>();
            let settings = EvalSettings {
                episodes: eval_episodes,
                replays: 100,
                seed: seed ^ 0xE7A1,
            };
            evaluate_and_write(&config, &policies, &settings, &out)?;
            println!(
                "trained {} env steps; outputs in {}",
                training.env_steps,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            scripted,
            agents,
            mode,
            episodes,
            replays,
            seed,
            out,
        } => {
            let ckpt = match (checkpoint, scripted) {
                (Some(path), _) => Checkpoint::load(&path)?,
                (None, Some(tag)) => {
                    Checkpoint::scripted(agents.unwrap_or(3), mode.unwrap_or(Mode::Free), tag)
                }
                (None, None) => bail!("either --checkpoint or --scripted is required"),
            };
            let n = agents.unwrap_or(ckpt.n_agents);
            let config = Config::new(n, mode.unwrap_or(ckpt.mode));
            let policies = ckpt.to_policies()?;
            let settings = EvalSettings {
                episodes,
                replays,
                seed,
            };
            evaluate_and_write(&config, &policies, &settings, &out)?;
            println!(
                "evaluated {episodes} episodes; outputs in {}",
                out.display()
            );
        }
        Command::Grid { plan, out } => {
            let plan = ExperimentPlan::load(&plan)
                .with_context(|| format!("reading plan {}", plan.display()))?;
            let out = out
                .or_else(|| plan.output_dir.clone())
                .context("no output directory: pass --out or set output_dir in the plan")?;
            let report = harness::run_grid(&plan, Some(&out))?;
            for a in &report.aggregates {
                println!(
                    "N={:<2} {}  E={:.3}±{:.3}  Sf={:.3}±{:.3}  IC={:.3}±{:.3}  J={:.3}±{:.3}",
                    a.n_agents,
                    a.mode,
                    a.efficiency.mean,
                    a.efficiency.std,
                    a.safety.mean,
                    a.safety.std,
                    a.ic.mean,
                    a.ic.std,
                    a.jain.mean,
                    a.jain.std
                );
            }
        }
        Command::Payoffs { o, a, g } => {
            let pm = payoff_matrix(o, a, g);
            println!("T={:.2} R={:.2} P={:.2} S={:.2}", pm.t, pm.r, pm.p, pm.s);
            let ordered = pm.is_prisoners_dilemma();
            let iterated = (2.0 * pm.r - (pm.t + pm.s)).abs() < 1e-12;
            println!("T>R>P>S: {ordered}");
            println!("2R=T+S: {iterated}");
            if !(ordered && iterated) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Serve {
            mode,
            port,
            host,
            agents,
            service_mode,
            seed,
        } => {
            let config = Config::new(agents, service_mode).with_seed(seed);
            match mode {
                Transport::Stdio => wire::serve_stdio(config)?,
                Transport::Tcp => {
                    let listener = TcpListener::bind((host.as_str(), port))?;
                    eprintln!("listening on {}", listener.local_addr()?);
                    wire::serve_tcp(config, listener)?;
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn evaluate_and_write(
    config: &Config,
    policies: &[guardsim::Policy],
    settings: &EvalSettings,
    out: &Path,
) -> Result<()> {
    let fragment = harness::run_evaluation(config, policies, settings, 0)?;
    let cell = Cell::new(config.n_agents, config.mode);
    harness::write_ledger(&fragment.ledger, &out.join("ledger.csv"))?;
    let report = harness::aggregate(
        &[cell],
        1,
        settings.episodes,
        std::slice::from_ref(&fragment),
    );
    harness::write_report(&report, out)?;
    let agg = &report.aggregates[0];
    for (name, s) in agg.named() {
        println!("{name:>2} = {:.4} ± {:.4}", s.mean, s.std);
    }
    Ok(())
}
