//! Experiment orchestration: self-play training, evaluation campaigns with
//! counterfactual replays, aggregation over the (N, mode) grid and the CSV
//! outputs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{
    AgentAction, AgentId, EnvConfig, EnvError, EpisodeOutcome, JointAction, Mode, NegotiationEnv,
};
use crate::ledger::LedgerState;
use crate::metrics::{self, CellAggregate, EpisodeMetrics, MetricError, PayoffMatrix};
use crate::policies::{
    features, learner_update, Checkpoint, LearnerParams, LinearPolicy, PolicyError, PolicyKind,
    Trajectory, TrajectoryStep,
};
use crate::regulator::BlacklistConfig;
use crate::scalar::{count, lit, Scalar};

const POLICY_SALT: u64 = 0x5EED_0FA6_E750_0001;
const EVAL_SALT: u64 = 0xE7A1_0000_0000_0001;
const COUNTERFACTUAL_SALT: u64 = 0xC0F7_0000_0000_0002;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("training diverged at iteration {iteration}: {source}")]
    Diverged {
        iteration: usize,
        #[source]
        source: PolicyError,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub n_agents: usize,
    pub mode: Mode,
}

impl Cell {
    pub fn new(n_agents: usize, mode: Mode) -> Self {
        Cell { n_agents, mode }
    }

    pub fn label(&self) -> String {
        format!("N{}_{}", self.n_agents, self.mode)
    }

    fn mode_index(&self) -> u64 {
        match self.mode {
            Mode::Free => 0,
            Mode::Recommended => 1,
            Mode::Imposed => 2,
        }
    }
}

/// splitmix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `run` in `cell`: `seed_base ^ mix64(n << 32 | mode << 16 | run)`
/// with mode F=0, R=1, I=2.
pub fn cell_seed(seed_base: u64, cell: Cell, run: usize) -> u64 {
    let key = ((cell.n_agents as u64) << 32) | (cell.mode_index() << 16) | (run as u64 & 0xFFFF);
    seed_base ^ mix64(key)
}

fn default_grid() -> Vec<Cell> {
    [3, 4, 8, 10]
        .into_iter()
        .flat_map(|n| Mode::ALL.into_iter().map(move |m| Cell::new(n, m)))
        .collect()
}

fn default_runs() -> usize {
    5
}

fn default_eval_episodes() -> usize {
    100
}

fn default_budget() -> u64 {
    200_000
}

fn default_replays() -> usize {
    100
}

fn default_max_steps() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default = "default_grid")]
    pub grid: Vec<Cell>,
    #[serde(default = "default_runs")]
    pub runs_per_cell: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_budget")]
    pub train_step_budget: u64,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub learner: LearnerParams<f64>,
    /// Blacklist threshold override (imposed mode).
    #[serde(default)]
    pub blacklist_m: Option<u32>,
    #[serde(default)]
    pub blacklist_duration: Option<u32>,
    /// Counterfactual replays per variant when some policy is stochastic.
    #[serde(default = "default_replays")]
    pub counterfactual_replays: usize,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            grid: default_grid(),
            runs_per_cell: default_runs(),
            eval_episodes: default_eval_episodes(),
            train_step_budget: default_budget(),
            seed_base: 0,
            output_dir: None,
            max_steps: default_max_steps(),
            learner: LearnerParams::default(),
            blacklist_m: None,
            blacklist_duration: None,
            counterfactual_replays: default_replays(),
        }
    }
}

impl ExperimentPlan {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn env_config<F: Scalar>(&self, cell: Cell, run: usize) -> EnvConfig<F> {
        let mut config = EnvConfig::new(cell.n_agents, cell.mode)
            .with_max_steps(self.max_steps)
            .with_seed(cell_seed(self.seed_base, cell, run));
        apply_blacklist_overrides(
            &mut config.blacklist,
            self.blacklist_m,
            self.blacklist_duration,
        );
        config.gamma_learning = lit(self.learner.gamma);
        config
    }

    pub fn eval_settings(&self, cell: Cell, run: usize) -> EvalSettings {
        EvalSettings {
            episodes: self.eval_episodes,
            replays: self.counterfactual_replays,
            seed: cell_seed(self.seed_base, cell, run) ^ EVAL_SALT,
        }
    }
}

pub fn apply_blacklist_overrides(cfg: &mut BlacklistConfig, m: Option<u32>, duration: Option<u32>) {
    if let Some(m) = m {
        cfg.refusal_threshold = m;
    }
    if let Some(d) = duration {
        cfg.duration = d;
    }
}

impl<F: Scalar> LearnerParams<F> {
    pub fn cast<G: Scalar>(&self) -> LearnerParams<G> {
        LearnerParams {
            learning_rate: lit(crate::scalar::to_f64(self.learning_rate)),
            entropy_bonus: lit(crate::scalar::to_f64(self.entropy_bonus)),
            gamma: lit(crate::scalar::to_f64(self.gamma)),
            batch_episodes: self.batch_episodes,
            rollout_negotiations: self.rollout_negotiations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub negotiations: u64,
    pub success_rate: f64,
    /// Mean undiscounted return per agent and negotiation.
    pub mean_return: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutput<F> {
    pub policies: Vec<LinearPolicy<F>>,
    pub log: Vec<TrainingLogRow>,
    pub env_steps: u64,
}

impl<F: Scalar> TrainingOutput<F> {
    pub fn checkpoint(&self, mode: Mode) -> Checkpoint<F> {
        let kinds: Vec<PolicyKind<F>> = self
            .policies
            .iter()
            .cloned()
            .map(PolicyKind::Learner)
            .collect();
        Checkpoint::from_policies(mode, &kinds)
    }
}

/// Trains one learner per agent in self-play until `step_budget` environment
/// steps have been played. The budget is checked before each batch, so the
/// last batch may run past it.
pub fn run_training<F: Scalar>(
    config: &EnvConfig<F>,
    params: &LearnerParams<F>,
    step_budget: u64,
) -> Result<TrainingOutput<F>> {
    let n = config.n_agents;
    let mut env = NegotiationEnv::new(config.clone())?;
    let mut policies: Vec<LinearPolicy<F>> =
        (0..n).map(|i| LinearPolicy::for_agent(n, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ POLICY_SALT);
    let mut env_steps = 0u64;
    let mut negotiations = 0u64;
    let mut log = Vec::new();
    let rollouts = params.batch_episodes.max(1);
    let per_rollout = params.rollout_negotiations.max(1);

    while env_steps < step_budget {
        let mut batches: Vec<Vec<Trajectory<F>>> = vec![Vec::with_capacity(rollouts); n];
        let mut successes = 0u64;
        let mut played = 0u64;
        for _ in 0..rollouts {
            let mut trajs = vec![Trajectory::<F>::new(); n];
            for _ in 0..per_rollout {
                let mut obs = env.reset();
                loop {
                    let mut joint = Vec::with_capacity(n);
                    let mut pending = Vec::with_capacity(n);
                    for i in 0..n {
                        if env.is_active(i) {
                            let x = features::<F>(&obs[i]);
                            let bits = policies[i].act(&x, &mut rng, false)?;
                            joint.push(AgentAction::from_flat(&bits));
                            pending.push((x, Some(bits)));
                        } else {
                            joint.push(None);
                            pending.push((Vec::new(), None));
                        }
                    }
                    let res = env.step(&JointAction(joint))?;
                    env_steps += 1;
                    for (i, (x, action)) in pending.into_iter().enumerate() {
                        trajs[i].steps.push(TrajectoryStep {
                            features: x,
                            action,
                            reward: res.rewards[i],
                        });
                    }
                    obs = res.observations;
                    if let Some(outcome) = res.outcome {
                        played += 1;
                        successes += outcome.is_success() as u64;
                        break;
                    }
                }
            }
            for (batch, traj) in batches.iter_mut().zip(trajs) {
                batch.push(traj);
            }
        }
        negotiations += played;

        let iteration = log.len();
        let mut mean_return = 0.0;
        let mut grad_norm = 0.0;
        for (policy, batch) in policies.iter_mut().zip(&batches) {
            let diag = learner_update(policy, batch, params)
                .map_err(|source| HarnessError::Diverged { iteration, source })?;
            mean_return += crate::scalar::to_f64(diag.mean_return);
            grad_norm += crate::scalar::to_f64(diag.grad_norm);
        }
        log.push(TrainingLogRow {
            iteration,
            env_steps,
            negotiations,
            success_rate: successes as f64 / played.max(1) as f64,
            mean_return: mean_return / (n * per_rollout) as f64,
            grad_norm: grad_norm / n as f64,
        });
    }

    Ok(TrainingOutput {
        policies,
        log,
        env_steps,
    })
}

pub fn write_training_log<W: io::Write>(rows: &[TrainingLogRow], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub episodes: usize,
    pub replays: usize,
    pub seed: u64,
}

/// Which policy each agent runs in one (possibly counterfactual) episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    /// Agent runs its evaluated policy, everyone else defects.
    AloneAgainstDefectors(AgentId),
    AllDefect,
    /// Agent defects, everyone else runs their evaluated policy.
    DefectorAmongEvaluated(AgentId),
}

impl Variant {
    fn evaluated(self, agent: AgentId) -> bool {
        match self {
            Variant::AloneAgainstDefectors(i) => agent == i,
            Variant::AllDefect => false,
            Variant::DefectorAmongEvaluated(i) => agent != i,
        }
    }
}

/// Plays one full episode. Agents flagged by `evaluated` run their policy
/// greedily; the others defect.
pub fn play_episode<F: Scalar>(
    env: &mut NegotiationEnv<F>,
    policies: &[PolicyKind<F>],
    evaluated: impl Fn(AgentId) -> bool,
    rng: &mut ChaCha8Rng,
    greedy: bool,
) -> Result<EpisodeOutcome<F>> {
    let n = env.n_agents();
    let mut obs = env.reset();
    let episode = env.episode_index();
    loop {
        let mut joint = Vec::with_capacity(n);
        for i in 0..n {
            if !env.is_active(i) {
                joint.push(None);
            } else if evaluated(i) {
                joint.push(Some(policies[i].act(&obs[i], i, episode, rng, greedy)?));
            } else {
                joint.push(Some(AgentAction::idle(n)));
            }
        }
        let res = env.step(&JointAction(joint))?;
        obs = res.observations;
        if let Some(outcome) = res.outcome {
            return Ok(outcome);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalFragment<F> {
    pub cell: Cell,
    pub run: usize,
    pub rows: Vec<EpisodeMetrics<F>>,
    pub outcomes: Vec<EpisodeOutcome<F>>,
    pub ledger: LedgerState<F>,
}

/// Evaluation campaign of `settings.episodes` greedy episodes, each scored
/// against counterfactual replays of the same starting state.
pub fn run_evaluation<F: Scalar>(
    config: &EnvConfig<F>,
    policies: &[PolicyKind<F>],
    settings: &EvalSettings,
    run: usize,
) -> Result<EvalFragment<F>> {
    if policies.len() != config.n_agents {
        return Err(HarnessError::ConfigMismatch(format!(
            "checkpoint holds {} policies but the environment has {} agents",
            policies.len(),
            config.n_agents
        )));
    }
    let n = config.n_agents;
    let mut env_config = config.clone();
    env_config.seed = settings.seed;
    let mut env = NegotiationEnv::new(env_config)?;
    let payoffs = PayoffMatrix::from_rewards(&config.rewards);
    let greedy = true;
    let replays = if policies.iter().any(|p| p.is_stochastic(greedy)) {
        settings.replays.max(1)
    } else {
        1
    };
    let mut main_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ POLICY_SALT);
    let mut cf_rng = ChaCha8Rng::seed_from_u64(settings.seed ^ COUNTERFACTUAL_SALT);
    let saved_at_start = env.ledger().saved.clone();

    let mut replay =
        |snapshot: &NegotiationEnv<F>, variant: Variant, agent: AgentId| -> Result<F> {
            let mut total = F::zero();
            for _ in 0..replays {
                let mut env = snapshot.clone();
                let outcome = play_episode(
                    &mut env,
                    policies,
                    |i| variant.evaluated(i),
                    &mut cf_rng,
                    greedy,
                )?;
                total += outcome.returns[agent];
            }
            Ok(total / count(replays))
        };

    let mut rows = Vec::with_capacity(settings.episodes);
    let mut outcomes = Vec::with_capacity(settings.episodes);
    for episode in 0..settings.episodes {
        let snapshot = env.clone();
        let outcome = play_episode(&mut env, policies, |_| true, &mut main_rng, greedy)?;
        let n_active = outcome.active.len();
        // A lone agent cannot negotiate; its episode is scored like all-defect.
        let efficiency = if n_active < 2 {
            F::zero()
        } else {
            let base = metrics::baselines(n_active, &config.rewards, config.max_steps);
            metrics::efficiency(&outcome.active_returns(), &base)?
        };

        let mut safety = vec![None; n];
        let mut ic = vec![None; n];
        for &i in &outcome.active {
            let all_defect = replay(&snapshot, Variant::AllDefect, i)?;
            let alone = replay(&snapshot, Variant::AloneAgainstDefectors(i), i)?;
            let defector = replay(&snapshot, Variant::DefectorAmongEvaluated(i), i)?;
            safety[i] = Some(metrics::safety(alone, all_defect, &payoffs)?);
            ic[i] = Some(metrics::incentive_compatibility(
                outcome.returns[i],
                defector,
                &payoffs,
            )?);
        }
        let mean_of = |v: &[Option<F>]| {
            let vals: Vec<F> = v.iter().flatten().copied().collect();
            metrics::summarize(&vals).mean
        };

        let mut active_mask = vec![false; n];
        for &i in &outcome.active {
            active_mask[i] = true;
        }
        let shares: Vec<F> = env
            .ledger()
            .saved
            .iter()
            .zip(&saved_at_start)
            .map(|(&now, &start)| now - start)
            .collect();
        let jain = metrics::jain(&shares, &active_mask);

        rows.push(EpisodeMetrics {
            n_agents: n,
            mode: config.mode,
            run,
            episode,
            efficiency,
            safety_mean: mean_of(&safety),
            ic_mean: mean_of(&ic),
            jain: jain.value,
            safety,
            ic,
            jain_all_zero: jain.all_zero,
            success: outcome.is_success(),
        });
        outcomes.push(outcome);
    }

    Ok(EvalFragment {
        cell: Cell::new(n, config.mode),
        run,
        rows,
        outcomes,
        ledger: env.ledger().clone(),
    })
}

#[derive(Debug, Clone)]
pub struct MetricsReport<F> {
    pub rows: Vec<EpisodeMetrics<F>>,
    pub aggregates: Vec<CellAggregate<F>>,
    pub partial: bool,
}

/// Groups fragments by cell in grid order. A cell with fewer than
/// `runs_per_cell` runs or short runs is marked partial.
pub fn aggregate<F: Scalar>(
    grid: &[Cell],
    runs_per_cell: usize,
    eval_episodes: usize,
    fragments: &[EvalFragment<F>],
) -> MetricsReport<F> {
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    let mut any_partial = false;
    for &cell in grid {
        let mut mine: Vec<&EvalFragment<F>> = fragments.iter().filter(|f| f.cell == cell).collect();
        mine.sort_by_key(|f| f.run);
        let cell_rows: Vec<EpisodeMetrics<F>> =
            mine.iter().flat_map(|f| f.rows.iter().cloned()).collect();
        let partial =
            mine.len() < runs_per_cell || mine.iter().any(|f| f.rows.len() < eval_episodes);
        any_partial |= partial;
        aggregates.push(CellAggregate::from_rows(
            cell.n_agents,
            cell.mode,
            &cell_rows,
            partial,
        ));
        rows.extend(cell_rows);
    }
    MetricsReport {
        rows,
        aggregates,
        partial: any_partial,
    }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn episodes_csv<F: Scalar>(rows: &[EpisodeMetrics<F>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n_agents", "mode", "run", "episode", "E", "Sf_mean", "IC_mean", "J",
    ])?;
    for r in rows {
        w.write_record([
            r.n_agents.to_string(),
            r.mode.to_string(),
            r.run.to_string(),
            r.episode.to_string(),
            r.efficiency.to_string(),
            r.safety_mean.to_string(),
            r.ic_mean.to_string(),
            r.jain.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

pub fn aggregate_csv<F: Scalar>(aggregates: &[CellAggregate<F>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "n_agents", "mode", "E_mean", "E_std", "Sf_mean", "Sf_std", "IC_mean", "IC_std", "J_mean",
        "J_std", "episodes", "partial",
    ])?;
    for a in aggregates {
        let mut record = vec![a.n_agents.to_string(), a.mode.to_string()];
        for (_, s) in a.named() {
            record.push(s.mean.to_string());
            record.push(s.std.to_string());
        }
        record.push(a.episodes.to_string());
        record.push(a.partial.to_string());
        w.write_record(&record)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

/// One file per agent count with four rows (E, Sf, IC, J) per mode.
pub fn radar_csvs<F: Scalar>(aggregates: &[CellAggregate<F>]) -> Result<Vec<(usize, Vec<u8>)>> {
    let mut ns: Vec<usize> = aggregates.iter().map(|a| a.n_agents).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["mode", "metric", "mean", "std"])?;
            for a in aggregates.iter().filter(|a| a.n_agents == n) {
                for (name, s) in a.named() {
                    w.write_record([
                        a.mode.to_string(),
                        name.to_string(),
                        s.mean.to_string(),
                        s.std.to_string(),
                    ])?;
                }
            }
            let bytes = w
                .into_inner()
                .map_err(|e| HarnessError::Io(e.into_error()))?;
            Ok((n, bytes))
        })
        .collect()
}

pub fn write_report<F: Scalar>(report: &MetricsReport<F>, dir: &Path) -> Result<()> {
    write_atomic(&dir.join("episodes.csv"), &episodes_csv(&report.rows)?)?;
    write_atomic(
        &dir.join("aggregate.csv"),
        &aggregate_csv(&report.aggregates)?,
    )?;
    for (n, bytes) in radar_csvs(&report.aggregates)? {
        write_atomic(&dir.join(format!("radar_N{n}.csv")), &bytes)?;
    }
    Ok(())
}

pub fn write_ledger<F: Scalar>(ledger: &LedgerState<F>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    ledger.write_csv(&mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

/// Result of a single (cell, run) job.
#[derive(Debug, Clone)]
pub struct RunResult<F> {
    pub training: TrainingOutput<F>,
    pub fragment: EvalFragment<F>,
}

pub fn train_and_evaluate<F: Scalar>(
    plan: &ExperimentPlan,
    cell: Cell,
    run: usize,
) -> Result<RunResult<F>> {
    let config = plan.env_config::<F>(cell, run);
    let training = run_training(&config, &plan.learner.cast(), plan.train_step_budget)?;
    let policies: Vec<PolicyKind<F>> = training
        .policies
        .iter()
        .cloned()
        .map(PolicyKind::Learner)
        .collect();
    let fragment = run_evaluation(&config, &policies, &plan.eval_settings(cell, run), run)?;
    Ok(RunResult { training, fragment })
}

/// Every (cell, run) job of the plan, run in parallel. When `out` is given,
/// each job's checkpoint, training log and ledger go under
/// `out/N{n}_{mode}/run{r}/` and the report files under `out/`.
pub fn run_grid(plan: &ExperimentPlan, out: Option<&Path>) -> Result<MetricsReport<f64>> {
    let jobs: Vec<(Cell, usize)> = plan
        .grid
        .iter()
        .flat_map(|&c| (0..plan.runs_per_cell).map(move |r| (c, r)))
        .collect();
    let results: Vec<RunResult<f64>> = jobs
        .par_iter()
        .map(|&(cell, run)| {
            let result = train_and_evaluate::<f64>(plan, cell, run)?;
            if let Some(out) = out {
                let dir = out.join(cell.label()).join(format!("run{run}"));
                result
                    .training
                    .checkpoint(cell.mode)
                    .save(&dir.join("checkpoint.json"))?;
                let mut log = Vec::new();
                write_training_log(&result.training.log, &mut log)?;
                write_atomic(&dir.join("training_log.csv"), &log)?;
                write_ledger(&result.fragment.ledger, &dir.join("ledger.csv"))?;
            }
            Ok(result)
        })
        .collect::<Result<_>>()?;
    let fragments: Vec<EvalFragment<f64>> = results.into_iter().map(|r| r.fragment).collect();
    let report = aggregate(
        &plan.grid,
        plan.runs_per_cell,
        plan.eval_episodes,
        &fragments,
    );
    if let Some(out) = out {
        write_report(&report, out)?;
    }
    Ok(report)
}
