//! The on-guard negotiation game as a resettable, steppable multi-agent
//! environment.
//!
//! Each episode is one negotiation: every active agent submits offer and
//! demand bit-vectors at every step, the central service relays them (after
//! mode-dependent filtering) and checks whether a single agent offers to all
//! others while every other agent demands it. The episode ends on agreement
//! or after `max_steps` steps. Completed episodes are reported to the ledger
//! and the regulator, which carry state from one negotiation to the next.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ledger::{EnergyModel, LedgerState, RecommendationBasis};
use crate::regulator::{self, BlacklistConfig, RegulatorState};
use crate::scalar::{lit, Scalar};

pub type AgentId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "F", alias = "free", alias = "Free")]
    Free,
    #[serde(rename = "R", alias = "recommended", alias = "Recommended")]
    Recommended,
    #[serde(rename = "I", alias = "imposed", alias = "Imposed")]
    Imposed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Free, Mode::Recommended, Mode::Imposed];

    pub fn code(self) -> char {
        match self {
            Mode::Free => 'F',
            Mode::Recommended => 'R',
            Mode::Imposed => 'I',
        }
    }

    /// Whether the service embeds a recommendation in observations.
    pub fn recommends(self) -> bool {
        self != Mode::Free
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f" | "free" => Ok(Mode::Free),
            "r" | "recommended" => Ok(Mode::Recommended),
            "i" | "imposed" => Ok(Mode::Imposed),
            other => Err(format!("unknown mode `{other}` (expected F, R or I)")),
        }
    }
}

/// Reward constants. The defaults are the costs of the three infrastructure
/// states: on-guard for everyone, active alone, off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSchedule<F> {
    /// Terminal reward of the agent that agreed to be on-guard.
    pub on_guard: F,
    /// Terminal reward of an agent served by the on-guard agent.
    pub found: F,
    /// Terminal reward of every agent when no agreement was reached.
    pub fail: F,
    /// Reward of every non-terminal step.
    pub step: F,
}

impl<F: Scalar> Default for RewardSchedule<F> {
    fn default() -> Self {
        RewardSchedule {
            on_guard: lit(-1.00),
            found: lit(-0.01),
            fail: lit(-0.90),
            step: lit(-0.01),
        }
    }
}

impl<F: Scalar> RewardSchedule<F> {
    pub fn validate(&self) -> Result<(), EnvError> {
        let ordered =
            self.on_guard <= self.fail && self.fail <= self.found && self.found <= F::zero();
        if !ordered || self.step > F::zero() {
            return Err(EnvError::InvalidConfig(format!(
                "reward schedule must satisfy on_guard <= fail <= found <= 0 and step <= 0, got {:?}",
                self
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig<F> {
    pub n_agents: usize,
    pub mode: Mode,
    pub max_steps: usize,
    pub rewards: RewardSchedule<F>,
    pub blacklist: BlacklistConfig,
    pub energy: EnergyModel<F>,
    pub recommendation_basis: RecommendationBasis,
    /// Discount used by learners; metrics always sum undiscounted.
    pub gamma_learning: F,
    pub seed: u64,
}

impl<F: Scalar> EnvConfig<F> {
    pub fn new(n_agents: usize, mode: Mode) -> Self {
        EnvConfig {
            n_agents,
            mode,
            max_steps: 10,
            rewards: RewardSchedule::default(),
            blacklist: BlacklistConfig::for_mode(mode),
            energy: EnergyModel::default(),
            recommendation_basis: RecommendationBasis::default(),
            gamma_learning: lit(0.99),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents < 2 {
            return Err(EnvError::InvalidConfig(format!(
                "n_agents must be at least 2, got {}",
                self.n_agents
            )));
        }
        if self.max_steps < 1 {
            return Err(EnvError::InvalidConfig(
                "max_steps must be at least 1".into(),
            ));
        }
        let gamma = self.gamma_learning;
        if !(gamma > F::zero() && gamma <= F::one()) {
            return Err(EnvError::InvalidConfig(format!(
                "gamma_learning must lie in (0, 1], got {gamma}"
            )));
        }
        self.rewards.validate()?;
        self.blacklist.validate().map_err(EnvError::InvalidConfig)?;
        self.energy.validate().map_err(EnvError::InvalidConfig)?;
        Ok(())
    }

    /// Length of an agent's flat action vector (offers then demands).
    pub fn action_len(&self) -> usize {
        2 * self.n_agents
    }

    /// Length of an agent's flat observation vector.
    pub fn observation_len(&self) -> usize {
        Observation::flat_len(self.n_agents)
    }
}

/// One agent's sub-actions for one step. Bit `j` of `offers` means "I offer to
/// be on-guard for agent j"; bit `j` of `demands` means "I demand that agent j
/// be on-guard for me".
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentAction {
    pub offers: Vec<bool>,
    pub demands: Vec<bool>,
}

impl AgentAction {
    pub fn idle(n_agents: usize) -> Self {
        AgentAction {
            offers: vec![false; n_agents],
            demands: vec![false; n_agents],
        }
    }

    pub fn new(n_agents: usize, offers: &[AgentId], demands: &[AgentId]) -> Self {
        let mut action = AgentAction::idle(n_agents);
        for &j in offers {
            action.offers[j] = true;
        }
        for &j in demands {
            action.demands[j] = true;
        }
        action
    }

    /// Offers then demands, the layout used by learners and the wire client.
    pub fn to_flat(&self) -> Vec<bool> {
        self.offers.iter().chain(&self.demands).copied().collect()
    }

    pub fn from_flat(bits: &[bool]) -> Option<Self> {
        if !bits.len().is_multiple_of(2) {
            return None;
        }
        let (offers, demands) = bits.split_at(bits.len() / 2);
        Some(AgentAction {
            offers: offers.to_vec(),
            demands: demands.to_vec(),
        })
    }

    pub fn is_idle(&self) -> bool {
        !self.offers.iter().chain(&self.demands).any(|&b| b)
    }

    fn check(&self, agent: AgentId, n_agents: usize) -> Result<(), EnvError> {
        if self.offers.len() != n_agents || self.demands.len() != n_agents {
            return Err(EnvError::WrongLength {
                agent,
                expected: n_agents,
                offers: self.offers.len(),
                demands: self.demands.len(),
            });
        }
        if self.offers[agent] || self.demands[agent] {
            return Err(EnvError::SelfBit { agent });
        }
        Ok(())
    }
}

/// Per-agent actions for one step, indexed by agent id; `None` for agents
/// that are not taking part (blacklisted).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct JointAction(pub Vec<Option<AgentAction>>);

impl JointAction {
    /// Every agent acts.
    pub fn all(actions: Vec<AgentAction>) -> Self {
        JointAction(actions.into_iter().map(Some).collect())
    }

    pub fn get(&self, agent: AgentId) -> Option<&AgentAction> {
        self.0.get(agent).and_then(Option::as_ref)
    }

    pub fn offers(&self, from: AgentId, to: AgentId) -> bool {
        self.get(from).is_some_and(|a| a.offers[to])
    }

    pub fn demands(&self, from: AgentId, to: AgentId) -> bool {
        self.get(from).is_some_and(|a| a.demands[to])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// What one agent sees at the start of a step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    /// Bit `j`: agent j offered to be on-guard for me at the last step.
    pub offers_to_me: Vec<bool>,
    /// Bit `j`: agent j demanded that I be on-guard at the last step.
    pub demands_to_me: Vec<bool>,
    pub recommended_onehot: Vec<bool>,
    pub i_am_recommended: bool,
    pub i_am_blacklisted: bool,
}

impl Observation {
    pub fn blank(n_agents: usize) -> Self {
        Observation {
            offers_to_me: vec![false; n_agents],
            demands_to_me: vec![false; n_agents],
            recommended_onehot: vec![false; n_agents],
            i_am_recommended: false,
            i_am_blacklisted: false,
        }
    }

    pub fn flat_len(n_agents: usize) -> usize {
        3 * n_agents + 2
    }

    /// `offers_to_me ‖ demands_to_me ‖ recommended_onehot ‖ i_am_recommended ‖ i_am_blacklisted`.
    pub fn to_flat(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity(Self::flat_len(self.offers_to_me.len()));
        bits.extend_from_slice(&self.offers_to_me);
        bits.extend_from_slice(&self.demands_to_me);
        bits.extend_from_slice(&self.recommended_onehot);
        bits.push(self.i_am_recommended);
        bits.push(self.i_am_blacklisted);
        bits
    }

    pub fn from_flat(bits: &[bool]) -> Option<Self> {
        if bits.len() < 2 || !(bits.len() - 2).is_multiple_of(3) {
            return None;
        }
        let n = (bits.len() - 2) / 3;
        Some(Observation {
            offers_to_me: bits[..n].to_vec(),
            demands_to_me: bits[n..2 * n].to_vec(),
            recommended_onehot: bits[2 * n..3 * n].to_vec(),
            i_am_recommended: bits[3 * n],
            i_am_blacklisted: bits[3 * n + 1],
        })
    }

    /// The recommended agent announced in this observation, if any.
    pub fn recommended(&self) -> Option<AgentId> {
        self.recommended_onehot.iter().position(|&b| b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeKind {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome<F> {
    pub kind: OutcomeKind,
    pub on_guard: Option<AgentId>,
    pub served: Vec<AgentId>,
    pub steps_taken: usize,
    /// Undiscounted return of every agent, blacklisted agents included.
    pub returns: Vec<F>,
    /// Agents that took part in the negotiation.
    pub active: Vec<AgentId>,
    pub recommended: Option<AgentId>,
    pub episode: u64,
}

impl<F: Scalar> EpisodeOutcome<F> {
    pub fn is_success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }

    /// Returns of the participating agents, in agent order.
    pub fn active_returns(&self) -> Vec<F> {
        self.active.iter().map(|&i| self.returns[i]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepInfo {
    /// 1-based index of the step just played.
    pub step: usize,
    /// Agents whose offers were modified by the service before relaying.
    pub filtered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult<F> {
    pub observations: Vec<Observation>,
    pub rewards: Vec<F>,
    pub done: bool,
    pub outcome: Option<EpisodeOutcome<F>>,
    pub info: StepInfo,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("agent {agent} set a bit addressed to itself")]
    SelfBit { agent: AgentId },
    #[error("agent {agent} is blacklisted and may not act")]
    BlacklistedAction { agent: AgentId },
    #[error("no action submitted for active agent {agent}")]
    MissingAction { agent: AgentId },
    #[error("agent {agent}: expected bit-vectors of length {expected}, got offers {offers} / demands {demands}")]
    WrongLength {
        agent: AgentId,
        expected: usize,
        offers: usize,
        demands: usize,
    },
    #[error("joint action has {got} entries, expected {expected}")]
    WrongAgentCount { expected: usize, got: usize },
    #[error("episode is done; call reset first")]
    EpisodeDone,
    #[error("no episode in progress; call reset first")]
    NotReset,
}

/// Returns the on-guard agent and the agents it serves, if the actions
/// contain an agreement: agent `i` offers to every other active agent and
/// every other active agent demands `i`. The lowest such id wins.
pub fn check_agreement(
    actions: &JointAction,
    active: &[AgentId],
) -> Option<(AgentId, Vec<AgentId>)> {
    if active.len() < 2 {
        return None;
    }
    let on_guard = active.iter().copied().find(|&i| {
        active
            .iter()
            .filter(|&&j| j != i)
            .all(|&j| actions.offers(i, j) && actions.demands(j, i))
    })?;
    let served = active.iter().copied().filter(|&j| j != on_guard).collect();
    Some((on_guard, served))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Running,
    Done,
}

/// The central on-guard service together with the ledger and regulator it
/// consults. Owns its RNG, so clones evolve independently.
#[derive(Debug, Clone)]
pub struct NegotiationEnv<F> {
    config: EnvConfig<F>,
    ledger: LedgerState<F>,
    regulator: RegulatorState,
    rng: ChaCha8Rng,
    episode: u64,
    step: usize,
    phase: Phase,
    active: Vec<bool>,
    recommended: Option<AgentId>,
    last: JointAction,
    recommended_demanded: bool,
    returns: Vec<F>,
}

impl<F: Scalar> NegotiationEnv<F> {
    pub fn new(config: EnvConfig<F>) -> Result<Self, EnvError> {
        config.validate()?;
        let n = config.n_agents;
        Ok(NegotiationEnv {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            ledger: LedgerState::new(n),
            regulator: RegulatorState::new(n),
            episode: 0,
            step: 0,
            phase: Phase::Idle,
            active: vec![true; n],
            recommended: None,
            last: JointAction(vec![None; n]),
            recommended_demanded: false,
            returns: vec![F::zero(); n],
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig<F> {
        &self.config
    }

    pub fn n_agents(&self) -> usize {
        self.config.n_agents
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn ledger(&self) -> &LedgerState<F> {
        &self.ledger
    }

    pub fn regulator(&self) -> &RegulatorState {
        &self.regulator
    }

    /// Number of completed episodes, i.e. the index of the current one.
    pub fn episode_index(&self) -> u64 {
        self.episode
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn is_active(&self, agent: AgentId) -> bool {
        self.active[agent]
    }

    pub fn active_mask(&self) -> &[bool] {
        &self.active
    }

    pub fn active_agents(&self) -> Vec<AgentId> {
        (0..self.n_agents()).filter(|&i| self.active[i]).collect()
    }

    pub fn recommended(&self) -> Option<AgentId> {
        self.recommended
    }

    /// Fewer than two agents can take part in the current episode.
    pub fn is_degenerate(&self) -> bool {
        self.active.iter().filter(|&&a| a).count() < 2
    }

    /// Starts a new negotiation. An unfinished episode is abandoned without
    /// being reported.
    pub fn reset(&mut self) -> Vec<Observation> {
        let n = self.n_agents();
        self.active = (0..n).map(|i| !self.regulator.is_blacklisted(i)).collect();
        let active = self.active_agents();
        self.recommended = if self.config.mode.recommends() {
            let totals = self
                .ledger
                .recommendation_totals(self.config.recommendation_basis);
            regulator::recommend(totals, &active).ok()
        } else {
            None
        };
        self.regulator.last_recommendation = self.recommended;
        self.step = 0;
        self.phase = Phase::Running;
        self.last = JointAction(vec![None; n]);
        self.recommended_demanded = false;
        self.returns = vec![F::zero(); n];
        self.observations()
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.n_agents())
            .map(|i| self.encode_observation(i))
            .collect()
    }

    /// Observation of `agent`, built from the last relayed actions and the
    /// regulator's outputs.
    pub fn encode_observation(&self, agent: AgentId) -> Observation {
        let n = self.n_agents();
        let mut obs = Observation::blank(n);
        for j in (0..n).filter(|&j| j != agent) {
            obs.offers_to_me[j] = self.last.offers(j, agent);
            obs.demands_to_me[j] = self.last.demands(j, agent);
        }
        if let Some(r) = self.recommended {
            obs.recommended_onehot[r] = true;
            obs.i_am_recommended = r == agent;
        }
        obs.i_am_blacklisted = !self.active[agent];
        obs
    }

    fn validate_joint(&self, joint: &JointAction) -> Result<(), EnvError> {
        let n = self.n_agents();
        if joint.len() != n {
            return Err(EnvError::WrongAgentCount {
                expected: n,
                got: joint.len(),
            });
        }
        for (agent, action) in joint.0.iter().enumerate() {
            match (self.active[agent], action) {
                (true, Some(a)) => a.check(agent, n)?,
                (true, None) => return Err(EnvError::MissingAction { agent }),
                (false, Some(_)) => return Err(EnvError::BlacklistedAction { agent }),
                (false, None) => {}
            }
        }
        Ok(())
    }

    /// Advances the negotiation by one step. Invalid input leaves the state
    /// untouched.
    pub fn step(&mut self, joint: &JointAction) -> Result<StepResult<F>, EnvError> {
        match self.phase {
            Phase::Idle => return Err(EnvError::NotReset),
            Phase::Done => return Err(EnvError::EpisodeDone),
            Phase::Running => {}
        }
        self.validate_joint(joint)?;

        let n = self.n_agents();
        let rewards_cfg = self.config.rewards;
        let max_steps = self.config.max_steps;
        self.step += 1;

        let (relayed, filtered) = if self.is_degenerate() {
            (JointAction(vec![None; n]), vec![false; n])
        } else {
            let (mut relayed, filtered) =
                regulator::filter_actions(self.config.mode, joint, self.recommended);
            // Only active agents are reachable through the service.
            for action in relayed.0.iter_mut().flatten() {
                for j in (0..n).filter(|&j| !self.active[j]) {
                    action.offers[j] = false;
                    action.demands[j] = false;
                }
            }
            (relayed, filtered)
        };

        if let Some(r) = self.recommended {
            if (0..n).any(|j| j != r && relayed.demands(j, r)) {
                self.recommended_demanded = true;
            }
        }

        let active = self.active_agents();
        let mut rewards = vec![F::zero(); n];
        let terminal = if self.is_degenerate() {
            // A lone agent cannot negotiate: the period is lost immediately.
            self.step = max_steps;
            Some((OutcomeKind::Failure, None, Vec::new()))
        } else if let Some((on_guard, served)) = check_agreement(&relayed, &active) {
            Some((OutcomeKind::Success, Some(on_guard), served))
        } else if self.step >= max_steps {
            Some((OutcomeKind::Failure, None, Vec::new()))
        } else {
            None
        };

        match &terminal {
            None => {
                for &i in &active {
                    rewards[i] = rewards_cfg.step;
                }
            }
            Some((kind, on_guard, served)) => {
                // Agents sitting out a blacklist also lose the period.
                rewards.fill(rewards_cfg.fail);
                if *kind == OutcomeKind::Success {
                    for &j in served {
                        rewards[j] = rewards_cfg.found;
                    }
                    if let Some(g) = on_guard {
                        rewards[*g] = rewards_cfg.on_guard;
                    }
                }
            }
        }
        for (ret, r) in self.returns.iter_mut().zip(&rewards) {
            *ret += *r;
        }
        self.last = relayed;

        let outcome = terminal.map(|(kind, on_guard, served)| EpisodeOutcome {
            kind,
            on_guard,
            served,
            steps_taken: self.step,
            returns: self.returns.clone(),
            active: active.clone(),
            recommended: self.recommended,
            episode: self.episode,
        });
        if let Some(outcome) = &outcome {
            self.finish_episode(outcome);
        }

        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: outcome.is_some(),
            outcome,
            info: StepInfo {
                step: self.step,
                filtered,
            },
        })
    }

    fn finish_episode(&mut self, outcome: &EpisodeOutcome<F>) {
        self.ledger
            .report_consumption(outcome, &self.config.energy, &mut self.rng);
        self.ledger.accrue_savings(outcome, &self.config.energy);
        self.regulator.update_after_episode(
            &self.config.blacklist,
            self.config.mode,
            outcome,
            self.recommended,
            self.recommended_demanded,
        );
        self.episode += 1;
        self.phase = Phase::Done;
    }
}
