//! Agent policies: the scripted cooperate/defect/random references used by
//! the metric oracles, and a linear Bernoulli policy trained with
//! REINFORCE.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentAction, AgentId, Mode, Observation};
use crate::scalar::{lit, Scalar};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("checkpoint corrupt: {0}")]
    CheckpointCorrupt(String),
    #[error("checkpoint version {found} is not supported (expected {CHECKPOINT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty trajectory batch")]
    EmptyBatch,
    #[error("non-finite parameters after update")]
    NonFinite,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// The agent that every cooperating agent treats as on-guard this episode:
/// the service's recommendation when there is one, otherwise a round-robin
/// over agents keyed on the episode index.
pub fn designation(obs: &Observation, episode: u64, n_agents: usize) -> AgentId {
    obs.recommended()
        .unwrap_or((episode % n_agents as u64) as AgentId)
}

/// The designated agent offers to everyone else; everyone else demands it.
pub fn cooperate_act(n_agents: usize, agent: AgentId, designated: AgentId) -> AgentAction {
    if agent == designated {
        let others: Vec<AgentId> = (0..n_agents).filter(|&j| j != agent).collect();
        AgentAction::new(n_agents, &others, &[])
    } else {
        AgentAction::new(n_agents, &[], &[designated])
    }
}

pub fn defect_act(n_agents: usize) -> AgentAction {
    AgentAction::idle(n_agents)
}

/// Every non-self bit set with probability one half.
pub fn random_act<R: Rng + ?Sized>(n_agents: usize, agent: AgentId, rng: &mut R) -> AgentAction {
    let mut action = AgentAction::idle(n_agents);
    for j in (0..n_agents).filter(|&j| j != agent) {
        action.offers[j] = rng.gen_bool(0.5);
        action.demands[j] = rng.gen_bool(0.5);
    }
    action
}

/// Observation bits as learner input features.
pub fn features<F: Scalar>(obs: &Observation) -> Vec<F> {
    obs.to_flat()
        .into_iter()
        .map(|b| if b { F::one() } else { F::zero() })
        .collect()
}

#[inline]
fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Independent Bernoulli action bits whose logits are an affine function of
/// the observation features. Masked bits are never set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy<F> {
    obs_dim: usize,
    act_dim: usize,
    /// Row-major `act_dim x obs_dim`.
    weights: Vec<F>,
    bias: Vec<F>,
    allowed: Vec<bool>,
}

impl<F: Scalar> LinearPolicy<F> {
    pub fn new(obs_dim: usize, act_dim: usize, allowed: Vec<bool>) -> Self {
        assert_eq!(
            allowed.len(),
            act_dim,
            "mask length must equal action dimension"
        );
        LinearPolicy {
            obs_dim,
            act_dim,
            weights: vec![F::zero(); obs_dim * act_dim],
            bias: vec![F::zero(); act_dim],
            allowed,
        }
    }

    /// Zero-initialised policy for `agent` in an `n_agents` negotiation, with
    /// its own offer and demand bits masked.
    pub fn for_agent(n_agents: usize, agent: AgentId) -> Self {
        let act_dim = 2 * n_agents;
        let allowed = (0..act_dim).map(|k| k % n_agents != agent).collect();
        LinearPolicy::new(Observation::flat_len(n_agents), act_dim, allowed)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn bias(&self) -> &[F] {
        &self.bias
    }

    pub fn allowed(&self) -> &[bool] {
        &self.allowed
    }

    pub fn weight_mut(&mut self, bit: usize, feature: usize) -> &mut F {
        &mut self.weights[bit * self.obs_dim + feature]
    }

    pub fn bias_mut(&mut self, bit: usize) -> &mut F {
        &mut self.bias[bit]
    }

    pub fn set_parameters(&mut self, weights: Vec<F>, bias: Vec<F>) -> Result<(), PolicyError> {
        if weights.len() != self.weights.len() || bias.len() != self.bias.len() {
            return Err(PolicyError::Dimension(format!(
                "expected {} weights and {} biases, got {} and {}",
                self.weights.len(),
                self.bias.len(),
                weights.len(),
                bias.len()
            )));
        }
        self.weights = weights;
        self.bias = bias;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn logits(&self, x: &[F]) -> Vec<F> {
        debug_assert_eq!(x.len(), self.obs_dim);
        (0..self.act_dim)
            .map(|k| {
                let row = &self.weights[k * self.obs_dim..(k + 1) * self.obs_dim];
                row.iter()
                    .zip(x)
                    .fold(self.bias[k], |acc, (&w, &xi)| acc + w * xi)
            })
            .collect()
    }

    /// Probability of each bit being set; masked bits are 0.
    pub fn probabilities(&self, x: &[F]) -> Vec<F> {
        self.logits(x)
            .into_iter()
            .zip(&self.allowed)
            .map(|(z, &ok)| if ok { sigmoid(z) } else { F::zero() })
            .collect()
    }

    /// Samples an action, or picks the most likely one when `greedy`.
    pub fn act<R: Rng + ?Sized>(
        &self,
        x: &[F],
        rng: &mut R,
        greedy: bool,
    ) -> Result<Vec<bool>, PolicyError> {
        let logits = self.logits(x);
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(PolicyError::CheckpointCorrupt("non-finite logits".into()));
        }
        // One draw per bit regardless of the mask keeps the RNG stream aligned
        // with the action layout.
        let bits = logits
            .into_iter()
            .zip(&self.allowed)
            .map(|(z, &ok)| {
                let u: f64 = if greedy { 0.0 } else { rng.gen() };
                if !ok {
                    false
                } else if greedy {
                    z > F::zero()
                } else {
                    lit::<F>(u) < sigmoid(z)
                }
            })
            .collect();
        Ok(bits)
    }

    pub fn log_prob(&self, x: &[F], action: &[bool]) -> F {
        self.probabilities(x)
            .into_iter()
            .zip(action)
            .zip(&self.allowed)
            .filter(|(_, &ok)| ok)
            .map(|((p, &a), _)| if a { p.ln() } else { (F::one() - p).ln() })
            .sum()
    }

    /// Sum of the per-bit Bernoulli entropies.
    pub fn entropy(&self, x: &[F]) -> F {
        self.probabilities(x)
            .into_iter()
            .zip(&self.allowed)
            .filter(|(_, &ok)| ok)
            .map(|(p, _)| {
                let q = F::one() - p;
                let h = |v: F| {
                    if v > F::zero() {
                        -v * v.ln()
                    } else {
                        F::zero()
                    }
                };
                h(p) + h(q)
            })
            .sum()
    }

    fn apply(&mut self, grad: &Gradient<F>, scale: F) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w += scale * *g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b += scale * *g;
        }
    }
}

/// Gradient with the same layout as a [`LinearPolicy`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Gradient<F> {
    fn zeros_like(policy: &LinearPolicy<F>) -> Self {
        Gradient {
            weights: vec![F::zero(); policy.weights.len()],
            bias: vec![F::zero(); policy.bias.len()],
        }
    }

    pub fn norm(&self) -> F {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|&g| g * g)
            .sum::<F>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep<F> {
    pub features: Vec<F>,
    /// `None` for steps where the agent did not act (blacklisted); the
    /// reward still counts towards earlier returns.
    pub action: Option<Vec<bool>>,
    pub reward: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<F> {
    pub steps: Vec<TrajectoryStep<F>>,
    /// Relative weight in the batch average.
    pub weight: F,
}

impl<F: Scalar> Trajectory<F> {
    pub fn new() -> Self {
        Trajectory {
            steps: Vec::new(),
            weight: F::one(),
        }
    }

    pub fn undiscounted_return(&self) -> F {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// `G_t = r_t + gamma * G_{t+1}` for every step.
    pub fn returns_to_go(&self, gamma: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.steps.len()];
        let mut acc = F::zero();
        for (t, step) in self.steps.iter().enumerate().rev() {
            acc = step.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

impl<F: Scalar> Default for Trajectory<F> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerParams<F> {
    pub learning_rate: F,
    pub entropy_bonus: F,
    pub gamma: F,
    /// Trajectories collected per update.
    pub batch_episodes: usize,
    /// Consecutive negotiations making up one trajectory.
    pub rollout_negotiations: usize,
}

impl<F: Scalar> Default for LearnerParams<F> {
    fn default() -> Self {
        LearnerParams {
            learning_rate: lit(0.1),
            entropy_bonus: lit(0.03),
            gamma: lit(0.99),
            batch_episodes: 32,
            rollout_negotiations: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics<F> {
    /// Weighted mean undiscounted return of the batch.
    pub mean_return: F,
    pub grad_norm: F,
}

/// Gradient of the REINFORCE surrogate
/// `sum_t (G_t - b_t) log pi(a_t | s_t) + beta * H(pi(. | s_t))`, averaged over the
/// batch with trajectory weights. The baseline `b_t` is the weighted mean
/// return-to-go of all trajectories at step `t`.
pub fn policy_gradient<F: Scalar>(
    policy: &LinearPolicy<F>,
    batch: &[Trajectory<F>],
    gamma: F,
    entropy_bonus: F,
) -> Result<(Gradient<F>, UpdateDiagnostics<F>), PolicyError> {
    let total_weight: F = batch.iter().map(|t| t.weight).sum();
    if batch.is_empty() || total_weight <= F::zero() {
        return Err(PolicyError::EmptyBatch);
    }
    let returns: Vec<Vec<F>> = batch.iter().map(|t| t.returns_to_go(gamma)).collect();
    let horizon = batch.iter().map(|t| t.steps.len()).max().unwrap_or(0);
    let mut baseline = vec![F::zero(); horizon];
    let mut baseline_weight = vec![F::zero(); horizon];
    for (traj, g) in batch.iter().zip(&returns) {
        for (t, &gt) in g.iter().enumerate() {
            baseline[t] += traj.weight * gt;
            baseline_weight[t] += traj.weight;
        }
    }
    for (b, w) in baseline.iter_mut().zip(&baseline_weight) {
        *b /= *w;
    }

    let mut grad = Gradient::zeros_like(policy);
    let obs_dim = policy.obs_dim;
    for (traj, g) in batch.iter().zip(&returns) {
        let w = traj.weight / total_weight;
        for (t, step) in traj.steps.iter().enumerate() {
            let Some(action) = &step.action else { continue };
            let advantage = g[t] - baseline[t];
            let x = &step.features;
            for (k, z) in policy.logits(x).into_iter().enumerate() {
                if !policy.allowed[k] {
                    continue;
                }
                let p = sigmoid(z);
                let a = if action[k] { F::one() } else { F::zero() };
                // d log pi / dz = a - p ; dH / dz = -z p (1 - p)
                let dz = w * (advantage * (a - p) - entropy_bonus * z * p * (F::one() - p));
                if dz == F::zero() {
                    continue;
                }
                grad.bias[k] += dz;
                let row = &mut grad.weights[k * obs_dim..(k + 1) * obs_dim];
                for (gw, &xi) in row.iter_mut().zip(x) {
                    *gw += dz * xi;
                }
            }
        }
    }

    let mean_return = batch
        .iter()
        .map(|t| t.weight * t.undiscounted_return())
        .sum::<F>()
        / total_weight;
    let grad_norm = grad.norm();
    Ok((
        grad,
        UpdateDiagnostics {
            mean_return,
            grad_norm,
        },
    ))
}

/// One gradient-ascent step on the discounted-return objective.
pub fn learner_update<F: Scalar>(
    policy: &mut LinearPolicy<F>,
    batch: &[Trajectory<F>],
    params: &LearnerParams<F>,
) -> Result<UpdateDiagnostics<F>, PolicyError> {
    let (grad, diag) = policy_gradient(policy, batch, params.gamma, params.entropy_bonus)?;
    policy.apply(&grad, params.learning_rate);
    if !policy.is_finite() {
        return Err(PolicyError::NonFinite);
    }
    Ok(diag)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind<F> {
    Cooperate,
    Defect,
    Random,
    Learner(LinearPolicy<F>),
}

impl<F: Scalar> PolicyKind<F> {
    pub fn is_stochastic(&self, greedy: bool) -> bool {
        match self {
            PolicyKind::Random => true,
            PolicyKind::Learner(_) => !greedy,
            _ => false,
        }
    }

    pub fn tag(&self) -> PolicyTag {
        match self {
            PolicyKind::Cooperate => PolicyTag::Cooperate,
            PolicyKind::Defect => PolicyTag::Defect,
            PolicyKind::Random => PolicyTag::Random,
            PolicyKind::Learner(_) => PolicyTag::Learner,
        }
    }

    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        agent: AgentId,
        episode: u64,
        rng: &mut R,
        greedy: bool,
    ) -> Result<AgentAction, PolicyError> {
        let n = obs.offers_to_me.len();
        Ok(match self {
            PolicyKind::Cooperate => cooperate_act(n, agent, designation(obs, episode, n)),
            PolicyKind::Defect => defect_act(n),
            PolicyKind::Random => random_act(n, agent, rng),
            PolicyKind::Learner(p) => {
                let bits = p.act(&features(obs), rng, greedy)?;
                AgentAction::from_flat(&bits)
                    .ok_or_else(|| PolicyError::Dimension("odd action length".into()))?
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyTag {
    #[default]
    Learner,
    Cooperate,
    Defect,
    Random,
}

impl std::str::FromStr for PolicyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "learner" => Ok(PolicyTag::Learner),
            "cooperate" => Ok(PolicyTag::Cooperate),
            "defect" => Ok(PolicyTag::Defect),
            "random" => Ok(PolicyTag::Random),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

fn is_learner(tag: &PolicyTag) -> bool {
    *tag == PolicyTag::Learner
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint<F> {
    #[serde(default, skip_serializing_if = "is_learner")]
    pub kind: PolicyTag,
    #[serde(default = "Vec::new")]
    pub weights: Vec<Vec<F>>,
    #[serde(default = "Vec::new")]
    pub bias: Vec<F>,
}

/// Versioned JSON document holding one policy per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub version: u32,
    pub n_agents: usize,
    pub mode: Mode,
    pub per_agent: Vec<AgentCheckpoint<F>>,
}

impl<F: Scalar> Checkpoint<F> {
    pub fn from_policies(mode: Mode, policies: &[PolicyKind<F>]) -> Self {
        let per_agent = policies
            .iter()
            .map(|p| match p {
                PolicyKind::Learner(lp) => AgentCheckpoint {
                    kind: PolicyTag::Learner,
                    weights: lp.weights.chunks(lp.obs_dim).map(<[F]>::to_vec).collect(),
                    bias: lp.bias.clone(),
                },
                other => AgentCheckpoint {
                    kind: other.tag(),
                    weights: Vec::new(),
                    bias: Vec::new(),
                },
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            n_agents: policies.len(),
            mode,
            per_agent,
        }
    }

    /// Every agent runs the same scripted policy.
    pub fn scripted(n_agents: usize, mode: Mode, tag: PolicyTag) -> Self {
        let policy = match tag {
            PolicyTag::Cooperate => PolicyKind::Cooperate,
            PolicyTag::Defect => PolicyKind::Defect,
            PolicyTag::Random => PolicyKind::Random,
            PolicyTag::Learner => PolicyKind::Learner(LinearPolicy::for_agent(n_agents, 0)),
        };
        let policies: Vec<PolicyKind<F>> = (0..n_agents)
            .map(|i| match &policy {
                PolicyKind::Learner(_) => PolicyKind::Learner(LinearPolicy::for_agent(n_agents, i)),
                other => other.clone(),
            })
            .collect();
        Self::from_policies(mode, &policies)
    }

    pub fn to_policies(&self) -> Result<Vec<PolicyKind<F>>, PolicyError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(PolicyError::UnsupportedVersion {
                found: self.version,
            });
        }
        if self.per_agent.len() != self.n_agents {
            return Err(PolicyError::Dimension(format!(
                "n_agents is {} but {} agent entries are present",
                self.n_agents,
                self.per_agent.len()
            )));
        }
        let n = self.n_agents;
        self.per_agent
            .iter()
            .enumerate()
            .map(|(i, entry)| match entry.kind {
                PolicyTag::Cooperate => Ok(PolicyKind::Cooperate),
                PolicyTag::Defect => Ok(PolicyKind::Defect),
                PolicyTag::Random => Ok(PolicyKind::Random),
                PolicyTag::Learner => {
                    let mut policy = LinearPolicy::for_agent(n, i);
                    if entry.weights.len() != policy.act_dim
                        || entry.weights.iter().any(|row| row.len() != policy.obs_dim)
                    {
                        return Err(PolicyError::Dimension(format!(
                            "agent {i}: expected a {}x{} weight matrix",
                            policy.act_dim, policy.obs_dim
                        )));
                    }
                    policy.set_parameters(entry.weights.concat(), entry.bias.clone())?;
                    if !policy.is_finite() {
                        return Err(PolicyError::CheckpointCorrupt(format!(
                            "agent {i} has non-finite parameters"
                        )));
                    }
                    Ok(PolicyKind::Learner(policy))
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string_pretty(self)?;
        crate::harness::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = fs::read_to_string(path)?;
        // serde_json rejects NaN/inf literals, which surface here as corruption.
        serde_json::from_str(&text).map_err(|e| PolicyError::CheckpointCorrupt(e.to_string()))
    }
}
