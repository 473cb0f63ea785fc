//! Service modes: who gets recommended, which offers are relayed in imposed
//! mode, and blacklisting of agents that keep refusing to be on-guard.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{AgentId, EpisodeOutcome, JointAction, Mode};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlacklistConfig {
    /// Refusals after which an agent is excluded (`m`).
    pub refusal_threshold: u32,
    /// Number of episodes an excluded agent sits out.
    pub duration: u32,
    pub enabled: bool,
}

impl Default for BlacklistConfig {
    fn default() -> Self {
        BlacklistConfig {
            refusal_threshold: 3,
            duration: 5,
            enabled: false,
        }
    }
}

impl BlacklistConfig {
    /// Defaults, enabled only for imposed mode.
    pub fn for_mode(mode: Mode) -> Self {
        BlacklistConfig {
            enabled: mode == Mode::Imposed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.refusal_threshold < 1 || self.duration < 1 {
            return Err(format!(
                "blacklist threshold and duration must be at least 1, got m={} B={}",
                self.refusal_threshold, self.duration
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegulatorError {
    #[error("no active agent to recommend")]
    EmptyActiveSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegulatorState {
    pub refusal_count: Vec<u32>,
    /// Episodes left before reintegration; 0 means active.
    pub blacklist_remaining: Vec<u32>,
    pub last_recommendation: Option<AgentId>,
}

impl RegulatorState {
    pub fn new(n_agents: usize) -> Self {
        RegulatorState {
            refusal_count: vec![0; n_agents],
            blacklist_remaining: vec![0; n_agents],
            last_recommendation: None,
        }
    }

    pub fn is_blacklisted(&self, agent: AgentId) -> bool {
        self.blacklist_remaining[agent] > 0
    }

    pub fn active_set(&self) -> Vec<AgentId> {
        (0..self.blacklist_remaining.len())
            .filter(|&i| !self.is_blacklisted(i))
            .collect()
    }

    /// Bookkeeping at the end of an episode.
    ///
    /// Running blacklist counters tick down first, so an agent excluded now
    /// sits out exactly `duration` subsequent episodes. Then the recommended
    /// agent is charged a refusal if the negotiation failed although someone
    /// demanded it, or forgiven if it succeeded.
    pub fn update_after_episode<F: Scalar>(
        &mut self,
        config: &BlacklistConfig,
        mode: Mode,
        outcome: &EpisodeOutcome<F>,
        recommended: Option<AgentId>,
        recommended_was_demanded: bool,
    ) {
        for (remaining, refusals) in self
            .blacklist_remaining
            .iter_mut()
            .zip(&mut self.refusal_count)
        {
            if *remaining > 0 {
                *remaining -= 1;
                if *remaining == 0 {
                    *refusals = 0;
                }
            }
        }

        if !(config.enabled && mode == Mode::Imposed) {
            return;
        }
        let Some(r) = recommended else { return };
        if outcome.is_success() {
            self.refusal_count[r] = 0;
        } else if recommended_was_demanded {
            self.refusal_count[r] += 1;
            if self.refusal_count[r] >= config.refusal_threshold {
                self.refusal_count[r] = 0;
                self.blacklist_remaining[r] = config.duration;
            }
        }
    }
}

/// Active agent with the lowest total, ties to the lowest id.
pub fn recommend<F: Scalar>(totals: &[F], active: &[AgentId]) -> Result<AgentId, RegulatorError> {
    let mut best: Option<AgentId> = None;
    for &i in active {
        match best {
            Some(b) if totals[i] >= totals[b] => {}
            _ => best = Some(i),
        }
    }
    best.ok_or(RegulatorError::EmptyActiveSet)
}

/// Applies the mode's relay rule. Imposed mode clears the offers of every
/// agent but the recommended one; demands, and the recommended agent's own
/// action, pass through untouched. Also returns which agents were modified.
pub fn filter_actions(
    mode: Mode,
    joint: &JointAction,
    recommended: Option<AgentId>,
) -> (JointAction, Vec<bool>) {
    let mut filtered = vec![false; joint.len()];
    if mode != Mode::Imposed {
        return (joint.clone(), filtered);
    }
    let mut out = joint.clone();
    for (agent, action) in out.0.iter_mut().enumerate() {
        let Some(action) = action else { continue };
        if Some(agent) == recommended {
            continue;
        }
        if action.offers.iter().any(|&b| b) {
            action.offers.iter_mut().for_each(|b| *b = false);
            filtered[agent] = true;
        }
    }
    (out, filtered)
}
