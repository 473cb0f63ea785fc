//! Social-dilemma payoffs and the four cooperation properties: efficiency,
//! safety, incentive-compatibility and Jain fairness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Mode, RewardSchedule};
use crate::scalar::{count, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("cooperative and defecting baselines coincide; efficiency is undefined")]
    DegenerateBaselines,
    #[error("the payoff normalisation amplitude is zero")]
    ZeroAmplitude,
}

/// Two-negotiation payoffs of the two-player dilemma built from the costs of
/// the off (`o`), active-alone (`a`) and on-guard (`g`) states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix<F> {
    pub o: F,
    pub a: F,
    pub g: F,
    /// Temptation: served twice.
    pub t: F,
    /// Reward: on-guard once, served once.
    pub r: F,
    /// Punishment: active alone twice.
    pub p: F,
    /// Sucker: on-guard twice.
    pub s: F,
}

pub fn payoff_matrix<F: Scalar>(o: F, a: F, g: F) -> PayoffMatrix<F> {
    PayoffMatrix {
        o,
        a,
        g,
        t: o + o,
        r: g + o,
        p: a + a,
        s: g + g,
    }
}

impl<F: Scalar> PayoffMatrix<F> {
    pub fn from_rewards(rewards: &RewardSchedule<F>) -> Self {
        payoff_matrix(rewards.found, rewards.fail, rewards.on_guard)
    }

    pub fn is_prisoners_dilemma(&self) -> bool {
        self.t > self.r && self.r > self.p && self.p > self.s
    }

    /// Range used to normalise safety and incentive-compatibility: `T - P`,
    /// what being served for both periods is worth over running alone for
    /// both (1.78 with the default costs).
    pub fn amplitude(&self) -> F {
        self.t - self.p
    }
}

/// `sum_t gamma^t r_t`.
pub fn episode_return<F: Scalar>(rewards: &[F], gamma: F) -> F {
    let mut discount = F::one();
    let mut total = F::zero();
    for &r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Undiscounted per-agent returns of the fully cooperative one-step episode
/// and of the all-defect episode, with their social welfare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baselines<F> {
    pub n_active: usize,
    pub g_c_on_guard: F,
    pub g_c_served: F,
    pub g_d: F,
    pub sw_c: F,
    pub sw_d: F,
}

pub fn baselines<F: Scalar>(
    n_active: usize,
    rewards: &RewardSchedule<F>,
    max_steps: usize,
) -> Baselines<F> {
    let g_d = rewards.step * count(max_steps.saturating_sub(1)) + rewards.fail;
    Baselines {
        n_active,
        g_c_on_guard: rewards.on_guard,
        g_c_served: rewards.found,
        g_d,
        sw_c: rewards.on_guard + count::<F>(n_active.saturating_sub(1)) * rewards.found,
        sw_d: count::<F>(n_active) * g_d,
    }
}

/// Realised social welfare placed between the all-defect (0) and the
/// all-cooperate (1) welfare. `returns` are the participating agents' returns.
pub fn efficiency<F: Scalar>(returns: &[F], baselines: &Baselines<F>) -> Result<F, MetricError> {
    let span = baselines.sw_c - baselines.sw_d;
    if span == F::zero() {
        return Err(MetricError::DegenerateBaselines);
    }
    let welfare: F = returns.iter().copied().sum();
    Ok((welfare - baselines.sw_d) / span)
}

/// Gain of the evaluated policy over defecting, both against all-defect
/// opponents, normalised and shifted so that "no risk" reads 1.
pub fn safety<F: Scalar>(
    g_hat_vs_defect: F,
    g_defect_vs_defect: F,
    pm: &PayoffMatrix<F>,
) -> Result<F, MetricError> {
    let amplitude = pm.amplitude();
    if amplitude == F::zero() {
        return Err(MetricError::ZeroAmplitude);
    }
    Ok((g_hat_vs_defect - g_defect_vs_defect) / amplitude + F::one())
}

/// Gain of the evaluated policy over defecting when the others run their
/// evaluated policies.
pub fn incentive_compatibility<F: Scalar>(
    g_hat_vs_hat: F,
    g_defect_vs_hat: F,
    pm: &PayoffMatrix<F>,
) -> Result<F, MetricError> {
    let amplitude = pm.amplitude();
    if amplitude == F::zero() {
        return Err(MetricError::ZeroAmplitude);
    }
    Ok((g_hat_vs_hat - g_defect_vs_hat) / amplitude)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JainIndex<F> {
    pub value: F,
    /// Every active share was zero; `value` is then `1 / n_active`.
    pub all_zero: bool,
}

/// Jain fairness index over the agents flagged in `active`.
pub fn jain<F: Scalar>(shares: &[F], active: &[bool]) -> JainIndex<F> {
    let selected: Vec<F> = shares
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&e, _)| e)
        .collect();
    let n = count::<F>(selected.len().max(1));
    let sum: F = selected.iter().copied().sum();
    let sum_sq: F = selected.iter().map(|&e| e * e).sum();
    if sum_sq == F::zero() {
        return JainIndex {
            value: F::one() / n,
            all_zero: true,
        };
    }
    JainIndex {
        value: sum * sum / (n * sum_sq),
        all_zero: false,
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<F> {
    pub mean: F,
    pub std: F,
}

pub fn summarize<F: Scalar>(values: &[F]) -> Summary<F> {
    if values.is_empty() {
        return Summary {
            mean: F::nan(),
            std: F::nan(),
        };
    }
    let n = count::<F>(values.len());
    let mean = values.iter().copied().sum::<F>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    Summary {
        mean,
        std: var.sqrt(),
    }
}

/// Metric values of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics<F> {
    pub n_agents: usize,
    pub mode: Mode,
    pub run: usize,
    pub episode: usize,
    pub efficiency: F,
    pub safety_mean: F,
    pub ic_mean: F,
    pub jain: F,
    /// Per-agent values; `None` for agents sitting out the episode.
    pub safety: Vec<Option<F>>,
    pub ic: Vec<Option<F>>,
    pub jain_all_zero: bool,
    pub success: bool,
}

/// Aggregate of one (N, mode) cell over all runs and episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate<F> {
    pub n_agents: usize,
    pub mode: Mode,
    pub efficiency: Summary<F>,
    pub safety: Summary<F>,
    pub ic: Summary<F>,
    pub jain: Summary<F>,
    pub episodes: usize,
    pub partial: bool,
}

impl<F: Scalar> CellAggregate<F> {
    pub fn from_rows(
        n_agents: usize,
        mode: Mode,
        rows: &[EpisodeMetrics<F>],
        partial: bool,
    ) -> Self {
        let column =
            |f: fn(&EpisodeMetrics<F>) -> F| summarize(&rows.iter().map(f).collect::<Vec<_>>());
        CellAggregate {
            n_agents,
            mode,
            efficiency: column(|r| r.efficiency),
            safety: column(|r| r.safety_mean),
            ic: column(|r| r.ic_mean),
            jain: column(|r| r.jain),
            episodes: rows.len(),
            partial,
        }
    }

    /// `(name, summary)` in E, Sf, IC, J order.
    pub fn named(&self) -> [(&'static str, Summary<F>); 4] {
        [
            ("E", self.efficiency),
            ("Sf", self.safety),
            ("IC", self.ic),
            ("J", self.jain),
        ]
    }
}
