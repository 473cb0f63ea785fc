//! Simulated distributed-ledger reporting of on-guard energy, and the
//! per-agent energy totals derived from it.

use std::io;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{AgentId, EpisodeOutcome};
use crate::scalar::{count, lit, Scalar};

/// Nominal kWh per low-activity period for each infrastructure state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel<F> {
    pub base_on_guard_kwh: F,
    pub active_alone_kwh: F,
    pub off_kwh: F,
    /// Half-width of the uniform relative noise on ledger reports.
    pub noise_fraction: F,
}

impl<F: Scalar> Default for EnergyModel<F> {
    fn default() -> Self {
        EnergyModel {
            base_on_guard_kwh: lit(1.00),
            active_alone_kwh: lit(0.90),
            off_kwh: lit(0.01),
            noise_fraction: lit(0.10),
        }
    }
}

impl<F: Scalar> EnergyModel<F> {
    pub fn validate(&self) -> Result<(), String> {
        let ordered = self.base_on_guard_kwh >= self.active_alone_kwh
            && self.active_alone_kwh >= self.off_kwh
            && self.off_kwh >= F::zero();
        if !ordered {
            return Err(format!(
                "energy model must satisfy on_guard >= active_alone >= off >= 0, got {self:?}"
            ));
        }
        if !(self.noise_fraction >= F::zero() && self.noise_fraction < F::one()) {
            return Err(format!(
                "noise fraction must lie in [0, 1), got {}",
                self.noise_fraction
            ));
        }
        Ok(())
    }

    /// Energy a served agent saves by switching off for one period.
    pub fn saving_per_period(&self) -> F {
        self.active_alone_kwh - self.off_kwh
    }

    /// Reported consumption for a relative deviation `u`.
    pub fn reported_kwh(&self, u: F) -> F {
        self.base_on_guard_kwh * (F::one() + u)
    }
}

/// Which ledger totals the regulator ranks agents by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommendationBasis {
    /// Noisy kWh reported while on-guard.
    #[default]
    ConsumedOnGuard,
    /// Nominal kWh saved for others while on-guard.
    ProvidedSavings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry<F> {
    pub episode: u64,
    pub on_guard: AgentId,
    pub reported_kwh: F,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerState<F> {
    pub consumed_on_guard: Vec<F>,
    /// Per-agent kWh saved by being served; the fairness input.
    pub saved: Vec<F>,
    /// Per-agent nominal kWh saved for others while on-guard.
    pub provided: Vec<F>,
    entries: Vec<LedgerEntry<F>>,
}

impl<F: Scalar> LedgerState<F> {
    pub fn new(n_agents: usize) -> Self {
        LedgerState {
            consumed_on_guard: vec![F::zero(); n_agents],
            saved: vec![F::zero(); n_agents],
            provided: vec![F::zero(); n_agents],
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[LedgerEntry<F>] {
        &self.entries
    }

    pub fn recommendation_totals(&self, basis: RecommendationBasis) -> &[F] {
        match basis {
            RecommendationBasis::ConsumedOnGuard => &self.consumed_on_guard,
            RecommendationBasis::ProvidedSavings => &self.provided,
        }
    }

    /// Appends the ledger report of a successful episode. Failed episodes had
    /// no on-guard period and leave the ledger unchanged.
    pub fn report_consumption<R: Rng + ?Sized>(
        &mut self,
        outcome: &EpisodeOutcome<F>,
        model: &EnergyModel<F>,
        rng: &mut R,
    ) -> Option<&LedgerEntry<F>> {
        let on_guard = outcome.on_guard.filter(|_| outcome.is_success())?;
        let u01: f64 = rng.gen();
        let u = model.noise_fraction * (lit::<F>(2.0) * lit::<F>(u01) - F::one());
        let reported = model.reported_kwh(u);
        self.consumed_on_guard[on_guard] += reported;
        self.entries.push(LedgerEntry {
            episode: outcome.episode,
            on_guard,
            reported_kwh: reported,
        });
        self.entries.last()
    }

    pub fn accrue_savings(&mut self, outcome: &EpisodeOutcome<F>, model: &EnergyModel<F>) {
        if !outcome.is_success() {
            return;
        }
        let saving = model.saving_per_period();
        for &j in &outcome.served {
            self.saved[j] += saving;
        }
        if let Some(g) = outcome.on_guard {
            self.provided[g] += saving * count::<F>(outcome.served.len());
        }
    }

    /// Consumed totals recomputed from the entry log.
    pub fn consumed_from_entries(&self) -> Vec<F> {
        let mut totals = vec![F::zero(); self.consumed_on_guard.len()];
        for e in &self.entries {
            totals[e.on_guard] += e.reported_kwh;
        }
        totals
    }

    /// `episode,on_guard,reported_kwh`
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["episode", "on_guard", "reported_kwh"])?;
        for e in &self.entries {
            w.write_record([
                e.episode.to_string(),
                e.on_guard.to_string(),
                e.reported_kwh.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
