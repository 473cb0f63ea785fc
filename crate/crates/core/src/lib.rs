//! Simulator of the on-guard negotiation between network operators that
//! share a low-activity period: one operator keeps its infrastructure on
//! while the others switch off and roam onto it.
//!
//! The crate is generic over the float type ([`Scalar`]); the aliases below
//! fix it to `f64`.

pub mod env;
pub mod harness;
pub mod ledger;
pub mod metrics;
pub mod policies;
pub mod regulator;
pub mod scalar;
pub mod wire;

pub use env::{
    check_agreement, AgentAction, AgentId, EnvError, JointAction, Mode, Observation, OutcomeKind,
    StepInfo,
};
pub use harness::{Cell, ExperimentPlan, HarnessError};
pub use ledger::RecommendationBasis;
pub use metrics::{payoff_matrix, JainIndex, MetricError};
pub use policies::{PolicyError, PolicyTag};
pub use regulator::BlacklistConfig;
pub use scalar::Scalar;

pub type Env = env::NegotiationEnv<f64>;
pub type Config = env::EnvConfig<f64>;
pub type Rewards = env::RewardSchedule<f64>;
pub type Outcome = env::EpisodeOutcome<f64>;
pub type Step = env::StepResult<f64>;
pub type Ledger = ledger::LedgerState<f64>;
pub type Energy = ledger::EnergyModel<f64>;
pub type Payoffs = metrics::PayoffMatrix<f64>;
pub type Policy = policies::PolicyKind<f64>;
pub type Linear = policies::LinearPolicy<f64>;
pub type Params = policies::LearnerParams<f64>;
pub type Checkpoint = policies::Checkpoint<f64>;
