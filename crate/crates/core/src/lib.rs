//! UAV-assisted semantic data collection with NOMA uplinks, learned by
//! hybrid-action PPO.
//!
//! The crate is layered bottom-up: [`channel`] and [`semantic`] are pure
//! models, [`env`] composes them into an episodic mission, [`nn`] and
//! [`agents`] provide the learners, and [`harness`] runs experiments.

pub mod agents;
pub mod channel;
pub mod env;
pub mod harness;
pub mod nn;
pub mod rollout;
pub mod semantic;

pub use agents::{AgentError, Algorithm, Controller, HybridPolicy, PpoConfig};
pub use channel::{ChannelAssignment, ChannelParams, ChannelRealization, Position3D};
pub use env::{EnvConfig, EnvError, HybridAction, MissionState, StepOutcome, UserPlacement};
pub use harness::{EvalSummary, HarnessError, RunConfig, SweepAxis};
pub use rollout::EpisodeRecord;
pub use semantic::{EnergyParams, QualityParams, UtilityWeights};
