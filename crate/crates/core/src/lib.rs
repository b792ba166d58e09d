//! colab-forge: a desk-scale harness for a dynamic collaboration policy
//! between a small local model and a large cloud model.
//!
//! The local model answers questions, deciding turn by turn whether to solve
//! locally or to send a targeted request to the cloud model, which replies
//! with information or asks for more context. Episodes are scored on answer
//! quality, interaction efficiency, privacy, feedback, and format, and a
//! clipped policy-gradient trainer with observation-token masking learns the
//! collaboration policy on a synthetic fact environment.
//!
//! Module map:
//! * [`trajectory`]: tagged trajectory grammar, parser, tokenizer, masks
//! * [`agents`]: agent trait, prompt templates, mocks, HTTP client
//! * [`orchestrator`]: episode and batch drivers
//! * [`rewards`]: the five reward components and token placement
//! * [`difficulty`]: easy/hard profiling of queries against an agent
//! * [`rl`]: policies, value model, advantage estimation, trainer, FactWorld
//! * [`privsynth`]: privacy-injection data pipeline
//! * [`metrics`]: evaluation metrics and the privacy judge
//! * [`config`]/[`cli`]: run configuration and the command-line interface

pub mod agents;
pub mod cli;
pub mod config;
pub mod data;
pub mod difficulty;
pub mod jsonx;
pub mod metrics;
pub mod num;
pub mod orchestrator;
pub mod privsynth;
pub mod rewards;
pub mod rl;
pub mod textnorm;
pub mod trajectory;

/// Scalar type used by the CLI and the serialized interfaces. The numeric
/// kernel itself is generic over [`num::Scalar`].
pub type Real = f64;

/// Concrete aliases for the kernel types at the default scalar width.
pub type RewardWeights = rewards::RewardWeights<Real>;
pub type RewardBreakdown = rewards::RewardBreakdown<Real>;
pub type EvalReport = metrics::EvalReport<Real>;
