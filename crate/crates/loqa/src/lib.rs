//! Opponent shaping through opponent Q-learning awareness.
//!
//! A self-contained laboratory for training reciprocity-based cooperative
//! agents in the Iterated Prisoner's Dilemma and the Coin Game, with the
//! evaluation harness (leagues, normalized-return thresholds,
//! time-to-threshold benchmarks) to go with it.
//!
//! Layout:
//! - [`graphdiff`]: reverse-mode autodiff tape (64-bit, scalar/vector/matrix).
//! - [`envs`]: the two benchmark environments behind one batched interface.
//! - [`agents`]: logit and GRU actors/critics, sampling, TD-0 machinery.
//! - [`shaping`]: differentiable opponent returns (DiCE / loaded-DiCE),
//!   the opponent-policy model, actor losses, and enumeration oracles.
//! - [`trainer`]: the training loop, Adam, the agent replay buffer.
//! - [`league`]: fixed reference opponents, league runs, threshold verdicts.
//! - [`config`]: run configuration, presets, key validation.

pub mod agents;
pub mod config;
pub mod envs;
pub mod graphdiff;
pub mod league;
pub mod rng;
pub mod run;
pub mod shaping;
pub mod trainer;
