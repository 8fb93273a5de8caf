//! Core library for `dmfd`: a self-contained stack for learning deformable
//! object manipulation from scripted demonstrations at desk scale.
//!
//! The crate is organised in five layers, each usable on its own:
//!
//! * [`nn`] — a small feed-forward network engine (dense + convolutional)
//!   with hand-written reverse-mode gradients, Adam, and a squashed-Gaussian
//!   policy head. Everything runs in `f64` for reproducibility.
//! * [`env`] — 2-D mass-spring manipulation tasks (rope straightening and
//!   three cloth folds) driven by point pickers, with bit-exact state
//!   save/restore and a fixed 32x32 RGB renderer.
//! * [`expert`] — scripted expert controllers for every task plus a binary
//!   demonstration dataset format with per-episode checksums.
//! * [`agent`] — the demonstration-guided off-policy agent: replay buffer
//!   prepopulation, probabilistic reference-state initialization, random
//!   crops, twin critics, and an advantage-weighted, entropy-regularized
//!   actor. Training is deterministic given a seed.
//! * [`baselines`] — named configuration projections of the agent plus a
//!   behavior-cloning trainer.
//!
//! Shared plumbing lives in [`tensor`], [`rng`], and [`metrics`].

pub mod agent;
pub mod baselines;
pub mod env;
pub mod expert;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use agent::{
    evaluate, train, ActorObjective, AgentConfig, AgentError, AgentNets, CriticInput, ObsMode,
    ReplayBuffer, TrainConfig, Transition,
};
pub use env::{Env, EnvConfig, EnvState, EvalRecord, Observation, Task};
pub use baselines::{bc_train, project, project_onto, transplant_actor, BaselineName, BaselineSpec};
pub use expert::{Controller, DemoDataset, Demonstration, ScriptedExpert};

pub use metrics::MetricsRow;
pub use nn::ParamSet;
