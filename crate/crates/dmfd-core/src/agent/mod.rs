//! The demonstration-guided off-policy agent.
//!
//! The agent couples a squashed-Gaussian actor with twin critics and learns
//! from a replay buffer that is prepopulated with expert demonstrations.
//! Four features distinguish it from a plain actor-critic and can be toggled
//! independently for ablations:
//!
//! * **Expert replay** — demonstration transitions are loaded into the
//!   buffer before training ([`replay::ReplayBuffer::prepopulate`]).
//! * **Reference-state initialization** — with probability `p_eta` an
//!   episode starts from a random intermediate demonstration state
//!   ([`rsi::maybe_rsi_reset`]).
//! * **Random crops** — image observations are shift-augmented when sampled
//!   from the buffer ([`augment::random_crop`]).
//! * **Advantage-weighted actor with entropy regularization** — the actor
//!   maximizes log-likelihood of replayed actions weighted by their
//!   exponentiated advantage, plus an entropy bonus
//!   ([`update::actor_update`]).
//!
//! Everything is deterministic given a seed: updates, episode resets, and
//! evaluation all draw from explicit, separately-derived RNG streams.

pub mod augment;
pub mod checkpoint;
pub mod eval;
pub mod replay;
pub mod rsi;
pub mod train;
pub mod update;

pub use augment::{crop_at, crop_offsets, image_to_chw, random_crop};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use eval::{evaluate, evaluate_controller, head_row, PolicyController};
pub use replay::{ReplayBuffer, StoredObs, Transition};
pub use rsi::maybe_rsi_reset;
pub use train::{eval_seed, train, train_from, TrainConfig};
pub use update::{
    actor_update, advantage_with, compute_advantage, critic_update, prepare_batch,
    target_soft_update, ActorStats, CriticStats, PreparedBatch,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, Observation, IMAGE_SIDE};
use crate::nn::{
    init_conv_params, init_mlp_params, Activation, ConvEncoderSpec, MlpSpec, NnError, OutputHead,
    ParamSet,
};
use crate::rng::Rng;

/// Errors surfaced by the agent.
#[derive(Debug, Error)]
pub enum AgentError {
    #[error("agent config: {0}")]
    Config(String),
    #[error("replay capacity {capacity} cannot hold the {required} demonstration transitions")]
    CapacityTooSmall { capacity: usize, required: usize },
    #[error("replay buffer is empty; nothing to sample")]
    EmptyBuffer,
    #[error("dataset episode {episode} has no rendered images; call ensure_images first")]
    MissingImages { episode: usize },
    #[error("non-finite actor weight from advantage {advantage}")]
    NonFiniteWeight { advantage: f64 },
    #[error("non-finite {which} loss: {diagnostics}")]
    NonFiniteLoss {
        which: &'static str,
        diagnostics: String,
    },
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the actor observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// Reduced keypoint vector.
    State,
    /// 32x32 RGB image through the convolutional encoder.
    Image,
}

/// What the critics consume alongside the action.
///
/// Critics always read encoder features as fixed inputs (no gradient flows
/// from critic losses into the encoder; the encoder is trained by the actor
/// loss alone), so the asymmetric `State`/`StatePlusImage` settings give the
/// critics privileged low-dimensional state even when the actor sees pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticInput {
    State,
    Image,
    StatePlusImage,
}

/// Actor objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorObjective {
    /// Advantage-weighted log-likelihood of replayed actions plus an entropy
    /// bonus (the full method).
    AdvantageWeighted,
    /// Reparameterized soft actor-critic objective
    /// `mean(alpha * log pi(a~|s) - min Q(s, a~))`, used by the `sac`
    /// baselines.
    SacReparam,
}

/// Lower clamp on the advantage-over-temperature exponent. Keeps weights of
/// catastrophically bad actions at a small positive floor instead of exact
/// zero so batches can never produce an all-zero weight normalizer.
pub const AWR_CLAMP_MIN: f64 = -20.0;
/// Upper clamp on the advantage-over-temperature exponent, bounding how hard
/// a single lucky transition can dominate a batch.
pub const AWR_CLAMP_MAX: f64 = 5.0;

/// Hyperparameters of the agent. Construct via [`AgentConfig::for_mode`] and
/// override fields as needed; call [`AgentConfig::validate`] after editing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub obs_mode: ObsMode,
    pub critic_input: CriticInput,
    pub actor_objective: ActorObjective,
    /// Discount factor.
    pub gamma: f64,
    /// Weight of the entropy term in the actor loss.
    pub w_e: f64,
    /// Entropy scale: multiplies the actor entropy bonus and serves as the
    /// fixed temperature in critic targets (no automatic tuning).
    pub c_ent: f64,
    /// Probability that an episode starts from a demonstration state.
    pub p_eta: f64,
    /// Temperature of the exponentiated advantage weights.
    pub awr_temperature: f64,
    /// Monte-Carlo samples for the advantage baseline.
    pub advantage_samples: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Polyak rate for target critic tracking.
    pub target_tau: f64,
    /// Random-crop padding in pixels.
    pub crop_pad: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Width of both hidden layers in actor and critic MLPs.
    pub hidden_width: usize,
    /// Encoder feature length (image mode only).
    pub feature_len: usize,
    pub rsi_enabled: bool,
    pub entropy_reg_enabled: bool,
    pub crop_enabled: bool,
}

impl AgentConfig {
    /// Defaults for one observation mode. Image mode uses a smaller batch
    /// (the encoder dominates update cost), a higher reference-state reset
    /// probability, crops, and state-plus-image critics.
    pub fn for_mode(mode: ObsMode) -> AgentConfig {
        let image = mode == ObsMode::Image;
        AgentConfig {
            obs_mode: mode,
            critic_input: if image {
                CriticInput::StatePlusImage
            } else {
                CriticInput::State
            },
            actor_objective: ActorObjective::AdvantageWeighted,
            gamma: 0.9,
            w_e: 0.1,
            c_ent: 0.5,
            p_eta: if image { 0.3 } else { 0.2 },
            awr_temperature: 1.0,
            advantage_samples: 4,
            batch_size: if image { 64 } else { 128 },
            replay_capacity: 320_000,
            target_tau: 0.005,
            crop_pad: 4,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden_width: 64,
            feature_len: 128,
            rsi_enabled: true,
            entropy_reg_enabled: true,
            crop_enabled: image,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        if !(0.0..=1.0).contains(&self.p_eta) {
            return bad(format!("p_eta must lie in [0, 1], got {}", self.p_eta));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if !(self.awr_temperature > 0.0) {
            return bad(format!(
                "awr_temperature must be positive, got {}",
                self.awr_temperature
            ));
        }
        if !(0.0 < self.target_tau && self.target_tau <= 1.0) {
            return bad(format!(
                "target_tau must lie in (0, 1], got {}",
                self.target_tau
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".to_string());
        }
        if self.replay_capacity == 0 {
            return bad("replay_capacity must be positive".to_string());
        }
        if self.advantage_samples == 0 {
            return bad("advantage_samples must be positive".to_string());
        }
        if self.hidden_width == 0 || self.feature_len == 0 {
            return bad("network widths must be positive".to_string());
        }
        if self.w_e < 0.0 || self.c_ent < 0.0 {
            return bad("entropy coefficients must be non-negative".to_string());
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("learning rates must be positive".to_string());
        }
        if self.obs_mode == ObsMode::State && self.critic_input != CriticInput::State {
            return bad(
                "state observation mode requires critic_input = state (no encoder exists)"
                    .to_string(),
            );
        }
        Ok(())
    }

    /// Whether any consumer needs rendered images.
    pub fn needs_images(&self) -> bool {
        self.obs_mode == ObsMode::Image || self.critic_input != CriticInput::State
    }

    /// Fixed temperature of the soft critic target; zero when entropy
    /// regularization is disabled.
    pub fn alpha(&self) -> f64 {
        if self.entropy_reg_enabled {
            self.c_ent
        } else {
            0.0
        }
    }

    /// Width of the observation part of a critic input row.
    pub fn critic_obs_dim(&self, env: &EnvConfig) -> usize {
        match self.critic_input {
            CriticInput::State => env.reduced_state_dim(),
            CriticInput::Image => self.feature_len,
            CriticInput::StatePlusImage => env.reduced_state_dim() + self.feature_len,
        }
    }

    /// Width of the actor input (reduced state or encoder features).
    pub fn actor_input_dim(&self, env: &EnvConfig) -> usize {
        match self.obs_mode {
            ObsMode::State => env.reduced_state_dim(),
            ObsMode::Image => self.feature_len,
        }
    }
}

/// The convolutional encoder used in image mode: two strided square
/// convolutions into one dense feature layer. Tanh activations throughout so
/// every loss is smooth enough for tight finite-difference validation.
pub fn desk_encoder_spec(feature_len: usize) -> ConvEncoderSpec {
    ConvEncoderSpec {
        image_side: IMAGE_SIDE,
        in_channels: 3,
        n_conv_layers: 2,
        channels: 4,
        kernel: 3,
        stride: 2,
        dense_widths: vec![feature_len],
        activation: Activation::Tanh,
    }
}

/// All trainable parameters: actor (with optional image encoder), twin
/// critics, and their Polyak-averaged targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub encoder_spec: Option<ConvEncoderSpec>,
    pub actor: ParamSet,
    pub encoder: Option<ParamSet>,
    pub critic1: ParamSet,
    pub critic2: ParamSet,
    pub target1: ParamSet,
    pub target2: ParamSet,
}

impl AgentNets {
    /// Fresh networks for an environment/agent config pair. Targets start as
    /// exact copies of their critics. Initialization order is fixed (actor,
    /// encoder, critic1, critic2), so a given RNG state yields one result.
    pub fn init(env: &EnvConfig, agent: &AgentConfig, rng: &mut Rng) -> AgentNets {
        Self::init_for_dims(
            env.reduced_state_dim(),
            env.action_dim(),
            agent.critic_obs_dim(env),
            agent,
            rng,
        )
    }

    /// Dimension-explicit constructor used by tests that bypass the
    /// environment.
    pub fn init_for_dims(
        reduced_dim: usize,
        action_dim: usize,
        critic_obs_dim: usize,
        agent: &AgentConfig,
        rng: &mut Rng,
    ) -> AgentNets {
        let actor_in = match agent.obs_mode {
            ObsMode::State => reduced_dim,
            ObsMode::Image => agent.feature_len,
        };
        let h = agent.hidden_width;
        let actor_spec = MlpSpec::new(
            vec![actor_in, h, h, action_dim],
            Activation::Tanh,
            OutputHead::GaussianPolicy,
        );
        let critic_spec = MlpSpec::new(
            vec![critic_obs_dim + action_dim, h, h, 1],
            Activation::Tanh,
            OutputHead::Linear,
        );
        let actor = init_mlp_params(&actor_spec, rng);
        let (encoder_spec, encoder) = if agent.obs_mode == ObsMode::Image {
            let spec = desk_encoder_spec(agent.feature_len);
            let params = init_conv_params(&spec, rng);
            (Some(spec), Some(params))
        } else {
            (None, None)
        };
        let critic1 = init_mlp_params(&critic_spec, rng);
        let critic2 = init_mlp_params(&critic_spec, rng);
        let target1 = critic1.clone();
        let target2 = critic2.clone();
        AgentNets {
            actor_spec,
            critic_spec,
            encoder_spec,
            encoder,
            actor,
            critic1,
            critic2,
            target1,
            target2,
        }
    }

    /// Action dimension served by the actor head.
    pub fn action_dim(&self) -> usize {
        *self.actor_spec.layer_widths.last().unwrap()
    }
}

/// Raw actor input for one observation: the reduced state, or the image
/// scaled to `[0, 1]` in channel-major order. Never applies crops — only
/// replay sampling augments.
pub fn actor_input_from_obs(cfg: &AgentConfig, obs: &Observation) -> Vec<f64> {
    match cfg.obs_mode {
        ObsMode::State => obs.reduced_state.clone(),
        ObsMode::Image => image_to_chw(&obs.image, IMAGE_SIDE, 3),
    }
}
