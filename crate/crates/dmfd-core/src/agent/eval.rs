//! Deterministic policy evaluation.
//!
//! Evaluation always plays the mean action of the squashed-Gaussian head —
//! no exploration noise, no reference-state resets, no crop augmentation —
//! so two evaluations with the same seed are bit-identical.

use crate::env::{normalized_performance, Env, EnvConfig, EvalRecord};
use crate::expert::Controller;
use crate::metrics::{summarize, Summary};
use crate::nn::conv::conv_forward;
use crate::nn::mlp::mlp_forward;
use crate::nn::policy;
use crate::rng::{child_rng, Rng};

use super::augment::image_to_chw;
use super::{AgentConfig, AgentError, AgentNets, ObsMode};

/// Actor head row for one raw input (reduced state, or a CHW image that is
/// first passed through the encoder).
pub fn head_row(nets: &AgentNets, cfg: &AgentConfig, raw_in: &[f64]) -> Vec<f64> {
    let features;
    let input = match cfg.obs_mode {
        ObsMode::State => raw_in,
        ObsMode::Image => {
            let spec = nets.encoder_spec.as_ref().expect("image mode has encoder");
            features = conv_forward(nets.encoder.as_ref().unwrap(), spec, raw_in, 1).0;
            &features
        }
    };
    mlp_forward(&nets.actor, &nets.actor_spec, input, 1).0
}

/// Greedy policy wrapper: acts with the deterministic mean action.
pub struct PolicyController<'a> {
    nets: &'a AgentNets,
    cfg: &'a AgentConfig,
}

impl<'a> PolicyController<'a> {
    pub fn new(nets: &'a AgentNets, cfg: &'a AgentConfig) -> Self {
        PolicyController { nets, cfg }
    }
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, env: &Env, _rng: &mut Rng) -> Vec<f64> {
        let raw = match self.cfg.obs_mode {
            ObsMode::State => env.reduced_state(),
            ObsMode::Image => image_to_chw(&env.render(), crate::env::IMAGE_SIDE, 3),
        };
        policy::mean_action(&head_row(self.nets, self.cfg, &raw))
    }
}

/// Rolls the controller through `n_episodes` fresh episodes and reports the
/// normalized performance of each, with a summary over the batch. Episode
/// `i` draws all of its randomness from the child stream `(seed, i)`, so a
/// record is reproducible in isolation.
pub fn evaluate_controller<C: Controller>(
    controller: &mut C,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<(Vec<EvalRecord>, Summary), AgentError> {
    assert!(n_episodes > 0, "evaluation needs at least one episode");
    let mut env = Env::new(env_cfg.clone())?;
    let mut records = Vec::with_capacity(n_episodes);
    for ep in 0..n_episodes {
        let mut rng = child_rng(seed, ep as u64);
        env.reset(&mut rng)?;
        controller.begin_episode();
        let p_start = env.performance();
        while !env.done() {
            let action = controller.act(&env, &mut rng);
            env.step(&action)?;
        }
        let p_end = env.performance();
        let p_hat = normalized_performance(p_end, p_start, env_cfg.p_opt)?;
        records.push(EvalRecord {
            p_start,
            p_end,
            p_hat,
        });
    }
    let values: Vec<f64> = records.iter().map(|r| r.p_hat).collect();
    Ok((records, summarize(&values)))
}

/// Evaluates the trained policy (mean actions) on fresh episodes.
pub fn evaluate(
    nets: &AgentNets,
    cfg: &AgentConfig,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<(Vec<EvalRecord>, Summary), AgentError> {
    let mut controller = PolicyController::new(nets, cfg);
    evaluate_controller(&mut controller, env_cfg, n_episodes, seed)
}
