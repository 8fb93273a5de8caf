//! Baselines as configuration projections of the full agent, plus a
//! behavior-cloning trainer.
//!
//! Every reinforcement-learning baseline is the same training loop with
//! features switched off or swapped: the soft actor objective instead of the
//! advantage-weighted one, no reference-state resets, no crops, with or
//! without a prepopulated buffer. Behavior cloning is a separate supervised
//! loop on the demonstration pairs.

use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::agent::update::{actor_forward, forward_rows};
use crate::agent::{ActorObjective, AgentConfig, AgentError, AgentNets, ObsMode};
use crate::env::{reduced_state_of, IMAGE_SIDE};
use crate::expert::DemoDataset;
use crate::nn::adam::{adam_step, AdamParams};
use crate::nn::conv::conv_backward;
use crate::nn::mlp::mlp_backward;
use crate::rng::child_rng;

/// The named baseline configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineName {
    /// Soft actor-critic from scratch: no demonstrations at all.
    Sac,
    /// Soft actor-critic with the replay buffer prepopulated from
    /// demonstrations.
    SacLfd,
    /// Advantage-weighted actor on a prepopulated buffer with an offline
    /// phase, no entropy term, no resets, no crops.
    AwacLike,
    /// Behavior cloning on reduced states.
    BcState,
    /// Behavior cloning on images.
    BcImage,
    /// Soft actor-critic whose actor starts from a behavior-cloning fit.
    SacBc,
}

impl BaselineName {
    pub const ALL: [BaselineName; 6] = [
        BaselineName::Sac,
        BaselineName::SacLfd,
        BaselineName::AwacLike,
        BaselineName::BcState,
        BaselineName::BcImage,
        BaselineName::SacBc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineName::Sac => "sac",
            BaselineName::SacLfd => "sac_lfd",
            BaselineName::AwacLike => "awac_like",
            BaselineName::BcState => "bc_state",
            BaselineName::BcImage => "bc_image",
            BaselineName::SacBc => "sac_bc",
        }
    }

    /// True for the purely supervised baselines.
    pub fn is_behavior_cloning(self) -> bool {
        matches!(self, BaselineName::BcState | BaselineName::BcImage)
    }
}

impl std::fmt::Display for BaselineName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineName {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BaselineName::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = BaselineName::ALL.iter().map(|b| b.as_str()).collect();
                AgentError::Config(format!(
                    "unknown baseline '{s}', valid names: {}",
                    valid.join(", ")
                ))
            })
    }
}

/// A baseline resolved into a concrete agent configuration plus the flags
/// the run harness needs: whether the replay buffer is prepopulated from the
/// dataset, how many offline updates precede interaction, and whether the
/// actor starts from a behavior-cloning fit.
#[derive(Debug, Clone)]
pub struct BaselineSpec {
    pub name: BaselineName,
    pub agent: AgentConfig,
    pub uses_dataset: bool,
    pub offline_steps: u64,
    pub init_actor_from_bc: bool,
}

/// Default offline updates for the offline-first baseline.
pub const AWAC_OFFLINE_STEPS: u64 = 5_000;

impl BaselineName {
    /// Observation mode a baseline forces, if any (behavior cloning names
    /// their mode; everything else follows the run's mode).
    pub fn forced_mode(self) -> Option<ObsMode> {
        match self {
            BaselineName::BcState => Some(ObsMode::State),
            BaselineName::BcImage => Some(ObsMode::Image),
            _ => None,
        }
    }
}

/// Projects a baseline onto an existing agent configuration: the fields the
/// baseline defines (objective, feature toggles, observation mode for the
/// cloning baselines) are forced, every other hyperparameter is kept.
pub fn project_onto(name: BaselineName, base: AgentConfig) -> BaselineSpec {
    let mut agent = base;
    agent.rsi_enabled = false;
    agent.crop_enabled = false;
    let (uses_dataset, offline_steps, init_actor_from_bc) = match name {
        BaselineName::Sac => {
            agent.actor_objective = ActorObjective::SacReparam;
            (false, 0, false)
        }
        BaselineName::SacLfd => {
            agent.actor_objective = ActorObjective::SacReparam;
            (true, 0, false)
        }
        BaselineName::AwacLike => {
            agent.actor_objective = ActorObjective::AdvantageWeighted;
            agent.entropy_reg_enabled = false;
            (true, AWAC_OFFLINE_STEPS, false)
        }
        BaselineName::BcState => {
            agent.obs_mode = ObsMode::State;
            agent.critic_input = crate::agent::CriticInput::State;
            (true, 0, false)
        }
        BaselineName::BcImage => {
            agent.obs_mode = ObsMode::Image;
            (true, 0, false)
        }
        BaselineName::SacBc => {
            agent.actor_objective = ActorObjective::SacReparam;
            (false, 0, true)
        }
    };
    BaselineSpec {
        name,
        agent,
        uses_dataset,
        offline_steps,
        init_actor_from_bc,
    }
}

/// Projects a baseline name onto the default agent configuration for the
/// given observation mode. Behavior-cloning baselines force their own mode.
pub fn project(name: BaselineName, obs_mode: ObsMode) -> BaselineSpec {
    let mode = name.forced_mode().unwrap_or(obs_mode);
    project_onto(name, AgentConfig::for_mode(mode))
}

/// Copies the actor (and encoder) values from a behavior-cloning fit into
/// `target`, resetting their optimizer moments.
pub fn transplant_actor(from: &AgentNets, target: &mut AgentNets) {
    let names: Vec<String> = from.actor.names().cloned().collect();
    for name in names {
        target.actor.insert(&name, from.actor.get(&name).clone());
    }
    if let (Some(src), Some(dst)) = (from.encoder.as_ref(), target.encoder.as_mut()) {
        let names: Vec<String> = src.names().cloned().collect();
        for name in names {
            dst.insert(&name, src.get(&name).clone());
        }
    }
}

/// Mean squared error of the squashed mean action against the targets, with
/// the head-row upstream gradient.
fn bc_loss_and_upstream(rows: &[f64], targets: &[f64], n: usize) -> (f64, Vec<f64>) {
    let act_dim = targets.len() / n;
    let denom = (n * act_dim) as f64;
    let mut loss = 0.0;
    let mut upstream = vec![0.0; rows.len()];
    for i in 0..n {
        for j in 0..act_dim {
            let mean = rows[i * 2 * act_dim + j];
            let t = mean.tanh();
            let d = t - targets[i * act_dim + j];
            loss += d * d / denom;
            upstream[i * 2 * act_dim + j] = 2.0 * d * (1.0 - t * t) / denom;
        }
    }
    (loss, upstream)
}

/// Pure value of the behavior-cloning loss (finite-difference reference).
pub fn bc_loss_value(
    nets: &AgentNets,
    cfg: &AgentConfig,
    raw_in: &[f64],
    targets: &[f64],
    n: usize,
) -> f64 {
    let rows = forward_rows(nets, cfg, raw_in, n);
    bc_loss_and_upstream(&rows, targets, n).0
}

fn bc_update(
    nets: &mut AgentNets,
    cfg: &AgentConfig,
    raw_in: &[f64],
    targets: &[f64],
    n: usize,
) -> Result<f64, AgentError> {
    let (rows, cache, enc) = actor_forward(
        nets,
        cfg,
        raw_in,
        (cfg.obs_mode == ObsMode::Image).then_some(raw_in),
        n,
    );
    let (loss, upstream) = bc_loss_and_upstream(&rows, targets, n);
    if !loss.is_finite() {
        return Err(AgentError::NonFiniteLoss {
            which: "behavior cloning",
            diagnostics: format!("loss {loss} over {n} pairs"),
        });
    }
    let (grads, d_input) = mlp_backward(&nets.actor, &nets.actor_spec, &cache, &upstream);
    let hp = AdamParams::with_lr(cfg.actor_lr);
    adam_step(&mut nets.actor, &grads, hp)?;
    if let Some((_, conv_cache)) = enc {
        let spec = nets.encoder_spec.as_ref().unwrap();
        let params = nets.encoder.as_mut().unwrap();
        let enc_grads = conv_backward(params, spec, &conv_cache, &d_input);
        adam_step(params, &enc_grads, hp)?;
    }
    Ok(loss)
}

fn bc_train_impl(
    mut nets: AgentNets,
    cfg: &AgentConfig,
    n_pairs: usize,
    fetch: impl Fn(usize) -> (Vec<f64>, Vec<f64>),
    epochs: usize,
    seed: u64,
) -> Result<(AgentNets, Vec<f64>), AgentError> {
    assert!(n_pairs > 0, "behavior cloning needs at least one pair");
    let mut order: Vec<usize> = (0..n_pairs).collect();
    let mut rng = child_rng(seed, 2);
    let mut curve = Vec::with_capacity(epochs);
    let batch = cfg.batch_size.min(n_pairs);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let mut raw_in = Vec::new();
            let mut targets = Vec::new();
            for &i in chunk {
                let (x, t) = fetch(i);
                raw_in.extend(x);
                targets.extend(t);
            }
            bc_update(&mut nets, cfg, &raw_in, &targets, chunk.len())?;
        }
        // Epoch-end loss over the full dataset, in fixed chunks so the
        // number doesn't depend on the shuffle.
        let mut total = 0.0;
        for chunk_start in (0..n_pairs).step_by(batch) {
            let end = (chunk_start + batch).min(n_pairs);
            let mut raw_in = Vec::new();
            let mut targets = Vec::new();
            for i in chunk_start..end {
                let (x, t) = fetch(i);
                raw_in.extend(x);
                targets.extend(t);
            }
            let m = end - chunk_start;
            total += bc_loss_value(&nets, cfg, &raw_in, &targets, m) * m as f64;
        }
        curve.push(total / n_pairs as f64);
    }
    Ok((nets, curve))
}

/// Behavior cloning on explicit `(input, target)` pairs. Inputs are raw
/// actor inputs for the configured mode; targets are actions. Runs
/// `epochs` shuffled-minibatch epochs and returns the networks with the
/// epoch-end full-dataset loss curve. Zero epochs returns the freshly
/// initialized networks and an empty curve.
pub fn bc_train_pairs(
    nets: AgentNets,
    cfg: &AgentConfig,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    epochs: usize,
    seed: u64,
) -> Result<(AgentNets, Vec<f64>), AgentError> {
    cfg.validate()?;
    assert_eq!(inputs.len(), targets.len(), "inputs and targets must pair up");
    bc_train_impl(
        nets,
        cfg,
        inputs.len(),
        |i| (inputs[i].clone(), targets[i].clone()),
        epochs,
        seed,
    )
}

/// Behavior cloning on a demonstration dataset. The networks are
/// initialized from the stream `(seed, 1)`; pairs are `(observation at t,
/// action at t)` across all episodes, with image observations converted
/// lazily per minibatch (the dataset must carry images in image mode).
pub fn bc_train(
    dataset: &DemoDataset,
    cfg: &AgentConfig,
    epochs: usize,
    seed: u64,
) -> Result<(AgentNets, Vec<f64>), AgentError> {
    cfg.validate()?;
    let nets = AgentNets::init(&dataset.config, cfg, &mut child_rng(seed, 1));
    if dataset.episodes.is_empty() {
        return Err(AgentError::EmptyBuffer);
    }
    if cfg.obs_mode == ObsMode::Image {
        for (ep, demo) in dataset.episodes.iter().enumerate() {
            if demo.images.is_none() {
                return Err(AgentError::MissingImages { episode: ep });
            }
        }
    }
    let mut index = Vec::with_capacity(dataset.n_transitions());
    for (ep, demo) in dataset.episodes.iter().enumerate() {
        for t in 0..demo.n_steps() {
            index.push((ep, t));
        }
    }
    let fetch = |i: usize| {
        let (ep, t) = index[i];
        let demo = &dataset.episodes[ep];
        let input = match cfg.obs_mode {
            ObsMode::State => reduced_state_of(&dataset.config, &demo.states[t]),
            ObsMode::Image => {
                let images = demo.images.as_ref().expect("checked above");
                crate::agent::image_to_chw(&images[t], IMAGE_SIDE, 3)
            }
        };
        (input, demo.actions[t].clone())
    };
    bc_train_impl(nets, cfg, index.len(), fetch, epochs, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, Task};
    use crate::expert::ScriptedExpert;
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn names_round_trip_and_unknown_names_list_the_valid_set() {
        for name in BaselineName::ALL {
            assert_eq!(name.as_str().parse::<BaselineName>().unwrap(), name);
        }
        let err = "sacc".parse::<BaselineName>().unwrap_err();
        let msg = err.to_string();
        for name in BaselineName::ALL {
            assert!(msg.contains(name.as_str()), "{msg}");
        }
    }

    #[test]
    fn projections_set_the_documented_flags() {
        let sac = project(BaselineName::Sac, ObsMode::State);
        assert_eq!(sac.agent.actor_objective, ActorObjective::SacReparam);
        assert!(!sac.agent.rsi_enabled);
        assert!(!sac.agent.crop_enabled);
        assert!(sac.agent.entropy_reg_enabled);
        assert!(!sac.uses_dataset);
        assert_eq!(sac.offline_steps, 0);

        let lfd = project(BaselineName::SacLfd, ObsMode::State);
        assert!(lfd.uses_dataset);
        assert_eq!(lfd.agent.actor_objective, ActorObjective::SacReparam);

        let awac = project(BaselineName::AwacLike, ObsMode::State);
        assert_eq!(awac.agent.actor_objective, ActorObjective::AdvantageWeighted);
        assert!(!awac.agent.entropy_reg_enabled);
        assert!(!awac.agent.rsi_enabled);
        assert!(!awac.agent.crop_enabled);
        assert!(awac.uses_dataset);
        assert_eq!(awac.offline_steps, AWAC_OFFLINE_STEPS);

        let bcs = project(BaselineName::BcState, ObsMode::Image);
        assert_eq!(bcs.agent.obs_mode, ObsMode::State);
        assert!(bcs.name.is_behavior_cloning());
        let bci = project(BaselineName::BcImage, ObsMode::State);
        assert_eq!(bci.agent.obs_mode, ObsMode::Image);

        let sac_bc = project(BaselineName::SacBc, ObsMode::Image);
        assert!(sac_bc.init_actor_from_bc);
        assert_eq!(sac_bc.agent.actor_objective, ActorObjective::SacReparam);
    }

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            hidden_width: 8,
            batch_size: 4,
            actor_lr: 3e-3,
            ..AgentConfig::for_mode(ObsMode::State)
        }
    }

    #[test]
    fn overfits_a_single_repeated_pair() {
        let cfg = tiny_cfg();
        let nets = AgentNets::init_for_dims(3, 2, 3, &cfg, &mut rng_from_seed(1));
        let inputs = vec![vec![0.2, -0.4, 0.9]; 8];
        let targets = vec![vec![0.3, -0.6]; 8];
        let (_, curve) = bc_train_pairs(nets, &cfg, &inputs, &targets, 200, 2).unwrap();
        assert_eq!(curve.len(), 200);
        assert!(
            *curve.last().unwrap() < 1e-4,
            "final loss {}",
            curve.last().unwrap()
        );
    }

    #[test]
    fn zero_epochs_returns_initialized_nets_and_empty_curve() {
        let cfg = tiny_cfg();
        let nets = AgentNets::init_for_dims(3, 2, 3, &cfg, &mut rng_from_seed(1));
        let reference = nets.clone();
        let (out, curve) =
            bc_train_pairs(nets, &cfg, &[vec![0.0; 3]], &[vec![0.0; 2]], 0, 2).unwrap();
        assert!(curve.is_empty());
        assert_eq!(out.actor.entries(), reference.actor.entries());
    }

    #[test]
    fn bc_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let mut nets = AgentNets::init_for_dims(3, 2, 3, &cfg, &mut rng_from_seed(3));
        let mut rng = rng_from_seed(4);
        let n = 4;
        let raw_in: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let (rows, cache, _) = actor_forward(&nets, &cfg, &raw_in, None, n);
        let (_, upstream) = bc_loss_and_upstream(&rows, &targets, n);
        let (grads, _) = mlp_backward(&nets.actor, &nets.actor_spec, &cache, &upstream);
        let names: Vec<String> = nets.actor.names().cloned().collect();
        for name in names {
            let len = nets.actor.get(&name).numel();
            for idx in (0..len).step_by(3) {
                let h = 1e-5;
                let orig = nets.actor.get(&name).data()[idx];
                nets.actor.get_mut(&name).data_mut()[idx] = orig + h;
                let lp = bc_loss_value(&nets, &cfg, &raw_in, &targets, n);
                nets.actor.get_mut(&name).data_mut()[idx] = orig - h;
                let lm = bc_loss_value(&nets, &cfg, &raw_in, &targets, n);
                nets.actor.get_mut(&name).data_mut()[idx] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = grads[&name].data()[idx];
                assert!(
                    (analytic - numeric).abs() <= 1e-7 + 1e-5 * numeric.abs().max(1.0),
                    "{name}[{idx}]: analytic {analytic} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn dataset_training_is_deterministic_and_mostly_monotone() {
        let mut env_cfg = EnvConfig::for_task(Task::StraightenRope);
        env_cfg.horizon = 6;
        let ds = DemoDataset::generate(&env_cfg, &ScriptedExpert::default(), 4, 11, -10.0).unwrap();
        let cfg = AgentConfig {
            hidden_width: 16,
            batch_size: 8,
            actor_lr: 1e-4,
            ..AgentConfig::for_mode(ObsMode::State)
        };
        let (nets_a, curve_a) = bc_train(&ds, &cfg, 40, 5).unwrap();
        let (nets_b, curve_b) = bc_train(&ds, &cfg, 40, 5).unwrap();
        assert_eq!(curve_a, curve_b);
        assert_eq!(nets_a.actor.entries(), nets_b.actor.entries());

        let non_increasing = curve_a
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            non_increasing as f64 >= 0.95 * (curve_a.len() - 1) as f64,
            "only {non_increasing}/{} epoch transitions non-increasing",
            curve_a.len() - 1
        );
        assert!(curve_a.last().unwrap() < curve_a.first().unwrap());
    }

    #[test]
    fn image_mode_requires_images() {
        let mut env_cfg = EnvConfig::for_task(Task::ClothFoldDiagUnpinned);
        env_cfg.horizon = 4;
        let ds = DemoDataset::generate(&env_cfg, &ScriptedExpert::default(), 1, 13, -10.0).unwrap();
        let cfg = AgentConfig {
            hidden_width: 8,
            feature_len: 6,
            batch_size: 4,
            ..AgentConfig::for_mode(ObsMode::Image)
        };
        match bc_train(&ds, &cfg, 1, 7) {
            Err(AgentError::MissingImages { episode: 0 }) => {}
            other => panic!("expected MissingImages, got {other:?}"),
        }
        let mut with_images = ds;
        with_images.ensure_images().unwrap();
        let (_, curve) = bc_train(&with_images, &cfg, 1, 7).unwrap();
        assert_eq!(curve.len(), 1);
        assert!(curve[0].is_finite());
    }

    #[test]
    fn transplant_copies_values_and_resets_moments() {
        let cfg = tiny_cfg();
        let nets = AgentNets::init_for_dims(3, 2, 3, &cfg, &mut rng_from_seed(20));
        let inputs = vec![vec![0.1, 0.2, 0.3]; 4];
        let targets = vec![vec![0.5, -0.5]; 4];
        let (bc, _) = bc_train_pairs(nets, &cfg, &inputs, &targets, 5, 21).unwrap();
        assert!(bc.actor.step_count() > 0);
        let mut fresh = AgentNets::init_for_dims(3, 2, 3, &cfg, &mut rng_from_seed(22));
        transplant_actor(&bc, &mut fresh);
        assert_eq!(fresh.actor.entries(), bc.actor.entries());
        assert_eq!(fresh.actor.step_count(), 0);
        let (m, v) = fresh.actor.moments();
        assert!(m.values().all(|t| t.data().iter().all(|&x| x == 0.0)));
        assert!(v.values().all(|t| t.data().iter().all(|&x| x == 0.0)));
    }
}
