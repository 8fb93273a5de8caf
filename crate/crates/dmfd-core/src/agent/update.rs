//! Gradient updates: twin-critic TD learning, Monte-Carlo advantage
//! estimation, and the advantage-weighted, entropy-regularized actor step.
//!
//! Every update is a deterministic function of `(nets, batch, rng state)`.
//! The stochastic pieces — next-action sampling, advantage baselines,
//! entropy resampling — draw from the caller's RNG in a fixed order. For
//! each loss there is a pure value-only evaluator (`*_loss_value`) over the
//! same fixed randomness, which is what finite-difference gradient
//! validation perturbs.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::env::IMAGE_SIDE;
use crate::nn::adam::{adam_step, AdamParams};
use crate::nn::conv::{conv_backward, conv_forward, ConvCache};
use crate::nn::mlp::{mlp_backward, mlp_forward, MlpCache};
use crate::nn::policy;
use crate::nn::{GradMap, MlpSpec, ParamSet};
use crate::rng::Rng;

use super::augment::{image_to_chw, random_crop};
use super::replay::ReplayBuffer;
use super::{
    ActorObjective, AgentConfig, AgentError, AgentNets, CriticInput, ObsMode, AWR_CLAMP_MAX,
    AWR_CLAMP_MIN,
};

/// A sampled minibatch unpacked into dense batch-major rows. Images (when
/// consumed) are already crop-augmented and scaled to `[0, 1]` CHW floats.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub n: usize,
    pub reduced_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub next_states: Vec<f64>,
    pub images: Option<Vec<f64>>,
    pub next_images: Option<Vec<f64>>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<f64>,
}

/// Unpacks buffer slots into a [`PreparedBatch`], applying random crops to
/// image views when enabled (current and next observations are cropped
/// independently, in that order).
pub fn prepare_batch(
    buffer: &ReplayBuffer,
    indices: &[usize],
    cfg: &AgentConfig,
    rng: &mut Rng,
) -> PreparedBatch {
    assert!(!indices.is_empty(), "empty batch");
    let n = indices.len();
    let first = buffer.get(indices[0]);
    let reduced_dim = first.obs.reduced_state.len();
    let action_dim = first.action.len();
    let with_images = cfg.needs_images() && buffer.keep_images();

    let mut states = Vec::with_capacity(n * reduced_dim);
    let mut next_states = Vec::with_capacity(n * reduced_dim);
    let mut actions = Vec::with_capacity(n * action_dim);
    let mut rewards = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut images = with_images.then(Vec::new);
    let mut next_images = with_images.then(Vec::new);

    for &i in indices {
        let tr = buffer.get(i);
        states.extend_from_slice(&tr.obs.reduced_state);
        next_states.extend_from_slice(&tr.next_obs.reduced_state);
        actions.extend_from_slice(&tr.action);
        rewards.push(tr.reward);
        dones.push(if tr.done { 1.0 } else { 0.0 });
        if with_images {
            let raw = tr.obs.image.as_ref().expect("buffer keeps images");
            let raw_next = tr.next_obs.image.as_ref().expect("buffer keeps images");
            let (a, b) = if cfg.crop_enabled {
                (
                    random_crop(raw, IMAGE_SIDE, 3, cfg.crop_pad, rng),
                    random_crop(raw_next, IMAGE_SIDE, 3, cfg.crop_pad, rng),
                )
            } else {
                (raw.as_ref().clone(), raw_next.as_ref().clone())
            };
            images
                .as_mut()
                .unwrap()
                .extend(image_to_chw(&a, IMAGE_SIDE, 3));
            next_images
                .as_mut()
                .unwrap()
                .extend(image_to_chw(&b, IMAGE_SIDE, 3));
        }
    }
    PreparedBatch {
        n,
        reduced_dim,
        action_dim,
        states,
        next_states,
        images,
        next_images,
        actions,
        rewards,
        dones,
    }
}

/// Concatenates two row-major matrices along the row axis.
fn join_rows(a: &[f64], a_dim: usize, b: &[f64], b_dim: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * a_dim);
    debug_assert_eq!(b.len(), n * b_dim);
    let mut out = Vec::with_capacity(n * (a_dim + b_dim));
    for i in 0..n {
        out.extend_from_slice(&a[i * a_dim..(i + 1) * a_dim]);
        out.extend_from_slice(&b[i * b_dim..(i + 1) * b_dim]);
    }
    out
}

/// Observation part of critic input rows: plain states, encoder features, or
/// their concatenation. Features are treated as data here — critic losses
/// never differentiate through the encoder.
fn critic_obs_part(
    cfg: &AgentConfig,
    states: &[f64],
    reduced_dim: usize,
    features: Option<&[f64]>,
    n: usize,
) -> (Vec<f64>, usize) {
    match cfg.critic_input {
        CriticInput::State => (states.to_vec(), reduced_dim),
        CriticInput::Image => {
            let f = features.expect("image critic input requires features");
            (f.to_vec(), cfg.feature_len)
        }
        CriticInput::StatePlusImage => {
            let f = features.expect("image critic input requires features");
            (
                join_rows(states, reduced_dim, f, cfg.feature_len, n),
                reduced_dim + cfg.feature_len,
            )
        }
    }
}

/// Actor head rows for raw inputs (states or CHW images per obs mode).
/// Returns the rows, the MLP cache, and — in image mode — the encoder
/// features with their cache.
pub(crate) fn actor_forward(
    nets: &AgentNets,
    cfg: &AgentConfig,
    states: &[f64],
    images: Option<&[f64]>,
    n: usize,
) -> (Vec<f64>, MlpCache, Option<(Vec<f64>, ConvCache)>) {
    match cfg.obs_mode {
        ObsMode::State => {
            let (rows, cache) = mlp_forward(&nets.actor, &nets.actor_spec, states, n);
            (rows, cache, None)
        }
        ObsMode::Image => {
            let spec = nets.encoder_spec.as_ref().expect("image mode has encoder");
            let params = nets.encoder.as_ref().unwrap();
            let images = images.expect("image mode requires image batch");
            let (features, conv_cache) = conv_forward(params, spec, images, n);
            let (rows, cache) = mlp_forward(&nets.actor, &nets.actor_spec, &features, n);
            (rows, cache, Some((features, conv_cache)))
        }
    }
}

/// Single-row minimum over the twin critics.
fn min_q_single(nets: &AgentNets, row: &[f64]) -> f64 {
    let (q1, _) = mlp_forward(&nets.critic1, &nets.critic_spec, row, 1);
    let (q2, _) = mlp_forward(&nets.critic2, &nets.critic_spec, row, 1);
    q1[0].min(q2[0])
}

/// Mean squared error of one critic against fixed targets, with its
/// parameter gradients. Shared by training and gradient validation.
fn critic_regression(
    critic: &ParamSet,
    spec: &MlpSpec,
    rows: &[f64],
    targets: &[f64],
) -> (f64, GradMap) {
    let n = targets.len();
    let (q, cache) = mlp_forward(critic, spec, rows, n);
    let nf = n as f64;
    let mut mse = 0.0;
    let mut upstream = Vec::with_capacity(n);
    for i in 0..n {
        let d = q[i] - targets[i];
        mse += d * d / nf;
        upstream.push(2.0 * d / nf);
    }
    let (grads, _) = mlp_backward(critic, spec, &cache, &upstream);
    (mse, grads)
}

/// Pure value of the critic regression loss (finite-difference reference).
pub fn critic_loss_value(critic: &ParamSet, spec: &MlpSpec, rows: &[f64], targets: &[f64]) -> f64 {
    let n = targets.len();
    let (q, _) = mlp_forward(critic, spec, rows, n);
    let nf = n as f64;
    let mut mse = 0.0;
    for i in 0..n {
        let d = q[i] - targets[i];
        mse += d * d / nf;
    }
    mse
}

fn describe(label: &str, values: &[f64]) -> String {
    let non_finite = values.iter().filter(|v| !v.is_finite()).count();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values.iter().filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    format!("{label}: {non_finite}/{} non-finite, finite range [{lo:.4}, {hi:.4}]", values.len())
}

/// Statistics of one critic update.
#[derive(Debug, Clone, Copy)]
pub struct CriticStats {
    /// Sum of both critics' mean squared TD errors.
    pub loss: f64,
    /// Mean of `min(Q1, Q2)` on the batch actions.
    pub mean_q: f64,
    pub mean_target: f64,
}

/// One TD step on both critics.
///
/// Targets are `y = r + gamma * (1 - done) * (min target Q(s', a') - alpha *
/// log pi(a'|s'))` with `a'` freshly sampled from the current actor and
/// `alpha` the fixed entropy temperature (zero when entropy regularization
/// is disabled). Each critic takes one Adam step on its squared error
/// against `y`.
pub fn critic_update(
    nets: &mut AgentNets,
    cfg: &AgentConfig,
    batch: &PreparedBatch,
    rng: &mut Rng,
) -> Result<CriticStats, AgentError> {
    let n = batch.n;
    let act_dim = batch.action_dim;

    // Next actions from the current actor.
    let (rows_next, _, enc_next) = actor_forward(
        nets,
        cfg,
        &batch.next_states,
        batch.next_images.as_deref(),
        n,
    );
    let mut next_actions = Vec::with_capacity(n * act_dim);
    let mut next_logp = Vec::with_capacity(n);
    for i in 0..n {
        let row = &rows_next[i * 2 * act_dim..(i + 1) * 2 * act_dim];
        let noise: Vec<f64> = (0..act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let out = policy::sample(row, &noise);
        next_actions.extend_from_slice(&out.action);
        next_logp.push(out.log_prob);
    }

    // Encoder features for the critic inputs (data, not differentiated).
    let feat_next = enc_next.map(|(f, _)| f);
    let feat = match (cfg.critic_input, cfg.obs_mode) {
        (CriticInput::State, _) => None,
        (_, ObsMode::Image) => {
            let spec = nets.encoder_spec.as_ref().unwrap();
            let params = nets.encoder.as_ref().unwrap();
            let images = batch.images.as_deref().expect("image critic needs images");
            Some(conv_forward(params, spec, images, n).0)
        }
        _ => None,
    };

    let (obs_next, obs_dim) = critic_obs_part(
        cfg,
        &batch.next_states,
        batch.reduced_dim,
        feat_next.as_deref(),
        n,
    );
    let rows_target = join_rows(&obs_next, obs_dim, &next_actions, act_dim, n);
    let (qt1, _) = mlp_forward(&nets.target1, &nets.critic_spec, &rows_target, n);
    let (qt2, _) = mlp_forward(&nets.target2, &nets.critic_spec, &rows_target, n);
    let alpha = cfg.alpha();
    let targets: Vec<f64> = (0..n)
        .map(|i| {
            batch.rewards[i]
                + cfg.gamma
                    * (1.0 - batch.dones[i])
                    * (qt1[i].min(qt2[i]) - alpha * next_logp[i])
        })
        .collect();

    let (obs_part, obs_dim) =
        critic_obs_part(cfg, &batch.states, batch.reduced_dim, feat.as_deref(), n);
    let rows = join_rows(&obs_part, obs_dim, &batch.actions, act_dim, n);

    let (mse1, grads1) = critic_regression(&nets.critic1, &nets.critic_spec, &rows, &targets);
    let (mse2, grads2) = critic_regression(&nets.critic2, &nets.critic_spec, &rows, &targets);
    let loss = mse1 + mse2;
    if !loss.is_finite() {
        let (q1, _) = mlp_forward(&nets.critic1, &nets.critic_spec, &rows, n);
        let (q2, _) = mlp_forward(&nets.critic2, &nets.critic_spec, &rows, n);
        return Err(AgentError::NonFiniteLoss {
            which: "critic",
            diagnostics: format!(
                "{}; {}; {}; {}",
                describe("q1", &q1),
                describe("q2", &q2),
                describe("targets", &targets),
                describe("rewards", &batch.rewards),
            ),
        });
    }
    let hp = AdamParams::with_lr(cfg.critic_lr);
    adam_step(&mut nets.critic1, &grads1, hp)?;
    adam_step(&mut nets.critic2, &grads2, hp)?;

    let mean_q = {
        let (q1, _) = mlp_forward(&nets.critic1, &nets.critic_spec, &rows, n);
        let (q2, _) = mlp_forward(&nets.critic2, &nets.critic_spec, &rows, n);
        (0..n).map(|i| q1[i].min(q2[i])).sum::<f64>() / n as f64
    };
    Ok(CriticStats {
        loss,
        mean_q,
        mean_target: targets.iter().sum::<f64>() / n as f64,
    })
}

/// Generic Monte-Carlo advantage of a stored action against the policy's own
/// baseline: `A = q(a) - (1/m) * sum_j q(a~_j)` with `a~_j` sampled from the
/// squashed-Gaussian head row. `q` is any action-value evaluator, which lets
/// tests substitute analytic critics.
pub fn advantage_with<Q: FnMut(&[f64]) -> f64>(
    mut q: Q,
    stored_action: &[f64],
    actor_row: &[f64],
    m: usize,
    rng: &mut Rng,
) -> f64 {
    assert!(m > 0, "advantage needs at least one baseline sample");
    let dim = stored_action.len();
    let stored_q = q(stored_action);
    let mut acc = 0.0;
    for _ in 0..m {
        let noise: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let out = policy::sample(actor_row, &noise);
        acc += q(&out.action);
    }
    stored_q - acc / m as f64
}

/// Batch advantages under the twin-critic minimum. `critic_obs` holds the
/// assembled observation parts of the critic input rows.
pub fn compute_advantage(
    nets: &AgentNets,
    cfg: &AgentConfig,
    critic_obs: &[f64],
    actions: &[f64],
    actor_rows: &[f64],
    n: usize,
    rng: &mut Rng,
) -> Vec<f64> {
    assert!(n > 0);
    let obs_dim = critic_obs.len() / n;
    let act_dim = actions.len() / n;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let prefix = &critic_obs[i * obs_dim..(i + 1) * obs_dim];
        let q = |a: &[f64]| {
            let mut row = Vec::with_capacity(obs_dim + act_dim);
            row.extend_from_slice(prefix);
            row.extend_from_slice(a);
            min_q_single(nets, &row)
        };
        out.push(advantage_with(
            q,
            &actions[i * act_dim..(i + 1) * act_dim],
            &actor_rows[i * 2 * act_dim..(i + 1) * 2 * act_dim],
            cfg.advantage_samples,
            rng,
        ));
    }
    out
}

/// Fixed (stop-gradient) inputs to the advantage-weighted actor loss.
pub struct AwrLossInputs<'a> {
    /// Replayed actions, `n x act_dim`.
    pub actions: &'a [f64],
    /// Batch-normalized advantage weights (mean 1), `n`.
    pub weights: &'a [f64],
    /// Standard-normal noise for the entropy resample, `n x act_dim`.
    pub ent_noise: &'a [f64],
    /// `w_e * c_ent` when the entropy term is enabled, else 0.
    pub ent_coeff: f64,
    pub n: usize,
}

struct ActorParts {
    total: f64,
    awr: f64,
    /// Mean log-density of the reparameterized resamples (negated, this is
    /// the reported entropy estimate).
    mean_resampled_logp: f64,
}

/// Loss parts and head-row upstream gradient of the advantage-weighted loss:
/// `L = -mean(w_i * log pi(a_i|s_i)) + ent_coeff * mean(log pi(a~_i|s_i))`.
fn awr_core(rows: &[f64], inputs: &AwrLossInputs<'_>, act_dim: usize) -> (ActorParts, Vec<f64>) {
    let n = inputs.n;
    let nf = n as f64;
    let mut upstream = vec![0.0; rows.len()];
    let mut awr_sum = 0.0;
    let mut logp_sum = 0.0;
    for i in 0..n {
        let row = &rows[i * 2 * act_dim..(i + 1) * 2 * act_dim];
        let action = &inputs.actions[i * act_dim..(i + 1) * act_dim];
        let urow = &mut upstream[i * 2 * act_dim..(i + 1) * 2 * act_dim];

        let (logp, grad) = policy::grad_log_prob_of_action(row, action);
        awr_sum += inputs.weights[i] * logp;
        let scale = -inputs.weights[i] / nf;
        for (u, g) in urow.iter_mut().zip(&grad) {
            *u += scale * g;
        }

        let noise = &inputs.ent_noise[i * act_dim..(i + 1) * act_dim];
        let (logp_re, grad_re, _) = policy::grad_log_prob_reparam(row, noise);
        logp_sum += logp_re;
        if inputs.ent_coeff != 0.0 {
            let scale = inputs.ent_coeff / nf;
            for (u, g) in urow.iter_mut().zip(&grad_re) {
                *u += scale * g;
            }
        }
    }
    let awr = -awr_sum / nf;
    let mean_logp = logp_sum / nf;
    (
        ActorParts {
            total: awr + inputs.ent_coeff * mean_logp,
            awr,
            mean_resampled_logp: mean_logp,
        },
        upstream,
    )
}

pub(crate) fn forward_rows(nets: &AgentNets, cfg: &AgentConfig, raw_in: &[f64], n: usize) -> Vec<f64> {
    actor_forward(
        nets,
        cfg,
        raw_in,
        (cfg.obs_mode == ObsMode::Image).then_some(raw_in),
        n,
    )
    .0
}

/// Pure value of the advantage-weighted actor loss for the given parameters
/// and fixed inputs (finite-difference reference). `raw_in` is the actor's
/// raw input batch: reduced states, or CHW images in image mode.
pub fn awr_loss_value(
    nets: &AgentNets,
    cfg: &AgentConfig,
    raw_in: &[f64],
    inputs: &AwrLossInputs<'_>,
) -> f64 {
    let rows = forward_rows(nets, cfg, raw_in, inputs.n);
    awr_core(&rows, inputs, inputs.actions.len() / inputs.n).0.total
}

/// Fixed inputs to the reparameterized soft actor objective.
pub struct SacLossInputs<'a> {
    /// Observation parts of the critic input rows (data), `n x obs_dim`.
    pub critic_obs: &'a [f64],
    /// Standard-normal reparameterization noise, `n x act_dim`.
    pub noise: &'a [f64],
    /// Entropy temperature.
    pub alpha: f64,
    pub n: usize,
}

/// Loss and head-row upstream of the soft actor objective
/// `L = mean(alpha * log pi(a~|s) - min Q(s, a~))`, differentiating through
/// the reparameterized sample into the critics' action inputs (critic
/// parameters are fixed data here).
fn sac_core(
    nets: &AgentNets,
    rows: &[f64],
    inputs: &SacLossInputs<'_>,
    act_dim: usize,
) -> (f64, f64, Vec<f64>) {
    let n = inputs.n;
    let nf = n as f64;
    let obs_dim = inputs.critic_obs.len() / n;

    let mut actions = Vec::with_capacity(n * act_dim);
    let mut logps = Vec::with_capacity(n);
    let mut grads_logp = Vec::with_capacity(n);
    let mut jacobians = Vec::with_capacity(n);
    for i in 0..n {
        let row = &rows[i * 2 * act_dim..(i + 1) * 2 * act_dim];
        let noise = &inputs.noise[i * act_dim..(i + 1) * act_dim];
        let (logp, grad, action) = policy::grad_log_prob_reparam(row, noise);
        let (_, d_mean, d_raw) = policy::action_jacobian(row, noise);
        actions.extend_from_slice(&action);
        logps.push(logp);
        grads_logp.push(grad);
        jacobians.push((d_mean, d_raw));
    }

    let rows_q = join_rows(inputs.critic_obs, obs_dim, &actions, act_dim, n);
    let (q1, cache1) = mlp_forward(&nets.critic1, &nets.critic_spec, &rows_q, n);
    let (q2, cache2) = mlp_forward(&nets.critic2, &nets.critic_spec, &rows_q, n);

    let mut loss = 0.0;
    let mut entropy_sum = 0.0;
    let mut up1 = vec![0.0; n];
    let mut up2 = vec![0.0; n];
    for i in 0..n {
        let qmin = q1[i].min(q2[i]);
        loss += (inputs.alpha * logps[i] - qmin) / nf;
        entropy_sum -= logps[i];
        if q1[i] <= q2[i] {
            up1[i] = -1.0 / nf;
        } else {
            up2[i] = -1.0 / nf;
        }
    }
    let (_, din1) = mlp_backward(&nets.critic1, &nets.critic_spec, &cache1, &up1);
    let (_, din2) = mlp_backward(&nets.critic2, &nets.critic_spec, &cache2, &up2);

    let row_dim = obs_dim + act_dim;
    let mut upstream = vec![0.0; rows.len()];
    for i in 0..n {
        let urow = &mut upstream[i * 2 * act_dim..(i + 1) * 2 * act_dim];
        let glp = &grads_logp[i];
        let (d_mean, d_raw) = &jacobians[i];
        for j in 0..act_dim {
            // d loss / d action_j, summed over whichever critic was the min.
            let da = din1[i * row_dim + obs_dim + j] + din2[i * row_dim + obs_dim + j];
            urow[j] = inputs.alpha / nf * glp[j] + da * d_mean[j];
            urow[act_dim + j] = inputs.alpha / nf * glp[act_dim + j] + da * d_raw[j];
        }
    }
    (loss, entropy_sum / nf, upstream)
}

/// Pure value of the soft actor objective (finite-difference reference).
pub fn sac_loss_value(
    nets: &AgentNets,
    cfg: &AgentConfig,
    raw_in: &[f64],
    inputs: &SacLossInputs<'_>,
) -> f64 {
    let n = inputs.n;
    let rows = forward_rows(nets, cfg, raw_in, n);
    let act_dim = inputs.noise.len() / n;
    let obs_dim = inputs.critic_obs.len() / n;
    let mut loss = 0.0;
    for i in 0..n {
        let row = &rows[i * 2 * act_dim..(i + 1) * 2 * act_dim];
        let noise = &inputs.noise[i * act_dim..(i + 1) * act_dim];
        let (logp, _, action) = policy::grad_log_prob_reparam(row, noise);
        let mut q_row = Vec::with_capacity(obs_dim + act_dim);
        q_row.extend_from_slice(&inputs.critic_obs[i * obs_dim..(i + 1) * obs_dim]);
        q_row.extend_from_slice(&action);
        loss += (inputs.alpha * logp - min_q_single(nets, &q_row)) / n as f64;
    }
    loss
}

/// Statistics of one actor update.
#[derive(Debug, Clone, Copy)]
pub struct ActorStats {
    pub loss: f64,
    /// The advantage-weighted log-likelihood part (zero for the soft
    /// objective).
    pub awr_loss: f64,
    /// Entropy estimate: `-mean log pi(a~|s)` over fresh resamples.
    pub entropy: f64,
    pub mean_advantage: f64,
    /// Mean exponentiated-advantage weight before normalization.
    pub mean_weight_raw: f64,
}

/// One Adam step on the actor (and encoder, in image mode).
///
/// Advantage-weighted objective: advantages are estimated against the
/// policy's own baseline, exponentiated at the configured temperature with a
/// two-sided clamp, normalized to mean 1 over the batch, and treated as
/// constants; the differentiable loss is the weighted negative
/// log-likelihood of the replayed actions plus the entropy term
/// `w_e * c_ent * mean(log pi(a~|s))` when enabled. The entropy estimate is
/// computed (and reported) even when the term is disabled, drawing the same
/// randomness, so toggling the feature changes exactly the loss.
pub fn actor_update(
    nets: &mut AgentNets,
    cfg: &AgentConfig,
    batch: &PreparedBatch,
    rng: &mut Rng,
) -> Result<ActorStats, AgentError> {
    let n = batch.n;
    let act_dim = batch.action_dim;
    let (rows, mlp_cache, enc) = actor_forward(nets, cfg, &batch.states, batch.images.as_deref(), n);
    let (features, conv_cache) = match enc {
        Some((f, c)) => (Some(f), Some(c)),
        None => (None, None),
    };
    let (critic_obs, _) = critic_obs_part(
        cfg,
        &batch.states,
        batch.reduced_dim,
        features.as_deref(),
        n,
    );

    let (stats, upstream) = match cfg.actor_objective {
        ActorObjective::AdvantageWeighted => {
            let advantages =
                compute_advantage(nets, cfg, &critic_obs, &batch.actions, &rows, n, rng);
            let mut raw = Vec::with_capacity(n);
            for &a in &advantages {
                let w = (a / cfg.awr_temperature)
                    .clamp(AWR_CLAMP_MIN, AWR_CLAMP_MAX)
                    .exp();
                if !w.is_finite() {
                    return Err(AgentError::NonFiniteWeight { advantage: a });
                }
                raw.push(w);
            }
            let mean_raw = raw.iter().sum::<f64>() / n as f64;
            let weights: Vec<f64> = raw.iter().map(|w| w / mean_raw).collect();
            let ent_noise: Vec<f64> = (0..n * act_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let inputs = AwrLossInputs {
                actions: &batch.actions,
                weights: &weights,
                ent_noise: &ent_noise,
                ent_coeff: if cfg.entropy_reg_enabled {
                    cfg.w_e * cfg.c_ent
                } else {
                    0.0
                },
                n,
            };
            let (parts, upstream) = awr_core(&rows, &inputs, act_dim);
            if !parts.total.is_finite() {
                return Err(AgentError::NonFiniteLoss {
                    which: "actor",
                    diagnostics: format!(
                        "{}; {}",
                        describe("advantages", &advantages),
                        describe("weights", &weights),
                    ),
                });
            }
            (
                ActorStats {
                    loss: parts.total,
                    awr_loss: parts.awr,
                    entropy: -parts.mean_resampled_logp,
                    mean_advantage: advantages.iter().sum::<f64>() / n as f64,
                    mean_weight_raw: mean_raw,
                },
                upstream,
            )
        }
        ActorObjective::SacReparam => {
            let noise: Vec<f64> = (0..n * act_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let inputs = SacLossInputs {
                critic_obs: &critic_obs,
                noise: &noise,
                alpha: cfg.alpha(),
                n,
            };
            let (loss, entropy, upstream) = sac_core(nets, &rows, &inputs, act_dim);
            if !loss.is_finite() {
                return Err(AgentError::NonFiniteLoss {
                    which: "actor",
                    diagnostics: describe("head rows", &rows),
                });
            }
            (
                ActorStats {
                    loss,
                    awr_loss: 0.0,
                    entropy,
                    mean_advantage: 0.0,
                    mean_weight_raw: 0.0,
                },
                upstream,
            )
        }
    };

    let (grads, d_input) = mlp_backward(&nets.actor, &nets.actor_spec, &mlp_cache, &upstream);
    let hp = AdamParams::with_lr(cfg.actor_lr);
    adam_step(&mut nets.actor, &grads, hp)?;
    if let Some(cache) = conv_cache {
        let spec = nets.encoder_spec.as_ref().unwrap();
        let params = nets.encoder.as_mut().unwrap();
        let enc_grads = conv_backward(params, spec, &cache, &d_input);
        adam_step(params, &enc_grads, hp)?;
    }
    Ok(stats)
}

/// Polyak update of both target critics toward their online critics:
/// `target = (1 - tau) * target + tau * critic`.
pub fn target_soft_update(nets: &mut AgentNets, tau: f64) {
    nets.target1.soft_update_from(&nets.critic1, tau);
    nets.target2.soft_update_from(&nets.critic2, tau);
}
