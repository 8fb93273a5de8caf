//! The training loop: environment interaction, replay, one critic and one
//! actor update per step, periodic deterministic evaluation.
//!
//! All randomness flows from four child streams of the run seed — network
//! init, episode resets, action noise, and update sampling — so two runs
//! with the same seed produce byte-identical metrics. Evaluation seeds
//! derive from the original run seed and the global step, which keeps the
//! evaluation grid stable across resumed runs.

use std::time::Instant;

use crate::env::{Env, EnvConfig};
use crate::expert::DemoDataset;
use crate::metrics::MetricsRow;
use crate::nn::policy;
use crate::rng::{child_rng, derive_seed, Rng};

use rand::Rng as _;
use rand_distr::StandardNormal;

use super::eval::{evaluate, head_row};
use super::replay::{ReplayBuffer, StoredObs, Transition};
use super::rsi::maybe_rsi_reset;
use super::update::{
    actor_update, critic_update, prepare_batch, target_soft_update, ActorStats, CriticStats,
};
use super::{actor_input_from_obs, AgentConfig, AgentError, AgentNets};

/// Distinguishes evaluation seed streams from the loop streams 1..=4.
const EVAL_STREAM: u64 = 1 << 32;

/// Seed of the evaluation at global step `step` of the run seeded with
/// `run_seed`. Depends only on the original seed and the step, so resumed
/// runs evaluate on the same episode grid as uninterrupted ones.
pub fn eval_seed(run_seed: u64, step: u64) -> u64 {
    derive_seed(run_seed, EVAL_STREAM | step)
}

/// Run-shape parameters of one training run.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    /// Environment steps to take in this run.
    pub budget_steps: u64,
    /// Evaluate every this many steps.
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub seed: u64,
    /// Gradient updates on the prepopulated buffer before any environment
    /// interaction (used by offline-first baselines).
    pub offline_steps: u64,
    /// Global step this run starts at; nonzero when resuming.
    pub start_step: u64,
}

impl TrainConfig {
    /// The desk-scale protocol: 40k steps, evaluation every 2k.
    pub fn desk(seed: u64) -> TrainConfig {
        TrainConfig {
            budget_steps: 40_000,
            eval_every: 2_000,
            eval_episodes: 20,
            seed,
            offline_steps: 0,
            start_step: 0,
        }
    }
}

/// Sums of per-update statistics since the last metrics row.
#[derive(Default)]
struct LossWindow {
    actor: f64,
    critic: f64,
    entropy: f64,
    count: u64,
}

impl LossWindow {
    fn add(&mut self, c: &CriticStats, a: &ActorStats) {
        self.actor += a.loss;
        self.critic += c.loss;
        self.entropy += a.entropy;
        self.count += 1;
    }

    fn means(&self) -> (f64, f64, f64) {
        if self.count == 0 {
            return (0.0, 0.0, 0.0);
        }
        let n = self.count as f64;
        (self.actor / n, self.critic / n, self.entropy / n)
    }
}

fn one_update(
    nets: &mut AgentNets,
    cfg: &AgentConfig,
    buffer: &ReplayBuffer,
    rng: &mut Rng,
) -> Result<(CriticStats, ActorStats), AgentError> {
    let indices = buffer.sample_indices(cfg.batch_size, rng)?;
    let batch = prepare_batch(buffer, &indices, cfg, rng);
    let critic_stats = critic_update(nets, cfg, &batch, rng)?;
    let actor_stats = actor_update(nets, cfg, &batch, rng)?;
    target_soft_update(nets, cfg.target_tau);
    Ok((critic_stats, actor_stats))
}

/// Trains a fresh agent. See [`train_from`].
pub fn train(
    env_cfg: &EnvConfig,
    agent_cfg: &AgentConfig,
    tc: &TrainConfig,
    dataset: Option<&DemoDataset>,
    on_eval: impl FnMut(&MetricsRow, &AgentNets),
) -> Result<(AgentNets, Vec<MetricsRow>), AgentError> {
    agent_cfg.validate()?;
    let effective_seed = if tc.start_step == 0 {
        tc.seed
    } else {
        derive_seed(tc.seed, tc.start_step)
    };
    let nets = AgentNets::init(env_cfg, agent_cfg, &mut child_rng(effective_seed, 1));
    train_from(env_cfg, agent_cfg, tc, dataset, nets, on_eval)
}

/// Trains starting from the given networks (fresh or loaded from a
/// checkpoint). Returns the final networks and one metrics row per
/// evaluation point.
///
/// A zero budget returns the networks untouched with no rows. When a
/// dataset is given, the replay buffer is prepopulated with its transitions
/// (flagged as expert data) before any interaction, and reference-state
/// resets draw from it when enabled. Updates begin once the buffer holds at
/// least one batch. `on_eval` receives each metrics row together with the
/// networks at that point, so callers can checkpoint at evaluation cadence.
pub fn train_from(
    env_cfg: &EnvConfig,
    agent_cfg: &AgentConfig,
    tc: &TrainConfig,
    dataset: Option<&DemoDataset>,
    mut nets: AgentNets,
    mut on_eval: impl FnMut(&MetricsRow, &AgentNets),
) -> Result<(AgentNets, Vec<MetricsRow>), AgentError> {
    agent_cfg.validate()?;
    assert!(tc.eval_every > 0, "eval_every must be positive");
    if tc.budget_steps == 0 {
        return Ok((nets, Vec::new()));
    }
    let started = Instant::now();
    let mut env = Env::new(env_cfg.clone())?;
    let effective_seed = if tc.start_step == 0 {
        tc.seed
    } else {
        derive_seed(tc.seed, tc.start_step)
    };
    let mut rng_reset = child_rng(effective_seed, 2);
    let mut rng_act = child_rng(effective_seed, 3);
    let mut rng_upd = child_rng(effective_seed, 4);

    let mut buffer = ReplayBuffer::new(agent_cfg.replay_capacity, agent_cfg.needs_images());
    if let Some(ds) = dataset {
        buffer.prepopulate(ds)?;
    }

    let mut window = LossWindow::default();
    for _ in 0..tc.offline_steps {
        let (c, a) = one_update(&mut nets, agent_cfg, &buffer, &mut rng_upd)?;
        window.add(&c, &a);
    }

    let rsi_dataset = if agent_cfg.rsi_enabled { dataset } else { None };
    let act_dim = env.config().action_dim();
    let keep_images = agent_cfg.needs_images();
    let mut rows = Vec::new();
    let mut obs = maybe_rsi_reset(&mut env, rsi_dataset, agent_cfg.p_eta, &mut rng_reset)?.0;
    let mut step = tc.start_step;
    let end = tc.start_step + tc.budget_steps;
    while step < end {
        let row = head_row(&nets, agent_cfg, &actor_input_from_obs(agent_cfg, &obs));
        let noise: Vec<f64> = (0..act_dim)
            .map(|_| rng_act.sample(StandardNormal))
            .collect();
        let action = policy::sample(&row, &noise).action;
        let outcome = env.step(&action)?;
        buffer.push(Transition {
            obs: StoredObs::from_observation(&obs, keep_images),
            action,
            reward: outcome.reward,
            next_obs: StoredObs::from_observation(&outcome.observation, keep_images),
            done: outcome.done,
            is_expert: false,
        });
        step += 1;

        if buffer.len() >= agent_cfg.batch_size {
            let (c, a) = one_update(&mut nets, agent_cfg, &buffer, &mut rng_upd)?;
            window.add(&c, &a);
        }

        if step % tc.eval_every == 0 {
            let seed = eval_seed(tc.seed, step);
            let (_, summary) = evaluate(&nets, agent_cfg, env_cfg, tc.eval_episodes, seed)?;
            let (actor_loss, critic_loss, entropy) = window.means();
            let row = MetricsRow {
                step,
                mean_p_hat: summary.mean,
                std_p_hat: summary.std,
                median_p_hat: summary.median,
                q25_p_hat: summary.q25,
                q75_p_hat: summary.q75,
                actor_loss,
                critic_loss,
                entropy,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            on_eval(&row, &nets);
            rows.push(row);
            window = LossWindow::default();
        }

        obs = if outcome.done {
            maybe_rsi_reset(&mut env, rsi_dataset, agent_cfg.p_eta, &mut rng_reset)?.0
        } else {
            outcome.observation
        };
    }
    Ok((nets, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ObsMode;
    use crate::env::Task;
    use crate::expert::ScriptedExpert;
    use crate::metrics::format_metrics_csv;

    fn tiny_env() -> EnvConfig {
        let mut cfg = EnvConfig::for_task(Task::StraightenRope);
        cfg.horizon = 5;
        cfg
    }

    fn tiny_agent() -> AgentConfig {
        AgentConfig {
            hidden_width: 16,
            batch_size: 8,
            replay_capacity: 500,
            advantage_samples: 2,
            ..AgentConfig::for_mode(ObsMode::State)
        }
    }

    fn tiny_dataset(env_cfg: &EnvConfig) -> DemoDataset {
        DemoDataset::generate(env_cfg, &ScriptedExpert::default(), 2, 77, -10.0).unwrap()
    }

    fn tiny_tc(seed: u64) -> TrainConfig {
        TrainConfig {
            budget_steps: 60,
            eval_every: 30,
            eval_episodes: 2,
            seed,
            offline_steps: 0,
            start_step: 0,
        }
    }

    #[test]
    fn zero_budget_returns_initial_nets_and_no_rows() {
        let env_cfg = tiny_env();
        let agent_cfg = tiny_agent();
        let tc = TrainConfig {
            budget_steps: 0,
            ..tiny_tc(3)
        };
        let (nets, rows) = train(&env_cfg, &agent_cfg, &tc, None, |_, _| {}).unwrap();
        assert!(rows.is_empty());
        let fresh = AgentNets::init(&env_cfg, &agent_cfg, &mut child_rng(3, 1));
        assert_eq!(nets.actor.entries(), fresh.actor.entries());
        assert_eq!(nets.critic1.entries(), fresh.critic1.entries());
    }

    #[test]
    fn same_seed_runs_are_byte_identical() {
        let env_cfg = tiny_env();
        let agent_cfg = tiny_agent();
        let ds = tiny_dataset(&env_cfg);
        let run = || train(&env_cfg, &agent_cfg, &tiny_tc(5), Some(&ds), |_, _| {}).unwrap();
        let (nets_a, rows_a) = run();
        let (nets_b, rows_b) = run();
        assert_eq!(format_metrics_csv(&rows_a), format_metrics_csv(&rows_b));
        assert_eq!(nets_a.actor.entries(), nets_b.actor.entries());
        assert_eq!(nets_a.critic1.entries(), nets_b.critic1.entries());
        assert_eq!(nets_a.target2.entries(), nets_b.target2.entries());

        let (_, rows_c) = train(&env_cfg, &agent_cfg, &tiny_tc(6), Some(&ds), |_, _| {}).unwrap();
        assert_ne!(format_metrics_csv(&rows_a), format_metrics_csv(&rows_c));
    }

    #[test]
    fn rows_land_on_the_evaluation_grid() {
        let env_cfg = tiny_env();
        let agent_cfg = tiny_agent();
        let ds = tiny_dataset(&env_cfg);
        let mut seen = Vec::new();
        let (_, rows) = train(&env_cfg, &agent_cfg, &tiny_tc(7), Some(&ds), |r, _| {
            seen.push(r.step);
        })
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.step).collect::<Vec<_>>(), vec![30, 60]);
        assert_eq!(seen, vec![30, 60]);
        // Updates ran (buffer was prepopulated), so losses are real numbers.
        assert!(rows[0].critic_loss.is_finite());
        assert!(rows[0].critic_loss != 0.0);
    }

    #[test]
    fn sac_style_run_needs_no_dataset() {
        let env_cfg = tiny_env();
        let agent_cfg = AgentConfig {
            actor_objective: crate::agent::ActorObjective::SacReparam,
            rsi_enabled: false,
            ..tiny_agent()
        };
        let (_, rows) = train(&env_cfg, &agent_cfg, &tiny_tc(8), None, |_, _| {}).unwrap();
        assert_eq!(rows.len(), 2);
    }

    #[test]
    fn offline_steps_without_data_is_an_error() {
        let env_cfg = tiny_env();
        let agent_cfg = tiny_agent();
        let tc = TrainConfig {
            offline_steps: 5,
            ..tiny_tc(9)
        };
        match train(&env_cfg, &agent_cfg, &tc, None, |_, _| {}) {
            Err(AgentError::EmptyBuffer) => {}
            other => panic!("expected EmptyBuffer, got {other:?}"),
        }
    }

    #[test]
    fn resume_continues_the_step_grid_without_gaps() {
        let env_cfg = tiny_env();
        let agent_cfg = tiny_agent();
        let ds = tiny_dataset(&env_cfg);
        let (nets, rows_a) = train(&env_cfg, &agent_cfg, &tiny_tc(10), Some(&ds), |_, _| {}).unwrap();
        let tc_b = TrainConfig {
            budget_steps: 30,
            start_step: 60,
            ..tiny_tc(10)
        };
        let (_, rows_b) =
            train_from(&env_cfg, &agent_cfg, &tc_b, Some(&ds), nets, |_, _| {}).unwrap();
        let mut steps: Vec<u64> = rows_a.iter().map(|r| r.step).collect();
        steps.extend(rows_b.iter().map(|r| r.step));
        assert_eq!(steps, vec![30, 60, 90]);
    }
}
