//! Temporary training diagnostics; not part of the suite. Run manually with
//! `cargo test --release --test scratch_probe -- --ignored --nocapture`.

use dmfd_core::agent::{
    actor_update, compute_advantage, critic_update, evaluate, head_row, prepare_batch,
    target_soft_update, AgentConfig, AgentNets, ObsMode, ReplayBuffer, AWR_CLAMP_MAX,
    AWR_CLAMP_MIN,
};
use dmfd_core::env::{EnvConfig, Task};
use dmfd_core::expert::DemoDataset;
use dmfd_core::nn::policy;
use dmfd_core::rng::{child_rng, rng_from_seed};

fn pct(xs: &mut Vec<f64>, q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((xs.len() - 1) as f64 * q).round() as usize;
    xs[idx]
}

#[test]
#[ignore]
fn pure_demo_awr_probe() {
    let env_cfg = EnvConfig::for_task(Task::StraightenRope);
    let mut ds = DemoDataset::load(std::path::Path::new("/tmp/pilot/rope1000.bin"), &env_cfg)
        .expect("pilot dataset present");
    // Hypothesis test: pull stored actions off the squash boundary.
    for ep in &mut ds.episodes {
        for a in &mut ep.actions {
            for x in a.iter_mut() {
                *x *= 0.9;
            }
        }
    }
    let mut cfg = AgentConfig::for_mode(ObsMode::State);
    cfg.actor_lr = 1e-3;
    cfg.critic_lr = 1e-3;
    cfg.awr_temperature = 1.0;
    cfg.rsi_enabled = false;

    let mut init_rng = child_rng(0, 1);
    let mut nets = AgentNets::init(&env_cfg, &cfg, &mut init_rng);
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity, false);
    buffer.prepopulate(&ds).unwrap();
    println!("buffer: {} transitions (all expert)", buffer.len());

    let mut update_rng = child_rng(0, 4);
    let mut diag_rng = rng_from_seed(999);

    for step in 0..4001u32 {
        let idx = buffer.sample_indices(cfg.batch_size, &mut update_rng).unwrap();
        let batch = prepare_batch(&buffer, &idx, &cfg, &mut update_rng);
        let cs = critic_update(&mut nets, &cfg, &batch, &mut update_rng).unwrap();
        let st = actor_update(&mut nets, &cfg, &batch, &mut update_rng).unwrap();
        target_soft_update(&mut nets, cfg.target_tau);

        if step % 500 == 0 {
            // Diagnostic pass on a fresh batch with an independent RNG.
            let idx = buffer.sample_indices(cfg.batch_size, &mut diag_rng).unwrap();
            let batch = prepare_batch(&buffer, &idx, &cfg, &mut diag_rng);
            let n = batch.n;
            let ad = batch.action_dim;
            let mut rows = Vec::with_capacity(n * 2 * ad);
            for i in 0..n {
                rows.extend(head_row(
                    &nets,
                    &cfg,
                    &batch.states[i * batch.reduced_dim..(i + 1) * batch.reduced_dim],
                ));
            }
            let advs = compute_advantage(
                &nets, &cfg, &batch.states, &batch.actions, &rows, n, &mut diag_rng,
            );
            let raw: Vec<f64> = advs
                .iter()
                .map(|a| (a / cfg.awr_temperature).clamp(AWR_CLAMP_MIN, AWR_CLAMP_MAX).exp())
                .collect();
            let mean_raw = raw.iter().sum::<f64>() / n as f64;
            let weights: Vec<f64> = raw.iter().map(|w| w / mean_raw).collect();
            let logps: Vec<f64> = (0..n)
                .map(|i| {
                    policy::log_prob_of_action(
                        &rows[i * 2 * ad..(i + 1) * 2 * ad],
                        &batch.actions[i * ad..(i + 1) * ad],
                    )
                })
                .collect();
            let tiny = weights.iter().filter(|w| **w < 0.01).count();
            let mut a = advs.clone();
            let mut w = weights.clone();
            let mut l = logps.clone();
            println!(
                "step {step:5}  critic_loss {:8.4}  mean_q {:7.3}  actor_loss {:9.3}  \
                 adv[p25 {:7.3} p50 {:7.3} p75 {:7.3}]  w[p50 {:6.3} p95 {:6.3} tiny {}/{n}]  \
                 logp[p25 {:8.1} p50 {:8.1} p75 {:8.1}]",
                cs.loss,
                cs.mean_q,
                st.loss,
                pct(&mut a, 0.25),
                pct(&mut a, 0.50),
                pct(&mut a, 0.75),
                pct(&mut w, 0.50),
                pct(&mut w, 0.95),
                tiny,
                pct(&mut l, 0.25),
                pct(&mut l, 0.50),
                pct(&mut l, 0.75),
            );
            // Policy mean action on the first three demo states.
            for i in 0..3 {
                let row = head_row(&nets, &cfg, &batch.states[i * batch.reduced_dim..(i + 1) * batch.reduced_dim]);
                let mean = policy::mean_action(&row);
                let stored = &batch.actions[i * ad..(i + 1) * ad];
                println!("    state {i}: policy {mean:.3?} vs stored {stored:.3?}");
            }
        }
    }

    let (_, summary) = evaluate(&nets, &cfg, &env_cfg, 10, 12345).unwrap();
    println!(
        "eval after pure-demo training: mean {:.4} median {:.4}",
        summary.mean, summary.median
    );
}
