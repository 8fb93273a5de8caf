//! One seed of one run: training with metrics streaming, rolling
//! checkpoints at evaluation cadence, and resume from the latest
//! checkpoint.
//!
//! Layout inside a seed directory:
//!
//! ```text
//! seed<k>/metrics.csv              append-only during the run
//! seed<k>/checkpoint_latest.json   rolling, updated at every evaluation
//! seed<k>/checkpoint_final.json    written once the budget is reached
//! seed<k>/bc_loss.csv              behavior-cloning baselines only
//! ```

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dmfd_core::agent::{
    eval_seed, evaluate, load_checkpoint, save_checkpoint, train_from, AgentNets, TrainConfig,
};
use dmfd_core::baselines::{bc_train, transplant_actor, BaselineSpec};
use dmfd_core::expert::DemoDataset;
use dmfd_core::metrics::{
    format_metrics_row, parse_metrics_csv, MetricsRow, METRICS_HEADER,
};
use dmfd_core::rng::{child_rng, derive_seed};

use crate::config::RunConfig;
use crate::errors::CliError;

/// Independent seed stream for behavior-cloning pretraining, distinct from
/// the training loop streams.
const BC_PRETRAIN_STREAM: u64 = 5;

/// What one seed produced, for the command's summary table.
#[derive(Debug, Clone)]
pub struct SeedSummary {
    pub seed: u64,
    pub rows: usize,
    /// Mean normalized performance at the last evaluation, if any.
    pub final_mean: Option<f64>,
    pub wall_seconds: f64,
    /// True when resume found the run already complete.
    pub already_complete: bool,
}

fn checkpoint_latest(dir: &Path) -> PathBuf {
    dir.join("checkpoint_latest.json")
}

fn checkpoint_final(dir: &Path) -> PathBuf {
    dir.join("checkpoint_final.json")
}

fn metrics_path(dir: &Path) -> PathBuf {
    dir.join("metrics.csv")
}

/// Saves a checkpoint through a temporary file so interrupts never leave a
/// truncated document behind.
fn save_checkpoint_atomic(
    path: &Path,
    nets: &AgentNets,
    cfg: &RunConfig,
    step: u64,
) -> Result<(), CliError> {
    let tmp = path.with_extension("json.tmp");
    save_checkpoint(&tmp, nets, &cfg.env, &cfg.agent, step)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Opens a fresh metrics file containing only the header.
fn fresh_metrics_file(dir: &Path) -> Result<File, CliError> {
    let mut file = File::create(metrics_path(dir))?;
    writeln!(file, "{METRICS_HEADER}")?;
    file.flush()?;
    Ok(file)
}

fn append_row(file: &mut File, row: &MetricsRow) -> std::io::Result<()> {
    writeln!(file, "{}", format_metrics_row(row))?;
    file.flush()
}

/// Drops metrics rows recorded after `step` (stale rows from an interrupted
/// run being resumed) and reopens the file for appending.
fn reopen_metrics_at(dir: &Path, step: u64) -> Result<(File, usize), CliError> {
    let path = metrics_path(dir);
    let text = std::fs::read_to_string(&path).map_err(|e| {
        CliError::Runtime(format!(
            "cannot resume: missing metrics file {}: {e}",
            path.display()
        ))
    })?;
    let rows = parse_metrics_csv(&text)
        .map_err(|e| CliError::Runtime(format!("cannot resume: {e}")))?;
    let keep: Vec<&MetricsRow> = rows.iter().filter(|r| r.step <= step).collect();
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in &keep {
        out.push_str(&format_metrics_row(row));
        out.push('\n');
    }
    std::fs::write(&path, out)?;
    let file = OpenOptions::new().append(true).open(&path)?;
    Ok((file, keep.len()))
}

/// Trains one seed into `dir`. `dataset` must be present when the method
/// consumes demonstrations (checked by the caller). With `resume`, training
/// continues from `checkpoint_latest.json` when one exists; step numbering
/// and evaluation seeds continue as if the run had never stopped.
pub fn run_seed(
    cfg: &RunConfig,
    spec: Option<&BaselineSpec>,
    dataset: Option<&DemoDataset>,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<SeedSummary, CliError> {
    std::fs::create_dir_all(dir)?;
    if spec.is_some_and(|s| s.name.is_behavior_cloning()) {
        return run_bc_seed(cfg, dataset, seed, dir, resume);
    }

    let budget = cfg.run.budget_steps;
    let started = Instant::now();

    // Resume state: start step, networks, and the metrics file position.
    let mut start_step = 0;
    let mut nets = None;
    if resume && checkpoint_latest(dir).exists() {
        let ck = load_checkpoint(&checkpoint_latest(dir))?;
        if ck.env_config != cfg.env || ck.agent_config != cfg.agent {
            return Err(CliError::config(format!(
                "checkpoint in {} was written under a different config; \
                 refusing to resume",
                dir.display()
            )));
        }
        start_step = ck.step;
        nets = Some(ck.nets);
    }

    let (mut file, prior_rows) = if nets.is_some() {
        reopen_metrics_at(dir, start_step)?
    } else {
        (fresh_metrics_file(dir)?, 0)
    };

    if start_step >= budget {
        let ck = load_checkpoint(&checkpoint_latest(dir))?;
        save_checkpoint_atomic(&checkpoint_final(dir), &ck.nets, cfg, start_step)?;
        return Ok(SeedSummary {
            seed,
            rows: prior_rows,
            final_mean: None,
            wall_seconds: started.elapsed().as_secs_f64(),
            already_complete: true,
        });
    }

    let fresh = nets.is_none();
    let mut nets = match nets {
        Some(n) => n,
        None => AgentNets::init(&cfg.env, &cfg.agent, &mut child_rng(seed, 1)),
    };
    if fresh && spec.is_some_and(|s| s.init_actor_from_bc) {
        let ds = dataset.expect("caller checked the dataset requirement");
        let bc_seed = derive_seed(seed, BC_PRETRAIN_STREAM);
        let (bc_nets, _) = bc_train(ds, &cfg.agent, cfg.run.bc_epochs, bc_seed)?;
        transplant_actor(&bc_nets, &mut nets);
    }

    let replay_dataset = match spec {
        Some(s) if !s.uses_dataset => None,
        _ => dataset,
    };
    let tc = TrainConfig {
        budget_steps: budget - start_step,
        eval_every: cfg.run.eval_every,
        eval_episodes: cfg.run.eval_episodes,
        seed,
        offline_steps: if start_step == 0 {
            cfg.run.offline_steps
        } else {
            0
        },
        start_step,
    };

    let mut io_error: Option<CliError> = None;
    let on_eval = |row: &MetricsRow, nets: &AgentNets| {
        if io_error.is_some() {
            return;
        }
        let outcome = append_row(&mut file, row)
            .map_err(CliError::from)
            .and_then(|_| save_checkpoint_atomic(&checkpoint_latest(dir), nets, cfg, row.step));
        if let Err(e) = outcome {
            io_error = Some(e);
        }
    };
    let (nets, rows) = train_from(&cfg.env, &cfg.agent, &tc, replay_dataset, nets, on_eval)?;
    if let Some(e) = io_error {
        return Err(e);
    }

    save_checkpoint_atomic(&checkpoint_final(dir), &nets, cfg, budget)?;
    save_checkpoint_atomic(&checkpoint_latest(dir), &nets, cfg, budget)?;
    Ok(SeedSummary {
        seed,
        rows: prior_rows + rows.len(),
        final_mean: rows.last().map(|r| r.mean_p_hat),
        wall_seconds: started.elapsed().as_secs_f64(),
        already_complete: false,
    })
}

/// Behavior-cloning baselines: supervised training on the dataset, one
/// evaluation at the budget step, a flat one-row metrics file.
fn run_bc_seed(
    cfg: &RunConfig,
    dataset: Option<&DemoDataset>,
    seed: u64,
    dir: &Path,
    resume: bool,
) -> Result<SeedSummary, CliError> {
    let started = Instant::now();
    if resume && checkpoint_final(dir).exists() {
        return Ok(SeedSummary {
            seed,
            rows: 0,
            final_mean: None,
            wall_seconds: 0.0,
            already_complete: true,
        });
    }
    let ds = dataset.expect("caller checked the dataset requirement");
    let (nets, curve) = bc_train(ds, &cfg.agent, cfg.run.bc_epochs, seed)?;

    let mut loss_file = File::create(dir.join("bc_loss.csv"))?;
    writeln!(loss_file, "epoch,loss")?;
    for (i, loss) in curve.iter().enumerate() {
        writeln!(loss_file, "{},{}", i + 1, loss)?;
    }

    let budget = cfg.run.budget_steps;
    let (_, summary) = evaluate(
        &nets,
        &cfg.agent,
        &cfg.env,
        cfg.run.eval_episodes,
        eval_seed(seed, budget),
    )?;
    let row = MetricsRow {
        step: budget,
        mean_p_hat: summary.mean,
        std_p_hat: summary.std,
        median_p_hat: summary.median,
        q25_p_hat: summary.q25,
        q75_p_hat: summary.q75,
        actor_loss: curve.last().copied().unwrap_or(0.0),
        critic_loss: 0.0,
        entropy: 0.0,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let mut file = fresh_metrics_file(dir)?;
    append_row(&mut file, &row)?;
    save_checkpoint_atomic(&checkpoint_final(dir), &nets, cfg, budget)?;
    save_checkpoint_atomic(&checkpoint_latest(dir), &nets, cfg, budget)?;
    Ok(SeedSummary {
        seed,
        rows: 1,
        final_mean: Some(row.mean_p_hat),
        wall_seconds: row.wall_seconds,
        already_complete: false,
    })
}
