//! Reference-state initialization (RSI).
//!
//! With probability `p_eta` an episode starts from a uniformly random
//! intermediate state of a uniformly random demonstration instead of a fresh
//! reset. The restored state keeps its recorded step index, so the episode
//! still terminates at the global horizon — starting at step `t` leaves
//! `H - t` actions, never extra ones.

use rand::Rng as _;

use crate::env::{Env, Observation};
use crate::expert::DemoDataset;
use crate::rng::Rng;

use super::AgentError;

/// Begins an episode, possibly from a demonstration state.
///
/// Draws one uniform gate variate, then either restores a random
/// demonstration state at a random timestep `t` in `[0, n_steps - 1]`
/// (excluding the terminal state, where no action remains) or performs a
/// normal reset. Passing `None` for the dataset always resets normally.
/// Returns the initial observation and whether RSI was used.
pub fn maybe_rsi_reset(
    env: &mut Env,
    dataset: Option<&DemoDataset>,
    p_eta: f64,
    rng: &mut Rng,
) -> Result<(Observation, bool), AgentError> {
    debug_assert!((0.0..=1.0).contains(&p_eta));
    // The gate is drawn unconditionally so the same seed produces the same
    // episode stream regardless of whether a dataset is attached.
    let gate: f64 = rng.gen();
    let demos = dataset.filter(|d| !d.episodes.is_empty());
    if let Some(dataset) = demos {
        if gate < p_eta {
            let episode = rng.gen_range(0..dataset.episodes.len());
            let demo = &dataset.episodes[episode];
            let t = rng.gen_range(0..demo.n_steps());
            let obs = env.reset_to(&demo.states[t])?;
            return Ok((obs, true));
        }
    }
    let obs = env.reset(rng)?;
    Ok((obs, false))
}
