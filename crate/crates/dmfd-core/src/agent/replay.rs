//! Replay buffer with demonstration prepopulation.
//!
//! The buffer is a fixed-capacity ring: once full, each push overwrites the
//! oldest transition (strict FIFO). Sampling is i.i.d. uniform over the
//! current contents, with replacement. Expert transitions are never
//! protected from eviction — at the default capacity the desk datasets fit
//! with room to spare, which is the documented sizing contract.

use std::sync::Arc;

use rand::Rng as _;

use crate::env::{reduced_state_of, Observation};
use crate::expert::DemoDataset;
use crate::rng::Rng;

use super::AgentError;

/// Observation as stored in the buffer. Reduced states are always kept;
/// images only when some consumer needs them, since they dominate memory.
/// Image buffers are shared (`Arc`), so the common case — one state being
/// both `next_obs` of step `t` and `obs` of step `t+1` — costs one render.
#[derive(Debug, Clone)]
pub struct StoredObs {
    pub reduced_state: Vec<f64>,
    pub image: Option<Arc<Vec<u8>>>,
}

impl StoredObs {
    pub fn from_observation(obs: &Observation, keep_image: bool) -> StoredObs {
        StoredObs {
            reduced_state: obs.reduced_state.clone(),
            image: keep_image.then(|| Arc::clone(&obs.image)),
        }
    }
}

/// One experience tuple.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: StoredObs,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: StoredObs,
    pub done: bool,
    pub is_expert: bool,
}

/// Fixed-capacity FIFO ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    keep_images: bool,
    slots: Vec<Transition>,
    /// Next slot to write (wraps once `slots` reaches capacity).
    write_index: usize,
    total_pushes: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, keep_images: bool) -> ReplayBuffer {
        assert!(capacity > 0, "replay buffer needs positive capacity");
        ReplayBuffer {
            capacity,
            keep_images,
            slots: Vec::new(),
            write_index: 0,
            total_pushes: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn keep_images(&self) -> bool {
        self.keep_images
    }

    /// Total number of pushes ever made (wraps never reset it).
    pub fn total_pushes(&self) -> u64 {
        self.total_pushes
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.slots[index]
    }

    /// Appends a transition, evicting the oldest one when full.
    pub fn push(&mut self, transition: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.write_index] = transition;
        }
        self.write_index = (self.write_index + 1) % self.capacity;
        self.total_pushes += 1;
    }

    /// `n` slot indices drawn i.i.d. uniform with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut Rng) -> Result<Vec<usize>, AgentError> {
        if self.slots.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.slots.len())).collect())
    }

    /// Loads every demonstration transition, in episode order, flagged as
    /// expert data. Fails up front if the buffer cannot hold the whole
    /// dataset, or if images are required but not rendered.
    pub fn prepopulate(&mut self, dataset: &DemoDataset) -> Result<usize, AgentError> {
        let required = dataset.n_transitions();
        if self.capacity < self.len() + required {
            return Err(AgentError::CapacityTooSmall {
                capacity: self.capacity,
                required: self.len() + required,
            });
        }
        if self.keep_images {
            if let Some(ep) = dataset.episodes.iter().position(|e| e.images.is_none()) {
                return Err(AgentError::MissingImages { episode: ep });
            }
        }
        let config = &dataset.config;
        for demo in &dataset.episodes {
            let images = demo.images.as_deref();
            for t in 0..demo.n_steps() {
                let obs_at = |k: usize| StoredObs {
                    reduced_state: reduced_state_of(config, &demo.states[k]),
                    image: images.map(|im| Arc::clone(&im[k])),
                };
                self.push(Transition {
                    obs: obs_at(t),
                    action: demo.actions[t].clone(),
                    reward: demo.rewards[t],
                    next_obs: obs_at(t + 1),
                    done: demo.states[t + 1].step_index == config.horizon,
                    is_expert: true,
                });
            }
        }
        Ok(required)
    }
}
