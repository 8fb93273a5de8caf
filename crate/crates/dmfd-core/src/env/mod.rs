//! Desk-scale 2D deformable manipulation environments.
//!
//! Objects are mass-spring systems on a frictionless plane, observed either
//! as a low-dimensional keypoint vector or a 32x32 RGB image. Pickers are
//! kinematic grippers: an action moves each picker and toggles its grasp;
//! a grasped particle rigidly follows the picker. Episodes are fixed
//! horizon, rewards are the raw task performance each step, and everything
//! is deterministic given a reset state and an action sequence.

pub mod particle;
pub mod render;
pub mod tasks;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use particle::{ParticleSystem, Spring};
pub use render::{render_scene, CAMERA_HALF, IMAGE_LEN, IMAGE_SIDE};
pub use tasks::{
    cloth_corner_indices, goal_geometry, object_skeleton, picker_home_indices,
    rope_keypoint_indices, variant_params, GoalGeometry, Task, VariantParams,
};

use crate::rng::Rng;
use rand::Rng as _;

/// Pickers may roam slightly beyond the camera but never farther than this.
pub const WORLD_HALF: f64 = 0.5;
/// Resets whose initial defect is smaller than this are redrawn so that the
/// normalized performance denominator stays well conditioned.
pub const MIN_INITIAL_DEFECT: f64 = 0.05;
const MAX_RESET_ATTEMPTS: u32 = 100;

/// Environment errors.
#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("invalid action: {0}")]
    Action(String),
    #[error("episode is done; reset before stepping")]
    EpisodeDone,
    #[error("invalid state for restore: {0}")]
    State(String),
    #[error("physics produced non-finite values at step {step}")]
    NonFinite { step: u32 },
    #[error("could not draw a non-degenerate reset in {attempts} attempts")]
    DegenerateReset { attempts: u32 },
    #[error("normalized performance undefined: start already optimal")]
    DegenerateNormalization,
}

/// Static environment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub task: Task,
    /// Actions per episode.
    pub horizon: u32,
    /// Physics substep length in seconds.
    pub dt: f64,
    /// Physics substeps per action.
    pub substeps_per_action: u32,
    pub stiffness: f64,
    pub damping: f64,
    pub particle_mass: f64,
    pub rope_particles: usize,
    pub rope_spacing: f64,
    /// Target end-to-end length for the straightened rope.
    pub rope_target_length: f64,
    pub cloth_rows: usize,
    pub cloth_cols: usize,
    pub cloth_spacing: f64,
    /// World distance a picker moves for a saturated action component.
    pub max_picker_step: f64,
    /// A grasp captures the nearest free particle within this distance.
    pub grasp_radius: f64,
    /// Number of deterministic physical variants.
    pub n_variants: u32,
    /// Performance value of a perfectly solved task.
    pub p_opt: f64,
}

impl EnvConfig {
    /// Desk-scale defaults for one task.
    pub fn for_task(task: Task) -> EnvConfig {
        EnvConfig {
            task,
            horizon: 30,
            dt: 0.005,
            substeps_per_action: 40,
            stiffness: 800.0,
            damping: 0.5,
            particle_mass: 0.05,
            rope_particles: 10,
            rope_spacing: 0.05,
            rope_target_length: 0.4,
            cloth_rows: 5,
            cloth_cols: 5,
            cloth_spacing: 0.05,
            max_picker_step: 0.05,
            grasp_radius: 0.03,
            n_variants: 20,
            p_opt: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if self.substeps_per_action == 0 {
            return bad("substeps_per_action must be at least 1");
        }
        if !(self.stiffness > 0.0) || !(self.particle_mass > 0.0) {
            return bad("stiffness and particle_mass must be positive");
        }
        if self.damping < 0.0 {
            return bad("damping must be non-negative");
        }
        if self.rope_particles < 2 {
            return bad("rope needs at least 2 particles");
        }
        if !(self.rope_spacing > 0.0) || !(self.rope_target_length > 0.0) {
            return bad("rope spacing and target length must be positive");
        }
        if self.cloth_rows < 2 || self.cloth_cols < 2 {
            return bad("cloth grid must be at least 2x2");
        }
        if !(self.cloth_spacing > 0.0) {
            return bad("cloth spacing must be positive");
        }
        if !(self.max_picker_step > 0.0) || !(self.grasp_radius > 0.0) {
            return bad("picker step and grasp radius must be positive");
        }
        if self.n_variants == 0 {
            return bad("n_variants must be at least 1");
        }
        Ok(())
    }

    /// Action vector length: (dx, dy, grasp) per picker.
    pub fn action_dim(&self) -> usize {
        3 * self.task.n_pickers()
    }

    /// Length of the reduced keypoint observation.
    pub fn reduced_state_dim(&self) -> usize {
        if self.task.is_cloth() {
            8
        } else {
            20
        }
    }
}

/// One kinematic gripper.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Picker {
    pub pos: [f64; 2],
    /// Index of the particle currently held, if any.
    pub grasped: Option<usize>,
}

/// Complete restorable simulator state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub particles: ParticleSystem,
    pub pickers: Vec<Picker>,
    pub step_index: u32,
    pub variant_id: u32,
}

/// What the agent sees. Both views are always populated; consumers pick one.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Task keypoints: 10 rope points or 4 cloth corners, (x, y) pairs.
    pub reduced_state: Vec<f64>,
    /// 32x32 RGB image, row-major, shared to keep replay buffers cheap.
    pub image: Arc<Vec<u8>>,
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    /// Dense reward: the raw performance after the step.
    pub reward: f64,
    pub done: bool,
    /// Raw task performance (equals `reward`).
    pub performance: f64,
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub p_start: f64,
    pub p_end: f64,
    pub p_hat: f64,
}

/// Keypoint observation of a bare state: rope keypoints or cloth corners,
/// (x, y) pairs in a fixed order. Free-function form so stored states (for
/// example demonstration tapes) can be converted without an [`Env`].
pub fn reduced_state_of(config: &EnvConfig, state: &EnvState) -> Vec<f64> {
    let sys = &state.particles;
    let mut out = Vec::with_capacity(config.reduced_state_dim());
    if config.task.is_cloth() {
        for idx in cloth_corner_indices(config.cloth_rows, config.cloth_cols) {
            out.push(sys.positions[idx][0]);
            out.push(sys.positions[idx][1]);
        }
    } else {
        for idx in rope_keypoint_indices(sys.n()) {
            out.push(sys.positions[idx][0]);
            out.push(sys.positions[idx][1]);
        }
    }
    out
}

/// Normalized performance `(p - p0) / (p_opt - p0)`: 0 at the start value,
/// 1 at the optimum, negative if the policy made things worse.
pub fn normalized_performance(p: f64, p0: f64, p_opt: f64) -> Result<f64, EnvError> {
    let denom = p_opt - p0;
    if denom.abs() < 1e-12 {
        return Err(EnvError::DegenerateNormalization);
    }
    Ok((p - p0) / denom)
}

/// The simulator.
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: EnvState,
    goal: GoalGeometry,
}

impl Env {
    /// Validate the config and build an environment. The initial episode is
    /// a deterministic placeholder; call `reset` before use.
    pub fn new(config: EnvConfig) -> Result<Env, EnvError> {
        config.validate()?;
        let mut rng = crate::rng::rng_from_seed(0);
        let mut env = Env {
            goal: goal_geometry(&config, config.task, &variant_params(0)),
            state: EnvState {
                particles: ParticleSystem {
                    positions: vec![],
                    velocities: vec![],
                    pinned: vec![],
                    springs: vec![],
                    mass: config.particle_mass,
                    damping: config.damping,
                },
                pickers: vec![],
                step_index: 0,
                variant_id: 0,
            },
            config,
        };
        env.reset(&mut rng)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    pub fn goal(&self) -> &GoalGeometry {
        &self.goal
    }

    pub fn particles(&self) -> &ParticleSystem {
        &self.state.particles
    }

    pub fn pickers(&self) -> &[Picker] {
        &self.state.pickers
    }

    pub fn variant_id(&self) -> u32 {
        self.state.variant_id
    }

    pub fn step_index(&self) -> u32 {
        self.state.step_index
    }

    pub fn done(&self) -> bool {
        self.state.step_index >= self.config.horizon
    }

    /// Draw a fresh episode: variant, object layout, pickers at their home
    /// keypoints. Redraws until the initial defect is large enough.
    pub fn reset(&mut self, rng: &mut Rng) -> Result<Observation, EnvError> {
        for _ in 0..MAX_RESET_ATTEMPTS {
            let variant_id = rng.gen_range(0..self.config.n_variants);
            let variant = variant_params(variant_id);
            let (particles, goal) = tasks::build_object(&self.config, self.config.task, &variant, rng);
            let p0 = tasks::performance(
                self.config.task,
                &particles,
                &goal,
                self.config.cloth_rows,
                self.config.cloth_cols,
            );
            if (self.config.p_opt - p0).abs() < MIN_INITIAL_DEFECT {
                continue;
            }
            let pickers = picker_home_indices(&self.config, self.config.task)
                .into_iter()
                .map(|idx| Picker {
                    pos: particles.positions[idx],
                    grasped: None,
                })
                .collect();
            self.state = EnvState {
                particles,
                pickers,
                step_index: 0,
                variant_id,
            };
            self.goal = goal;
            return Ok(self.observe());
        }
        Err(EnvError::DegenerateReset {
            attempts: MAX_RESET_ATTEMPTS,
        })
    }

    /// Restore a previously saved state (e.g. a demonstration frame).
    pub fn reset_to(&mut self, state: &EnvState) -> Result<Observation, EnvError> {
        let expected_particles = if self.config.task.is_cloth() {
            self.config.cloth_rows * self.config.cloth_cols
        } else {
            self.config.rope_particles
        };
        if state.particles.n() != expected_particles {
            return Err(EnvError::State(format!(
                "expected {expected_particles} particles, got {}",
                state.particles.n()
            )));
        }
        if !state.particles.is_well_formed() {
            return Err(EnvError::State("malformed particle system".into()));
        }
        if state.pickers.len() != self.config.task.n_pickers() {
            return Err(EnvError::State(format!(
                "expected {} pickers, got {}",
                self.config.task.n_pickers(),
                state.pickers.len()
            )));
        }
        for p in &state.pickers {
            if !p.pos[0].is_finite() || !p.pos[1].is_finite() {
                return Err(EnvError::State("non-finite picker position".into()));
            }
            if let Some(idx) = p.grasped {
                if idx >= expected_particles {
                    return Err(EnvError::State(format!("grasped index {idx} out of range")));
                }
            }
        }
        if state.step_index > self.config.horizon {
            return Err(EnvError::State(format!(
                "step_index {} exceeds horizon {}",
                state.step_index, self.config.horizon
            )));
        }
        if state.variant_id >= self.config.n_variants {
            return Err(EnvError::State(format!(
                "variant_id {} out of range",
                state.variant_id
            )));
        }
        self.goal = goal_geometry(&self.config, self.config.task, &variant_params(state.variant_id));
        self.state = state.clone();
        Ok(self.observe())
    }

    /// Snapshot the full state.
    pub fn state(&self) -> EnvState {
        self.state.clone()
    }

    /// Apply one action: per picker `(dx, dy, grasp)`, components clamped to
    /// `[-1, 1]`. Grasp > 0 holds — an empty gripper first captures the
    /// nearest free, unpinned particle within `grasp_radius` at its current
    /// position — and grasp <= 0 releases; the picker then moves by
    /// `(dx, dy) * max_picker_step`, dragging whatever it holds.
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.done() {
            return Err(EnvError::EpisodeDone);
        }
        let dim = self.config.action_dim();
        if action.len() != dim {
            return Err(EnvError::Action(format!(
                "expected {dim} components, got {}",
                action.len()
            )));
        }
        if !action.iter().all(|a| a.is_finite()) {
            return Err(EnvError::Action("non-finite component".into()));
        }

        // Per picker: release/acquire at the current position, then move.
        // A held particle is carried rigidly (its offset to the picker is
        // preserved) and travels gradually across the substeps so a fast
        // picker cannot inject a teleport-sized spring stretch in one go.
        let mut carries: Vec<(usize, [f64; 2], [f64; 2])> = Vec::new();
        let mut held = Vec::new();
        for (pi, chunk) in action.chunks_exact(3).enumerate() {
            let grasp = chunk[2];
            if grasp <= 0.0 {
                self.state.pickers[pi].grasped = None;
            } else if self.state.pickers[pi].grasped.is_none() {
                self.try_grasp(pi);
            }
            let dx = chunk[0].clamp(-1.0, 1.0) * self.config.max_picker_step;
            let dy = chunk[1].clamp(-1.0, 1.0) * self.config.max_picker_step;
            let picker = &mut self.state.pickers[pi];
            let old = picker.pos;
            picker.pos[0] = (picker.pos[0] + dx).clamp(-WORLD_HALF, WORLD_HALF);
            picker.pos[1] = (picker.pos[1] + dy).clamp(-WORLD_HALF, WORLD_HALF);
            if let Some(idx) = picker.grasped {
                let delta = [picker.pos[0] - old[0], picker.pos[1] - old[1]];
                let start = self.state.particles.positions[idx];
                carries.push((idx, start, delta));
                held.push(idx);
            }
        }
        let n_sub = self.config.substeps_per_action;
        for s in 0..n_sub {
            let frac = (s + 1) as f64 / n_sub as f64;
            for &(idx, start, delta) in &carries {
                self.state.particles.positions[idx] =
                    [start[0] + frac * delta[0], start[1] + frac * delta[1]];
                self.state.particles.velocities[idx] = [0.0, 0.0];
            }
            self.state.particles.substep(self.config.dt, &held);
        }
        if !self.state.particles.is_finite() {
            return Err(EnvError::NonFinite {
                step: self.state.step_index,
            });
        }
        self.state.step_index += 1;
        let p = self.performance();
        Ok(StepOutcome {
            observation: self.observe(),
            reward: p,
            done: self.done(),
            performance: p,
        })
    }

    /// Capture the nearest unpinned particle within the grasp radius that no
    /// other picker holds; ties break to the lowest index.
    fn try_grasp(&mut self, pi: usize) {
        let pos = self.state.pickers[pi].pos;
        let taken: Vec<usize> = self
            .state
            .pickers
            .iter()
            .filter_map(|p| p.grasped)
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (idx, p) in self.state.particles.positions.iter().enumerate() {
            if self.state.particles.pinned[idx] || taken.contains(&idx) {
                continue;
            }
            let d2 = (p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2);
            if d2 <= self.config.grasp_radius * self.config.grasp_radius
                && best.map_or(true, |(_, bd2)| d2 < bd2)
            {
                best = Some((idx, d2));
            }
        }
        self.state.pickers[pi].grasped = best.map(|(idx, _)| idx);
    }

    /// Raw task performance of the current state (non-positive; 0 optimal).
    pub fn performance(&self) -> f64 {
        tasks::performance(
            self.config.task,
            &self.state.particles,
            &self.goal,
            self.config.cloth_rows,
            self.config.cloth_cols,
        )
    }

    /// Keypoint observation: rope keypoints or cloth corners, (x, y) pairs.
    pub fn reduced_state(&self) -> Vec<f64> {
        reduced_state_of(&self.config, &self.state)
    }

    /// Render the scene to RGB bytes.
    pub fn render(&self) -> Vec<u8> {
        render_scene(
            &self.state.particles,
            &self.state.pickers,
            self.config.task.is_cloth(),
        )
    }

    /// Assemble the full observation.
    pub fn observe(&self) -> Observation {
        Observation {
            reduced_state: self.reduced_state(),
            image: Arc::new(self.render()),
        }
    }
}
