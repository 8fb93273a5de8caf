//! Task geometry: initial object layouts, per-variant perturbations, fold
//! targets, and the per-task performance measure.
//!
//! Each reset draws a `variant_id` in `[0, n_variants)`; every physical
//! perturbation (stiffness, object scale, cloth placement) is a pure
//! function of that id, so a saved state plus its variant id is enough to
//! reconstruct the goal geometry exactly.

use serde::{Deserialize, Serialize};

use super::particle::{ParticleSystem, Spring};
use super::EnvConfig;
use crate::rng::{splitmix64, Rng};
use rand::Rng as _;

/// The four manipulation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Straighten a crumpled rope to a target end-to-end length.
    StraightenRope,
    /// Fold a flat cloth in half: left corners onto the right corners.
    ClothFold,
    /// Fold a cloth along the diagonal with the far corner pinned.
    ClothFoldDiagPinned,
    /// Same diagonal fold without the pin.
    ClothFoldDiagUnpinned,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::StraightenRope => "straighten_rope",
            Task::ClothFold => "cloth_fold",
            Task::ClothFoldDiagPinned => "cloth_fold_diag_pinned",
            Task::ClothFoldDiagUnpinned => "cloth_fold_diag_unpinned",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        match name {
            "straighten_rope" => Some(Task::StraightenRope),
            "cloth_fold" => Some(Task::ClothFold),
            "cloth_fold_diag_pinned" => Some(Task::ClothFoldDiagPinned),
            "cloth_fold_diag_unpinned" => Some(Task::ClothFoldDiagUnpinned),
            _ => None,
        }
    }

    pub const ALL: [Task; 4] = [
        Task::StraightenRope,
        Task::ClothFold,
        Task::ClothFoldDiagPinned,
        Task::ClothFoldDiagUnpinned,
    ];

    /// Number of pickers the task uses.
    pub fn n_pickers(self) -> usize {
        match self {
            Task::StraightenRope => 1,
            Task::ClothFold => 2,
            Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => 1,
        }
    }

    pub fn is_cloth(self) -> bool {
        !matches!(self, Task::StraightenRope)
    }
}

/// Deterministic physical perturbation for one variant id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantParams {
    /// Multiplies spring stiffness, in `[0.7, 1.3]`.
    pub stiffness_factor: f64,
    /// Multiplies object scale (spacing and rope target length), `[0.9, 1.1]`.
    pub scale_factor: f64,
    /// Cloth center offset from the origin; ropes ignore it.
    pub offset: [f64; 2],
}

/// Map a 64-bit hash to a uniform f64 in [0, 1).
fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Pure function of the variant id: same id, same perturbation, forever.
pub fn variant_params(variant_id: u32) -> VariantParams {
    let base = 0x5EED_u64 ^ ((variant_id as u64) << 16);
    let u1 = unit_f64(splitmix64(base.wrapping_add(1)));
    let u2 = unit_f64(splitmix64(base.wrapping_add(2)));
    let u3 = unit_f64(splitmix64(base.wrapping_add(3)));
    let u4 = unit_f64(splitmix64(base.wrapping_add(4)));
    VariantParams {
        stiffness_factor: 0.7 + 0.6 * u1,
        scale_factor: 0.9 + 0.2 * u2,
        offset: [0.05 * (2.0 * u3 - 1.0), 0.05 * (2.0 * u4 - 1.0)],
    }
}

/// Goal geometry frozen at reset time. Targets are reflections of the reset
/// rectangle, so they stay put while the cloth moves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalGeometry {
    /// Rope: target end-to-end length (scaled by the variant).
    pub rope_target_length: f64,
    /// Cloth: reset-time corner positions `[bl, br, tl, tr]`.
    pub corners0: [[f64; 2]; 4],
}

/// Grid index of the four cloth corners, row 0 at the bottom.
/// Order: bottom-left, bottom-right, top-left, top-right.
pub fn cloth_corner_indices(rows: usize, cols: usize) -> [usize; 4] {
    [
        0,
        cols - 1,
        (rows - 1) * cols,
        (rows - 1) * cols + (cols - 1),
    ]
}

/// Rope keypoint indices: 10 indices evenly spread over the chain
/// (first and last always included).
pub fn rope_keypoint_indices(n: usize) -> [usize; 10] {
    let mut out = [0usize; 10];
    for (j, slot) in out.iter_mut().enumerate() {
        *slot = ((j as f64) * ((n - 1) as f64) / 9.0).round() as usize;
    }
    out
}

/// Goal geometry is a pure function of config + variant, so it can be
/// recomputed when restoring a saved state.
pub fn goal_geometry(config: &EnvConfig, task: Task, variant: &VariantParams) -> GoalGeometry {
    match task {
        Task::StraightenRope => GoalGeometry {
            rope_target_length: config.rope_target_length * variant.scale_factor,
            corners0: [[0.0, 0.0]; 4],
        },
        Task::ClothFold | Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => {
            let (rows, cols) = (config.cloth_rows, config.cloth_cols);
            let spacing = config.cloth_spacing * variant.scale_factor;
            let x0 = variant.offset[0] - 0.5 * ((cols - 1) as f64) * spacing;
            let y0 = variant.offset[1] - 0.5 * ((rows - 1) as f64) * spacing;
            let w = ((cols - 1) as f64) * spacing;
            let h = ((rows - 1) as f64) * spacing;
            GoalGeometry {
                rope_target_length: 0.0,
                corners0: [
                    [x0, y0],
                    [x0 + w, y0],
                    [x0, y0 + h],
                    [x0 + w, y0 + h],
                ],
            }
        }
    }
}

/// Build the initial particle system for `task` under `variant`, drawing any
/// residual randomness (rope crumple) from `rng`.
pub fn build_object(
    config: &EnvConfig,
    task: Task,
    variant: &VariantParams,
    rng: &mut Rng,
) -> (ParticleSystem, GoalGeometry) {
    match task {
        Task::StraightenRope => build_rope(config, variant, rng),
        Task::ClothFold | Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => {
            build_cloth(config, task, variant)
        }
    }
}

/// The static part of a task's particle system (springs, pins, mass) with
/// zeroed positions and velocities. Everything here is a pure function of
/// config + variant, which lets saved states omit it.
pub fn object_skeleton(config: &EnvConfig, task: Task, variant: &VariantParams) -> ParticleSystem {
    match task {
        Task::StraightenRope => {
            let n = config.rope_particles;
            let spacing = config.rope_spacing * variant.scale_factor;
            let springs = (0..n - 1)
                .map(|i| Spring {
                    i,
                    j: i + 1,
                    rest_length: spacing,
                    stiffness: config.stiffness * variant.stiffness_factor,
                })
                .collect();
            ParticleSystem {
                positions: vec![[0.0, 0.0]; n],
                velocities: vec![[0.0, 0.0]; n],
                pinned: vec![false; n],
                springs,
                mass: config.particle_mass,
                damping: config.damping,
            }
        }
        Task::ClothFold | Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => {
            let (rows, cols) = (config.cloth_rows, config.cloth_cols);
            let spacing = config.cloth_spacing * variant.scale_factor;
            let k = config.stiffness * variant.stiffness_factor;
            let mut springs = Vec::new();
            for r in 0..rows {
                for c in 0..cols {
                    let idx = r * cols + c;
                    if c + 1 < cols {
                        springs.push(Spring { i: idx, j: idx + 1, rest_length: spacing, stiffness: k });
                    }
                    if r + 1 < rows {
                        springs.push(Spring { i: idx, j: idx + cols, rest_length: spacing, stiffness: k });
                    }
                }
            }
            let mut pinned = vec![false; rows * cols];
            if task == Task::ClothFoldDiagPinned {
                pinned[cloth_corner_indices(rows, cols)[3]] = true;
            }
            ParticleSystem {
                positions: vec![[0.0, 0.0]; rows * cols],
                velocities: vec![[0.0, 0.0]; rows * cols],
                pinned,
                springs,
                mass: config.particle_mass,
                damping: config.damping,
            }
        }
    }
}

/// Random-walk crumple: segments of the rest length with heading increments
/// in `[-1.2, 1.2]` rad, reflected back when the walk would leave the
/// `[-0.3, 0.3]` square.
fn build_rope(
    config: &EnvConfig,
    variant: &VariantParams,
    rng: &mut Rng,
) -> (ParticleSystem, GoalGeometry) {
    let n = config.rope_particles;
    let spacing = config.rope_spacing * variant.scale_factor;
    let bound = 0.3;
    let start = [
        rng.gen_range(-0.15..0.15),
        rng.gen_range(-0.15..0.15),
    ];
    let mut heading: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut positions = Vec::with_capacity(n);
    positions.push(start);
    for _ in 1..n {
        heading += rng.gen_range(-1.2..1.2);
        let prev = *positions.last().unwrap();
        let mut next = [
            prev[0] + spacing * heading.cos(),
            prev[1] + spacing * heading.sin(),
        ];
        if next[0].abs() > bound || next[1].abs() > bound {
            // Turn back toward the center and retake the step.
            heading = (-prev[1]).atan2(-prev[0]);
            next = [
                prev[0] + spacing * heading.cos(),
                prev[1] + spacing * heading.sin(),
            ];
        }
        positions.push(next);
    }
    let mut sys = object_skeleton(config, Task::StraightenRope, variant);
    sys.positions = positions;
    (sys, goal_geometry(config, Task::StraightenRope, variant))
}

/// Flat `rows x cols` grid with structural springs only (no shear), so a
/// crease can fold flat without storing elastic energy.
fn build_cloth(config: &EnvConfig, task: Task, variant: &VariantParams) -> (ParticleSystem, GoalGeometry) {
    let (rows, cols) = (config.cloth_rows, config.cloth_cols);
    let spacing = config.cloth_spacing * variant.scale_factor;
    let x0 = variant.offset[0] - 0.5 * ((cols - 1) as f64) * spacing;
    let y0 = variant.offset[1] - 0.5 * ((rows - 1) as f64) * spacing;
    let mut sys = object_skeleton(config, task, variant);
    for r in 0..rows {
        for c in 0..cols {
            sys.positions[r * cols + c] = [x0 + (c as f64) * spacing, y0 + (r as f64) * spacing];
        }
    }
    (sys, goal_geometry(config, task, variant))
}

/// Particle indices the pickers start on (and that experts grab first):
/// rope end, fold-side cloth corners.
pub fn picker_home_indices(config: &EnvConfig, task: Task) -> Vec<usize> {
    match task {
        Task::StraightenRope => vec![0],
        Task::ClothFold => {
            let c = cloth_corner_indices(config.cloth_rows, config.cloth_cols);
            vec![c[2], c[0]] // top-left, bottom-left
        }
        Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => {
            let c = cloth_corner_indices(config.cloth_rows, config.cloth_cols);
            vec![c[0]] // bottom-left, folds onto the top-right corner
        }
    }
}

/// Raw task performance `p <= 0`, with 0 the optimum.
pub fn performance(task: Task, sys: &ParticleSystem, goal: &GoalGeometry, rows: usize, cols: usize) -> f64 {
    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }
    match task {
        Task::StraightenRope => {
            let a = sys.positions[0];
            let b = sys.positions[sys.n() - 1];
            -((dist(a, b) - goal.rope_target_length).abs())
        }
        Task::ClothFold => {
            let c = cloth_corner_indices(rows, cols);
            let tl = sys.positions[c[2]];
            let bl = sys.positions[c[0]];
            let tr0 = goal.corners0[3];
            let br0 = goal.corners0[1];
            -0.5 * (dist(tl, tr0) + dist(bl, br0))
        }
        Task::ClothFoldDiagPinned | Task::ClothFoldDiagUnpinned => {
            let c = cloth_corner_indices(rows, cols);
            let bl = sys.positions[c[0]];
            let tr0 = goal.corners0[3];
            -dist(bl, tr0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn cfg() -> EnvConfig {
        EnvConfig::for_task(Task::StraightenRope)
    }

    #[test]
    fn variant_params_are_deterministic_and_in_range() {
        for id in 0..20 {
            let a = variant_params(id);
            let b = variant_params(id);
            assert_eq!(a, b);
            assert!((0.7..=1.3).contains(&a.stiffness_factor));
            assert!((0.9..=1.1).contains(&a.scale_factor));
            assert!(a.offset[0].abs() <= 0.05 && a.offset[1].abs() <= 0.05);
        }
        assert_ne!(variant_params(0), variant_params(1));
    }

    #[test]
    fn rope_build_respects_spacing_and_bounds() {
        let config = cfg();
        let v = variant_params(3);
        let mut rng = rng_from_seed(42);
        let (sys, goal) = build_rope(&config, &v, &mut rng);
        assert_eq!(sys.n(), config.rope_particles);
        assert_eq!(sys.springs.len(), config.rope_particles - 1);
        let spacing = config.rope_spacing * v.scale_factor;
        for w in sys.positions.windows(2) {
            let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
            assert!((d - spacing).abs() < 1e-12, "segment length {d} vs {spacing}");
        }
        for p in &sys.positions {
            assert!(p[0].abs() <= 0.35 && p[1].abs() <= 0.35);
        }
        assert!((goal.rope_target_length - config.rope_target_length * v.scale_factor).abs() < 1e-15);
    }

    #[test]
    fn cloth_build_is_rectangular_with_structural_springs() {
        let mut config = EnvConfig::for_task(Task::ClothFold);
        config.cloth_rows = 5;
        config.cloth_cols = 5;
        let v = variant_params(7);
        let (sys, goal) = build_cloth(&config, Task::ClothFold, &v);
        assert_eq!(sys.n(), 25);
        // 2 * R * (C-1) structural springs for a square grid.
        assert_eq!(sys.springs.len(), 5 * 4 + 5 * 4);
        // Corner rectangle matches the goal snapshot.
        let c = cloth_corner_indices(5, 5);
        for (k, &idx) in c.iter().enumerate() {
            assert_eq!(sys.positions[idx], goal.corners0[k]);
        }
        // Width/height both (cols-1) * spacing.
        let w = goal.corners0[1][0] - goal.corners0[0][0];
        let h = goal.corners0[2][1] - goal.corners0[0][1];
        let expect = 4.0 * config.cloth_spacing * v.scale_factor;
        assert!((w - expect).abs() < 1e-12);
        assert!((h - expect).abs() < 1e-12);
    }

    #[test]
    fn diag_pinned_variant_pins_exactly_the_target_corner() {
        let config = EnvConfig::for_task(Task::ClothFoldDiagPinned);
        let v = variant_params(0);
        let (sys, _) = build_cloth(&config, Task::ClothFoldDiagPinned, &v);
        let c = cloth_corner_indices(config.cloth_rows, config.cloth_cols);
        for (i, &p) in sys.pinned.iter().enumerate() {
            assert_eq!(p, i == c[3]);
        }
        let (sys2, _) = build_cloth(&config, Task::ClothFoldDiagUnpinned, &v);
        assert!(sys2.pinned.iter().all(|&p| !p));
    }

    #[test]
    fn rope_performance_zero_when_straightened_to_target() {
        let config = cfg();
        let v = variant_params(0);
        let mut rng = rng_from_seed(1);
        let (mut sys, goal) = build_rope(&config, &v, &mut rng);
        // Lay the rope on a straight line with the exact target end distance.
        let n = sys.n();
        for (i, p) in sys.positions.iter_mut().enumerate() {
            *p = [goal.rope_target_length * (i as f64) / ((n - 1) as f64), 0.0];
        }
        let p = performance(Task::StraightenRope, &sys, &goal, 0, 0);
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn cloth_fold_performance_zero_when_left_meets_right() {
        let config = EnvConfig::for_task(Task::ClothFold);
        let v = variant_params(2);
        let (mut sys, goal) = build_cloth(&config, Task::ClothFold, &v);
        let c = cloth_corner_indices(config.cloth_rows, config.cloth_cols);
        let p0 = performance(Task::ClothFold, &sys, &goal, config.cloth_rows, config.cloth_cols);
        let width = goal.corners0[1][0] - goal.corners0[0][0];
        assert!((p0 + width).abs() < 1e-12, "initial defect is the cloth width");
        sys.positions[c[2]] = goal.corners0[3];
        sys.positions[c[0]] = goal.corners0[1];
        let p = performance(Task::ClothFold, &sys, &goal, config.cloth_rows, config.cloth_cols);
        assert!(p.abs() < 1e-12);
    }

    #[test]
    fn diag_performance_is_corner_distance() {
        let config = EnvConfig::for_task(Task::ClothFoldDiagUnpinned);
        let v = variant_params(4);
        let (sys, goal) = build_cloth(&config, Task::ClothFoldDiagUnpinned, &v);
        let p0 = performance(
            Task::ClothFoldDiagUnpinned,
            &sys,
            &goal,
            config.cloth_rows,
            config.cloth_cols,
        );
        let diag = ((goal.corners0[3][0] - goal.corners0[0][0]).powi(2)
            + (goal.corners0[3][1] - goal.corners0[0][1]).powi(2))
        .sqrt();
        assert!((p0 + diag).abs() < 1e-12);
    }

    #[test]
    fn keypoint_indices_cover_endpoints() {
        assert_eq!(rope_keypoint_indices(10), [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        assert_eq!(
            rope_keypoint_indices(19),
            [0, 2, 4, 6, 8, 10, 12, 14, 16, 18]
        );
    }

    #[test]
    fn task_names_round_trip() {
        for t in Task::ALL {
            assert_eq!(Task::from_name(t.name()), Some(t));
        }
        assert_eq!(Task::from_name("nope"), None);
    }
}
