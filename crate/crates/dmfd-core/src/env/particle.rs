//! Particle/spring state and the semi-implicit Euler substep.
//!
//! The integrator is the classic symplectic pairing: velocities update from
//! current forces first, then positions update from the *new* velocities.
//! Forces are linear Hooke springs plus viscous damping `-c * v` (which in
//! the top-down view doubles as table drag). Pinned particles and particles
//! held by a picker never integrate and keep zero velocity.

use serde::{Deserialize, Serialize};

/// One spring connecting particles `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spring {
    pub i: usize,
    pub j: usize,
    pub rest_length: f64,
    pub stiffness: f64,
}

/// Mass-spring state: everything the integrator needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    /// Particles that never move (task constraints, e.g. a weighted corner).
    pub pinned: Vec<bool>,
    pub springs: Vec<Spring>,
    /// Mass per particle (uniform).
    pub mass: f64,
    /// Viscous damping coefficient `c` in the force `-c * v`.
    pub damping: f64,
}

impl ParticleSystem {
    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Structural consistency: matching lengths, spring endpoints in range,
    /// positive mass, finite values.
    pub fn is_well_formed(&self) -> bool {
        let n = self.n();
        self.velocities.len() == n
            && self.pinned.len() == n
            && self.mass > 0.0
            && self.damping >= 0.0
            && self
                .springs
                .iter()
                .all(|s| s.i < n && s.j < n && s.i != s.j && s.rest_length > 0.0 && s.stiffness >= 0.0)
            && self.is_finite()
    }

    pub fn is_finite(&self) -> bool {
        self.positions
            .iter()
            .chain(self.velocities.iter())
            .all(|p| p[0].is_finite() && p[1].is_finite())
    }

    /// One semi-implicit Euler substep of length `dt`. Particles listed in
    /// `held` are position-controlled from outside: they do not integrate
    /// and their velocity is forced to zero, like pinned particles.
    pub fn substep(&mut self, dt: f64, held: &[usize]) {
        let n = self.n();
        let mut forces = vec![[0.0f64; 2]; n];
        for s in &self.springs {
            let (pi, pj) = (self.positions[s.i], self.positions[s.j]);
            let d = [pj[0] - pi[0], pj[1] - pi[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len <= 0.0 {
                // Coincident endpoints: direction undefined, force zero.
                continue;
            }
            // Positive magnitude = stretched = endpoints pulled together.
            let f = s.stiffness * (len - s.rest_length) / len;
            let fx = f * d[0];
            let fy = f * d[1];
            forces[s.i][0] += fx;
            forces[s.i][1] += fy;
            forces[s.j][0] -= fx;
            forces[s.j][1] -= fy;
        }
        let inv_m = 1.0 / self.mass;
        for (i, f) in forces.iter().enumerate() {
            if self.pinned[i] || held.contains(&i) {
                self.velocities[i] = [0.0, 0.0];
                continue;
            }
            let v = &mut self.velocities[i];
            v[0] += (f[0] - self.damping * v[0]) * inv_m * dt;
            v[1] += (f[1] - self.damping * v[1]) * inv_m * dt;
            self.positions[i][0] += v[0] * dt;
            self.positions[i][1] += v[1] * dt;
        }
    }

    /// Total kinetic energy `sum(m/2 * |v|^2)`.
    pub fn kinetic_energy(&self) -> f64 {
        self.velocities
            .iter()
            .map(|v| 0.5 * self.mass * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }

    /// Elastic potential energy `sum(k/2 * (len - rest)^2)`.
    pub fn potential_energy(&self) -> f64 {
        self.springs
            .iter()
            .map(|s| {
                let (pi, pj) = (self.positions[s.i], self.positions[s.j]);
                let d = [pj[0] - pi[0], pj[1] - pi[1]];
                let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
                0.5 * s.stiffness * (len - s.rest_length) * (len - s.rest_length)
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_particle_system(stretch_to: f64) -> ParticleSystem {
        ParticleSystem {
            positions: vec![[0.0, 0.0], [stretch_to, 0.0]],
            velocities: vec![[0.0, 0.0]; 2],
            pinned: vec![false, false],
            springs: vec![Spring {
                i: 0,
                j: 1,
                rest_length: 1.0,
                stiffness: 10.0,
            }],
            mass: 1.0,
            damping: 0.0,
        }
    }

    #[test]
    fn hooke_force_closed_form() {
        // k = 10, rest 1, stretched to 1.5: each endpoint feels |F| = 5
        // directed inward. One substep with dt changes velocity by F/m * dt.
        let mut sys = two_particle_system(1.5);
        let dt = 1e-3;
        sys.substep(dt, &[]);
        let expect = 5.0 * dt; // |F| = 10 * 0.5
        assert!((sys.velocities[0][0] - expect).abs() < 1e-12);
        assert!((sys.velocities[1][0] + expect).abs() < 1e-12);
    }

    #[test]
    fn rest_springs_are_equilibrium() {
        let mut sys = two_particle_system(1.0);
        let before = sys.clone();
        for _ in 0..100 {
            sys.substep(0.005, &[]);
        }
        assert_eq!(sys, before, "rest state must be a bit-exact fixed point");
    }

    #[test]
    fn semi_implicit_order_velocity_then_position() {
        // With gravity-free springs, a particle with initial velocity and no
        // force moves by exactly v * dt (new velocity equals old).
        let mut sys = two_particle_system(1.0);
        sys.velocities[0] = [0.2, -0.1];
        sys.damping = 0.0;
        // Spring at rest: no spring force on first substep.
        let dt = 0.01;
        sys.substep(dt, &[]);
        assert!((sys.positions[0][0] - 0.2 * dt).abs() < 1e-15);
        assert!((sys.positions[0][1] + 0.1 * dt).abs() < 1e-15);
    }

    #[test]
    fn pinned_particles_never_move() {
        let mut sys = two_particle_system(1.5);
        sys.pinned[0] = true;
        for _ in 0..500 {
            sys.substep(0.005, &[]);
        }
        assert_eq!(sys.positions[0], [0.0, 0.0]);
        assert_eq!(sys.velocities[0], [0.0, 0.0]);
    }

    #[test]
    fn held_particles_keep_zero_velocity() {
        let mut sys = two_particle_system(1.5);
        sys.substep(0.005, &[1]);
        assert_eq!(sys.velocities[1], [0.0, 0.0]);
    }

    #[test]
    fn damping_decays_kinetic_energy_of_free_motion() {
        let mut sys = two_particle_system(1.0);
        sys.damping = 0.5;
        sys.velocities = vec![[0.3, 0.0], [0.3, 0.0]]; // rigid drift, no stretch
        let mut last = sys.kinetic_energy();
        let (dt, n) = (0.005, 200);
        for _ in 0..n {
            sys.substep(dt, &[]);
            let ke = sys.kinetic_energy();
            assert!(ke <= last + 1e-12, "kinetic energy grew: {ke} > {last}");
            last = ke;
        }
        // Rigid drift feels no spring force, so each substep scales v by
        // exactly (1 - c dt / m); kinetic energy follows the square of that.
        let expect = (0.5 * 1.0 * 0.09 * 2.0) * (1.0 - 0.5 * dt).powi(2 * n);
        assert!(
            (last / expect - 1.0).abs() < 1e-6,
            "kinetic energy {last} vs closed form {expect}"
        );
    }

    #[test]
    fn coincident_endpoints_produce_no_force() {
        let mut sys = two_particle_system(0.0);
        sys.substep(0.005, &[]);
        assert!(sys.is_finite());
        assert_eq!(sys.velocities[0], [0.0, 0.0]);
    }

    #[test]
    fn well_formedness_checks() {
        let mut sys = two_particle_system(1.0);
        assert!(sys.is_well_formed());
        sys.springs[0].j = 7;
        assert!(!sys.is_well_formed());
    }
}
