//! Pendulum swing-up. State `(θ, ω)` with `θ = 0` upright; the pendulum
//! starts hanging near `θ = π` and torque is too weak to lift it directly.
//!
//! `θ'' = (g/l)·sin θ + τ_max·u / (m·l²)`

use rand::Rng;

use super::{CONTROL_DT, SUBSTEPS};

pub const GRAVITY: f64 = 9.81;
pub const LENGTH: f64 = 1.0;
pub const MASS: f64 = 1.0;
pub const MAX_TORQUE: f64 = 2.0;
pub const MAX_SPEED: f64 = 20.0;

pub(super) fn initial_state(rng: &mut impl Rng) -> Vec<f64> {
    let theta = std::f64::consts::PI + rng.random_range(-0.1..0.1);
    let omega = rng.random_range(-0.05..0.05);
    vec![theta, omega]
}

pub(super) fn observe(s: &[f64]) -> Vec<f64> {
    vec![s[0].sin(), s[0].cos(), s[1]]
}

pub(super) fn advance(s: &mut [f64], action: &[f64]) -> f64 {
    let u = action[0];
    let h = CONTROL_DT / SUBSTEPS as f64;
    let (mut theta, mut omega) = (s[0], s[1]);
    for _ in 0..SUBSTEPS {
        let acc = GRAVITY / LENGTH * theta.sin() + MAX_TORQUE * u / (MASS * LENGTH * LENGTH);
        omega = (omega + h * acc).clamp(-MAX_SPEED, MAX_SPEED);
        theta += h * omega;
    }
    s[0] = theta.rem_euclid(2.0 * std::f64::consts::PI);
    s[1] = omega;
    reward(s[0], u)
}

fn reward(theta: f64, u: f64) -> f64 {
    let upright = 0.5 * (1.0 + theta.cos());
    let control = 1.0 - 0.1 * u * u;
    upright * upright * control
}

/// Total mechanical energy `½·m·l²·ω² + m·g·l·cos θ` of a physical state.
pub fn pendulum_energy(physical: &[f64]) -> f64 {
    0.5 * MASS * LENGTH * LENGTH * physical[1] * physical[1] + MASS * GRAVITY * LENGTH * physical[0].cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Env, EnvId, EnvState};

    #[test]
    fn upright_at_rest_earns_full_reward() {
        let mut env = Env::new(EnvId::PendulumSwingup);
        env.restore(EnvState { physical: vec![0.0, 0.0], step: 0 }).unwrap();
        let s = env.step(&[0.0]).unwrap();
        assert_eq!(s.reward, 1.0);
    }

    #[test]
    fn hanging_rest_stays_put_with_near_zero_reward() {
        let mut env = Env::new(EnvId::PendulumSwingup);
        env.restore(EnvState { physical: vec![std::f64::consts::PI, 0.0], step: 0 }).unwrap();
        let s = env.step(&[0.0]).unwrap();
        assert!(s.reward < 1e-20);
        assert!(s.observation[2].abs() < 1e-12);
        assert!((s.observation[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn unactuated_energy_is_conserved() {
        let mut env = Env::new(EnvId::PendulumSwingup);
        env.restore(EnvState { physical: vec![2.0, 0.5], step: 0 }).unwrap();
        let e0 = pendulum_energy(&env.state().physical);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            env.step(&[0.0]).unwrap();
            worst = worst.max((pendulum_energy(&env.state().physical) - e0).abs() / e0.abs());
        }
        assert!(worst < 1e-3, "relative energy drift {worst}");
    }
}
