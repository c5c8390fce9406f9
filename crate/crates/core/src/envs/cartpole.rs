//! Cart-pole swing-up. State `(x, ẋ, θ, θ̇)` with `θ = 0` upright; the pole
//! starts hanging. The cart moves on a bounded rail and stops dead at either
//! end.

use rand::Rng;

use super::{bump, CONTROL_DT, SUBSTEPS};

pub const GRAVITY: f64 = 9.81;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Distance from pivot to the pole's centre of mass.
pub const HALF_LENGTH: f64 = 0.5;
pub const MAX_FORCE: f64 = 10.0;
pub const RAIL: f64 = 2.4;
pub const MAX_SPEED: f64 = 30.0;

pub(super) fn initial_state(rng: &mut impl Rng) -> Vec<f64> {
    vec![
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        std::f64::consts::PI + rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ]
}

pub(super) fn observe(s: &[f64]) -> Vec<f64> {
    vec![s[0], s[2].cos(), s[2].sin(), s[1], s[3]]
}

pub(super) fn advance(s: &mut [f64], action: &[f64]) -> f64 {
    let force = MAX_FORCE * action[0];
    let h = CONTROL_DT / SUBSTEPS as f64;
    let total = CART_MASS + POLE_MASS;
    let (mut x, mut v, mut th, mut w) = (s[0], s[1], s[2], s[3]);
    for _ in 0..SUBSTEPS {
        let (sin, cos) = th.sin_cos();
        let temp = (force + POLE_MASS * HALF_LENGTH * w * w * sin) / total;
        let th_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total));
        let x_acc = temp - POLE_MASS * HALF_LENGTH * th_acc * cos / total;
        v = (v + h * x_acc).clamp(-MAX_SPEED, MAX_SPEED);
        w = (w + h * th_acc).clamp(-MAX_SPEED, MAX_SPEED);
        x += h * v;
        th += h * w;
        if x.abs() > RAIL {
            x = x.clamp(-RAIL, RAIL);
            v = 0.0;
        }
    }
    s[0] = x;
    s[1] = v;
    s[2] = th.rem_euclid(2.0 * std::f64::consts::PI);
    s[3] = w;
    reward(s, action[0])
}

fn reward(s: &[f64], u: f64) -> f64 {
    let upright = 0.5 * (1.0 + s[2].cos());
    let centered = 0.5 * (1.0 + bump(s[0], 0.5));
    let control = 0.8 + 0.2 * (1.0 - u * u);
    let slow = 0.5 * (1.0 + bump(s[3], 5.0));
    upright * centered * control * slow
}

#[cfg(test)]
mod tests {
    use crate::envs::{Env, EnvId, EnvState};

    #[test]
    fn balanced_centered_pole_earns_full_reward() {
        let mut env = Env::new(EnvId::CartpoleSwingup);
        env.restore(EnvState { physical: vec![0.0; 4], step: 0 }).unwrap();
        assert_eq!(env.step(&[0.0]).unwrap().reward, 1.0);
    }

    #[test]
    fn cart_never_leaves_the_rail() {
        let mut env = Env::new(EnvId::CartpoleSwingup);
        env.reset(3);
        for _ in 0..1000 {
            let s = env.step(&[1.0]).unwrap();
            assert!(s.observation[0].abs() <= super::RAIL);
        }
    }
}
