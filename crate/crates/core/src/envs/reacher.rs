//! Point-mass reacher: a damped planar mass pushed by a 2-D force toward a
//! target drawn at reset. State `(px, py, vx, vy, tx, ty)`.

use rand::Rng;

use super::{CONTROL_DT, SUBSTEPS};

pub const ARENA: f64 = 0.3;
pub const MASS: f64 = 0.3;
pub const MAX_FORCE: f64 = 1.0;
pub const DAMPING: f64 = 1.0;
pub const TARGET_SCALE: f64 = 0.05;

pub(super) fn initial_state(rng: &mut impl Rng) -> Vec<f64> {
    let mut draw = || rng.random_range(-0.8 * ARENA..0.8 * ARENA);
    let (px, py, tx, ty) = (draw(), draw(), draw(), draw());
    vec![px, py, 0.0, 0.0, tx, ty]
}

pub(super) fn observe(s: &[f64]) -> Vec<f64> {
    s.to_vec()
}

pub(super) fn advance(s: &mut [f64], action: &[f64]) -> f64 {
    let h = CONTROL_DT / SUBSTEPS as f64;
    for _ in 0..SUBSTEPS {
        for axis in 0..2 {
            let acc = (MAX_FORCE * action[axis] - DAMPING * s[2 + axis]) / MASS;
            s[2 + axis] += h * acc;
            s[axis] += h * s[2 + axis];
            if s[axis].abs() > ARENA {
                s[axis] = s[axis].clamp(-ARENA, ARENA);
                s[2 + axis] = 0.0;
            }
        }
    }
    let d2 = (s[0] - s[4]).powi(2) + (s[1] - s[5]).powi(2);
    let near = (-d2 / (TARGET_SCALE * TARGET_SCALE)).exp();
    let effort = 0.5 * (action[0] * action[0] + action[1] * action[1]);
    near * (0.95 + 0.05 * (1.0 - effort))
}
