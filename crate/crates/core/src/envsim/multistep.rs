//! Multi-step surrogate family: a 2D point mass with hidden mass, drag,
//! actuator gain, and a constant bias force. Stands in for trajectory
//! environments so the relabeling procedure and large-context training
//! regime can be exercised without a contact simulator.

use crate::error::CoreError;
use crate::rng::Prng;

pub const DT: f64 = 0.05;
pub const HORIZON: usize = 50;

#[derive(Clone, Copy, Debug)]
pub struct MultiStepParams {
    pub mass: f64,
    pub drag: f64,
    pub gain: f64,
    pub bias_x: f64,
    pub bias_y: f64,
}

/// Semi-implicit Euler update of ((px, py, vx, vy), (ax, ay)).
pub fn step(params: &MultiStepParams, state: [f64; 4], action: [f64; 2]) -> Result<[f64; 4], CoreError> {
    for (i, &a) in action.iter().enumerate() {
        if !(a.is_finite() && a.abs() <= 1.0) {
            return Err(CoreError::ActionOutOfRange {
                name: if i == 0 { "force_x" } else { "force_y" },
                value: a,
                low: -1.0,
                high: 1.0,
            });
        }
    }
    let [px, py, vx, vy] = state;
    let ax = (params.gain * action[0] - params.drag * vx + params.bias_x) / params.mass;
    let ay = (params.gain * action[1] - params.drag * vy + params.bias_y) / params.mass;
    let vx2 = vx + DT * ax;
    let vy2 = vy + DT * ay;
    Ok([px + DT * vx2, py + DT * vy2, vx2, vy2])
}

/// A base rollout of (state, action) pairs under the given params, driven by
/// first-order-filtered uniform noise so the visited states are diverse but
/// not a pure random walk.
pub fn rollout(params: &MultiStepParams, horizon: usize, rng: &mut Prng) -> Vec<([f64; 4], [f64; 2])> {
    let mut state = [
        rng.uniform(-1.0, 1.0),
        rng.uniform(-1.0, 1.0),
        rng.uniform(-0.5, 0.5),
        rng.uniform(-0.5, 0.5),
    ];
    let mut action = [0.0f64; 2];
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        for a in &mut action {
            *a = (0.8 * *a + 0.4 * rng.uniform(-1.0, 1.0)).clamp(-1.0, 1.0);
        }
        out.push((state, action));
        state = step(params, state, action).expect("filtered actions stay in bounds");
    }
    out
}

/// Nominal factors used to generate base rollouts before relabeling.
pub fn nominal_params() -> MultiStepParams {
    MultiStepParams {
        mass: 1.0,
        drag: 0.5,
        gain: 1.0,
        bias_x: 0.0,
        bias_y: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_with_no_input_stays_put() {
        let p = MultiStepParams {
            mass: 1.0,
            drag: 0.3,
            gain: 1.0,
            bias_x: 0.0,
            bias_y: 0.0,
        };
        let s = step(&p, [0.4, -0.1, 0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(s, [0.4, -0.1, 0.0, 0.0]);
    }

    #[test]
    fn unit_force_direct_substitution() {
        // mass 1, gain 1, no drag/bias: vel' = (0.05, 0)
        let p = MultiStepParams {
            mass: 1.0,
            drag: 0.0,
            gain: 1.0,
            bias_x: 0.0,
            bias_y: 0.0,
        };
        let s = step(&p, [0.0, 0.0, 0.0, 0.0], [1.0, 0.0]).unwrap();
        assert!((s[2] - 0.05).abs() < 1e-15);
        assert_eq!(s[3], 0.0);
        assert!((s[0] - 0.05 * 0.05).abs() < 1e-15);
    }

    #[test]
    fn reaches_terminal_speed() {
        // fixed point of the velocity update: v = gain*|a|/drag
        let p = MultiStepParams {
            mass: 1.7,
            drag: 0.4,
            gain: 1.2,
            bias_x: 0.0,
            bias_y: 0.0,
        };
        let mut s = [0.0, 0.0, 0.0, 0.0];
        for _ in 0..4000 {
            s = step(&p, s, [0.8, 0.0]).unwrap();
        }
        let expected = p.gain * 0.8 / p.drag;
        assert!(
            (s[2] - expected).abs() / expected < 0.01,
            "vx {} expected {}",
            s[2],
            expected
        );
    }

    #[test]
    fn oversized_action_rejected() {
        let p = nominal_params();
        assert!(step(&p, [0.0; 4], [1.4, 0.0]).is_err());
    }

    #[test]
    fn rollout_actions_stay_bounded() {
        let mut rng = Prng::seed_from(4);
        let path = rollout(&nominal_params(), HORIZON, &mut rng);
        assert_eq!(path.len(), HORIZON);
        for (_, a) in &path {
            assert!(a[0].abs() <= 1.0 && a[1].abs() <= 1.0);
        }
    }
}
