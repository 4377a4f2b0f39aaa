//! Slide Puck: a puck is launched across a table and glides under Coulomb
//! friction, constant wind force, table tilt, and linear damping until it
//! (nearly) stops or the time cap is reached.
//!
//! The state is the puck (x, y); the action is (push angle, launch speed).

use crate::error::CoreError;

pub const GRAVITY: f64 = 9.81;
pub const DT: f64 = 1e-3;
pub const STOP_SPEED: f64 = 1e-3;
pub const MAX_TIME: f64 = 10.0;
pub const MAX_SPEED: f64 = 3.0;

/// Hidden factors, in the family's declared order.
#[derive(Clone, Copy, Debug)]
pub struct SlidePuckParams {
    pub puck_mass: f64,
    pub floor_friction: f64,
    pub puck_friction: f64,
    pub wind_x: f64,
    pub wind_y: f64,
    pub table_tilt_x: f64,
    pub table_tilt_y: f64,
    pub damping: f64,
}

impl SlidePuckParams {
    fn mu_eff(&self) -> f64 {
        self.floor_friction + self.puck_friction
    }

    /// Constant (velocity-independent) part of the acceleration.
    fn external_accel(&self) -> [f64; 2] {
        [
            self.wind_x / self.puck_mass + GRAVITY * self.table_tilt_x.to_radians().sin(),
            self.wind_y / self.puck_mass + GRAVITY * self.table_tilt_y.to_radians().sin(),
        ]
    }

    /// Coulomb friction regularization scale. The hard sign flip at v = 0 is
    /// smoothed over a band tied to the external force so that a reversal
    /// driven by strong wind stays integrable at dt = 1e-3; with no wind or
    /// tilt the band sits at the stop threshold and leaves the constant
    /// -mu*g deceleration intact above it.
    fn friction_scale(&self) -> f64 {
        let [ax, ay] = self.external_accel();
        let a_ext = (ax * ax + ay * ay).sqrt();
        (3.0 * DT * a_ext).max(STOP_SPEED)
    }

    /// Acceleration at velocity v: regularized Coulomb friction, wind, tilt,
    /// linear damping.
    fn accel(&self, v: [f64; 2]) -> [f64; 2] {
        let mut a = self.external_accel();
        let eps = self.friction_scale();
        let speed_sq = v[0] * v[0] + v[1] * v[1];
        let fric = self.mu_eff() * GRAVITY / (speed_sq + eps * eps).sqrt();
        a[0] -= fric * v[0];
        a[1] -= fric * v[1];
        a[0] -= self.damping / self.puck_mass * v[0];
        a[1] -= self.damping / self.puck_mass * v[1];
        a
    }
}

pub fn validate_action(angle: f64, speed: f64) -> Result<(), CoreError> {
    if !(angle.is_finite() && (-std::f64::consts::PI..=std::f64::consts::PI).contains(&angle)) {
        return Err(CoreError::ActionOutOfRange {
            name: "push_angle",
            value: angle,
            low: -std::f64::consts::PI,
            high: std::f64::consts::PI,
        });
    }
    if !(speed.is_finite() && speed > 0.0 && speed <= MAX_SPEED) {
        return Err(CoreError::ActionOutOfRange {
            name: "speed",
            value: speed,
            low: 0.0,
            high: MAX_SPEED,
        });
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct PuckState {
    pos: [f64; 2],
    vel: [f64; 2],
}

fn rk4_step(p: &SlidePuckParams, s: PuckState, dt: f64) -> PuckState {
    let f = |st: PuckState| -> ([f64; 2], [f64; 2]) { (st.vel, p.accel(st.vel)) };
    let (k1p, k1v) = f(s);
    let (k2p, k2v) = f(PuckState {
        pos: [s.pos[0] + 0.5 * dt * k1p[0], s.pos[1] + 0.5 * dt * k1p[1]],
        vel: [s.vel[0] + 0.5 * dt * k1v[0], s.vel[1] + 0.5 * dt * k1v[1]],
    });
    let (k3p, k3v) = f(PuckState {
        pos: [s.pos[0] + 0.5 * dt * k2p[0], s.pos[1] + 0.5 * dt * k2p[1]],
        vel: [s.vel[0] + 0.5 * dt * k2v[0], s.vel[1] + 0.5 * dt * k2v[1]],
    });
    let (k4p, k4v) = f(PuckState {
        pos: [s.pos[0] + dt * k3p[0], s.pos[1] + dt * k3p[1]],
        vel: [s.vel[0] + dt * k3v[0], s.vel[1] + dt * k3v[1]],
    });
    let sixth = dt / 6.0;
    PuckState {
        pos: [
            s.pos[0] + sixth * (k1p[0] + 2.0 * k2p[0] + 2.0 * k3p[0] + k4p[0]),
            s.pos[1] + sixth * (k1p[1] + 2.0 * k2p[1] + 2.0 * k3p[1] + k4p[1]),
        ],
        vel: [
            s.vel[0] + sixth * (k1v[0] + 2.0 * k2v[0] + 2.0 * k3v[0] + k4v[0]),
            s.vel[1] + sixth * (k1v[1] + 2.0 * k2v[1] + 2.0 * k3v[1] + k4v[1]),
        ],
    }
}

fn speed_of(s: &PuckState) -> f64 {
    (s.vel[0] * s.vel[0] + s.vel[1] * s.vel[1]).sqrt()
}

/// End position of a slide. RK4 at dt = 1e-3 s; the stop rule
/// (speed < 1e-3 m/s, or t > 10 s) is checked on that grid.
pub fn step(
    params: &SlidePuckParams,
    start: [f64; 2],
    angle: f64,
    speed: f64,
) -> Result<[f64; 2], CoreError> {
    validate_action(angle, speed)?;
    let mut s = PuckState {
        pos: start,
        vel: [speed * angle.cos(), speed * angle.sin()],
    };
    // integer step count: fp accumulation of t would shift the time cap
    let max_steps = (MAX_TIME / DT).round() as usize;
    let mut steps = 0usize;
    while speed_of(&s) >= STOP_SPEED && steps < max_steps {
        s = rk4_step(params, s, DT);
        steps += 1;
    }
    Ok(s.pos)
}

/// Independent fine-step explicit-Euler integration of the same force law,
/// written out in full so it does not share the RK4 path. The stop rule is
/// applied on the same 1e-3 s grid the environment uses, so both routes
/// answer the same question about the same trajectory.
pub fn euler_oracle(
    params: &SlidePuckParams,
    start: [f64; 2],
    angle: f64,
    speed: f64,
    dt: f64,
) -> [f64; 2] {
    let mut px = start[0];
    let mut py = start[1];
    let mut vx = speed * angle.cos();
    let mut vy = speed * angle.sin();
    let mu = params.floor_friction + params.puck_friction;
    let wind_ax = params.wind_x / params.puck_mass
        + GRAVITY * params.table_tilt_x.to_radians().sin();
    let wind_ay = params.wind_y / params.puck_mass
        + GRAVITY * params.table_tilt_y.to_radians().sin();
    let eps = (3.0 * DT * (wind_ax * wind_ax + wind_ay * wind_ay).sqrt()).max(STOP_SPEED);
    let check_every = ((DT / dt).round() as usize).max(1);
    let max_steps = (MAX_TIME / dt).round() as usize;
    let mut step_count = 0usize;
    loop {
        if step_count.is_multiple_of(check_every) {
            let sp = (vx * vx + vy * vy).sqrt();
            if sp < STOP_SPEED || step_count >= max_steps {
                break;
            }
        }
        let denom = (vx * vx + vy * vy + eps * eps).sqrt();
        let ax = wind_ax - mu * GRAVITY * vx / denom - params.damping / params.puck_mass * vx;
        let ay = wind_ay - mu * GRAVITY * vy / denom - params.damping / params.puck_mass * vy;
        px += dt * vx;
        py += dt * vy;
        vx += dt * ax;
        vy += dt * ay;
        step_count += 1;
    }
    [px, py]
}
