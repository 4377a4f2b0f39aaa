//! Push Box: a pusher strikes a box whose off-center top mass skews pushes.
//! Quasi-static analytic stand-in: travel distance scales with push speed
//! against mass and floor friction, the heading and the box rotation are both
//! driven by the center-of-mass offset.
//!
//! State is (x, y, sin theta, cos theta); the action is (contact point,
//! push angle, speed).

use crate::error::CoreError;

/// Travel per unit of speed/(mass*friction), m*kg/(m/s).
pub const K_DISTANCE: f64 = 0.05;
/// Heading deviation per meter of COM offset, rad/m.
pub const K_HEADING: f64 = 2.0;
/// Box rotation per (COM offset x travel), rad/m^2.
pub const K_ROTATION: f64 = 3.0;
pub const MAX_SPEED: f64 = 3.0;
pub const MAX_CONTACT: f64 = 0.5;

#[derive(Clone, Copy, Debug)]
pub struct PushBoxParams {
    pub com_offset: f64,
    pub box_mass: f64,
    pub box_friction: f64,
    pub floor_friction: f64,
    pub pusher_friction: f64,
}

/// Box pose with the wrap-safe angle encoding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PushBoxState {
    pub x: f64,
    pub y: f64,
    pub sin_theta: f64,
    pub cos_theta: f64,
}

impl PushBoxState {
    pub fn from_angle(x: f64, y: f64, theta: f64) -> Self {
        PushBoxState {
            x,
            y,
            sin_theta: theta.sin(),
            cos_theta: theta.cos(),
        }
    }

    pub fn theta(&self) -> f64 {
        self.sin_theta.atan2(self.cos_theta)
    }

    pub fn trig_identity_error(&self) -> f64 {
        (self.sin_theta * self.sin_theta + self.cos_theta * self.cos_theta - 1.0).abs()
    }
}

fn check_range(name: &'static str, value: f64, low: f64, high: f64) -> Result<(), CoreError> {
    if value.is_finite() && (low..=high).contains(&value) {
        Ok(())
    } else {
        Err(CoreError::ActionOutOfRange {
            name,
            value,
            low,
            high,
        })
    }
}

/// One quasi-static push.
///
/// The contact point is part of the action space but does not enter the
/// displacement model; like the pusher friction factor it is an
/// uninformative dimension the learner has to ignore.
pub fn step(
    params: &PushBoxParams,
    start: &PushBoxState,
    contact: f64,
    angle: f64,
    speed: f64,
) -> Result<PushBoxState, CoreError> {
    check_range("contact_point", contact, -MAX_CONTACT, MAX_CONTACT)?;
    check_range("push_angle", angle, -std::f64::consts::PI, std::f64::consts::PI)?;
    if !(speed.is_finite() && speed > 0.0 && speed <= MAX_SPEED) {
        return Err(CoreError::ActionOutOfRange {
            name: "speed",
            value: speed,
            low: 0.0,
            high: MAX_SPEED,
        });
    }

    let mu_floor_eff = 0.5 * (params.box_friction + params.floor_friction);
    let travel = K_DISTANCE * speed / (params.box_mass * mu_floor_eff);
    let heading = angle + K_HEADING * params.com_offset;
    let dtheta = K_ROTATION * params.com_offset * travel;
    let theta = start.theta() + dtheta;
    Ok(PushBoxState {
        x: start.x + travel * heading.cos(),
        y: start.y + travel * heading.sin(),
        sin_theta: theta.sin(),
        cos_theta: theta.cos(),
    })
}
