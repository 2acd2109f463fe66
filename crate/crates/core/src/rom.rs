//! Reduced-order sagittal models used by the force planner.
//!
//! Two point-mass models of the body on a slope-aligned frame (x uphill,
//! z along the surface normal):
//!
//! * a thruster-assisted variable-height inverted pendulum, whose sagittal
//!   and normal dynamics are driven by thrust minus the leg reaction, and
//! * the classic height-locked linear inverted pendulum obtained by holding
//!   the body a constant `z0` above the stance foot, in which the leg force
//!   tilts along the leg line.
//!
//! The planner linearizes the height-locked model around an operating point
//! (stance-leg normal load, body position, foot position), in deviation
//! coordinates: the state is [x - x_op, xdot], so the position entry of a
//! freshly refreshed linearization starts at zero. Discretization is forward
//! Euler, matching the short planning steps used by the controller.

use nalgebra::{Matrix2, Vector2};

/// Point-mass model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomParams {
    /// Total mass carried by the model, kg.
    pub m: f64,
    /// Nominal body height above the stance foot along the surface normal, m.
    pub z0: f64,
    /// Slope inclination, rad.
    pub alpha: f64,
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
}

impl RomParams {
    /// Reference model: full robot mass on the 30 degree slope.
    pub fn reference() -> RomParams {
        RomParams {
            m: 6.0,
            z0: 0.45,
            alpha: 30f64.to_radians(),
            g: 9.81,
        }
    }

    /// Stance-leg normal load that holds the mass static on the slope.
    pub fn static_normal_load(&self) -> f64 {
        self.m * self.g * self.alpha.cos()
    }
}

/// Sagittal model state: body position and velocity along the slope x-axis,
/// plus the stance-foot (center of pressure) location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RomState {
    /// [body x, body xdot] in the slope frame.
    pub x: Vector2<f64>,
    /// Stance foot x in the slope frame.
    pub c_x: f64,
}

/// Linearization point for the height-locked model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    /// Stance-leg normal load at the point, N.
    pub lambda_z0: f64,
    /// Body x at the point, m.
    pub p_bx0: f64,
    /// Stance foot x at the point, m.
    pub c_x0: f64,
}

/// Continuous- and discrete-time linear model around an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct RomLinearization {
    pub a: Matrix2<f64>,
    pub b: Matrix2<f64>,
    pub a_d: Matrix2<f64>,
    pub b_d: Matrix2<f64>,
    pub op: OperatingPoint,
    pub dt: f64,
}

impl RomLinearization {
    /// Linearize and discretize in one step.
    pub fn at(op: OperatingPoint, params: &RomParams, dt: f64) -> RomLinearization {
        let (a, b) = linearize(&op, params);
        let (a_d, b_d) = discretize(&a, &b, dt);
        RomLinearization { a, b, a_d, b_d, op, dt }
    }
}

/// Variable-height pendulum accelerations (xddot, zddot) in the slope frame.
/// `lambda` is the leg reaction [lambda_x, lambda_z] pushing the mass from
/// the foot; `u_t` is the thrust [u_tx, u_tz].
pub fn vlip_accel(lambda: &Vector2<f64>, u_t: &Vector2<f64>, p: &RomParams) -> Vector2<f64> {
    Vector2::new(
        -p.g * p.alpha.sin() + (u_t.x - lambda.x) / p.m,
        -p.g * p.alpha.cos() + (u_t.y + lambda.y) / p.m,
    )
}

/// Height-locked pendulum sagittal acceleration. The normal load tilts along
/// the leg line from the foot to the body, so a body ahead of its foot is
/// pushed further ahead.
pub fn lip_accel(state: &RomState, lambda: &Vector2<f64>, p: &RomParams) -> f64 {
    lambda.y * (state.x.x - state.c_x) / (p.m * p.z0) - lambda.x / p.m
}

/// Jacobians (A, B) of the height-locked model at an operating point, in
/// deviation coordinates [x - p_bx0, xdot] with input [lambda_x, lambda_z].
pub fn linearize(op: &OperatingPoint, p: &RomParams) -> (Matrix2<f64>, Matrix2<f64>) {
    let a = Matrix2::new(0.0, 1.0, op.lambda_z0 / (p.m * p.z0), 0.0);
    let b = Matrix2::new(0.0, 0.0, -1.0 / p.m, (op.p_bx0 - op.c_x0) / (p.m * p.z0));
    (a, b)
}

/// Forward-Euler discretization: A_d = I + A dt, B_d = B dt.
pub fn discretize(a: &Matrix2<f64>, b: &Matrix2<f64>, dt: f64) -> (Matrix2<f64>, Matrix2<f64>) {
    (Matrix2::identity() + a * dt, b * dt)
}
