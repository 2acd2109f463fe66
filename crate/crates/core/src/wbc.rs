//! Whole-body controller: realize the planned leg force and thrust as
//! stance joint torques through a constrained inverse-dynamics solve.
//!
//! Unknowns are the accelerations, the three stance joint inputs, and the
//! multipliers of the lateral-lock constraint, stacked into one square
//! system:
//!
//! ```text
//! [ M    -S_st  -J_c' ] [ qdd  ]   [ -h + S_sw u_sw + u_t + B_g u_g ]
//! [ J_s   0      0    ] [ u_st ] = [ a_f - J_s_dot v                ]
//! [ J_c   0      0    ] [ l_c  ]   [ 0                              ]
//! ```
//!
//! The second block drives the stance foot at the commanded acceleration
//! `a_f` (zero keeps it pinned where it stands); the third keeps the body
//! in its sagittal plane (no lateral translation, roll, or yaw rate
//! change), mirroring the constraint applied to the plant. The model here
//! drops the small hip and knee rotary inertias but keeps their masses —
//! without the mass coupling the swing joint rows would be empty and the
//! system singular.
//!
//! The caller supplies the assumed ground force `u_g` — the planned leg
//! force embedded at the stance foot, or the measured contact wrench when
//! the torques should be consistent with what the ground actually does.
//! Thrust is split equally between the two torso-mounted thrusters.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector2, Vector3};
use thiserror::Error;

use crate::contact::slope_rotation;
use crate::dynamics::{
    dynamics_terms, thruster_generalized_force, GeneralizedInputs, RobotParams, RobotState, NG,
    NU, NV,
};
use crate::rom::RomParams;
use crate::spatial::{point_jacobian, PointSelector, Side};

/// Robot parameters as the controller models them: leg rotary inertias
/// dropped, point masses kept.
pub fn controller_params(params: &RobotParams) -> RobotParams {
    let mut p = *params;
    p.mass.i_h = Matrix3::zeros();
    p.mass.i_k = Matrix3::zeros();
    p
}

/// Selector mapping a 3-vector of one leg's joint inputs onto the stacked
/// joint rows [gamma_h, phi_h, phi_k] of that side.
pub fn joint_selector(side: Side) -> SMatrix<f64, NV, 3> {
    let i = side.index();
    let mut s = SMatrix::<f64, NV, 3>::zeros();
    s[(6 + i, 0)] = 1.0;
    s[(8 + i, 1)] = 1.0;
    s[(10 + i, 2)] = 1.0;
    s
}

/// Rows locking the body to its sagittal plane: lateral translation rate,
/// roll rate, and yaw rate. Constant in the velocity coordinates, so the
/// constraint-rate term vanishes.
pub fn lateral_lock_rows() -> SMatrix<f64, 3, NV> {
    let mut j = SMatrix::<f64, 3, NV>::zeros();
    j[(0, 4)] = 1.0; // lateral p_dot
    j[(1, 0)] = 1.0; // roll rate
    j[(2, 2)] = 1.0; // yaw rate
    j
}

/// Thrust (slope frame, [u_tx, u_tz]) that realizes the desired body
/// acceleration against gravity and the planned leg force.
pub fn thruster_from_rom(
    accel: &Vector2<f64>,
    lambda: &Vector2<f64>,
    p: &RomParams,
) -> Vector2<f64> {
    Vector2::new(
        p.m * accel.x + p.m * p.g * p.alpha.sin() + lambda.x,
        p.m * accel.y + p.m * p.g * p.alpha.cos() - lambda.y,
    )
}

/// One controller tick's whole-body problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WbcProblem {
    pub stance: Side,
    /// Swing joint command (PID output).
    pub u_sw: Vector3<f64>,
    /// Planar thrust [u_tx, u_tz] in the slope frame.
    pub u_t_planar: Vector2<f64>,
    /// Slope inclination, rad.
    pub alpha: f64,
    /// Assumed ground force at the feet (inertial, stacked left then
    /// right); see [`embedded_ground_force`] for the planned-force form.
    pub u_g: SVector<f64, NG>,
    /// Commanded stance-foot acceleration, inertial. Zero pins the foot.
    pub foot_accel: Vector3<f64>,
}

/// Solution of the stance KKT system.
#[derive(Debug, Clone, PartialEq)]
pub struct WbcSolution {
    /// Commanded accelerations consistent with both constraints.
    pub qdd: SVector<f64, NV>,
    /// Stance joint inputs [gamma torque, hip pitch torque, knee accel].
    pub u_st: Vector3<f64>,
    /// Lateral-lock constraint force.
    pub lambda_c: Vector3<f64>,
    /// Infinity-norm residuals of the three block rows.
    pub residuals: [f64; 3],
    /// Generalized thrust used on the right-hand side.
    pub u_t: SVector<f64, NV>,
    /// Assumed ground force used on the right-hand side (stance slot only).
    pub u_g: SVector<f64, NG>,
    /// Inertial force commanded of each thruster.
    pub thrust_each: Vector3<f64>,
}

#[derive(Debug, Error)]
pub enum WbcError {
    #[error("stance system is singular (condition estimate {cond_estimate:.3e})")]
    SingularStance { cond_estimate: f64 },
}

/// The planned leg force as an inertial ground-force vector at the stance
/// foot: sagittal component reacts backward, normal component upward.
pub fn embedded_ground_force(stance: Side, lambda: &Vector2<f64>, alpha: f64) -> SVector<f64, NG> {
    let f_slope = Vector3::new(-lambda.x, 0.0, lambda.y);
    let f_inertial = slope_rotation(alpha) * f_slope;
    let mut u_g = SVector::<f64, NG>::zeros();
    u_g.fixed_rows_mut::<3>(3 * stance.index())
        .copy_from(&f_inertial);
    u_g
}

/// Solve the stance KKT system at the measured state.
pub fn stance_torque(
    state: &RobotState,
    params: &RobotParams,
    problem: &WbcProblem,
) -> Result<WbcSolution, WbcError> {
    let model = controller_params(params);
    let terms = dynamics_terms(state, &model);
    let v = state.velocity();

    let (j_s, j_s_dot) = point_jacobian(state, params, PointSelector::Foot(problem.stance));
    let j_c = lateral_lock_rows();
    let s_st = joint_selector(problem.stance);
    let s_sw = joint_selector(problem.stance.other());

    // Thrust: equal inertial force at both torso mounts.
    let f_each = slope_rotation(problem.alpha)
        * Vector3::new(0.5 * problem.u_t_planar.x, 0.0, 0.5 * problem.u_t_planar.y);
    let u_t = thruster_generalized_force(state, params, &f_each, &f_each);
    let u_g = problem.u_g;

    let rhs_top = -terms.h + s_sw * problem.u_sw + u_t + terms.b_g * u_g;

    let mut k = DMatrix::<f64>::zeros(18, 18);
    k.view_mut((0, 0), (NV, NV)).copy_from(&terms.m);
    k.view_mut((0, NV), (NV, 3)).copy_from(&(-s_st));
    k.view_mut((0, NV + 3), (NV, 3)).copy_from(&(-j_c.transpose()));
    k.view_mut((NV, 0), (3, NV)).copy_from(&j_s);
    k.view_mut((NV + 3, 0), (3, NV)).copy_from(&j_c);

    let mut rhs = DVector::<f64>::zeros(18);
    rhs.rows_mut(0, NV).copy_from(&rhs_top);
    rhs.rows_mut(NV, 3)
        .copy_from(&(problem.foot_accel - j_s_dot * v));

    let lu = k.clone().full_piv_lu();
    let diag = lu.u().diagonal().abs();
    let cond_estimate = if diag.min() == 0.0 {
        f64::INFINITY
    } else {
        diag.max() / diag.min()
    };
    if !(cond_estimate.is_finite() && cond_estimate <= 1e12) {
        return Err(WbcError::SingularStance { cond_estimate });
    }
    let x = lu.solve(&rhs).ok_or(WbcError::SingularStance { cond_estimate })?;

    let qdd = SVector::<f64, NV>::from_iterator(x.rows(0, NV).iter().copied());
    let u_st = Vector3::new(x[NV], x[NV + 1], x[NV + 2]);
    let lambda_c = Vector3::new(x[NV + 3], x[NV + 4], x[NV + 5]);

    let r1 = (terms.m * qdd - s_st * u_st - j_c.transpose() * lambda_c - rhs_top).amax();
    let r2 = (j_s * qdd + j_s_dot * v - problem.foot_accel).amax();
    let r3 = (j_c * qdd).amax();

    Ok(WbcSolution {
        qdd,
        u_st,
        lambda_c,
        residuals: [r1, r2, r3],
        u_t,
        u_g,
        thrust_each: f_each,
    })
}

/// The joint, thrust, and diagnostic outputs of one controller tick,
/// assembled for the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlCommand {
    /// Joint channel inputs [gamma L,R; hip pitch L,R; knee L,R].
    pub u_j: SVector<f64, NU>,
    /// Generalized thrust.
    pub u_t: SVector<f64, NV>,
    /// Planar thrust [u_tx, u_tz] in the slope frame (diagnostic).
    pub thrust_planar: Vector2<f64>,
    /// First planned leg force (diagnostic).
    pub lambda: Vector2<f64>,
    pub stance: Side,
    pub wbc_residuals: [f64; 3],
}

impl ControlCommand {
    /// Route stance and swing joint triples onto the interleaved channels.
    pub fn assemble(
        stance: Side,
        u_st: &Vector3<f64>,
        u_sw: &Vector3<f64>,
        solution_u_t: SVector<f64, NV>,
        thrust_planar: Vector2<f64>,
        lambda: Vector2<f64>,
        residuals: [f64; 3],
    ) -> ControlCommand {
        let mut u_j = SVector::<f64, NU>::zeros();
        let (i_st, i_sw) = (stance.index(), stance.other().index());
        u_j[i_st] = u_st.x;
        u_j[2 + i_st] = u_st.y;
        u_j[4 + i_st] = u_st.z;
        u_j[i_sw] = u_sw.x;
        u_j[2 + i_sw] = u_sw.y;
        u_j[4 + i_sw] = u_sw.z;
        ControlCommand {
            u_j,
            u_t: solution_u_t,
            thrust_planar,
            lambda,
            stance,
            wbc_residuals: residuals,
        }
    }

    /// Plant-facing inputs (ground force filled per tick by the contact
    /// model, so it is zero here).
    pub fn inputs(&self) -> GeneralizedInputs {
        GeneralizedInputs {
            u_j: self.u_j,
            u_t: self.u_t,
            u_g: SVector::zeros(),
        }
    }
}
