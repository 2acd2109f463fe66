//! Floating-base rigid-body dynamics of the biped.
//!
//! The robot is a torso (mass + inertia) with two legs. Each leg carries a
//! point-like hip assembly at the end of the pelvis link and a point-like
//! knee assembly at the end of the thigh; both also carry a small rotary
//! inertia. The shank/foot linkage is treated as massless, so the knee
//! angle is a kinematic degree of freedom: its generalized coordinate
//! appears in the foot position but not in the Lagrangian. Its rows in the
//! mass matrix are set to identity and its input channel commands an
//! angular acceleration directly.
//!
//! Equations of motion are assembled in velocity coordinates
//! `v = [omega_B (body frame); p_B_dot; gamma_h_dot; phi_h_dot; phi_k_dot]`:
//!
//! `M(q) a + h(q, v) = B_j u_j + B_g u_g + u_t`
//!
//! where `h` collects velocity products, gyroscopic terms, and gravity.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use thiserror::Error;

use crate::spatial::{
    rot_x, rot_y, rot_z, skew, JointAngles, LegChain, LegGeometry, PointSelector, Side, COL_OMEGA,
    COL_PHI_K,
};
pub use crate::spatial::NV;

/// Number of actuated joint channels: frontal hips, sagittal hips, knees,
/// each left then right.
pub const NU: usize = 6;

/// Number of stacked ground-force components (two feet, 3 each).
pub const NG: usize = 6;

/// Length of the flattened state used by the integrator: rotation matrix
/// (9, row-major), position-level coordinates (9), velocity coordinates (12).
pub const NX: usize = 30;

/// Masses and body-frame rotary inertias of the torso (`b`), hip
/// assemblies (`h`), and knee assemblies (`k`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassProperties {
    pub m_b: f64,
    pub m_h: f64,
    pub m_k: f64,
    pub i_b: Matrix3<f64>,
    pub i_h: Matrix3<f64>,
    pub i_k: Matrix3<f64>,
}

impl MassProperties {
    pub fn total_mass(&self) -> f64 {
        self.m_b + 2.0 * (self.m_h + self.m_k)
    }
}

/// Physical parameters: left-leg geometry (the right leg is its mirror
/// image), mass properties, and gravitational acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotParams {
    pub geom: LegGeometry,
    pub mass: MassProperties,
    pub gravity: f64,
}

impl RobotParams {
    /// Desk-scale reference robot used throughout the tests: 6 kg total,
    /// 0.4 m legs, thrusters mounted on the torso.
    pub fn reference() -> RobotParams {
        RobotParams {
            geom: LegGeometry {
                l1: Vector3::new(0.0, 0.1, -0.1),
                l2: Vector3::new(0.0, 0.5, 0.0),
                l3: Vector3::new(0.0, 0.0, -0.3),
                l4a: 0.1,
                l4b: 0.0,
                lt: Vector3::new(0.0, 0.15, 0.10),
            },
            mass: MassProperties {
                m_b: 4.0,
                m_h: 0.5,
                m_k: 0.5,
                i_b: Matrix3::identity() * 1e-3,
                i_h: Matrix3::identity() * 1e-4,
                i_k: Matrix3::identity() * 1e-4,
            },
            gravity: 9.81,
        }
    }

    /// Geometry of one leg.
    pub fn geometry(&self, side: Side) -> LegGeometry {
        match side {
            Side::Left => self.geom,
            Side::Right => self.geom.mirrored(),
        }
    }
}

/// Full robot state. Orientation is kept as a rotation matrix; the angular
/// velocity `omega_b` is expressed in the body frame. Per-leg arrays are
/// indexed `[left, right]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub r_b: Matrix3<f64>,
    pub p_b: Vector3<f64>,
    pub gamma_h: [f64; 2],
    pub phi_h: [f64; 2],
    pub phi_k: [f64; 2],
    pub omega_b: Vector3<f64>,
    pub p_b_dot: Vector3<f64>,
    pub gamma_h_dot: [f64; 2],
    pub phi_h_dot: [f64; 2],
    pub phi_k_dot: [f64; 2],
}

impl RobotState {
    /// Robot at rest with the given pose.
    pub fn standing(p_b: Vector3<f64>, left: JointAngles, right: JointAngles) -> RobotState {
        RobotState {
            r_b: Matrix3::identity(),
            p_b,
            gamma_h: [left.gamma_h, right.gamma_h],
            phi_h: [left.phi_h, right.phi_h],
            phi_k: [left.phi_k, right.phi_k],
            omega_b: Vector3::zeros(),
            p_b_dot: Vector3::zeros(),
            gamma_h_dot: [0.0; 2],
            phi_h_dot: [0.0; 2],
            phi_k_dot: [0.0; 2],
        }
    }

    /// Fixed fully-populated state used by tests and benches.
    pub fn example_moving() -> RobotState {
        RobotState {
            r_b: rot_z(0.3) * rot_y(-0.2) * rot_x(0.1),
            p_b: Vector3::new(0.4, -0.2, 0.9),
            gamma_h: [0.2, -0.15],
            phi_h: [-0.5, 0.35],
            phi_k: [0.6, -0.25],
            omega_b: Vector3::new(0.3, -0.2, 0.4),
            p_b_dot: Vector3::new(0.5, 0.1, -0.3),
            gamma_h_dot: [0.4, -0.3],
            phi_h_dot: [-0.2, 0.6],
            phi_k_dot: [0.7, -0.5],
        }
    }

    pub fn joint_angles(&self, side: Side) -> JointAngles {
        let i = side.index();
        JointAngles {
            gamma_h: self.gamma_h[i],
            phi_h: self.phi_h[i],
            phi_k: self.phi_k[i],
        }
    }

    pub fn joint_rates(&self, side: Side) -> JointAngles {
        let i = side.index();
        JointAngles {
            gamma_h: self.gamma_h_dot[i],
            phi_h: self.phi_h_dot[i],
            phi_k: self.phi_k_dot[i],
        }
    }

    /// Generalized velocity `[omega; p_dot; gamma_dot; phi_h_dot; phi_k_dot]`.
    pub fn velocity(&self) -> SVector<f64, NV> {
        let mut v = SVector::<f64, NV>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.omega_b);
        v.fixed_rows_mut::<3>(3).copy_from(&self.p_b_dot);
        v[6] = self.gamma_h_dot[0];
        v[7] = self.gamma_h_dot[1];
        v[8] = self.phi_h_dot[0];
        v[9] = self.phi_h_dot[1];
        v[10] = self.phi_k_dot[0];
        v[11] = self.phi_k_dot[1];
        v
    }

    pub fn set_velocity(&mut self, v: &SVector<f64, NV>) {
        self.omega_b = v.fixed_rows::<3>(0).into_owned();
        self.p_b_dot = v.fixed_rows::<3>(3).into_owned();
        self.gamma_h_dot = [v[6], v[7]];
        self.phi_h_dot = [v[8], v[9]];
        self.phi_k_dot = [v[10], v[11]];
    }

    /// Flatten for integration: rotation row-major, then position-level
    /// coordinates, then velocity coordinates.
    pub fn to_flat(&self) -> SVector<f64, NX> {
        let mut x = SVector::<f64, NX>::zeros();
        for r in 0..3 {
            for c in 0..3 {
                x[3 * r + c] = self.r_b[(r, c)];
            }
        }
        x.fixed_rows_mut::<3>(9).copy_from(&self.p_b);
        x[12] = self.gamma_h[0];
        x[13] = self.gamma_h[1];
        x[14] = self.phi_h[0];
        x[15] = self.phi_h[1];
        x[16] = self.phi_k[0];
        x[17] = self.phi_k[1];
        x.fixed_rows_mut::<NV>(18).copy_from(&self.velocity());
        x
    }

    pub fn from_flat(x: &SVector<f64, NX>) -> RobotState {
        let mut r_b = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                r_b[(r, c)] = x[3 * r + c];
            }
        }
        let mut s = RobotState {
            r_b,
            p_b: x.fixed_rows::<3>(9).into_owned(),
            gamma_h: [x[12], x[13]],
            phi_h: [x[14], x[15]],
            phi_k: [x[16], x[17]],
            omega_b: Vector3::zeros(),
            p_b_dot: Vector3::zeros(),
            gamma_h_dot: [0.0; 2],
            phi_h_dot: [0.0; 2],
            phi_k_dot: [0.0; 2],
        };
        s.set_velocity(&x.fixed_rows::<NV>(18).into_owned());
        s
    }
}

/// Inputs to the forward dynamics.
///
/// `u_j`: joint inputs `[gamma_h L,R; phi_h L,R; phi_k L,R]` — torques for
/// the hip channels, commanded angular accelerations for the knee channels.
/// `u_t`: an already-generalized force (see [`thruster_generalized_force`]).
/// `u_g`: stacked inertial-frame ground forces at the feet `[f_L; f_R]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedInputs {
    pub u_j: SVector<f64, NU>,
    pub u_t: SVector<f64, NV>,
    pub u_g: SVector<f64, NG>,
}

impl Default for GeneralizedInputs {
    fn default() -> Self {
        GeneralizedInputs {
            u_j: SVector::zeros(),
            u_t: SVector::zeros(),
            u_g: SVector::zeros(),
        }
    }
}

/// Assembled equation-of-motion terms.
#[derive(Debug, Clone)]
pub struct DynamicsTerms {
    /// Mass matrix (12 x 12). Knee rows/columns are identity placeholders —
    /// the shank is massless — so `v' M v` counts a fictitious unit knee
    /// inertia; subtract the knee rates when extracting kinetic energy.
    pub m: SMatrix<f64, NV, NV>,
    /// Velocity products, gyroscopic terms, and gravity.
    pub h: SVector<f64, NV>,
    /// Joint input map (12 x 6): identity onto the joint rows.
    pub b_j: SMatrix<f64, NV, NU>,
    /// Ground force map (12 x 6): stacked transposed foot Jacobians, with
    /// the knee rows zeroed (the ideal knee drive absorbs that component).
    pub b_g: SMatrix<f64, NV, NG>,
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("mass matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("mass matrix condition number {cond:.3e} exceeds 1e12")]
    IllConditioned { cond: f64 },
}

fn add_point_mass(
    m: &mut SMatrix<f64, NV, NV>,
    h: &mut SVector<f64, NV>,
    v: &SVector<f64, NV>,
    mass: f64,
    g: f64,
    j: &SMatrix<f64, 3, NV>,
    jd: &SMatrix<f64, 3, NV>,
) {
    *m += mass * j.transpose() * j;
    *h += j.transpose() * (mass * (jd * v) + Vector3::new(0.0, 0.0, mass * g));
}

fn add_rotor(
    m: &mut SMatrix<f64, NV, NV>,
    h: &mut SVector<f64, NV>,
    v: &SVector<f64, NV>,
    inertia: &Matrix3<f64>,
    jr: &SMatrix<f64, 3, NV>,
    jr_dot: &SMatrix<f64, 3, NV>,
) {
    *m += jr.transpose() * inertia * jr;
    let w = jr * v;
    *h += jr.transpose() * (inertia * (jr_dot * v) + w.cross(&(inertia * w)));
}

/// Assemble the mass matrix, bias vector, and input maps at a state.
pub fn dynamics_terms(state: &RobotState, params: &RobotParams) -> DynamicsTerms {
    let r_b = state.r_b;
    let r_b_dot = r_b * skew(&state.omega_b);
    let v = state.velocity();
    let g = params.gravity;
    let mp = params.mass;

    let mut m = SMatrix::<f64, NV, NV>::zeros();
    let mut h = SVector::<f64, NV>::zeros();

    // Torso: translational Jacobian is [0 | I | 0] with zero rate, so its
    // mass lands directly on the p_dot block and gravity on the z row.
    for k in 0..3 {
        m[(3 + k, 3 + k)] += mp.m_b;
    }
    h[5] += mp.m_b * g;
    // Torso rotation: omega = [I | 0] v.
    let mut jr_b = SMatrix::<f64, 3, NV>::zeros();
    jr_b.fixed_view_mut::<3, 3>(0, COL_OMEGA)
        .copy_from(&Matrix3::identity());
    add_rotor(&mut m, &mut h, &v, &mp.i_b, &jr_b, &SMatrix::zeros());

    let mut b_g = SMatrix::<f64, NV, NG>::zeros();

    for side in [Side::Left, Side::Right] {
        let geom = params.geometry(side);
        let chain = LegChain::new(state, &geom, side);

        let (j_hip, jd_hip) = chain.point_mats(&r_b, &r_b_dot, 1);
        let (j_knee, jd_knee) = chain.point_mats(&r_b, &r_b_dot, 2);
        add_point_mass(&mut m, &mut h, &v, mp.m_h, g, &j_hip, &jd_hip);
        add_point_mass(&mut m, &mut h, &v, mp.m_k, g, &j_knee, &jd_knee);

        let (jr_h, jr_h_dot, jr_k, jr_k_dot) = chain.rotation_mats();
        add_rotor(&mut m, &mut h, &v, &mp.i_h, &jr_h, &jr_h_dot);
        add_rotor(&mut m, &mut h, &v, &mp.i_k, &jr_k, &jr_k_dot);

        // Ground force map from the foot Jacobian, knee rows dropped.
        let (j_foot, _) = chain.point_mats(&r_b, &r_b_dot, 3);
        let col0 = 3 * side.index();
        for row in 0..COL_PHI_K {
            for k in 0..3 {
                b_g[(row, col0 + k)] = j_foot[(k, row)];
            }
        }
    }

    // Massless shank: unit placeholder inertia on the knee rows.
    m[(10, 10)] = 1.0;
    m[(11, 11)] = 1.0;

    let mut b_j = SMatrix::<f64, NV, NU>::zeros();
    for k in 0..NU {
        b_j[(6 + k, k)] = 1.0;
    }

    DynamicsTerms { m, h, b_j, b_g }
}

/// Solve `M a = B_j u_j + B_g u_g + u_t - h` for the acceleration.
///
/// The massive 10 x 10 block is solved by Cholesky factorization; the knee
/// accelerations are taken verbatim from the knee channels of `u_j`.
/// Factor the massive 10x10 block of the mass matrix, rejecting matrices
/// that are not positive definite or are too ill-conditioned to trust.
///
/// For a positive-definite matrix, max(diag)/min(diag) lower-bounds the
/// spectral condition number; the exact eigenvalue check runs only when the
/// cheap bound is suspicious.
pub(crate) fn massive_cholesky(
    m: &SMatrix<f64, NV, NV>,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Const<10>>, DynamicsError> {
    let m10 = m.fixed_view::<10, 10>(0, 0).into_owned();
    let chol = m10.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    let diag = m10.diagonal();
    let est = diag.max() / diag.min();
    if est > 1e9 {
        let eig = m10.symmetric_eigenvalues();
        let cond = eig.max() / eig.min();
        if !(cond.is_finite() && cond <= 1e12) {
            return Err(DynamicsError::IllConditioned { cond });
        }
    }
    Ok(chol)
}

pub fn accel_from_terms(
    terms: &DynamicsTerms,
    inputs: &GeneralizedInputs,
) -> Result<SVector<f64, NV>, DynamicsError> {
    let rhs = terms.b_j * inputs.u_j + terms.b_g * inputs.u_g + inputs.u_t - terms.h;
    let chol = massive_cholesky(&terms.m)?;
    let a10 = chol.solve(&rhs.fixed_rows::<10>(0).into_owned());
    let mut a = SVector::<f64, NV>::zeros();
    a.fixed_rows_mut::<10>(0).copy_from(&a10);
    a[10] = inputs.u_j[4];
    a[11] = inputs.u_j[5];
    Ok(a)
}

/// Forward dynamics: assemble terms at `state` and solve for acceleration.
pub fn forward_dynamics(
    state: &RobotState,
    params: &RobotParams,
    inputs: &GeneralizedInputs,
) -> Result<SVector<f64, NV>, DynamicsError> {
    accel_from_terms(&dynamics_terms(state, params), inputs)
}

/// Generalized force of thruster forces `f_l`, `f_r` (inertial frame)
/// applied at the torso-mounted thruster points.
pub fn thruster_generalized_force(
    state: &RobotState,
    params: &RobotParams,
    f_l: &Vector3<f64>,
    f_r: &Vector3<f64>,
) -> SVector<f64, NV> {
    let (j_l, _) = crate::spatial::point_jacobian(state, params, PointSelector::Thruster(Side::Left));
    let (j_r, _) =
        crate::spatial::point_jacobian(state, params, PointSelector::Thruster(Side::Right));
    j_l.transpose() * f_l + j_r.transpose() * f_r
}

/// Mechanical energy of the five massive bodies, returned as
/// (kinetic, gravitational potential) in joules. The massless shank and foot
/// never contribute, and neither do the knee placeholder rates.
pub fn total_energy(state: &RobotState, params: &RobotParams) -> (f64, f64) {
    let r_b = state.r_b;
    let r_b_dot = r_b * skew(&state.omega_b);
    let v = state.velocity();
    let g = params.gravity;
    let mp = params.mass;

    let mut t = 0.5 * mp.m_b * state.p_b_dot.norm_squared()
        + 0.5 * state.omega_b.dot(&(mp.i_b * state.omega_b));
    let mut pot = mp.m_b * g * state.p_b.z;

    for side in [Side::Left, Side::Right] {
        let geom = params.geometry(side);
        let chain = LegChain::new(state, &geom, side);
        let pts = crate::spatial::forward_kinematics(
            &state.p_b,
            &r_b,
            &state.joint_angles(side),
            &geom,
        );

        let (j_hip, _) = chain.point_mats(&r_b, &r_b_dot, 1);
        let (j_knee, _) = chain.point_mats(&r_b, &r_b_dot, 2);
        let (jr_h, _, jr_k, _) = chain.rotation_mats();

        let v_hip = j_hip * v;
        let v_knee = j_knee * v;
        let w_h = jr_h * v;
        let w_k = jr_k * v;

        t += 0.5 * mp.m_h * v_hip.norm_squared() + 0.5 * w_h.dot(&(mp.i_h * w_h));
        t += 0.5 * mp.m_k * v_knee.norm_squared() + 0.5 * w_k.dot(&(mp.i_k * w_k));
        pot += g * (mp.m_h * pts.hip.z + mp.m_k * pts.knee.z);
    }

    (t, pot)
}
