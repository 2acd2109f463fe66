//! Rotations and leg kinematics.
//!
//! Frames: the inertial frame has gravity along -z. The body frame is
//! carried by the torso; `R_B` maps body coordinates into inertial ones.
//! Each leg hangs off the torso through a frontal (roll) hip angle
//! `gamma_h`, a sagittal (pitch) hip angle `phi_h`, and a knee angle
//! `phi_k` driving a parallel four-bar shank.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::dynamics::{RobotParams, RobotState};

/// Left/right leg identifier. `index()` is the column/row offset used for
/// per-side joint coordinates in stacked vectors (left first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

/// Principal rotation axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Vector3<f64> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }
}

/// Right-handed rotation about a principal axis.
pub fn rot_axis(axis: Axis, angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    match axis {
        Axis::X => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
        Axis::Y => Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
        Axis::Z => Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
    }
}

pub fn rot_x(angle: f64) -> Matrix3<f64> {
    rot_axis(Axis::X, angle)
}

pub fn rot_y(angle: f64) -> Matrix3<f64> {
    rot_axis(Axis::Y, angle)
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    rot_axis(Axis::Z, angle)
}

/// Skew-symmetric cross-product matrix: `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Link geometry for one leg, expressed in the body frame at zero joint
/// angles. `l1` body->pelvis, `l2` pelvis->hip, `l3` hip->knee. The shank
/// is a parallel linkage parameterized by `l4a`/`l4b`; see [`l4_vector`].
/// `lt` is the thruster mount point on the torso.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub l1: Vector3<f64>,
    pub l2: Vector3<f64>,
    pub l3: Vector3<f64>,
    pub l4a: f64,
    pub l4b: f64,
    pub lt: Vector3<f64>,
}

impl LegGeometry {
    /// Mirror across the body x-z plane (left <-> right).
    pub fn mirrored(&self) -> LegGeometry {
        let flip = |v: Vector3<f64>| Vector3::new(v.x, -v.y, v.z);
        LegGeometry {
            l1: flip(self.l1),
            l2: flip(self.l2),
            l3: flip(self.l3),
            l4a: self.l4a,
            l4b: self.l4b,
            lt: flip(self.lt),
        }
    }

    /// Shortest and longest reachable hip-to-foot distance in the leg's
    /// sagittal plane. The thigh contributes its sagittal projection
    /// `|l3.z| + l4b`; the knee crank adds or removes `l4a`.
    pub fn reach(&self) -> (f64, f64) {
        let r = self.l3.z.abs() + self.l4b;
        ((r - self.l4a).abs(), r + self.l4a)
    }
}

/// Joint angles of one leg.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct JointAngles {
    pub gamma_h: f64,
    pub phi_h: f64,
    pub phi_k: f64,
}

impl JointAngles {
    /// Stack as [gamma_h, phi_h, phi_k].
    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.gamma_h, self.phi_h, self.phi_k)
    }

    /// Unstack from [gamma_h, phi_h, phi_k].
    pub fn from_vector(v: &Vector3<f64>) -> JointAngles {
        JointAngles { gamma_h: v.x, phi_h: v.y, phi_k: v.z }
    }
}

/// Cartesian positions (inertial frame) of the articulation points of one
/// leg plus the torso thruster mount on the same side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPoints {
    pub pelvis: Vector3<f64>,
    pub hip: Vector3<f64>,
    pub knee: Vector3<f64>,
    pub foot: Vector3<f64>,
    pub thruster: Vector3<f64>,
}

/// Knee-to-foot vector of the parallel shank linkage, expressed in the
/// thigh (post hip-pitch) frame. The linkage closure already accounts for
/// the shank rotation, so this vector is a function of the knee angle
/// alone: at `phi_k = 0` the foot sits at `(-l4a, 0, -l4b)`, and at
/// `phi_k = pi/2` it hangs `l4a + l4b` straight below the knee.
pub fn l4_vector(phi_k: f64, l4a: f64, l4b: f64) -> Vector3<f64> {
    let (s, c) = phi_k.sin_cos();
    Vector3::new(-l4a * c, 0.0, -(l4b + l4a * s))
}

/// d/d(phi_k) of [`l4_vector`].
pub fn l4_vector_d(phi_k: f64, l4a: f64) -> Vector3<f64> {
    let (s, c) = phi_k.sin_cos();
    Vector3::new(l4a * s, 0.0, -l4a * c)
}

/// Leg forward kinematics.
pub fn forward_kinematics(
    p_b: &Vector3<f64>,
    r_b: &Matrix3<f64>,
    angles: &JointAngles,
    geom: &LegGeometry,
) -> LegPoints {
    let a1 = rot_x(angles.gamma_h);
    let a2 = a1 * rot_y(angles.phi_h);
    let pelvis = p_b + r_b * geom.l1;
    let hip = pelvis + r_b * (a1 * geom.l2);
    let knee = hip + r_b * (a2 * geom.l3);
    let foot = knee + r_b * (a2 * l4_vector(angles.phi_k, geom.l4a, geom.l4b));
    let thruster = p_b + r_b * geom.lt;
    LegPoints {
        pelvis,
        hip,
        knee,
        foot,
        thruster,
    }
}

/// Which material point a Jacobian refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointSelector {
    Body,
    Pelvis(Side),
    Hip(Side),
    Knee(Side),
    Foot(Side),
    Thruster(Side),
}

/// Column layout of the generalized velocity vector
/// `v = [omega_B (body frame); p_B_dot; gamma_h_dot L,R; phi_h_dot L,R; phi_k_dot L,R]`.
pub const NV: usize = 12;
pub const COL_OMEGA: usize = 0;
pub const COL_PDOT: usize = 3;
pub const COL_GAMMA: usize = 6;
pub const COL_PHI_H: usize = 8;
pub const COL_PHI_K: usize = 10;

/// Kinematic quantities of one leg with their time derivatives, used to
/// assemble Jacobians and their rates analytically.
pub(crate) struct LegChain {
    pub side: Side,
    /// Frontal-hip rotation and derivatives: a1 = R_x(gamma).
    pub a1: Matrix3<f64>,
    pub a1_dot: Matrix3<f64>,
    /// Hip-pitch rotation R_y(phi_h) and derivative.
    pub ry: Matrix3<f64>,
    pub ry_dot: Matrix3<f64>,
    /// Thigh rotation a2 = a1 * R_y(phi_h) and derivative.
    pub a2: Matrix3<f64>,
    pub a2_dot: Matrix3<f64>,
    /// Body-frame offsets (value, time derivative) of each point.
    pub d_pelvis: (Vector3<f64>, Vector3<f64>),
    pub d_hip: (Vector3<f64>, Vector3<f64>),
    pub d_knee: (Vector3<f64>, Vector3<f64>),
    pub d_foot: (Vector3<f64>, Vector3<f64>),
    /// Per-joint partials of each offset and their time derivatives,
    /// ordered [gamma, phi_h, phi_k].
    pub cols_hip: [(Vector3<f64>, Vector3<f64>); 3],
    pub cols_knee: [(Vector3<f64>, Vector3<f64>); 3],
    pub cols_foot: [(Vector3<f64>, Vector3<f64>); 3],
}

impl LegChain {
    pub fn new(state: &RobotState, geom: &LegGeometry, side: Side) -> LegChain {
        let i = side.index();
        let gamma = state.gamma_h[i];
        let phi_h = state.phi_h[i];
        let phi_k = state.phi_k[i];
        let gamma_dot = state.gamma_h_dot[i];
        let phi_h_dot = state.phi_h_dot[i];
        let phi_k_dot = state.phi_k_dot[i];

        let ex = skew(&Vector3::x());
        let ey = skew(&Vector3::y());

        let a1 = rot_x(gamma);
        let a1_p = a1 * ex; // d a1 / d gamma
        let a1_pp = a1_p * ex;
        let a1_dot = a1_p * gamma_dot;

        let ry = rot_y(phi_h);
        let ry_p = ry * ey;
        let ry_pp = ry_p * ey;
        let ry_dot = ry_p * phi_h_dot;

        let a2 = a1 * ry;
        let a2_dot = a1_dot * ry + a1 * ry_dot;

        let l4 = l4_vector(phi_k, geom.l4a, geom.l4b);
        let l4_p = l4_vector_d(phi_k, geom.l4a);
        let (s4, c4) = phi_k.sin_cos();
        let l4_pp = Vector3::new(geom.l4a * c4, 0.0, geom.l4a * s4);
        let l4_dot = l4_p * phi_k_dot;

        let d_pelvis = (geom.l1, Vector3::zeros());
        let d_hip = (geom.l1 + a1 * geom.l2, a1_dot * geom.l2);
        let d_knee = (d_hip.0 + a2 * geom.l3, d_hip.1 + a2_dot * geom.l3);
        let w = geom.l3 + l4; // hip-to-foot in thigh frame
        let w_dot = l4_dot;
        let d_foot = (d_hip.0 + a2 * w, d_hip.1 + a2_dot * w + a2 * w_dot);

        let zero = (Vector3::zeros(), Vector3::zeros());

        let cols_hip = [
            (a1_p * geom.l2, a1_pp * geom.l2 * gamma_dot),
            zero,
            zero,
        ];

        let x_knee_g = geom.l2 + ry * geom.l3;
        let cols_knee = [
            (
                a1_p * x_knee_g,
                a1_pp * x_knee_g * gamma_dot + a1_p * (ry_dot * geom.l3),
            ),
            (
                a1 * (ry_p * geom.l3),
                a1_dot * (ry_p * geom.l3) + a1 * (ry_pp * geom.l3) * phi_h_dot,
            ),
            zero,
        ];

        let x_foot_g = geom.l2 + ry * w;
        let cols_foot = [
            (
                a1_p * x_foot_g,
                a1_pp * x_foot_g * gamma_dot + a1_p * (ry_dot * w + ry * w_dot),
            ),
            (
                a1 * (ry_p * w),
                a1_dot * (ry_p * w) + a1 * (ry_pp * w * phi_h_dot + ry_p * w_dot),
            ),
            (
                a2 * l4_p,
                a2_dot * l4_p + a2 * l4_pp * phi_k_dot,
            ),
        ];

        LegChain {
            side,
            a1,
            a1_dot,
            ry,
            ry_dot,
            a2,
            a2_dot,
            d_pelvis,
            d_hip,
            d_knee,
            d_foot,
            cols_hip,
            cols_knee,
            cols_foot,
        }
    }

    /// Translational Jacobian and rate (3 x 12) of one chain point,
    /// `which` in {0: pelvis, 1: hip, 2: knee, 3: foot}.
    pub fn point_mats(
        &self,
        r_b: &Matrix3<f64>,
        r_b_dot: &Matrix3<f64>,
        which: usize,
    ) -> (SMatrix<f64, 3, NV>, SMatrix<f64, 3, NV>) {
        let ((d, d_dot), cols) = self.offset_and_cols(which);

        let mut j = SMatrix::<f64, 3, NV>::zeros();
        let mut jd = SMatrix::<f64, 3, NV>::zeros();

        let jw = -r_b * skew(&d);
        let jwd = -r_b_dot * skew(&d) - r_b * skew(&d_dot);
        j.fixed_view_mut::<3, 3>(0, COL_OMEGA).copy_from(&jw);
        jd.fixed_view_mut::<3, 3>(0, COL_OMEGA).copy_from(&jwd);
        j.fixed_view_mut::<3, 3>(0, COL_PDOT)
            .copy_from(&Matrix3::identity());

        let idx = self.side.index();
        let joint_cols = [COL_GAMMA + idx, COL_PHI_H + idx, COL_PHI_K + idx];
        for (k, col) in joint_cols.iter().enumerate() {
            let (x, x_dot) = cols[k];
            set_col(&mut j, *col, &(r_b * x));
            set_col(&mut jd, *col, &(r_b_dot * x + r_b * x_dot));
        }

        (j, jd)
    }

    /// Rotational Jacobians and rates (3 x 12) of the hip link and the
    /// thigh link, mapping the generalized velocity to each link's angular
    /// velocity expressed in that link's own frame.
    pub fn rotation_mats(
        &self,
    ) -> (
        SMatrix<f64, 3, NV>,
        SMatrix<f64, 3, NV>,
        SMatrix<f64, 3, NV>,
        SMatrix<f64, 3, NV>,
    ) {
        let idx = self.side.index();
        let ex = Vector3::x();
        let ey = Vector3::y();

        let mut jr_h = SMatrix::<f64, 3, NV>::zeros();
        let mut jr_h_dot = SMatrix::<f64, 3, NV>::zeros();
        jr_h
            .fixed_view_mut::<3, 3>(0, COL_OMEGA)
            .copy_from(&self.a1.transpose());
        jr_h_dot
            .fixed_view_mut::<3, 3>(0, COL_OMEGA)
            .copy_from(&self.a1_dot.transpose());
        set_col(&mut jr_h, COL_GAMMA + idx, &ex);

        let mut jr_k = SMatrix::<f64, 3, NV>::zeros();
        let mut jr_k_dot = SMatrix::<f64, 3, NV>::zeros();
        jr_k.fixed_view_mut::<3, 3>(0, COL_OMEGA)
            .copy_from(&self.a2.transpose());
        jr_k_dot
            .fixed_view_mut::<3, 3>(0, COL_OMEGA)
            .copy_from(&self.a2_dot.transpose());
        set_col(&mut jr_k, COL_GAMMA + idx, &(self.ry.transpose() * ex));
        set_col(
            &mut jr_k_dot,
            COL_GAMMA + idx,
            &(self.ry_dot.transpose() * ex),
        );
        set_col(&mut jr_k, COL_PHI_H + idx, &ey);

        (jr_h, jr_h_dot, jr_k, jr_k_dot)
    }

    fn offset_and_cols(
        &self,
        which: usize,
    ) -> (
        (Vector3<f64>, Vector3<f64>),
        [(Vector3<f64>, Vector3<f64>); 3],
    ) {
        let zero = (Vector3::zeros(), Vector3::zeros());
        match which {
            0 => (self.d_pelvis, [zero, zero, zero]),
            1 => (self.d_hip, self.cols_hip),
            2 => (self.d_knee, self.cols_knee),
            _ => (self.d_foot, self.cols_foot),
        }
    }
}

fn set_col(j: &mut SMatrix<f64, 3, NV>, col: usize, v: &Vector3<f64>) {
    j[(0, col)] = v.x;
    j[(1, col)] = v.y;
    j[(2, col)] = v.z;
}

/// Translational point Jacobian `J` with `p_dot = J v`, and its time
/// derivative, both 3 x 12 over the full generalized velocity.
pub fn point_jacobian(
    state: &RobotState,
    params: &RobotParams,
    point: PointSelector,
) -> (SMatrix<f64, 3, NV>, SMatrix<f64, 3, NV>) {
    let r_b = state.r_b;
    let r_b_dot = r_b * skew(&state.omega_b);

    let fixed = |d: Vector3<f64>| {
        let mut j = SMatrix::<f64, 3, NV>::zeros();
        let mut jd = SMatrix::<f64, 3, NV>::zeros();
        let jw = -r_b * skew(&d);
        let jwd = -r_b_dot * skew(&d);
        j.fixed_view_mut::<3, 3>(0, COL_OMEGA).copy_from(&jw);
        jd.fixed_view_mut::<3, 3>(0, COL_OMEGA).copy_from(&jwd);
        j.fixed_view_mut::<3, 3>(0, COL_PDOT)
            .copy_from(&Matrix3::identity());
        (j, jd)
    };

    let (side, which) = match point {
        PointSelector::Body => return fixed(Vector3::zeros()),
        PointSelector::Thruster(s) => return fixed(params.geometry(s).lt),
        PointSelector::Pelvis(s) => (s, 0),
        PointSelector::Hip(s) => (s, 1),
        PointSelector::Knee(s) => (s, 2),
        PointSelector::Foot(s) => (s, 3),
    };

    let geom = params.geometry(side);
    let chain = LegChain::new(state, &geom, side);
    chain.point_mats(&r_b, &r_b_dot, which)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotParams;
    use approx::assert_relative_eq;

    fn test_geom() -> LegGeometry {
        RobotParams::reference().geometry(Side::Left)
    }

    #[test]
    fn rot_x_quarter_turn_sends_y_to_z() {
        let r = rot_axis(Axis::X, std::f64::consts::FRAC_PI_2);
        let v = r * Vector3::new(0.0, 1.0, 0.0);
        assert_relative_eq!(v, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn rot_y_half_turn_is_diag() {
        let r = rot_axis(Axis::Y, std::f64::consts::PI);
        let expected = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0));
        assert_relative_eq!(r, expected, epsilon = 1e-12);
    }

    #[test]
    fn rotations_are_orthonormal_with_unit_det() {
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for k in -10..=10 {
                let r = rot_axis(axis, 0.37 * k as f64);
                assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
                assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn skew_matches_cross_product() {
        let a = Vector3::new(0.3, -1.2, 2.0);
        let b = Vector3::new(-0.7, 0.4, 0.9);
        assert_relative_eq!(skew(&a) * b, a.cross(&b), epsilon = 1e-14);
    }

    #[test]
    fn l4_at_zero_knee_angle() {
        let g = test_geom();
        let v = l4_vector(0.0, g.l4a, g.l4b);
        assert_relative_eq!(v, Vector3::new(-g.l4a, 0.0, -g.l4b), epsilon = 1e-15);
    }

    #[test]
    fn pelvis_sits_at_l1() {
        let g = test_geom();
        let pts = forward_kinematics(
            &Vector3::zeros(),
            &Matrix3::identity(),
            &JointAngles::default(),
            &g,
        );
        assert_relative_eq!(pts.pelvis, g.l1, epsilon = 1e-15);
    }

    #[test]
    fn segment_lengths_are_preserved() {
        let g = test_geom();
        let angles = JointAngles {
            gamma_h: 0.31,
            phi_h: -0.62,
            phi_k: 0.94,
        };
        let p_b = Vector3::new(0.2, -0.4, 1.1);
        let r_b = rot_x(0.2) * rot_y(-0.5) * rot_z(0.9);
        let pts = forward_kinematics(&p_b, &r_b, &angles, &g);
        assert_relative_eq!((pts.hip - pts.pelvis).norm(), g.l2.norm(), epsilon = 1e-12);
        assert_relative_eq!((pts.knee - pts.hip).norm(), g.l3.norm(), epsilon = 1e-12);
        let l4 = l4_vector(angles.phi_k, g.l4a, g.l4b);
        assert_relative_eq!((pts.foot - pts.knee).norm(), l4.norm(), epsilon = 1e-12);
    }

    #[test]
    fn mirrored_states_give_mirrored_points() {
        let params = RobotParams::reference();
        let flip = |v: Vector3<f64>| Vector3::new(v.x, -v.y, v.z);
        let angles_l = JointAngles {
            gamma_h: 0.25,
            phi_h: -0.4,
            phi_k: 0.8,
        };
        // Mirroring across x-z flips the frontal angle sign and keeps the
        // sagittal ones.
        let angles_r = JointAngles {
            gamma_h: -0.25,
            phi_h: -0.4,
            phi_k: 0.8,
        };
        let p_b = Vector3::new(0.3, 0.1, 0.9);
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0));
        let r_b = rot_x(0.1) * rot_y(0.2);
        let r_b_mirror = m * r_b * m;
        let left = forward_kinematics(&p_b, &r_b, &angles_l, &params.geometry(Side::Left));
        let right =
            forward_kinematics(&flip(p_b), &r_b_mirror, &angles_r, &params.geometry(Side::Right));
        assert_relative_eq!(right.foot, flip(left.foot), epsilon = 1e-12);
        assert_relative_eq!(right.knee, flip(left.knee), epsilon = 1e-12);
        assert_relative_eq!(right.hip, flip(left.hip), epsilon = 1e-12);
    }

    #[test]
    fn fk_matches_term_by_term_composition() {
        // Independent evaluation composing each chain term explicitly.
        let g = test_geom();
        let mut rng = crate::checks::test_rng(11);
        for _ in 0..50 {
            let (p_b, r_b, angles) = crate::checks::random_pose(&mut rng);
            let pts = forward_kinematics(&p_b, &r_b, &angles, &g);

            let a1 = rot_x(angles.gamma_h);
            let ry = rot_y(angles.phi_h);
            let p_p = p_b + r_b * g.l1;
            let p_h = p_p + r_b * a1 * g.l2;
            let p_k = p_h + r_b * a1 * ry * g.l3;
            let (s, c) = angles.phi_k.sin_cos();
            let l4 = Vector3::new(-g.l4a * c, 0.0, -(g.l4b + g.l4a * s));
            let p_f = p_k + r_b * a1 * ry * l4;
            let p_t = p_b + r_b * g.lt;

            assert_relative_eq!(pts.pelvis, p_p, epsilon = 1e-12);
            assert_relative_eq!(pts.hip, p_h, epsilon = 1e-12);
            assert_relative_eq!(pts.knee, p_k, epsilon = 1e-12);
            assert_relative_eq!(pts.foot, p_f, epsilon = 1e-12);
            assert_relative_eq!(pts.thruster, p_t, epsilon = 1e-12);
        }
    }

    #[test]
    fn jacobian_pdot_block_is_identity() {
        let params = RobotParams::reference();
        let state = RobotState::example_moving();
        for sel in [
            PointSelector::Body,
            PointSelector::Hip(Side::Left),
            PointSelector::Foot(Side::Right),
            PointSelector::Thruster(Side::Left),
        ] {
            let (j, _) = point_jacobian(&state, &params, sel);
            let block = j.fixed_view::<3, 3>(0, COL_PDOT).into_owned();
            assert_relative_eq!(block, Matrix3::identity(), epsilon = 1e-15);
        }
    }

    #[test]
    fn jacobian_matches_finite_difference_velocity() {
        let params = RobotParams::reference();
        let mut rng = crate::checks::test_rng(7);
        for _ in 0..20 {
            let state = crate::checks::random_state(&mut rng, 1.0);
            for sel in [
                PointSelector::Foot(Side::Left),
                PointSelector::Foot(Side::Right),
                PointSelector::Knee(Side::Left),
                PointSelector::Hip(Side::Right),
                PointSelector::Thruster(Side::Right),
            ] {
                let (j, _) = point_jacobian(&state, &params, sel);
                let j_fd = crate::checks::fd_point_jacobian(&state, &params, sel, 1e-6);
                assert_relative_eq!(j, j_fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn jacobian_rate_matches_finite_difference() {
        let params = RobotParams::reference();
        let mut rng = crate::checks::test_rng(8);
        for _ in 0..20 {
            let state = crate::checks::random_state(&mut rng, 1.0);
            for sel in [
                PointSelector::Foot(Side::Left),
                PointSelector::Knee(Side::Right),
                PointSelector::Hip(Side::Left),
            ] {
                let (_, jd) = point_jacobian(&state, &params, sel);
                let jd_fd = crate::checks::fd_point_jacobian_rate(&state, &params, sel, 1e-6);
                let v = state.velocity();
                assert_relative_eq!(jd * v, jd_fd * v, epsilon = 1e-5);
            }
        }
    }
}
