//! Compliant unilateral ground contact with Stribeck friction on a slope.
//!
//! Contact is evaluated in a slope-aligned frame whose x-axis points uphill
//! and whose z-axis is the outward surface normal. The normal force is a
//! one-sided spring-damper with undamped rebound; the tangential force is a
//! Stribeck friction curve (static -> Coulomb blend plus viscous drag)
//! applied independently per tangential axis.
//!
//! Two regularizations keep the model well-posed inside a fixed-step
//! integrator and keep the plant inside the static friction cone:
//! the sign function is replaced by a linear taper within `v_reg` of zero
//! velocity (removing the discontinuity at rest), and the tangential
//! magnitude is saturated at `mu_s * f_z` per axis (the raw curve exceeds
//! the static envelope slightly in the creep regime where the viscous term
//! dominates the Stribeck decay).

use nalgebra::{Matrix3, SVector, Vector3};

use crate::dynamics::{RobotParams, RobotState, NG};
use crate::spatial::{forward_kinematics, point_jacobian, rot_y, PointSelector, Side};

/// Ground stiffness, damping, friction coefficients, and slope angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundParams {
    /// Slope inclination, radians. The surface ascends toward +x inertial.
    pub slope_alpha: f64,
    /// Normal spring stiffness, N/m.
    pub k_gp: f64,
    /// Normal damping, N·s/m (active only while penetrating deeper).
    pub k_gd: f64,
    /// Static friction coefficient.
    pub mu_s: f64,
    /// Coulomb (kinetic) friction coefficient.
    pub mu_c: f64,
    /// Viscous friction coefficient, N·s/m.
    pub mu_v: f64,
    /// Stribeck velocity scale, m/s.
    pub v_s: f64,
    /// Sliding-velocity half-width of the linear stiction taper, m/s.
    pub v_reg: f64,
}

impl GroundParams {
    /// Reference ground: stiff spring, 30 degree incline.
    pub fn reference() -> GroundParams {
        GroundParams {
            slope_alpha: 30f64.to_radians(),
            k_gp: 8000.0,
            k_gd: 268.0,
            mu_s: 0.8,
            mu_c: 0.64,
            mu_v: 0.8,
            v_s: 0.1,
            v_reg: 1e-3,
        }
    }
}

/// Contact force at one foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundForce {
    /// Force in the slope-aligned frame (x uphill, z surface normal), N.
    pub f_slope: Vector3<f64>,
    /// The same force rotated into the inertial frame, N.
    pub f_inertial: Vector3<f64>,
    /// Foot below the surface?
    pub contact: bool,
    /// Penetration depth (positive below surface), m.
    pub depth: f64,
}

impl GroundForce {
    pub fn zero() -> GroundForce {
        GroundForce {
            f_slope: Vector3::zeros(),
            f_inertial: Vector3::zeros(),
            contact: false,
            depth: 0.0,
        }
    }
}

/// Rotation taking slope-frame coordinates to inertial coordinates.
/// Columns are the uphill tangent (cos a, 0, sin a), the lateral axis y,
/// and the surface normal (-sin a, 0, cos a).
pub fn slope_rotation(alpha: f64) -> Matrix3<f64> {
    rot_y(-alpha)
}

/// One-sided normal force: spring against penetration, damping only while
/// penetrating deeper (undamped rebound), clamped non-negative, zero at or
/// above the surface.
pub fn normal_force(p_fz: f64, p_fz_dot: f64, g: &GroundParams) -> f64 {
    if p_fz >= 0.0 {
        return 0.0;
    }
    let damping = if p_fz_dot > 0.0 { 0.0 } else { -g.k_gd * p_fz_dot };
    (-g.k_gp * p_fz + damping).max(0.0)
}

/// Velocity-dependent friction coefficient: mu_s at rest decaying to mu_c
/// with the Stribeck exponential.
pub fn stribeck_coefficient(v_t: f64, g: &GroundParams) -> f64 {
    g.mu_c + (g.mu_s - g.mu_c) * (-(v_t * v_t) / (g.v_s * g.v_s)).exp()
}

/// Tangential friction force on one slope-frame axis, opposing `v_t`.
///
/// The Stribeck + viscous magnitude is tapered linearly through +-`v_reg`
/// instead of switching sign discontinuously, and saturated at the static
/// envelope `mu_s * f_z`.
pub fn tangential_friction(v_t: f64, f_z: f64, g: &GroundParams) -> f64 {
    if f_z <= 0.0 {
        return 0.0;
    }
    let taper = (v_t / g.v_reg).clamp(-1.0, 1.0);
    let raw = stribeck_coefficient(v_t, g) * f_z * taper + g.mu_v * v_t;
    let cap = g.mu_s * f_z;
    -raw.clamp(-cap, cap)
}

/// Contact force of a single foot given its inertial position and velocity.
pub fn foot_force(
    p_foot: &Vector3<f64>,
    v_foot: &Vector3<f64>,
    g: &GroundParams,
) -> GroundForce {
    let r_is = slope_rotation(g.slope_alpha);
    let p_s = r_is.transpose() * p_foot;
    let v_s = r_is.transpose() * v_foot;

    let f_z = normal_force(p_s.z, v_s.z, g);
    let f_slope = Vector3::new(
        tangential_friction(v_s.x, f_z, g),
        tangential_friction(v_s.y, f_z, g),
        f_z,
    );
    GroundForce {
        f_slope,
        f_inertial: r_is * f_slope,
        contact: p_s.z < 0.0,
        depth: -p_s.z.min(0.0),
    }
}

/// Ground forces at both feet: the stacked inertial-frame 6-vector for the
/// equations of motion plus the per-foot diagnostics, ordered [left, right].
pub fn ground_wrench(
    state: &RobotState,
    params: &RobotParams,
    g: &GroundParams,
) -> (SVector<f64, NG>, [GroundForce; 2]) {
    let v = state.velocity();
    let mut u_g = SVector::<f64, NG>::zeros();
    let mut forces = [GroundForce::zero(); 2];

    for side in [Side::Left, Side::Right] {
        let pts = forward_kinematics(
            &state.p_b,
            &state.r_b,
            &state.joint_angles(side),
            &params.geometry(side),
        );
        let (j_foot, _) = point_jacobian(state, params, PointSelector::Foot(side));
        let v_foot = j_foot * v;
        let gf = foot_force(&pts.foot, &v_foot, g);
        u_g.fixed_rows_mut::<3>(3 * side.index())
            .copy_from(&gf.f_inertial);
        forces[side.index()] = gf;
    }

    (u_g, forces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g() -> GroundParams {
        GroundParams::reference()
    }

    #[test]
    fn no_force_above_the_surface() {
        assert_eq!(normal_force(0.01, -2.0, &g()), 0.0);
        assert_eq!(normal_force(0.0, -2.0, &g()), 0.0);
    }

    #[test]
    fn spring_force_at_one_millimeter() {
        assert_relative_eq!(normal_force(-0.001, 0.0, &g()), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn rebound_is_undamped() {
        // Moving out of the ground: damping dropped, spring term remains.
        assert_relative_eq!(normal_force(-0.001, 0.5, &g()), 8.0, epsilon = 1e-12);
        // Moving into the ground: damping adds.
        assert_relative_eq!(
            normal_force(-0.001, -0.5, &g()),
            8.0 + 268.0 * 0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn friction_is_zero_at_rest() {
        assert_eq!(tangential_friction(0.0, 10.0, &g()), 0.0);
    }

    #[test]
    fn fast_sliding_is_coulomb_plus_viscous() {
        // At 1 m/s the Stribeck exponential is ~e^-100: pure Coulomb +
        // viscous, below the static cap.
        assert_relative_eq!(tangential_friction(1.0, 10.0, &g()), -7.2, epsilon = 1e-9);
        assert_relative_eq!(tangential_friction(-1.0, 10.0, &g()), 7.2, epsilon = 1e-9);
    }

    #[test]
    fn static_coefficient_is_the_zero_velocity_limit() {
        let p = g();
        assert_relative_eq!(stribeck_coefficient(0.0, &p), p.mu_s, epsilon = 1e-15);
        assert_relative_eq!(stribeck_coefficient(1e-6, &p), p.mu_s, epsilon = 1e-9);
        assert!(stribeck_coefficient(10.0, &p) - p.mu_c < 1e-12);
    }

    #[test]
    fn stribeck_curve_decays_monotonically() {
        let p = g();
        let mut prev = stribeck_coefficient(0.0, &p);
        for k in 1..200 {
            let mu = stribeck_coefficient(0.005 * k as f64, &p);
            assert!(mu <= prev + 1e-15);
            assert!(mu >= p.mu_c - 1e-15);
            prev = mu;
        }
    }

    #[test]
    fn slope_rotation_maps_axes() {
        let a = 30f64.to_radians();
        let r = slope_rotation(a);
        let uphill = r * Vector3::x();
        let normal = r * Vector3::z();
        assert_relative_eq!(
            uphill,
            Vector3::new(a.cos(), 0.0, a.sin()),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            normal,
            Vector3::new(-a.sin(), 0.0, a.cos()),
            epsilon = 1e-12
        );
    }

    #[test]
    fn foot_on_surface_plane_has_no_contact() {
        let p = g();
        // A point on the inclined surface: z_slope = 0 exactly.
        let on_surface = slope_rotation(p.slope_alpha) * Vector3::new(0.7, 0.2, 0.0);
        let gf = foot_force(&on_surface, &Vector3::zeros(), &p);
        assert!(!gf.contact);
        assert_eq!(gf.f_slope, Vector3::zeros());
    }

    #[test]
    fn penetrating_foot_pushes_along_surface_normal() {
        let p = g();
        let r = slope_rotation(p.slope_alpha);
        let below = r * Vector3::new(0.3, -0.1, -0.002);
        let gf = foot_force(&below, &Vector3::zeros(), &p);
        assert!(gf.contact);
        assert_relative_eq!(gf.depth, 0.002, epsilon = 1e-12);
        assert_relative_eq!(gf.f_slope.z, 16.0, epsilon = 1e-9);
        assert_relative_eq!(gf.f_slope.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(gf.f_inertial, r * gf.f_slope, epsilon = 1e-12);
    }

    #[test]
    fn ground_wrench_is_zero_with_both_feet_in_the_air() {
        let params = crate::dynamics::RobotParams::reference();
        let state = crate::dynamics::RobotState::standing(
            Vector3::new(0.0, 0.0, 5.0),
            Default::default(),
            Default::default(),
        );
        let (u_g, forces) = ground_wrench(&state, &params, &g());
        assert_eq!(u_g, SVector::<f64, NG>::zeros());
        assert!(!forces[0].contact && !forces[1].contact);
    }

    #[test]
    fn flat_ground_wrench_matches_single_foot_normal() {
        // Flat ground, robot low enough that both feet penetrate: the
        // stacked wrench components are plain normal forces.
        let params = crate::dynamics::RobotParams::reference();
        let mut p = g();
        p.slope_alpha = 0.0;
        let angles = crate::spatial::JointAngles {
            gamma_h: 0.0,
            phi_h: -0.6,
            phi_k: 0.9,
        };
        let state = crate::dynamics::RobotState::standing(Vector3::zeros(), angles, angles);
        let pts = forward_kinematics(
            &state.p_b,
            &state.r_b,
            &angles,
            &params.geometry(Side::Left),
        );
        assert!(pts.foot.z < 0.0, "test pose must penetrate, z={}", pts.foot.z);
        let (u_g, forces) = ground_wrench(&state, &params, &p);
        let expect = normal_force(pts.foot.z, 0.0, &p);
        assert_relative_eq!(forces[0].f_slope.z, expect, epsilon = 1e-9);
        assert_relative_eq!(u_g[2], expect, epsilon = 1e-9);
        assert_relative_eq!(u_g[5], expect, epsilon = 1e-9);
        // At rest there is no tangential force.
        assert_relative_eq!(u_g[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(u_g[1], 0.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn normal_force_is_never_negative(
            z in -0.05f64..0.05,
            zdot in -5.0f64..5.0,
        ) {
            prop_assert!(normal_force(z, zdot, &g()) >= 0.0);
        }

        #[test]
        fn friction_opposes_sliding(
            v in prop_oneof![-3.0f64..-1e-9, 1e-9f64..3.0],
            fz in 0.1f64..200.0,
        ) {
            let f = tangential_friction(v, fz, &g());
            prop_assert!(f * v <= 0.0, "friction {} does not oppose v {}", f, v);
        }

        #[test]
        fn friction_respects_static_envelope(
            v in -3.0f64..3.0,
            fz in 0.0f64..200.0,
        ) {
            let f = tangential_friction(v, fz, &g());
            prop_assert!(f.abs() <= 0.8 * fz + 1e-12);
        }
    }
}
