//! Swing-leg trajectory generation, leg inverse kinematics, joint-space
//! PID tracking, and the stance/swing switching state machine.
//!
//! Swing-foot references are fourth-order Bezier curves in the slope frame
//! with repeated end coefficients, which pins the endpoint velocities to
//! zero. A step completes when the phase variable passes 0.75 and the swing
//! foot feels ground contact, or unconditionally at phase 1.1; the feet then
//! exchange roles and a fresh trajectory is laid from the new swing foot to
//! a point one step length ahead of the new stance foot. The early-accept
//! window matters: refusing a real landing leaves the robot propped on a
//! foot it still treats as airborne, and the touchdown moment then tips it
//! with no stance exchange to catch it.

use nalgebra::Vector3;

use crate::spatial::{JointAngles, LegGeometry, Side};

/// Evaluate a fourth-order Bezier curve (five coefficients) and its
/// derivative with respect to the phase `s`. Phases outside [0, 1] are
/// clamped with a logged warning.
pub fn bezier_eval(beta: &[f64; 5], s: f64) -> (f64, f64) {
    let s = if (0.0..=1.0).contains(&s) {
        s
    } else {
        log::warn!("bezier phase {} outside [0, 1]; clamping", s);
        s.clamp(0.0, 1.0)
    };
    let t = 1.0 - s;
    // Bernstein basis of degree 4: C(4,k) s^k (1-s)^(4-k).
    let b = [
        t * t * t * t,
        4.0 * s * t * t * t,
        6.0 * s * s * t * t,
        4.0 * s * s * s * t,
        s * s * s * s,
    ];
    let value = (0..5).map(|k| beta[k] * b[k]).sum();
    // Derivative: degree-3 curve on the coefficient differences.
    let db = [t * t * t, 3.0 * s * t * t, 3.0 * s * s * t, s * s * s];
    let deriv = (0..4).map(|k| 4.0 * (beta[k + 1] - beta[k]) * db[k]).sum();
    (value, deriv)
}

/// One swing-foot reference curve in the slope frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingTrajectory {
    pub beta_x: [f64; 5],
    pub beta_y: [f64; 5],
    pub beta_z: [f64; 5],
}

impl SwingTrajectory {
    /// Lay a curve from `start` to `target` (slope frame) that lifts the
    /// foot by `step_height` at mid-swing and lands with zero velocity.
    pub fn new(start: &Vector3<f64>, target: &Vector3<f64>, step_height: f64) -> SwingTrajectory {
        let mid = |a: f64, b: f64| 0.5 * (a + b);
        // A middle coefficient of 8h/3 above the endpoint average puts the
        // apex of the z curve at exactly step_height above that average.
        let z_mid = mid(start.z, target.z) + 8.0 / 3.0 * step_height;
        SwingTrajectory {
            beta_x: [start.x, start.x, mid(start.x, target.x), target.x, target.x],
            beta_y: [start.y, start.y, mid(start.y, target.y), target.y, target.y],
            beta_z: [start.z, start.z, z_mid, target.z, target.z],
        }
    }

    /// Position and d(position)/d(phase) at phase `s`, held at the target
    /// for `s` beyond one.
    pub fn eval(&self, s: f64) -> (Vector3<f64>, Vector3<f64>) {
        let s = s.clamp(0.0, 1.0);
        let (x, dx) = bezier_eval(&self.beta_x, s);
        let (y, dy) = bezier_eval(&self.beta_y, s);
        let (z, dz) = bezier_eval(&self.beta_z, s);
        (Vector3::new(x, y, z), Vector3::new(dx, dy, dz))
    }
}

/// Inverse-kinematics failure: the target lies outside the leg workspace.
/// `nearest` carries the angles of the closest reachable configuration.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("foot target outside the leg workspace; nearest reachable angles {nearest:?}")]
pub struct IkError {
    pub nearest: JointAngles,
}

/// Joint angles that place the foot at `target` (body frame, relative to
/// the body origin). Uses the knee branch with |phi_k| <= pi/2.
pub fn inverse_kinematics(
    target: &Vector3<f64>,
    geom: &LegGeometry,
) -> Result<JointAngles, IkError> {
    let u = target - geom.l1;
    // Hip roll must carry the fixed lateral offset of the leg plane.
    let r_y = geom.l2.y + geom.l3.y;
    let mut clamped = false;

    let rad = u.y * u.y + u.z * u.z - r_y * r_y;
    if rad < -1e-12 {
        clamped = true;
    }
    // Choose the branch with the foot below the hip line.
    let r_z = -rad.max(0.0).sqrt();
    let gamma_h = f64::atan2(u.z * r_y - u.y * r_z, u.y * r_y + u.z * r_z);

    // In the rolled frame the remaining chain is planar: the hip-to-foot
    // distance in the sagittal plane decides the knee crank angle.
    let d_sq = u.x * u.x + rad.max(0.0);
    let base = geom.l3.z - geom.l4b;
    let sin_k = (geom.l4a * geom.l4a + base * base - d_sq) / (2.0 * geom.l4a * base);
    // Targets exactly on the extension/fold circle land a few ulps outside
    // [-1, 1]; only a genuine overshoot counts as unreachable.
    if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&sin_k) {
        clamped = true;
    }
    let phi_k = sin_k.clamp(-1.0, 1.0).asin();

    // Hip pitch aligns the planar leg vector with the planar target.
    let v_x = -geom.l4a * phi_k.cos();
    let v_z = base - geom.l4a * phi_k.sin();
    let raw = f64::atan2(v_z, v_x) - f64::atan2(r_z, u.x);
    let phi_h = f64::atan2(raw.sin(), raw.cos());

    let angles = JointAngles { gamma_h, phi_h, phi_k };
    if clamped {
        Err(IkError { nearest: angles })
    } else {
        Ok(angles)
    }
}

/// Per-joint PID gains, ordered [gamma_h, phi_h, phi_k].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: Vector3<f64>,
    pub ki: Vector3<f64>,
    pub kd: Vector3<f64>,
    /// Symmetric clamp on each integral channel.
    pub integral_limit: f64,
}

impl PidGains {
    /// Gains tuned for the reference robot. The knee channel commands an
    /// acceleration rather than a torque, hence the stiffer pair.
    pub fn reference() -> PidGains {
        PidGains {
            kp: Vector3::new(80.0, 80.0, 600.0),
            ki: Vector3::new(5.0, 5.0, 0.0),
            kd: Vector3::new(6.0, 2.0, 40.0),
            integral_limit: 10.0,
        }
    }
}

/// PID law on a joint error triple.
pub fn pid_command(
    e: &Vector3<f64>,
    e_dot: &Vector3<f64>,
    integral: &Vector3<f64>,
    gains: &PidGains,
) -> Vector3<f64> {
    gains.kp.component_mul(e) + gains.ki.component_mul(integral) + gains.kd.component_mul(e_dot)
}

/// Step timing, geometry, and swing tracking parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitConfig {
    /// Nominal step period, s.
    pub step_duration: f64,
    /// Forward travel per step along the slope x-axis, m.
    pub step_length: f64,
    /// Mid-swing foot clearance, m.
    pub step_height: f64,
    /// Time the first step begins, s.
    pub start_time: f64,
    /// Swing-foot normal force that counts as touchdown, N.
    pub touchdown_force: f64,
    /// How far below the surface the swing foot is aimed, m; guarantees a
    /// firm touchdown on the compliant ground.
    pub touchdown_depth: f64,
    /// Leg that supports first.
    pub initial_stance: Side,
    pub pid: PidGains,
}

impl GaitConfig {
    pub fn reference() -> GaitConfig {
        GaitConfig {
            step_duration: 0.4,
            step_length: 0.15,
            step_height: 0.05,
            start_time: 0.1,
            touchdown_force: 1.0,
            touchdown_depth: 0.002,
            initial_stance: Side::Left,
            pid: PidGains::reference(),
        }
    }

    /// Average travel speed implied by the step geometry.
    pub fn nominal_speed(&self) -> f64 {
        self.step_length / self.step_duration
    }
}

/// Stance exchange notification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GaitEvent {
    /// Walking began: the first swing trajectory was laid.
    Started { time: f64, stance: Side },
    /// The feet exchanged roles. `forced` means the phase limit expired
    /// before touchdown was felt.
    Switched { time: f64, new_stance: Side, step_index: usize, forced: bool },
}

/// Walking state machine: which leg supports, where the swing foot should
/// be, and the swing PID bookkeeping.
#[derive(Debug, Clone)]
pub struct GaitScheduler {
    config: GaitConfig,
    stance: Side,
    active: bool,
    step_start: f64,
    step_index: usize,
    swing: Option<SwingTrajectory>,
    integral: Vector3<f64>,
    prev_target: Option<JointAngles>,
}

impl GaitScheduler {
    pub fn new(config: GaitConfig) -> GaitScheduler {
        GaitScheduler {
            stance: config.initial_stance,
            active: false,
            step_start: config.start_time,
            step_index: 0,
            swing: None,
            integral: Vector3::zeros(),
            prev_target: None,
            config,
        }
    }

    pub fn config(&self) -> &GaitConfig {
        &self.config
    }

    pub fn stance(&self) -> Side {
        self.stance
    }

    pub fn swing_side(&self) -> Side {
        self.stance.other()
    }

    pub fn active(&self) -> bool {
        self.active
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// Phase of the current step; zero before walking starts.
    pub fn phase(&self, t: f64) -> f64 {
        if !self.active {
            return 0.0;
        }
        (t - self.step_start) / self.config.step_duration
    }

    /// Begin walking: lay the first swing trajectory. `swing_foot` and
    /// `stance_foot` are current positions in the slope frame.
    pub fn begin(&mut self, t: f64, swing_foot: &Vector3<f64>, stance_foot: &Vector3<f64>) -> GaitEvent {
        self.active = true;
        self.step_start = t;
        self.swing = Some(self.lay_trajectory(swing_foot, stance_foot));
        self.integral = Vector3::zeros();
        self.prev_target = None;
        GaitEvent::Started { time: t, stance: self.stance }
    }

    fn lay_trajectory(
        &self,
        swing_foot: &Vector3<f64>,
        stance_foot: &Vector3<f64>,
    ) -> SwingTrajectory {
        let target = Vector3::new(
            stance_foot.x + self.config.step_length,
            swing_foot.y,
            -self.config.touchdown_depth,
        );
        SwingTrajectory::new(swing_foot, &target, self.config.step_height)
    }

    /// Swing-foot reference position and velocity (slope frame) at time `t`.
    pub fn swing_reference(&self, t: f64) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let traj = self.swing.as_ref()?;
        let (pos, d_ds) = traj.eval(self.phase(t));
        Some((pos, d_ds / self.config.step_duration))
    }

    /// Called every plant step while walking: exchange stance and swing if
    /// the swing foot has touched down late in the step, or force the
    /// exchange when the phase limit expires. `swing_foot` / `stance_foot`
    /// are current slope-frame positions used to lay the next trajectory.
    pub fn check_switch(
        &mut self,
        t: f64,
        swing_normal_force: f64,
        swing_foot: &Vector3<f64>,
        stance_foot: &Vector3<f64>,
    ) -> Option<GaitEvent> {
        if !self.active {
            return None;
        }
        let s = self.phase(t);
        let touched = s >= 0.75 && swing_normal_force > self.config.touchdown_force;
        let expired = s >= 1.1;
        if !(touched || expired) {
            return None;
        }

        // Old swing becomes stance; old stance starts swinging from where
        // it stands toward a point one step ahead of the new stance foot.
        self.stance = self.stance.other();
        self.step_index += 1;
        self.step_start = t;
        self.swing = Some(self.lay_trajectory(stance_foot, swing_foot));
        self.integral = Vector3::zeros();
        self.prev_target = None;
        Some(GaitEvent::Switched {
            time: t,
            new_stance: self.stance,
            step_index: self.step_index,
            forced: expired && !touched,
        })
    }

    /// Swing joint command from PID tracking of the IK targets. Target
    /// rates come from differencing successive targets at the control rate.
    pub fn swing_joint_command(
        &mut self,
        dt: f64,
        target: &JointAngles,
        measured: &JointAngles,
        measured_rates: &Vector3<f64>,
    ) -> Vector3<f64> {
        let target_v = target.to_vector();
        let rate = match self.prev_target {
            Some(prev) => (target_v - prev.to_vector()) / dt,
            None => Vector3::zeros(),
        };
        self.prev_target = Some(*target);

        let e = target_v - measured.to_vector();
        let e_dot = rate - measured_rates;
        let lim = self.config.pid.integral_limit;
        self.integral = (self.integral + e * dt).map(|x| x.clamp(-lim, lim));
        pid_command(&e, &e_dot, &self.integral, &self.config.pid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotParams;
    use crate::spatial::forward_kinematics;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::Rng;

    #[test]
    fn bezier_reference_curve_values() {
        let beta = [0.0, 0.0, 1.0, 2.0, 2.0];
        let (v0, d0) = bezier_eval(&beta, 0.0);
        let (vm, _) = bezier_eval(&beta, 0.5);
        let (v1, d1) = bezier_eval(&beta, 1.0);
        assert_relative_eq!(v0, 0.0, epsilon = 1e-15);
        assert_relative_eq!(vm, 1.0, epsilon = 1e-15);
        assert_relative_eq!(v1, 2.0, epsilon = 1e-15);
        // Repeated end coefficients pin the endpoint derivatives to zero.
        assert_relative_eq!(d0, 0.0, epsilon = 1e-15);
        assert_relative_eq!(d1, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bezier_derivative_matches_finite_differences() {
        let mut rng = crate::checks::test_rng(61);
        for _ in 0..20 {
            let beta: [f64; 5] = core::array::from_fn(|_| rng.gen_range(-2.0..2.0));
            let s = rng.gen_range(0.01..0.99);
            let h = 1e-6;
            let (_, d) = bezier_eval(&beta, s);
            let (vp, _) = bezier_eval(&beta, s + h);
            let (vmn, _) = bezier_eval(&beta, s - h);
            assert_relative_eq!(d, (vp - vmn) / (2.0 * h), epsilon = 1e-7);
        }
    }

    #[test]
    fn out_of_range_phase_is_clamped() {
        let beta = [0.0, 0.0, 1.0, 2.0, 2.0];
        assert_eq!(bezier_eval(&beta, 1.3).0, bezier_eval(&beta, 1.0).0);
        assert_eq!(bezier_eval(&beta, -0.2).0, bezier_eval(&beta, 0.0).0);
    }

    #[test]
    fn swing_curve_lifts_to_step_height_and_lands_softly() {
        let start = Vector3::new(0.0, 0.6, 0.0);
        let target = Vector3::new(0.15, 0.6, 0.0);
        let traj = SwingTrajectory::new(&start, &target, 0.05);
        let (p0, v0) = traj.eval(0.0);
        let (pm, _) = traj.eval(0.5);
        let (p1, v1) = traj.eval(1.0);
        assert_relative_eq!(p0, start, epsilon = 1e-15);
        assert_relative_eq!(p1, target, epsilon = 1e-15);
        assert_relative_eq!(pm.z, 0.05, epsilon = 1e-15);
        assert_relative_eq!(pm.x, 0.075, epsilon = 1e-15);
        assert_relative_eq!(v0.norm(), 0.0, epsilon = 1e-15);
        assert_relative_eq!(v1.norm(), 0.0, epsilon = 1e-15);
        // The apex is the peak: z is lower shortly before and after.
        assert!(traj.eval(0.4).0.z < pm.z);
        assert!(traj.eval(0.6).0.z < pm.z);
    }

    #[test]
    fn round_trip_through_forward_kinematics() {
        let params = RobotParams::reference();
        let mut rng = crate::checks::test_rng(62);
        for side in [Side::Left, Side::Right] {
            let geom = params.geometry(side);
            for _ in 0..50 {
                let angles = JointAngles {
                    gamma_h: rng.gen_range(-0.5..0.5),
                    phi_h: rng.gen_range(-1.2..1.2),
                    phi_k: rng.gen_range(-1.4..1.4),
                };
                let pts =
                    forward_kinematics(&Vector3::zeros(), &Matrix3::identity(), &angles, &geom);
                let solved = inverse_kinematics(&pts.foot, &geom).unwrap();
                assert_relative_eq!(solved.gamma_h, angles.gamma_h, epsilon = 1e-9);
                assert_relative_eq!(solved.phi_h, angles.phi_h, epsilon = 1e-9);
                assert_relative_eq!(solved.phi_k, angles.phi_k, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn straight_and_folded_legs_sit_on_the_branch_limits() {
        let geom = RobotParams::reference().geometry(Side::Left);
        // Fully extended: hip-to-foot distance 0.4 straight down.
        let target = geom.l1 + Vector3::new(0.0, geom.l2.y, -0.4);
        let angles = inverse_kinematics(&target, &geom).unwrap();
        assert_relative_eq!(angles.phi_k, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        // Fully folded: distance 0.2.
        let target = geom.l1 + Vector3::new(0.0, geom.l2.y, -0.2);
        let angles = inverse_kinematics(&target, &geom).unwrap();
        assert_relative_eq!(angles.phi_k, -std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
    }

    #[test]
    fn unreachable_targets_return_the_nearest_pose() {
        let geom = RobotParams::reference().geometry(Side::Left);
        // One millimeter beyond full extension.
        let target = geom.l1 + Vector3::new(0.0, geom.l2.y, -0.401);
        let err = inverse_kinematics(&target, &geom).unwrap_err();
        assert_relative_eq!(err.nearest.phi_k, std::f64::consts::FRAC_PI_2, epsilon = 1e-9);
        // Laterally impossible: closer to the hip than the fixed offset.
        let target = Vector3::new(0.0, 0.0, 0.0);
        assert!(inverse_kinematics(&target, &geom).is_err());
    }

    #[test]
    fn proportional_term_alone_scales_the_error() {
        let gains = PidGains {
            kp: Vector3::from_element(50.0),
            ki: Vector3::zeros(),
            kd: Vector3::zeros(),
            integral_limit: 10.0,
        };
        let out = pid_command(
            &Vector3::new(0.1, 0.0, 0.0),
            &Vector3::zeros(),
            &Vector3::zeros(),
            &gains,
        );
        assert_relative_eq!(out, Vector3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn integral_channel_saturates() {
        let mut config = GaitConfig::reference();
        config.pid = PidGains {
            kp: Vector3::zeros(),
            ki: Vector3::from_element(1.0),
            kd: Vector3::zeros(),
            integral_limit: 0.5,
        };
        let mut sched = GaitScheduler::new(config);
        let target = JointAngles { gamma_h: 100.0, phi_h: 0.0, phi_k: 0.0 };
        let measured = JointAngles::default();
        let mut out = Vector3::zeros();
        for _ in 0..200 {
            out = sched.swing_joint_command(0.01, &target, &measured, &Vector3::zeros());
        }
        assert_relative_eq!(out.x, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn touchdown_and_phase_limit_drive_switching() {
        let mut sched = GaitScheduler::new(GaitConfig::reference());
        let left = Vector3::new(0.0, 0.6, 0.0);
        let right = Vector3::new(0.0, -0.6, 0.0);
        assert!(!sched.active());
        sched.begin(0.1, &right, &left);
        assert!(sched.active());
        assert_eq!(sched.stance(), Side::Left);
        assert_eq!(sched.swing_side(), Side::Right);
        assert_relative_eq!(sched.phase(0.3), 0.5, epsilon = 1e-12);

        // Early contact is ignored; mid-phase heavy contact is ignored.
        assert!(sched.check_switch(0.3, 50.0, &right, &left).is_none());
        // Late contact above the force threshold switches.
        let ev = sched.check_switch(0.1 + 0.38, 2.0, &right, &left).unwrap();
        match ev {
            GaitEvent::Switched { new_stance, forced, step_index, .. } => {
                assert_eq!(new_stance, Side::Right);
                assert!(!forced);
                assert_eq!(step_index, 1);
            }
            _ => panic!("expected a switch"),
        }
        assert_eq!(sched.stance(), Side::Right);

        // No contact at all: the phase limit forces the exchange.
        let t_forced = 0.48 + 1.1 * 0.4;
        assert!(sched.check_switch(t_forced - 0.01, 0.0, &left, &right).is_none());
        let ev = sched.check_switch(t_forced, 0.0, &left, &right).unwrap();
        match ev {
            GaitEvent::Switched { forced, new_stance, .. } => {
                assert!(forced);
                assert_eq!(new_stance, Side::Left);
            }
            _ => panic!("expected a forced switch"),
        }
    }

    #[test]
    fn new_trajectory_targets_one_step_ahead_of_stance() {
        let config = GaitConfig::reference();
        let mut sched = GaitScheduler::new(config);
        let stance = Vector3::new(0.2, 0.6, -0.001);
        let swing = Vector3::new(0.05, -0.6, 0.04);
        sched.begin(0.1, &swing, &stance);
        let (p0, _) = sched.swing_reference(0.1).unwrap();
        assert_relative_eq!(p0, swing, epsilon = 1e-12);
        let (p1, _) = sched.swing_reference(0.1 + config.step_duration).unwrap();
        assert_relative_eq!(p1.x, stance.x + config.step_length, epsilon = 1e-12);
        assert_relative_eq!(p1.y, swing.y, epsilon = 1e-12);
        assert_relative_eq!(p1.z, -config.touchdown_depth, epsilon = 1e-12);
    }
}
