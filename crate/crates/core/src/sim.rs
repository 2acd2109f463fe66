//! Closed-loop simulation of the walking pipeline.
//!
//! The plant — the full rigid-body model on compliant ground — integrates
//! with classical RK4 at a fast step (0.5 ms by default). The controller
//! runs at a slower rate (10 ms) and its outputs are held between ticks:
//! each tick measures the state, linearizes the reduced model about the
//! measured operating point, plans a leg-force sequence with the
//! receding-horizon QP, maps the first planned force to thruster commands,
//! tracks the swing-foot curve with joint PID, and solves the stance KKT
//! system for stance torques.
//!
//! The body rotation matrix is re-orthonormalized after every plant step so
//! integration drift cannot accumulate into the kinematics. By default the
//! plant also locks lateral translation, roll, and yaw with a constraint
//! force (the controller assumes the same lock), so the sagittal gait can
//! be studied without a lateral stabilizer.

use crate::contact::{ground_wrench, slope_rotation, GroundForce, GroundParams};
use crate::dynamics::{
    dynamics_terms, forward_dynamics, massive_cholesky, thruster_generalized_force, DynamicsError,
    GeneralizedInputs, RobotParams, RobotState, NG, NU, NV, NX,
};
use crate::gait::{inverse_kinematics, pid_command, GaitConfig, GaitEvent, GaitScheduler};
use crate::mpc::{mpc_step, MpcConfig, MpcError};
use crate::qp::QpStatus;
use crate::rom::{OperatingPoint, RomLinearization, RomParams, RomState};
use crate::spatial::{forward_kinematics, point_jacobian, skew, JointAngles, PointSelector, Side};
use crate::wbc::{
    embedded_ground_force, lateral_lock_rows, stance_torque, thruster_from_rom, ControlCommand,
    WbcProblem,
};
use nalgebra::{Matrix3, Matrix4, SVector, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// A derivative evaluation produced a non-finite entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("non-finite derivative in state component {component}")]
pub struct IntegrationError {
    pub component: usize,
}

fn check_finite<const N: usize>(x: &SVector<f64, N>) -> Result<(), IntegrationError> {
    for (component, value) in x.iter().enumerate() {
        if !value.is_finite() {
            return Err(IntegrationError { component });
        }
    }
    Ok(())
}

/// One classical fourth-order Runge-Kutta step of `x' = f(t, x)`.
pub fn rk4_step<const N: usize>(
    mut f: impl FnMut(f64, &SVector<f64, N>) -> SVector<f64, N>,
    t: f64,
    x: &SVector<f64, N>,
    dt: f64,
) -> Result<SVector<f64, N>, IntegrationError> {
    let k1 = f(t, x);
    check_finite(&k1)?;
    let k2 = f(t + 0.5 * dt, &(x + 0.5 * dt * k1));
    check_finite(&k2)?;
    let k3 = f(t + 0.5 * dt, &(x + 0.5 * dt * k2));
    check_finite(&k3)?;
    let k4 = f(t + dt, &(x + dt * k3));
    check_finite(&k4)?;
    Ok(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

/// The matrix handed to [`reorthonormalize`] was not a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("rotation matrix degenerated (determinant {det:.3e})")]
pub struct OrthonormalizeError {
    pub det: f64,
}

/// Project a near-rotation matrix back onto the rotation group.
///
/// Newton iteration on the orthogonal polar factor, `X <- (X + X^-T) / 2`,
/// converges quadratically to the nearest orthogonal matrix; a proper
/// rotation input with small integration drift needs one or two steps.
/// Inputs with non-positive determinant (reflections, collapsed axes) are
/// rejected rather than silently flipped.
pub fn reorthonormalize(r: &Matrix3<f64>) -> Result<Matrix3<f64>, OrthonormalizeError> {
    let det = r.determinant();
    if !det.is_finite() || det <= 0.0 {
        return Err(OrthonormalizeError { det });
    }
    let mut x = *r;
    for _ in 0..12 {
        let drift = (x.transpose() * x - Matrix3::identity()).abs().max();
        if drift < 1e-14 {
            return Ok(x);
        }
        let inv_t = match x.try_inverse() {
            Some(inv) => inv.transpose(),
            None => return Err(OrthonormalizeError { det }),
        };
        x = 0.5 * (x + inv_t);
    }
    Err(OrthonormalizeError { det })
}

/// Forward dynamics with lateral translation, roll, and yaw locked by an
/// ideal constraint force. The lock is enforced at acceleration level with
/// a velocity-proportional stabilization term (`J a = -beta J v`), so any
/// drift that leaks in decays instead of accumulating. Knee channels pass
/// the commanded accelerations through untouched, as in the free model.
pub fn planar_forward_dynamics(
    state: &RobotState,
    params: &RobotParams,
    inputs: &GeneralizedInputs,
    baumgarte: f64,
) -> Result<SVector<f64, NV>, DynamicsError> {
    let terms = dynamics_terms(state, params);
    let rhs_full = terms.b_j * inputs.u_j + terms.b_g * inputs.u_g + inputs.u_t - terms.h;
    let chol = massive_cholesky(&terms.m)?;

    let j_full = lateral_lock_rows();
    let j10 = j_full.fixed_columns::<10>(0).into_owned();

    // Schur complement on the factored mass block: a = x + Y lambda with
    // S lambda = target - J x, S = J M^-1 J' (symmetric positive definite).
    let x = chol.solve(&rhs_full.fixed_rows::<10>(0).into_owned());
    let y = chol.solve(&j10.transpose());
    let s = j10 * y;
    let target = -baumgarte * (j_full * state.velocity());
    let lambda = s
        .cholesky()
        .ok_or(DynamicsError::NotPositiveDefinite)?
        .solve(&(target - j10 * x));

    let a10 = x + y * lambda;
    let mut a = SVector::<f64, NV>::zeros();
    a.fixed_rows_mut::<10>(0).copy_from(&a10);
    a[10] = inputs.u_j[4];
    a[11] = inputs.u_j[5];
    Ok(a)
}

/// What the simulation drives the robot with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Full pipeline: force planner, thrusters, stance torque, stepping.
    Walk,
    /// Joint PID holds the launch pose on both legs; no thrust, no planner.
    Stand,
    /// All inputs zero.
    Passive,
}

/// Everything a run needs. `reference()` reproduces the nominal experiment:
/// a 10 s climb of the 30-degree slope.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub duration: f64,
    /// Plant integration step, s.
    pub dt_plant: f64,
    /// Controller period, s; must be an integer multiple of `dt_plant`.
    pub dt_ctrl: f64,
    pub seed: u64,
    /// Uniform bound of the seeded initial joint-rate perturbation, rad/s.
    pub perturbation: f64,
    /// Lock lateral translation, roll, and yaw in the plant.
    pub planar: bool,
    pub mode: SimMode,
    /// Commanded travel speed along the slope, m/s; `None` uses the speed
    /// implied by the step geometry.
    pub v_ref: Option<f64>,
    /// Nominal body height above the stance foot, m.
    pub z0: f64,
    /// Body-height loop fed to the thruster map:
    /// `zdd = kp (z0 - z) - kd z_dot`.
    pub height_kp: f64,
    pub height_kd: f64,
    /// Velocity gain of the planar-lock stabilization.
    pub baumgarte: f64,
    /// Smallest normal leg load the stance execution carries, N. The
    /// planner's floor keeps its own plan feasible, but a nearly unloaded
    /// foot has almost no friction authority, and the stance leg is what
    /// holds the body's attitude through the planted foot. The executed
    /// load is the planned one floored here; the thrusters carry the
    /// complement either way.
    pub stance_preload: f64,
    pub robot: RobotParams,
    pub ground: GroundParams,
    pub mpc: MpcConfig,
    pub gait: GaitConfig,
}

impl SimConfig {
    pub fn reference() -> SimConfig {
        SimConfig {
            duration: 10.0,
            dt_plant: 5e-4,
            dt_ctrl: 1e-2,
            seed: 0,
            perturbation: 0.0,
            planar: true,
            mode: SimMode::Walk,
            v_ref: None,
            z0: 0.45,
            height_kp: 40.0,
            height_kd: 12.0,
            baumgarte: 20.0,
            stance_preload: 12.0,
            robot: RobotParams::reference(),
            ground: GroundParams::reference(),
            mpc: MpcConfig::reference(),
            gait: GaitConfig::reference(),
        }
    }

    /// Commanded travel speed.
    pub fn reference_speed(&self) -> f64 {
        self.v_ref.unwrap_or_else(|| self.gait.nominal_speed())
    }

    /// Reduced-model parameters implied by this configuration.
    pub fn rom_params(&self) -> RomParams {
        RomParams {
            m: self.robot.mass.total_mass(),
            z0: self.z0,
            alpha: self.ground.slope_alpha,
            g: self.robot.gravity,
        }
    }
}

/// Why a run stopped early.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("dynamics failed at t={time:.4}s: {source}")]
    Dynamics {
        time: f64,
        source: DynamicsError,
    },
    #[error("integration failed at t={time:.4}s: {source}")]
    Integration {
        time: f64,
        source: IntegrationError,
    },
    #[error("body rotation left the rotation group at t={time:.4}s: {source}")]
    Rotation {
        time: f64,
        source: OrthonormalizeError,
    },
    #[error("state component {component} became non-finite at t={time:.4}s")]
    NonFinite { time: f64, component: usize },
    #[error("force planner infeasible {count} consecutive ticks at t={time:.4}s")]
    PlannerStalled { time: f64, count: usize },
    #[error("launch pose is unreachable: {reason}")]
    Setup { reason: String },
    #[error("configuration invalid: {reason}")]
    Config { reason: String },
}

/// One plant step of the log.
#[derive(Debug, Clone)]
pub struct PlantSample {
    pub t: f64,
    /// Flat state (rotation row-major, positions, velocities).
    pub state: SVector<f64, NX>,
    /// Ground reaction at each foot, `[left, right]`.
    pub grf: [GroundForce; 2],
}

/// One controller tick of the log (Walk mode only).
#[derive(Debug, Clone)]
pub struct CtrlSample {
    pub t: f64,
    pub stance: Side,
    /// Step phase in [0, ~1.1]; zero before stepping starts.
    pub phase: f64,
    /// False during the pre-gait hold, true once stepping is armed.
    pub walking: bool,
    /// Applied leg force [lambda_x, lambda_z] (first plan entry).
    pub lambda: Vector2<f64>,
    /// The full planned force sequence.
    pub plan: Vec<Vector2<f64>>,
    /// Planar thrust [u_tx, u_tz], slope frame.
    pub thrust_planar: Vector2<f64>,
    /// Stance joint inputs [gamma torque, hip torque, knee accel].
    pub u_st: Vector3<f64>,
    /// Swing joint inputs.
    pub u_sw: Vector3<f64>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    /// Wall-clock QP solve time, s (diagnostic; not deterministic).
    pub qp_solve_time: f64,
    pub qp_objective: f64,
    /// Worst friction-cone violation across the plan; <= 0 means the whole
    /// plan sits inside the cone.
    pub plan_cone_margin: f64,
    /// Infinity-norm residuals of the three stance KKT block rows.
    pub wbc_residuals: [f64; 3],
    /// Measured reduced state [body x, body x-dot], slope frame.
    pub rom_x: Vector2<f64>,
    /// Reference for the current tick.
    pub rom_ref: Vector2<f64>,
    /// Sagittal acceleration the planner predicts for this tick.
    pub predicted_accel: f64,
    /// True when the tick fell back to a shifted previous plan or held the
    /// previous torque command.
    pub held: bool,
}

/// A stance exchange.
#[derive(Debug, Clone)]
pub struct StrideEvent {
    pub t: f64,
    pub new_stance: Side,
    pub step_index: usize,
    /// The phase limit expired before touchdown force was felt.
    pub forced: bool,
    /// Flat state with positions made stance-relative in the slope frame;
    /// identical strides produce identical signatures regardless of the
    /// distance travelled.
    pub signature: SVector<f64, NX>,
}

/// Run-level constants the log's summaries need.
#[derive(Debug, Clone, Copy)]
pub struct SimMeta {
    pub alpha: f64,
    pub mu_s: f64,
    pub v_ref: f64,
    pub dt_plant: f64,
    pub dt_ctrl: f64,
    pub gait_start: f64,
    pub z0: f64,
    pub duration: f64,
}

/// Full record of a run.
#[derive(Debug, Clone)]
pub struct TrajectoryLog {
    pub meta: SimMeta,
    pub plant: Vec<PlantSample>,
    pub ctrl: Vec<CtrlSample>,
    pub events: Vec<StrideEvent>,
}

impl TrajectoryLog {
    /// Slope-frame sagittal body position of one plant sample.
    pub fn slope_position(&self, sample: &PlantSample) -> f64 {
        let r_is = slope_rotation(self.meta.alpha);
        let p = Vector3::new(sample.state[9], sample.state[10], sample.state[11]);
        (r_is.transpose() * p).x
    }

    /// Slope-frame sagittal body velocity of one plant sample.
    pub fn slope_velocity(&self, sample: &PlantSample) -> f64 {
        let r_is = slope_rotation(self.meta.alpha);
        let v = Vector3::new(sample.state[21], sample.state[22], sample.state[23]);
        (r_is.transpose() * v).x
    }

    /// Plant samples whose measured ground force leaves the static friction
    /// cone by more than `tol` on either tangential axis.
    pub fn plant_cone_violations(&self, tol: f64) -> usize {
        self.plant
            .iter()
            .map(|s| {
                s.grf
                    .iter()
                    .filter(|f| {
                        f.contact && {
                            let cap = self.meta.mu_s * f.f_slope.z + tol;
                            f.f_slope.x.abs() > cap || f.f_slope.y.abs() > cap
                        }
                    })
                    .count()
            })
            .sum()
    }

    /// Worst planned-force cone violation over all ticks (0 if every plan
    /// stayed inside the cone).
    pub fn max_plan_violation(&self) -> f64 {
        self.ctrl
            .iter()
            .map(|c| c.plan_cone_margin)
            .fold(0.0, f64::max)
    }

    /// Norms of the difference between successive same-side stride
    /// signatures, tagged with the time of the later stride, in time order.
    pub fn stride_diffs(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for side in [Side::Left, Side::Right] {
            let sigs: Vec<&StrideEvent> = self
                .events
                .iter()
                .filter(|e| e.new_stance == side)
                .collect();
            for w in sigs.windows(2) {
                out.push((w[1].t, (w[1].signature - w[0].signature).norm()));
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Median wall-clock QP solve time over all ticks, s.
    pub fn median_qp_solve_time(&self) -> f64 {
        let mut t: Vec<f64> = self.ctrl.iter().map(|c| c.qp_solve_time).collect();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        t[t.len() / 2]
    }

    /// Largest |sagittal velocity - v_ref| over plant samples at t >= after.
    pub fn velocity_error_after(&self, after: f64) -> f64 {
        self.plant
            .iter()
            .filter(|s| s.t >= after)
            .map(|s| (self.slope_velocity(s) - self.meta.v_ref).abs())
            .fold(0.0, f64::max)
    }

    /// RMS of the planner's position tracking error while stepping, m.
    pub fn tracking_rms(&self) -> f64 {
        let errs: Vec<f64> = self
            .ctrl
            .iter()
            .filter(|c| c.walking)
            .map(|c| c.rom_x.x - c.rom_ref.x)
            .collect();
        if errs.is_empty() {
            return 0.0;
        }
        (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
    }
}

/// Flat state with the body position re-expressed relative to the stance
/// foot in the slope frame and the translational velocity rotated into the
/// slope frame. Joint coordinates and the body rotation are already
/// translation-invariant and stay as they are.
pub fn stride_signature(
    state: &RobotState,
    params: &RobotParams,
    alpha: f64,
    stance: Side,
) -> SVector<f64, NX> {
    let rt = slope_rotation(alpha).transpose();
    let foot = forward_kinematics(
        &state.p_b,
        &state.r_b,
        &state.joint_angles(stance),
        &params.geometry(stance),
    )
    .foot;
    let mut sig = state.to_flat();
    sig.fixed_rows_mut::<3>(9).copy_from(&(rt * (state.p_b - foot)));
    sig.fixed_rows_mut::<3>(21).copy_from(&(rt * state.p_b_dot));
    sig
}

/// Launch state: both feet side by side on the slope surface, body at the
/// nominal height straight above them along the slope normal, torso level.
///
/// The feet are pre-pressed into the compliant ground to the depth that
/// carries the full slope-normal weight, so every mode starts from the
/// unthrusted force balance; in Walk mode the thrusters then spool up
/// over the pre-gait hold and take their share before the first step.
pub fn standing_start(cfg: &SimConfig) -> Result<RobotState, SimError> {
    let r_is = slope_rotation(cfg.ground.slope_alpha);
    let normal_load =
        cfg.robot.mass.total_mass() * cfg.robot.gravity * cfg.ground.slope_alpha.cos();
    let depth = normal_load / (2.0 * cfg.ground.k_gp);

    // An unthrusted stand is in equilibrium only with the total centre of
    // mass on the plumb vertical through the feet -- z0*tan(alpha) uphill
    // of the surface normal, a noticeable lean into the hill. Walk mode
    // instead starts with the body straight above the feet along the
    // normal: the thrusters carry the tangential load from the first tick,
    // and the lean would outrun the leg length on steep slopes. The CoM
    // offset depends weakly on the joint angles, so a few fixed-point
    // rounds nail the lean.
    let lean = cfg.mode == SimMode::Stand;
    let mut x_b = if lean {
        cfg.z0 * cfg.ground.slope_alpha.tan()
    } else {
        0.0
    };
    let rounds = if lean { 6 } else { 1 };
    let mut targets = [JointAngles {
        gamma_h: 0.0,
        phi_h: 0.0,
        phi_k: 0.0,
    }; 2];
    let mut state = RobotState::standing(Vector3::zeros(), targets[0], targets[1]);
    for _ in 0..rounds {
        let p_b_s = Vector3::new(x_b, 0.0, cfg.z0 - depth);
        for side in [Side::Left, Side::Right] {
            let geom = cfg.robot.geometry(side);
            // The leg plane sits at a fixed lateral offset; aim the foot there.
            let w_y = geom.l1.y + geom.l2.y;
            let foot_s = Vector3::new(0.0, w_y, -depth);
            // Torso level (R_B = I): body-frame target equals the inertial leg.
            let target_body = r_is * (foot_s - p_b_s);
            targets[side.index()] =
                inverse_kinematics(&target_body, &geom).map_err(|e| SimError::Setup {
                    reason: format!(
                        "foot target {:?} out of reach (nearest joint angles {:?})",
                        target_body, e.nearest
                    ),
                })?;
        }
        state = RobotState::standing(r_is * p_b_s, targets[0], targets[1]);

        if lean {
            let m = &cfg.robot.mass;
            let mut moment = m.m_b * state.p_b;
            for side in [Side::Left, Side::Right] {
                let pts = forward_kinematics(
                    &state.p_b,
                    &state.r_b,
                    &state.joint_angles(side),
                    &cfg.robot.geometry(side),
                );
                moment += m.m_h * pts.hip + m.m_k * pts.knee;
            }
            let com = moment / m.total_mass();
            let foot_inertial = r_is * Vector3::new(0.0, 0.0, -depth);
            x_b -= com.x - foot_inertial.x;
        }
    }
    if cfg.perturbation != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let b = cfg.perturbation;
        for i in 0..2 {
            state.gamma_h_dot[i] = rng.gen_range(-b..=b);
            state.phi_h_dot[i] = rng.gen_range(-b..=b);
            state.phi_k_dot[i] = rng.gen_range(-b..=b);
        }
    }
    Ok(state)
}

/// Controller state carried between ticks.
struct ControllerMemory {
    scheduler: GaitScheduler,
    prev_plan: Option<Vec<Vector2<f64>>>,
    lambda_prev: Vector2<f64>,
    planner_strikes: usize,
    last_command: Option<ControlCommand>,
    hold_targets: [JointAngles; 2],
    hold_ff: [Vector3<f64>; 2],
    hold_integral: [Vector3<f64>; 2],
    /// Slope-frame body x at launch; the position ramp starts here.
    anchor_x: f64,
    /// Slope-frame (x, y) where each foot last touched down; the stance
    /// leg is steered to keep its foot there.
    foot_anchor: [Vector2<f64>; 2],
    /// Previous tick's servo targets, for target-rate differencing.
    prev_target: [Option<JointAngles>; 2],
    /// Integral trim on the commanded stance-foot depth, m. The joint
    /// servo realizes foot height only to within its torque-residual sag,
    /// which is several times the millimeter-scale spring depths; this
    /// outer loop walks the commanded depth until the realized depth — and
    /// with it the normal force — matches the plan. Reset at every stance
    /// exchange.
    depth_trim: f64,
}

fn side_inputs(u_j: &SVector<f64, NU>, side: Side) -> Vector3<f64> {
    let i = side.index();
    Vector3::new(u_j[i], u_j[2 + i], u_j[4 + i])
}

/// A leg driven as a position servo: PID around a held target moving at a
/// held rate, plus a feedforward on each channel.
#[derive(Debug, Clone, Copy)]
struct ServoLeg {
    target: JointAngles,
    /// Target joint rates; the derivative term damps toward these instead
    /// of toward rest, so a moving target is not dragged.
    rate: Vector3<f64>,
    ff: Vector3<f64>,
}

/// What the plant holds between controller ticks. Torque channels (stance
/// leg, thrusters) are zero-order-held as computed; a swing or standing leg
/// is instead marked as a position servo and its PID torque is re-evaluated
/// every plant step against the held target. Joint feedback must run at the
/// plant rate: the body's small rotational inertia leaves the articulated
/// hip inertia near 3e-3 kg m^2, and holding an 80 N m/rad loop over a full
/// control period is unstable there.
#[derive(Debug, Clone, Copy, Default)]
struct HeldCommand {
    base: GeneralizedInputs,
    servo: [Option<ServoLeg>; 2],
}

/// Generalized inputs for one plant step: the held torques, with servo legs
/// replaced by fresh PID output. Integrators advance once per plant step.
fn servo_inputs(
    held: &HeldCommand,
    state: &RobotState,
    cfg: &SimConfig,
    integral: &mut [Vector3<f64>; 2],
) -> GeneralizedInputs {
    let mut inputs = held.base;
    for side in [Side::Left, Side::Right] {
        let i = side.index();
        let Some(leg) = held.servo[i] else {
            continue;
        };
        let e = leg.target.to_vector() - state.joint_angles(side).to_vector();
        let e_dot = leg.rate - state.joint_rates(side).to_vector();
        let lim = cfg.gait.pid.integral_limit;
        integral[i] = (integral[i] + e * cfg.dt_plant).map(|x| x.clamp(-lim, lim));
        let u = leg.ff + pid_command(&e, &e_dot, &integral[i], &cfg.gait.pid);
        inputs.u_j[i] = u.x;
        inputs.u_j[2 + i] = u.y;
        inputs.u_j[4 + i] = u.z;
    }
    inputs
}

/// Static torques making the hold pose an equilibrium of the four actuated
/// torque rows (both rolls, both hips) under gravity, thrust, and the
/// contact load. Solved from forward-dynamics probes so no bias-term access
/// is needed. Without this term a quiet stand is impossible: the normal
/// force acts at the foot half a meter outboard of the roll hinge, and its
/// splay moment exceeds what lateral friction plus a sagging PD can carry,
/// so the legs swing out and the feet unload. The knee channels command
/// acceleration and need no static torque.
///
/// `tangential_each` is the slope-tangential ground force each foot is
/// expected to return (friction reacts to the press the solved torques
/// apply), added on top of the measured spring normals. The friction model
/// itself reports zero force at rest, so probing the measured wrench alone
/// would solve for a hold that lets the body slide downslope until servo
/// error rebuilds the press.
fn hold_feedforward(
    state: &RobotState,
    robot: &RobotParams,
    ground: &GroundParams,
    u_t: &SVector<f64, NV>,
    tangential_each: f64,
) -> Result<[Vector3<f64>; 2], DynamicsError> {
    let mut still = *state;
    still.set_velocity(&SVector::zeros());
    let (mut u_g, _) = ground_wrench(&still, robot, ground);
    let f_t = slope_rotation(ground.slope_alpha) * Vector3::new(tangential_each, 0.0, 0.0);
    for i in 0..2 {
        let mut rows = u_g.fixed_rows_mut::<3>(3 * i);
        rows += f_t;
    }
    let base = GeneralizedInputs {
        u_j: SVector::zeros(),
        u_t: *u_t,
        u_g,
    };
    let a0 = forward_dynamics(&still, robot, &base)?;
    let mut gain = Matrix4::<f64>::zeros();
    for c in 0..4 {
        let mut probe = base;
        probe.u_j[c] = 1.0;
        let a = forward_dynamics(&still, robot, &probe)?;
        for r in 0..4 {
            gain[(r, c)] = a[6 + r] - a0[6 + r];
        }
    }
    let rhs = -Vector4::new(a0[6], a0[7], a0[8], a0[9]);
    let u4 = gain.lu().solve(&rhs).unwrap_or_else(Vector4::zeros);
    Ok([
        Vector3::new(u4[0], u4[2], 0.0),
        Vector3::new(u4[1], u4[3], 0.0),
    ])
}

/// Position/velocity reference: hold the anchor until the gait starts,
/// then ramp at the commanded speed.
fn ramp_reference(
    anchor_x: f64,
    v: f64,
    t_start: f64,
    t: f64,
    n: usize,
    dt: f64,
) -> Vec<Vector2<f64>> {
    (0..=n)
        .map(|k| {
            let tk = t + k as f64 * dt;
            let elapsed = (tk - t_start).max(0.0);
            Vector2::new(
                anchor_x + v * elapsed,
                if tk >= t_start { v } else { 0.0 },
            )
        })
        .collect()
}

/// One Walk-mode controller tick: measure, plan, map to thrust and
/// torques, log, and return the command the plant holds until the next
/// tick.
fn walk_tick(
    t: f64,
    state: &RobotState,
    cfg: &SimConfig,
    rom_p: &RomParams,
    mem: &mut ControllerMemory,
    log: &mut TrajectoryLog,
) -> Result<HeldCommand, SimError> {
    let alpha = cfg.ground.slope_alpha;
    let rt = slope_rotation(alpha).transpose();

    // Slope-frame measurements.
    let p_s = rt * state.p_b;
    let v_s = rt * state.p_b_dot;
    let feet = [Side::Left, Side::Right].map(|side| {
        rt * forward_kinematics(
            &state.p_b,
            &state.r_b,
            &state.joint_angles(side),
            &cfg.robot.geometry(side),
        )
        .foot
    });

    // Arm stepping once its start time arrives; pin the stance anchor
    // where that foot stands right now.
    if !mem.scheduler.active() && t + 1e-9 >= cfg.gait.start_time {
        let swing = mem.scheduler.swing_side().index();
        let stance = mem.scheduler.stance().index();
        mem.scheduler.begin(t, &feet[swing], &feet[stance]);
        mem.foot_anchor[stance] = feet[stance].xy();
        mem.prev_target = [None, None];
        mem.depth_trim = 0.0;
    }
    let stance = mem.scheduler.stance();
    let swing = stance.other();
    let walking = mem.scheduler.active();

    // Reduced model about the measured operating point.
    let rom = RomState {
        x: Vector2::new(p_s.x, v_s.x),
        c_x: feet[stance.index()].x,
    };
    let op = OperatingPoint {
        lambda_z0: mem.lambda_prev.y,
        p_bx0: rom.x.x,
        c_x0: rom.c_x,
    };
    let lin = RomLinearization::at(op, rom_p, cfg.dt_ctrl);
    let reference = ramp_reference(
        mem.anchor_x,
        cfg.reference_speed(),
        cfg.gait.start_time,
        t,
        cfg.mpc.horizon,
        cfg.dt_ctrl,
    );

    // Plan the leg-force sequence; ride the previous plan shifted one step
    // if the QP reports infeasible, and give up after three in a row.
    let mut held = false;
    let (plan, qp_diag) = match mpc_step(
        &rom,
        &reference,
        &lin,
        &cfg.mpc,
        mem.prev_plan.as_deref(),
        mem.lambda_prev.y,
    ) {
        Ok(step) => {
            mem.planner_strikes = 0;
            (step.plan, Some((step.qp, step.predicted_accel)))
        }
        Err(MpcError::Infeasible) => {
            mem.planner_strikes += 1;
            log::warn!(
                "force planner infeasible at t={t:.3}s ({} consecutive)",
                mem.planner_strikes
            );
            if mem.planner_strikes >= 3 {
                return Err(SimError::PlannerStalled {
                    time: t,
                    count: mem.planner_strikes,
                });
            }
            held = true;
            let prev = mem.prev_plan.clone().unwrap_or_else(|| {
                vec![Vector2::new(0.0, rom_p.static_normal_load()); cfg.mpc.horizon]
            });
            let shifted: Vec<Vector2<f64>> = (0..prev.len())
                .map(|k| prev[(k + 1).min(prev.len() - 1)])
                .collect();
            (shifted, None)
        }
    };
    let lambda = plan[0];
    let predicted_accel = match &qp_diag {
        Some((_, acc)) => *acc,
        // Deviation coordinates collapse the measured state to (0, v).
        None => (lin.a * Vector2::new(0.0, rom.x.y) + lin.b * lambda).y,
    };

    // Executed leg load: the plan floored at the stance preload. The
    // thrusters complement whatever the leg actually carries, so flooring
    // shifts load from thrust to the foot without disturbing the body.
    let lambda_exec = Vector2::new(lambda.x, lambda.y.max(cfg.stance_preload));

    // Height loop: the thruster map takes a desired vertical acceleration.
    let z_rel = p_s.z - feet[stance.index()].z;
    let zdd_des = cfg.height_kp * (cfg.z0 - z_rel) - cfg.height_kd * v_s.z;

    // Thrusters spool up linearly over the pre-gait hold, so the launch
    // state (feet carrying the full weight, no thrust) is an equilibrium
    // and the first step starts from the thrusted one.
    let spool = if cfg.gait.start_time > 0.0 {
        (t / cfg.gait.start_time).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let u_t_planar =
        spool * thruster_from_rom(&Vector2::new(predicted_accel, zdd_des), &lambda_exec, rom_p);

    // Pre-gait the launch hold must stay an equilibrium while the thrust
    // spools up, so the static feedforward is re-solved every tick with the
    // current thrust and the tangential share the feet still carry.
    if !walking {
        let f_each =
            slope_rotation(alpha) * Vector3::new(0.5 * u_t_planar.x, 0.0, 0.5 * u_t_planar.y);
        let u_t_gen = thruster_generalized_force(state, &cfg.robot, &f_each, &f_each);
        let w_t = cfg.robot.mass.total_mass() * cfg.robot.gravity * alpha.sin();
        mem.hold_ff = hold_feedforward(
            state,
            &cfg.robot,
            &cfg.ground,
            &u_t_gen,
            0.5 * (w_t - u_t_planar.x),
        )
        .map_err(|source| SimError::Dynamics { time: t, source })?;
    }

    // Swing joints: track the laid curve while stepping, hold the launch
    // pose before. Targets are body-frame joint angles from leg IK.
    let sw_target = if walking {
        let (pos_s, _vel_s) = mem
            .scheduler
            .swing_reference(t)
            .expect("an active gait always has a swing trajectory");
        let target_body =
            state.r_b.transpose() * (slope_rotation(alpha) * pos_s - state.p_b);
        match inverse_kinematics(&target_body, &cfg.robot.geometry(swing)) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("swing target out of reach at t={t:.3}s; tracking nearest pose");
                e.nearest
            }
        }
    } else {
        mem.hold_targets[swing.index()]
    };
    let sw_rate = target_rate(&mut mem.prev_target[swing.index()], &sw_target, cfg.dt_ctrl);
    // Before liftoff the held leg still presses on the ground and keeps its
    // static feedforward; the airborne swing leg is light enough for plain
    // PID tracking.
    let swing_ff = if walking {
        Vector3::zeros()
    } else {
        mem.hold_ff[swing.index()]
    };
    // Tick-time estimate of the servo torque: the whole-body solve needs the
    // swing load it will have to carry. The plant re-evaluates the PID per
    // step, so the integrator is read, not advanced, here.
    let u_sw = {
        let e = sw_target.to_vector() - state.joint_angles(swing).to_vector();
        let e_dot = sw_rate - state.joint_rates(swing).to_vector();
        swing_ff + pid_command(&e, &e_dot, &mem.hold_integral[swing.index()], &cfg.gait.pid)
    };

    // Stance leg: steer the body along the plan while the foot stays
    // pinned at its touchdown anchor, pressed to the depth whose spring
    // force is the executed load. Targets are solved for a level torso, so
    // if the body pitches, the joint error is exactly the pitch and the
    // hip servo rights it through the planted foot — the attitude loop of
    // this execution.
    let d_star = lambda_exec.y / cfg.ground.k_gp;
    // Realized depth lags the command by whatever the joint servo sags, and
    // that sag is several times the millimeter-scale spring depth, so the
    // command integrates the shortfall until the realized depth matches the
    // plan. The clamp bounds the authority to a few nominal depths.
    if walking {
        let d_meas = -feet[stance.index()].z;
        mem.depth_trim = (mem.depth_trim + 0.5 * (d_star - d_meas)).clamp(-0.004, 0.004);
    }
    let depth_cmd = d_star + mem.depth_trim;
    let (st_target, st_rate) = if walking {
        let anchor = mem.foot_anchor[stance.index()];
        let x_next = p_s.x
            + v_s.x * cfg.dt_ctrl
            + 0.5 * predicted_accel * cfg.dt_ctrl * cfg.dt_ctrl;
        // Height comes from the measurement, not the nominal: the leg's job
        // is to press the foot to its depth below wherever the body actually
        // is. Solving the leg for the nominal height instead would lift the
        // foot clear of the ground whenever the body floats a little high,
        // collapsing the normal force; body height itself belongs to the
        // thrust loop. No one-tick lead here, unlike x: a lead presses the
        // foot deeper in proportion to the climb rate, which un-damps the
        // heave mode, while the measured height lets the hold-over-the-tick
        // lag oppose it.
        let body_t = Vector3::new(x_next, p_s.y, p_s.z);
        let foot_t = Vector3::new(anchor.x, anchor.y, -depth_cmd);
        let target_body = slope_rotation(alpha) * (foot_t - body_t);
        let target = match inverse_kinematics(&target_body, &cfg.robot.geometry(stance)) {
            Ok(a) => a,
            Err(e) => {
                log::warn!("stance target out of reach at t={t:.3}s; tracking nearest pose");
                e.nearest
            }
        };
        let rate = target_rate(&mut mem.prev_target[stance.index()], &target, cfg.dt_ctrl);
        (target, rate)
    } else {
        (mem.hold_targets[stance.index()], Vector3::zeros())
    };

    // Stance-foot steering for the whole-body solve: pull the foot toward
    // its anchor and planned depth, critically damped at the lock gain.
    let (j_f, _) = point_jacobian(state, &cfg.robot, PointSelector::Foot(stance));
    let v_foot_s = rt * (j_f * state.velocity());
    let foot_s = feet[stance.index()];
    let beta = cfg.baumgarte;
    let target_foot_s = Vector3::new(
        mem.foot_anchor[stance.index()].x,
        mem.foot_anchor[stance.index()].y,
        -depth_cmd,
    );
    let foot_accel =
        slope_rotation(alpha) * (-beta * beta * (foot_s - target_foot_s) - 2.0 * beta * v_foot_s);

    // Stance torques from the whole-body KKT, solved against the executed
    // plan force embedded at the stance foot. Embedding the plan (rather
    // than the measured wrench) is what transmits the planned tangential
    // force into the leg: the resulting torque presses the foot with
    // -lambda_exec and the ground's reaction delivers it to the body. The
    // depth admittance keeps the embedded normal component honest. Hold
    // the previous command for one tick if the measured configuration is
    // singular.
    let problem = WbcProblem {
        stance,
        u_sw,
        u_t_planar,
        alpha,
        u_g: embedded_ground_force(stance, &lambda_exec, alpha),
        foot_accel,
    };
    let command = match stance_torque(state, &cfg.robot, &problem) {
        Ok(sol) => ControlCommand::assemble(
            stance,
            &sol.u_st,
            &u_sw,
            sol.u_t,
            u_t_planar,
            lambda,
            sol.residuals,
        ),
        Err(e) => {
            log::warn!("stance solve failed at t={t:.3}s ({e}); holding previous command");
            held = true;
            match &mem.last_command {
                Some(c) => c.clone(),
                None => ControlCommand::assemble(
                    stance,
                    &Vector3::zeros(),
                    &u_sw,
                    SVector::zeros(),
                    Vector2::zeros(),
                    lambda,
                    [f64::NAN; 3],
                ),
            }
        }
    };

    let (qp_status, qp_iterations, qp_solve_time, qp_objective) = match &qp_diag {
        Some((qp, _)) => (qp.status, qp.iterations, qp.solve_time, qp.objective),
        None => (QpStatus::Infeasible, 0, 0.0, f64::NAN),
    };
    let plan_cone_margin = plan
        .iter()
        .map(|l| (l.x.abs() - cfg.mpc.mu * l.y).max(cfg.mpc.lambda_min - l.y))
        .fold(f64::NEG_INFINITY, f64::max);
    log.ctrl.push(CtrlSample {
        t,
        stance,
        phase: mem.scheduler.phase(t),
        walking,
        lambda,
        plan: plan.clone(),
        thrust_planar: command.thrust_planar,
        u_st: side_inputs(&command.u_j, stance),
        u_sw: side_inputs(&command.u_j, swing),
        qp_status,
        qp_iterations,
        qp_solve_time,
        qp_objective,
        plan_cone_margin,
        wbc_residuals: command.wbc_residuals,
        rom_x: rom.x,
        rom_ref: reference[0],
        predicted_accel,
        held,
    });

    mem.lambda_prev = lambda;
    mem.prev_plan = Some(plan);
    mem.last_command = Some(command.clone());
    // Both legs run as plant-rate servos; the whole-body stance torque is
    // carried as feedforward under the position loop rather than applied
    // open-loop, so a mismatch between assumed and actual contact force
    // cannot run away within a control period. Before liftoff both legs
    // keep the launch hold.
    let mut servo = [None; 2];
    servo[swing.index()] = Some(ServoLeg {
        target: sw_target,
        rate: sw_rate,
        ff: swing_ff,
    });
    servo[stance.index()] = Some(ServoLeg {
        target: st_target,
        rate: st_rate,
        ff: if walking {
            // Roll and hip take the whole-body torque as feedforward. The
            // knee channel commands acceleration directly, so a zero-ff
            // servo holds its target without static droop; passing the
            // solve's knee output through would instead displace the servo
            // equilibrium and with it the foot depth and normal force.
            let u_st = side_inputs(&command.u_j, stance);
            Vector3::new(u_st.x, u_st.y, 0.0)
        } else {
            mem.hold_ff[stance.index()]
        },
    });
    Ok(HeldCommand {
        base: command.inputs(),
        servo,
    })
}

/// Finite-difference rate of a control-rate target sequence; zero on the
/// first tick after a target handoff.
fn target_rate(prev: &mut Option<JointAngles>, target: &JointAngles, dt: f64) -> Vector3<f64> {
    let rate = match prev {
        Some(p) => (target.to_vector() - p.to_vector()) / dt,
        None => Vector3::zeros(),
    };
    *prev = Some(*target);
    rate
}

/// Stand-mode tick: servo both legs toward the launch pose, no thrust.
fn stand_tick(mem: &ControllerMemory) -> HeldCommand {
    HeldCommand {
        base: GeneralizedInputs::default(),
        servo: [
            Some(ServoLeg {
                target: mem.hold_targets[0],
                rate: Vector3::zeros(),
                ff: mem.hold_ff[0],
            }),
            Some(ServoLeg {
                target: mem.hold_targets[1],
                rate: Vector3::zeros(),
                ff: mem.hold_ff[1],
            }),
        ],
    }
}

/// Plant state derivative under held commands; the ground wrench is
/// re-evaluated at every stage state.
fn plant_derivative(
    x: &SVector<f64, NX>,
    cfg: &SimConfig,
    cmd: &GeneralizedInputs,
) -> Result<SVector<f64, NX>, DynamicsError> {
    let s = RobotState::from_flat(x);
    let (u_g, _) = ground_wrench(&s, &cfg.robot, &cfg.ground);
    let inputs = GeneralizedInputs {
        u_j: cmd.u_j,
        u_t: cmd.u_t,
        u_g,
    };
    let a = if cfg.planar {
        planar_forward_dynamics(&s, &cfg.robot, &inputs, cfg.baumgarte)?
    } else {
        forward_dynamics(&s, &cfg.robot, &inputs)?
    };

    let mut dx = SVector::<f64, NX>::zeros();
    let r_dot = s.r_b * skew(&s.omega_b);
    for r in 0..3 {
        for c in 0..3 {
            dx[3 * r + c] = r_dot[(r, c)];
        }
    }
    dx.fixed_rows_mut::<3>(9).copy_from(&s.p_b_dot);
    for i in 0..6 {
        dx[12 + i] = x[24 + i];
    }
    dx.fixed_rows_mut::<NV>(18).copy_from(&a);
    Ok(dx)
}

fn validate(cfg: &SimConfig) -> Result<usize, SimError> {
    if !(cfg.duration > 0.0) {
        return Err(SimError::Config {
            reason: "duration must be positive".into(),
        });
    }
    if !(cfg.dt_plant > 0.0) || !(cfg.dt_ctrl > 0.0) {
        return Err(SimError::Config {
            reason: "time steps must be positive".into(),
        });
    }
    let ratio = cfg.dt_ctrl / cfg.dt_plant;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 {
        return Err(SimError::Config {
            reason: format!(
                "dt_ctrl ({}) must be an integer multiple of dt_plant ({})",
                cfg.dt_ctrl, cfg.dt_plant
            ),
        });
    }
    Ok(rounded as usize)
}

/// Run from the standard launch state.
pub fn simulate(cfg: &SimConfig) -> Result<TrajectoryLog, SimError> {
    let state = standing_start(cfg)?;
    simulate_from(cfg, state)
}

/// Run from a caller-provided initial state. The joint-hold targets (Stand
/// mode and the pre-gait arm) are the initial joint angles.
pub fn simulate_from(cfg: &SimConfig, initial: RobotState) -> Result<TrajectoryLog, SimError> {
    let ratio = validate(cfg)?;
    let rom_p = cfg.rom_params();
    let mut state = initial;

    let rt0 = slope_rotation(cfg.ground.slope_alpha).transpose();
    let feet0 = [Side::Left, Side::Right].map(|side| {
        rt0 * forward_kinematics(
            &state.p_b,
            &state.r_b,
            &state.joint_angles(side),
            &cfg.robot.geometry(side),
        )
        .foot
    });
    let mut mem = ControllerMemory {
        scheduler: GaitScheduler::new(cfg.gait),
        prev_plan: None,
        lambda_prev: Vector2::new(0.0, rom_p.static_normal_load()),
        planner_strikes: 0,
        last_command: None,
        hold_targets: [
            state.joint_angles(Side::Left),
            state.joint_angles(Side::Right),
        ],
        hold_ff: hold_feedforward(
            &state,
            &cfg.robot,
            &cfg.ground,
            &SVector::zeros(),
            0.5 * cfg.robot.mass.total_mass()
                * cfg.robot.gravity
                * cfg.ground.slope_alpha.sin(),
        )
        .map_err(|source| SimError::Dynamics { time: 0.0, source })?,
        hold_integral: [Vector3::zeros(); 2],
        anchor_x: (rt0 * state.p_b).x,
        foot_anchor: [feet0[0].xy(), feet0[1].xy()],
        prev_target: [None; 2],
    };

    let meta = SimMeta {
        alpha: cfg.ground.slope_alpha,
        mu_s: cfg.ground.mu_s,
        v_ref: cfg.reference_speed(),
        dt_plant: cfg.dt_plant,
        dt_ctrl: cfg.dt_ctrl,
        gait_start: cfg.gait.start_time,
        z0: cfg.z0,
        duration: cfg.duration,
    };
    let mut log = TrajectoryLog {
        meta,
        plant: Vec::new(),
        ctrl: Vec::new(),
        events: Vec::new(),
    };

    let total = ((cfg.duration / cfg.dt_plant).round() as usize).max(1);
    let (_, grf0) = ground_wrench(&state, &cfg.robot, &cfg.ground);
    log.plant.push(PlantSample {
        t: 0.0,
        state: state.to_flat(),
        grf: grf0,
    });

    let mut cmd = HeldCommand::default();
    for step in 0..total {
        let t = step as f64 * cfg.dt_plant;
        if step % ratio == 0 {
            cmd = match cfg.mode {
                SimMode::Walk => walk_tick(t, &state, cfg, &rom_p, &mut mem, &mut log)?,
                SimMode::Stand => stand_tick(&mem),
                SimMode::Passive => HeldCommand::default(),
            };
        }

        // One plant step: held torques plus fresh servo output.
        let inputs = servo_inputs(&cmd, &state, cfg, &mut mem.hold_integral);
        let mut dyn_err: Option<DynamicsError> = None;
        let x0 = state.to_flat();
        let stepped = rk4_step(
            |_tau, x| match plant_derivative(x, cfg, &inputs) {
                Ok(dx) => dx,
                Err(e) => {
                    dyn_err = Some(e);
                    SVector::zeros()
                }
            },
            t,
            &x0,
            cfg.dt_plant,
        );
        if let Some(source) = dyn_err {
            return Err(SimError::Dynamics { time: t, source });
        }
        let x1 = stepped.map_err(|source| SimError::Integration { time: t, source })?;

        let t_next = (step + 1) as f64 * cfg.dt_plant;
        for (component, value) in x1.iter().enumerate() {
            if !value.is_finite() {
                return Err(SimError::NonFinite {
                    time: t_next,
                    component,
                });
            }
        }
        state = RobotState::from_flat(&x1);
        state.r_b = reorthonormalize(&state.r_b)
            .map_err(|source| SimError::Rotation { time: t_next, source })?;

        let (_, grf) = ground_wrench(&state, &cfg.robot, &cfg.ground);
        log.plant.push(PlantSample {
            t: t_next,
            state: state.to_flat(),
            grf,
        });

        // Touchdown is sensed at the plant rate so a stance exchange never
        // waits on the next controller tick.
        if cfg.mode == SimMode::Walk && mem.scheduler.active() {
            let rt = slope_rotation(cfg.ground.slope_alpha).transpose();
            let feet = [Side::Left, Side::Right].map(|side| {
                rt * forward_kinematics(
                    &state.p_b,
                    &state.r_b,
                    &state.joint_angles(side),
                    &cfg.robot.geometry(side),
                )
                .foot
            });
            let swing = mem.scheduler.swing_side();
            let stance = mem.scheduler.stance();
            let normal = grf[swing.index()].f_slope.z;
            if let Some(GaitEvent::Switched {
                new_stance,
                step_index,
                forced,
                ..
            }) = mem.scheduler.check_switch(
                t_next,
                normal,
                &feet[swing.index()],
                &feet[stance.index()],
            ) {
                // Pin the new stance anchor where the foot landed; both
                // servo integrators and target histories are stale across
                // the role swap and start fresh.
                mem.foot_anchor[new_stance.index()] = feet[new_stance.index()].xy();
                mem.hold_integral = [Vector3::zeros(); 2];
                mem.prev_target = [None, None];
                mem.depth_trim = 0.0;
                log.events.push(StrideEvent {
                    t: t_next,
                    new_stance,
                    step_index,
                    forced,
                    signature: stride_signature(
                        &state,
                        &cfg.robot,
                        cfg.ground.slope_alpha,
                        new_stance,
                    ),
                });
            }
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks;
    use crate::dynamics::total_energy;
    use crate::spatial::{rot_x, rot_y, rot_z};
    use crate::wbc::{controller_params, embedded_ground_force};
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, SVector, Vector2, Vector3};

    #[test]
    fn rk4_holds_fixed_points() {
        let x0 = SVector::<f64, 2>::new(1.5, -2.0);
        let x1 = rk4_step(|_, _| SVector::zeros(), 0.0, &x0, 0.1).unwrap();
        assert_eq!(x0, x1);
    }

    #[test]
    fn rk4_matches_the_exponential_to_fifth_order() {
        let x0 = SVector::<f64, 1>::new(1.0);
        let x1 = rk4_step(|_, x| *x, 0.0, &x0, 0.1).unwrap();
        assert!(
            (x1[0] - 0.1f64.exp()).abs() < 1e-7,
            "one-step error {:.3e}",
            (x1[0] - 0.1f64.exp()).abs()
        );
    }

    #[test]
    fn rk4_error_scales_as_fourth_order() {
        // Integrate x' = x over [0, 1]; halving dt must cut the global
        // error by about sixteen.
        let run = |n: usize| {
            let dt = 1.0 / n as f64;
            let mut x = SVector::<f64, 1>::new(1.0);
            for k in 0..n {
                x = rk4_step(|_, y| *y, k as f64 * dt, &x, dt).unwrap();
            }
            (x[0] - 1.0f64.exp()).abs()
        };
        let ratio = run(10) / run(20);
        assert!(
            ratio > 13.0 && ratio < 19.0,
            "error ratio {ratio} not fourth order"
        );
    }

    #[test]
    fn rk4_flags_the_nonfinite_component() {
        let x0 = SVector::<f64, 2>::new(0.0, 0.0);
        let err = rk4_step(
            |_, _| SVector::<f64, 2>::new(0.0, f64::NAN),
            0.0,
            &x0,
            0.01,
        )
        .unwrap_err();
        assert_eq!(err.component, 1);
    }

    #[test]
    fn orthonormal_input_passes_through() {
        let r = rot_z(0.4) * rot_x(-0.9);
        let out = reorthonormalize(&r).unwrap();
        assert!((out - r).abs().max() < 1e-15);
    }

    #[test]
    fn perturbed_rotation_projects_onto_the_polar_factor() {
        let r = rot_y(0.7) * rot_z(-0.2);
        let noise = Matrix3::new(
            0.3, -0.8, 0.5, //
            0.9, 0.2, -0.4, //
            -0.6, 0.7, 0.1,
        );
        let drifted = r + 1e-3 * noise;
        let out = reorthonormalize(&drifted).unwrap();
        assert!(
            (out.transpose() * out - Matrix3::identity()).abs().max() < 1e-13,
            "result not orthonormal"
        );
        // Agrees with the SVD-based polar projection, stays near the
        // original rotation, and keeps orientation.
        assert_relative_eq!(out, checks::polar_rotation(&drifted), epsilon = 1e-10);
        assert!((out - r).abs().max() < 3e-3);
        assert!(out.determinant() > 0.0);
    }

    #[test]
    fn uniform_scaling_is_projected_away() {
        let r = rot_x(1.1) * rot_y(0.3);
        let out = reorthonormalize(&(2.5 * r)).unwrap();
        assert_relative_eq!(out, r, epsilon = 1e-12);
    }

    #[test]
    fn reflections_and_collapsed_frames_are_rejected() {
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(reorthonormalize(&reflection).is_err());
        let collapsed = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        assert!(reorthonormalize(&collapsed).is_err());
    }

    #[test]
    fn planar_lock_zeroes_the_locked_accelerations() {
        let params = RobotParams::reference();
        let mut state = RobotState::example_moving();
        // Planar-consistent velocity: no lateral drift, roll, or yaw rate.
        let mut v = state.velocity();
        v[0] = 0.0;
        v[2] = 0.0;
        v[4] = 0.0;
        state.set_velocity(&v);
        let mut inputs = GeneralizedInputs::default();
        inputs.u_j = SVector::<f64, NU>::new(1.0, -2.0, 3.0, 0.5, -0.7, 0.2);
        inputs.u_t[3] = 12.0;
        inputs.u_t[5] = 40.0;
        let a = planar_forward_dynamics(&state, &params, &inputs, 20.0).unwrap();
        assert!(a[0].abs() < 1e-10, "roll acceleration {}", a[0]);
        assert!(a[2].abs() < 1e-10, "yaw acceleration {}", a[2]);
        assert!(a[4].abs() < 1e-10, "lateral acceleration {}", a[4]);
        // Knee channels pass straight through.
        assert_relative_eq!(a[10], -0.7, epsilon = 1e-12);
        assert_relative_eq!(a[11], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn planar_lock_damps_existing_drift() {
        let params = RobotParams::reference();
        let mut state = RobotState::example_moving();
        let mut v = state.velocity();
        v[0] = 0.0;
        v[2] = 0.0;
        v[4] = 0.1; // lateral drift to be damped
        state.set_velocity(&v);
        let a = planar_forward_dynamics(&state, &params, &GeneralizedInputs::default(), 20.0)
            .unwrap();
        assert_relative_eq!(a[4], -20.0 * 0.1, epsilon = 1e-9);
    }

    #[test]
    fn stance_solution_matches_the_planar_plant() {
        // The stance KKT solution and the constrained plant must agree on
        // the accelerations when the plant runs the controller's model:
        // reduced leg inertia and the planned force embedded at the foot.
        let cfg = SimConfig::reference();
        let rom_p = cfg.rom_params();
        let mut state = standing_start(&cfg).unwrap();
        state.p_b_dot = slope_rotation(rom_p.alpha) * Vector3::new(0.3, 0.0, 0.05);
        state.omega_b = Vector3::new(0.0, 0.4, 0.0); // sagittal pitch rate
        state.gamma_h_dot = [0.0, 0.0];
        state.phi_h_dot = [0.5, -0.8];
        state.phi_k_dot = [-0.3, 0.6];

        let lambda = Vector2::new(3.0, 20.0);
        let problem = WbcProblem {
            stance: Side::Left,
            u_sw: Vector3::new(0.4, -0.2, 0.6),
            u_t_planar: thruster_from_rom(&Vector2::new(0.5, 0.2), &lambda, &rom_p),
            alpha: rom_p.alpha,
            u_g: embedded_ground_force(Side::Left, &lambda, rom_p.alpha),
            foot_accel: Vector3::zeros(),
        };
        let sol = stance_torque(&state, &cfg.robot, &problem).unwrap();
        let command = ControlCommand::assemble(
            Side::Left,
            &sol.u_st,
            &problem.u_sw,
            sol.u_t,
            problem.u_t_planar,
            lambda,
            sol.residuals,
        );

        let model = controller_params(&cfg.robot);
        let inputs = GeneralizedInputs {
            u_j: command.u_j,
            u_t: command.u_t,
            u_g: problem.u_g,
        };
        let a = planar_forward_dynamics(&state, &model, &inputs, cfg.baumgarte).unwrap();
        assert!(
            (a - sol.qdd).norm() < 1e-8 * sol.qdd.norm().max(1.0),
            "plant {:?} vs stance solve {:?}",
            a,
            sol.qdd
        );
    }

    #[test]
    fn launch_pose_is_reachable_and_level() {
        let cfg = SimConfig::reference();
        let state = standing_start(&cfg).unwrap();
        let rt = slope_rotation(cfg.ground.slope_alpha).transpose();
        let w_n = cfg.robot.mass.total_mass() * cfg.robot.gravity * cfg.ground.slope_alpha.cos();
        let depth = w_n / (2.0 * cfg.ground.k_gp);
        for side in [Side::Left, Side::Right] {
            let foot = forward_kinematics(
                &state.p_b,
                &state.r_b,
                &state.joint_angles(side),
                &cfg.robot.geometry(side),
            )
            .foot;
            let foot_s = rt * foot;
            assert_relative_eq!(foot_s.x, 0.0, epsilon = 1e-9);
            assert_relative_eq!(foot_s.z, -depth, epsilon = 1e-9);
            // Body height above the feet is the nominal leg height.
            assert_relative_eq!((rt * state.p_b).z - foot_s.z, cfg.z0, epsilon = 1e-9);
        }
        assert_eq!(state.r_b, Matrix3::identity());
    }

    #[test]
    fn stand_mode_holds_the_static_load() {
        // Pose compression is pre-set to the static balance, so the ground
        // must keep carrying the full slope-normal weight throughout.
        let mut cfg = SimConfig::reference();
        cfg.mode = SimMode::Stand;
        cfg.duration = 0.15;
        cfg.ground.slope_alpha = 15f64.to_radians();
        let log = simulate(&cfg).unwrap();

        let w_n =
            cfg.robot.mass.total_mass() * cfg.robot.gravity * cfg.ground.slope_alpha.cos();
        let tail: Vec<&PlantSample> = log.plant.iter().filter(|s| s.t >= 0.10).collect();
        assert!(!tail.is_empty());
        for s in tail {
            let total = s.grf[0].f_slope.z + s.grf[1].f_slope.z;
            assert!(
                (total - w_n).abs() < 0.01 * w_n,
                "total normal {total} vs weight {w_n} at t={}",
                s.t
            );
            for f in &s.grf {
                assert!(
                    (f.f_slope.z - 0.5 * w_n).abs() < 0.02 * w_n,
                    "per-foot share {} at t={}",
                    f.f_slope.z,
                    s.t
                );
            }
        }
    }

    #[test]
    fn passive_airborne_tumble_conserves_energy() {
        // No inputs, no contact, knees locked at zero rate: mechanical
        // energy is conserved to integration accuracy over a full second.
        let mut cfg = SimConfig::reference();
        cfg.mode = SimMode::Passive;
        cfg.planar = false;
        cfg.duration = 1.0;
        let mut state = standing_start(&cfg).unwrap();
        state.p_b.z += 6.0;
        state.omega_b = Vector3::new(0.4, -0.3, 0.5);
        state.p_b_dot = Vector3::new(0.2, -0.1, 0.3);
        state.gamma_h_dot = [0.3, -0.2];
        state.phi_h_dot = [-0.4, 0.5];
        state.phi_k_dot = [0.0, 0.0];

        let log = simulate_from(&cfg, state).unwrap();
        let first = RobotState::from_flat(&log.plant.first().unwrap().state);
        let last = RobotState::from_flat(&log.plant.last().unwrap().state);
        // Contact never happened.
        assert!(log
            .plant
            .iter()
            .all(|s| !s.grf[0].contact && !s.grf[1].contact));
        let (t0, v0) = total_energy(&first, &cfg.robot);
        let (t1, v1) = total_energy(&last, &cfg.robot);
        let e0 = t0 + v0;
        let e1 = t1 + v1;
        assert!(
            ((e1 - e0) / e0.abs()).abs() < 1e-4,
            "energy drifted from {e0} to {e1}"
        );
    }

    #[test]
    fn debug_walk_trace() {
        let mut cfg = SimConfig::reference();
        cfg.duration = 1.50;
        let log = match simulate(&cfg) {
            Ok(l) => l,
            Err(e) => {
                println!("sim error: {e:?}");
                return;
            }
        };
        let rt = slope_rotation(cfg.ground.slope_alpha).transpose();
        for c in &log.ctrl {
            println!(
                "t={:.2} walk={} st={:?} lam=({:+7.2},{:+7.2}) thr=({:+7.2},{:+7.2}) u_st=({:+6.1},{:+6.1},{:+6.1}) x={:+.3} xr={:+.3} held={}",
                c.t,
                c.walking as u8,
                c.stance,
                c.lambda.x,
                c.lambda.y,
                c.thrust_planar.x,
                c.thrust_planar.y,
                c.u_st.x,
                c.u_st.y,
                c.u_st.z,
                c.rom_x.x,
                c.rom_ref.x,
                c.held as u8,
            );
        }
        for s in log.plant.iter().step_by(40) {
            let st = RobotState::from_flat(&s.state);
            let p_s = rt * st.p_b;
            let pitch = st.r_b[(0, 2)].atan2(st.r_b[(0, 0)]);
            println!(
                "PL t={:.2} nL={:6.1} nR={:6.1} zs={:.4} pitch={:+7.3} pitch_rate={:+8.3} phih=({:+.2},{:+.2}) phik=({:+.2},{:+.2})",
                s.t,
                s.grf[0].f_slope.z,
                s.grf[1].f_slope.z,
                p_s.z,
                pitch,
                st.omega_b.y,
                st.phi_h[0],
                st.phi_h[1],
                st.phi_k[0],
                st.phi_k[1],
            );
        }
        panic!("debug only");
    }

    #[test]
    fn short_walk_steps_and_advances() {
        let mut cfg = SimConfig::reference();
        cfg.duration = 1.5;
        let log = simulate(&cfg).unwrap();

        assert!(
            log.events.len() >= 2,
            "expected at least two stance exchanges, got {}",
            log.events.len()
        );
        let x0 = log.slope_position(log.plant.first().unwrap());
        let x1 = log.slope_position(log.plant.last().unwrap());
        assert!(
            x1 - x0 > 0.05,
            "body advanced only {:.4} m along the slope",
            x1 - x0
        );
        // Planned loads always respect the floor.
        for c in &log.ctrl {
            for l in &c.plan {
                assert!(l.y >= cfg.mpc.lambda_min - 1e-7, "planned load {}", l.y);
            }
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let mut cfg = SimConfig::reference();
        cfg.duration = 0.3;
        cfg.perturbation = 0.01;
        cfg.seed = 7;
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(
            a.plant.last().unwrap().state,
            b.plant.last().unwrap().state
        );
        let la: Vec<Vector2<f64>> = a.ctrl.iter().map(|c| c.lambda).collect();
        let lb: Vec<Vector2<f64>> = b.ctrl.iter().map(|c| c.lambda).collect();
        assert_eq!(la, lb);
    }

    #[test]
    fn planar_lock_holds_during_walking() {
        let mut cfg = SimConfig::reference();
        cfg.duration = 0.6;
        let log = simulate(&cfg).unwrap();
        let y0 = log.plant.first().unwrap().state[10];
        for s in &log.plant {
            assert!(s.state[18].abs() < 1e-6, "roll rate {}", s.state[18]);
            assert!(s.state[20].abs() < 1e-6, "yaw rate {}", s.state[20]);
            assert!(s.state[22].abs() < 1e-6, "lateral rate {}", s.state[22]);
            assert!((s.state[10] - y0).abs() < 1e-5, "lateral drift");
        }
    }
}
