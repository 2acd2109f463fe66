//! Simulation and control stack for a thruster-assisted bipedal robot
//! walking on steep slopes.
//!
//! The crate is organized bottom-up:
//!
//! - [`spatial`]: rotations, leg kinematics, and point Jacobians
//! - [`dynamics`]: whole-body equations of motion and energy
//! - [`contact`]: compliant ground with Stribeck + viscous friction
//! - [`rom`]: variable-length inverted-pendulum reduced-order model
//! - [`qp`]: dense convex QP solver (primal-dual interior point)
//! - [`mpc`]: condensed receding-horizon ground-force planner
//! - [`gait`]: step scheduling, swing trajectories, inverse kinematics
//! - [`wbc`]: maps planned ground forces to stance torques and thrust
//! - [`sim`]: fixed-step closed-loop simulation
//! - [`checks`]: independent numerical oracles used by tests and the
//!   `check` subcommand of the CLI
//!
//! All quantities are SI; angles are radians.

pub mod checks;
pub mod contact;
pub mod dynamics;
pub mod gait;
pub mod mpc;
pub mod qp;
pub mod rom;
pub mod sim;
pub mod spatial;
pub mod wbc;

pub use contact::{GroundForce, GroundParams};
pub use dynamics::{
    DynamicsError, DynamicsTerms, GeneralizedInputs, MassProperties, RobotParams, RobotState,
};
pub use gait::{GaitConfig, GaitEvent, GaitScheduler, IkError, PidGains, SwingTrajectory};
pub use mpc::{ConstraintForm, MpcConfig, MpcStep};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use rom::{OperatingPoint, RomLinearization, RomParams, RomState};
pub use sim::{SimConfig, SimError, SimMode, TrajectoryLog};
pub use spatial::{
    forward_kinematics, point_jacobian, Axis, JointAngles, LegGeometry, LegPoints, PointSelector,
    Side,
};
pub use wbc::{ControlCommand, WbcError, WbcProblem, WbcSolution};
