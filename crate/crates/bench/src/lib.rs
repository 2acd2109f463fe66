//! Shared fixtures for the criterion benchmarks: realistic planner
//! problems sampled from a short closed-loop run, so benchmark inputs look
//! like production inputs rather than synthetic worst cases.

use slopewalk_core::mpc::{build_condensed, mpc_step, MpcConfig};
use slopewalk_core::qp::QpProblem;
use slopewalk_core::rom::{OperatingPoint, RomLinearization, RomState};
use slopewalk_core::sim::{simulate, SimConfig};
use nalgebra::Vector2;

/// One planner invocation captured from a closed-loop run.
#[derive(Debug, Clone)]
pub struct PlannerCase {
    pub rom: RomState,
    pub reference: Vec<Vector2<f64>>,
    pub lin: RomLinearization,
    pub load: f64,
}

impl PlannerCase {
    pub fn problem(&self, config: &MpcConfig) -> QpProblem {
        build_condensed(&self.rom, &self.reference, &self.lin, config, self.load)
    }

    pub fn solve(&self, config: &MpcConfig) {
        mpc_step(&self.rom, &self.reference, &self.lin, config, None, self.load)
            .expect("benchmark case must stay feasible");
    }
}

/// Sample planner inputs from a short walk; states are re-linearized the
/// same way the controller does it, so conditioning matches production.
pub fn walking_cases(count: usize, horizon: usize) -> (MpcConfig, Vec<PlannerCase>) {
    let mut cfg = SimConfig::reference();
    cfg.duration = 2.0;
    let mut mpc = cfg.mpc.clone();
    mpc.horizon = horizon;
    cfg.mpc = mpc.clone();

    let log = simulate(&cfg).expect("reference configuration must walk");
    let rom_p = cfg.rom_params();
    let v = cfg.reference_speed();

    let mut cases = Vec::with_capacity(count);
    for (i, c) in log.ctrl.iter().enumerate().take(count.max(1)) {
        let _ = i;
        let op = OperatingPoint {
            lambda_z0: c.lambda.y.max(mpc.lambda_min),
            p_bx0: c.rom_x.x,
            c_x0: c.rom_x.x - 0.03,
        };
        let lin = RomLinearization::at(op, &rom_p, cfg.dt_ctrl);
        let reference = (0..=horizon)
            .map(|k| Vector2::new(c.rom_ref.x + k as f64 * cfg.dt_ctrl * v, v))
            .collect();
        cases.push(PlannerCase {
            rom: RomState {
                x: c.rom_x,
                c_x: c.rom_x.x - 0.03,
            },
            reference,
            lin,
            load: c.lambda.y,
        });
    }
    // Cycle if the run produced fewer ticks than requested.
    while cases.len() < count {
        let copy = cases[cases.len() % log.ctrl.len().max(1)].clone();
        cases.push(copy);
    }
    (mpc, cases)
}
