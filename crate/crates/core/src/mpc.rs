//! Receding-horizon force planning as a condensed quadratic program.
//!
//! The horizon states are eliminated through the prediction matrices
//! `X = F x0 + G U`, so the decision vector is just the stacked input
//! sequence `U`. Tracking error and input effort give the condensed cost
//! `P = G' Qbar G + Rbar`, `c = G' Qbar (F x0 - X_d)`; friction limits on
//! every planned leg force become row constraints `A U <= b`.
//!
//! Positions are handled in deviation coordinates relative to the
//! linearization point (see the reduced-order module), so a freshly
//! refreshed plan always starts from a zero position entry.

use nalgebra::{DMatrix, DVector, Vector2};

use crate::qp::{self, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::rom::{RomLinearization, RomState};

/// Shape of the per-step friction constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintForm {
    /// Linearized friction cone: |lambda_x| <= mu lambda_z, lambda_z >= min.
    Cone,
    /// Axis-aligned bounds sized from the previous tick's normal load.
    Box,
}

/// Planner weights and limits.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Number of planned steps N.
    pub horizon: usize,
    /// Per-stage state weight (2 x 2).
    pub q: nalgebra::Matrix2<f64>,
    /// Per-stage input weight (2 x 2).
    pub r: nalgebra::Matrix2<f64>,
    /// Friction coefficient used in the constraints.
    pub mu: f64,
    /// Smallest allowed planned normal load, N.
    pub lambda_min: f64,
    pub constraint_form: ConstraintForm,
    pub settings: QpSettings,
}

impl MpcConfig {
    /// Reference planner: 10 steps, heavy position weight, cone constraints.
    pub fn reference() -> MpcConfig {
        MpcConfig {
            horizon: 10,
            q: nalgebra::Matrix2::new(300_000.0, 0.0, 0.0, 2_000.0),
            r: nalgebra::Matrix2::identity(),
            mu: 0.8,
            lambda_min: 5.0,
            constraint_form: ConstraintForm::Cone,
            settings: QpSettings::default(),
        }
    }
}

/// One planner result.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcStep {
    /// Planned inputs [lambda_x, lambda_z] for each of the N steps.
    pub plan: Vec<Vector2<f64>>,
    /// The input to apply now (first plan entry).
    pub first: Vector2<f64>,
    /// Continuous-model sagittal acceleration at the measured state under
    /// the first input.
    pub predicted_accel: f64,
    /// The underlying QP solve, with status and diagnostics.
    pub qp: QpSolution,
}

/// Planner failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MpcError {
    #[error("planned force problem is infeasible")]
    Infeasible,
}

/// Prediction matrices: X = F x0 + G U stacks x0..xN. F is the vertical
/// stack of powers of A_d; G is strictly block lower triangular with
/// block (k, j) = A_d^(k-1-j) B_d.
pub fn prediction_matrices(
    a_d: &DMatrix<f64>,
    b_d: &DMatrix<f64>,
    n: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let nx = a_d.nrows();
    let nu = b_d.ncols();
    assert_eq!(a_d.ncols(), nx, "A_d must be square");
    assert_eq!(b_d.nrows(), nx, "B_d rows must match A_d");
    assert!(n >= 1, "horizon must be at least one step");

    // powers[k] = A_d^k for k = 0..=n.
    let mut powers = Vec::with_capacity(n + 1);
    powers.push(DMatrix::identity(nx, nx));
    for k in 1..=n {
        powers.push(&powers[k - 1] * a_d);
    }

    let mut f = DMatrix::zeros((n + 1) * nx, nx);
    for k in 0..=n {
        f.view_mut((k * nx, 0), (nx, nx)).copy_from(&powers[k]);
    }

    let mut g = DMatrix::zeros((n + 1) * nx, n * nu);
    for k in 1..=n {
        for j in 0..k {
            let block = &powers[k - 1 - j] * b_d;
            g.view_mut((k * nx, j * nu), (nx, nu)).copy_from(&block);
        }
    }
    (f, g)
}

/// Condensed cost (P, c) for stage weights q (state, applied to every stacked
/// state including x0) and r (input).
pub fn condensed_cost(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    x_d: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let nx = q.nrows();
    let nu = r.nrows();
    assert_eq!(f.nrows() % nx, 0, "F rows must stack whole states");
    assert_eq!(g.ncols() % nu, 0, "G columns must stack whole inputs");
    assert_eq!(x_d.len(), f.nrows(), "reference must stack N+1 states");

    // Qbar G and Qbar e, applied block-row-wise without forming Qbar.
    let mut qg = DMatrix::zeros(g.nrows(), g.ncols());
    let e = f * x0 - x_d;
    let mut qe = DVector::zeros(e.len());
    for k in 0..g.nrows() / nx {
        let rows = (k * nx, 0);
        qg.view_mut(rows, (nx, g.ncols()))
            .copy_from(&(q * g.view(rows, (nx, g.ncols()))));
        qe.rows_mut(k * nx, nx)
            .copy_from(&(q * e.rows(k * nx, nx)));
    }

    let mut p = g.transpose() * &qg;
    for k in 0..g.ncols() / nu {
        let mut block = p.view_mut((k * nu, k * nu), (nu, nu));
        block += r;
    }
    let c = g.transpose() * qe;
    (p, c)
}

/// Friction-cone rows for every planned step: lambda_x <= mu lambda_z,
/// -lambda_x <= mu lambda_z, lambda_z >= lambda_min.
pub fn cone_constraints(n: usize, mu: f64, lambda_min: f64) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(3 * n, 2 * n);
    let mut b = DVector::zeros(3 * n);
    for k in 0..n {
        let (r0, c0) = (3 * k, 2 * k);
        a[(r0, c0)] = 1.0;
        a[(r0, c0 + 1)] = -mu;
        a[(r0 + 1, c0)] = -1.0;
        a[(r0 + 1, c0 + 1)] = -mu;
        a[(r0 + 2, c0 + 1)] = -1.0;
        b[r0 + 2] = -lambda_min;
    }
    (a, b)
}

/// Axis-aligned bounds sized from a reference normal load: stacked +I / -I
/// rows with |lambda_x| <= mu * load, lambda_min <= lambda_z <= 4 * load.
pub fn box_constraints(
    n: usize,
    mu: f64,
    lambda_min: f64,
    load: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let load = load.max(lambda_min);
    let mut a = DMatrix::zeros(4 * n, 2 * n);
    let mut b = DVector::zeros(4 * n);
    for k in 0..n {
        let (r0, c0) = (4 * k, 2 * k);
        a[(r0, c0)] = 1.0;
        b[r0] = mu * load;
        a[(r0 + 1, c0 + 1)] = 1.0;
        b[r0 + 1] = 4.0 * load;
        a[(r0 + 2, c0)] = -1.0;
        b[r0 + 2] = mu * load;
        a[(r0 + 3, c0 + 1)] = -1.0;
        b[r0 + 3] = -lambda_min;
    }
    (a, b)
}

/// Assemble the condensed QP for a measured state and reference trajectory.
/// `reference` holds N+1 absolute states [x, xdot]; `load` sizes the box
/// constraints and is ignored by the cone form.
pub fn build_condensed(
    rom: &RomState,
    reference: &[Vector2<f64>],
    lin: &RomLinearization,
    config: &MpcConfig,
    load: f64,
) -> QpProblem {
    let n = config.horizon;
    assert_eq!(reference.len(), n + 1, "reference must hold N+1 states");

    let a_d = DMatrix::from_column_slice(2, 2, lin.a_d.as_slice());
    let b_d = DMatrix::from_column_slice(2, 2, lin.b_d.as_slice());
    let (f, g) = prediction_matrices(&a_d, &b_d, n);

    // Deviation coordinates: positions relative to the linearization point.
    let x0 = DVector::from_column_slice(&[rom.x.x - lin.op.p_bx0, rom.x.y]);
    let mut x_d = DVector::zeros(2 * (n + 1));
    for (k, r) in reference.iter().enumerate() {
        x_d[2 * k] = r.x - lin.op.p_bx0;
        x_d[2 * k + 1] = r.y;
    }

    let q = DMatrix::from_column_slice(2, 2, config.q.as_slice());
    let r = DMatrix::from_column_slice(2, 2, config.r.as_slice());
    let (p, c) = condensed_cost(&f, &g, &q, &r, &x0, &x_d);

    let (a_in, b_in) = match config.constraint_form {
        ConstraintForm::Cone => cone_constraints(n, config.mu, config.lambda_min),
        ConstraintForm::Box => box_constraints(n, config.mu, config.lambda_min, load),
    };
    QpProblem::new(p, c, a_in, b_in)
}

/// Plan N leg-force steps from the measured state. The warm start is the
/// previous plan shifted forward one step. Solutions that hit the iteration
/// cap are still returned (best iterate); infeasibility is an error.
pub fn mpc_step(
    rom: &RomState,
    reference: &[Vector2<f64>],
    lin: &RomLinearization,
    config: &MpcConfig,
    warm_plan: Option<&[Vector2<f64>]>,
    load: f64,
) -> Result<MpcStep, MpcError> {
    let n = config.horizon;
    let problem = build_condensed(rom, reference, lin, config, load);

    let warm = warm_plan.map(|plan| {
        let mut w = DVector::zeros(2 * n);
        for k in 0..n {
            let src = plan[(k + 1).min(plan.len().saturating_sub(1))];
            w[2 * k] = src.x;
            w[2 * k + 1] = src.y;
        }
        w
    });

    let qp = qp::solve_with(&problem, warm.as_ref(), &config.settings);
    if qp.status == QpStatus::Infeasible {
        return Err(MpcError::Infeasible);
    }

    let plan: Vec<Vector2<f64>> = (0..n)
        .map(|k| Vector2::new(qp.u_star[2 * k], qp.u_star[2 * k + 1]))
        .collect();
    let first = plan[0];

    let x0_dev = Vector2::new(rom.x.x - lin.op.p_bx0, rom.x.y);
    let predicted_accel = (lin.a * x0_dev + lin.b * first).y;

    Ok(MpcStep { plan, first, predicted_accel, qp })
}
