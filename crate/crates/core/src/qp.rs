//! Dense convex quadratic programming via a Mehrotra predictor-corrector
//! interior-point method.
//!
//! Solves `min 0.5 u' P u + c' u` subject to `A u <= b` with P symmetric
//! positive (semi-)definite. Each iteration eliminates the slack and
//! multiplier updates to form the condensed normal matrix
//! `P + A' diag(z/s) A`, factors it once by Cholesky, and reuses the factor
//! for the predictor and corrector solves. Steps are damped by a
//! fraction-to-boundary rule so slacks and multipliers stay strictly
//! positive. The centering parameter follows the cubic Mehrotra heuristic
//! `sigma = (mu_aff / mu)^3`.
//!
//! The solver is deterministic: identical inputs produce bit-identical
//! iterates and iteration counts. Timing is recorded for diagnostics only
//! and never influences control flow.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::time::Instant;

/// Inequality-constrained convex QP: min 0.5 u'Pu + c'u s.t. A u <= b.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Quadratic cost (n x n, symmetric PSD).
    pub p: DMatrix<f64>,
    /// Linear cost (n).
    pub c: DVector<f64>,
    /// Inequality matrix (m x n); m may be zero.
    pub a_in: DMatrix<f64>,
    /// Inequality bound (m).
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        c: DVector<f64>,
        a_in: DMatrix<f64>,
        b_in: DVector<f64>,
    ) -> QpProblem {
        assert_eq!(p.nrows(), p.ncols(), "P must be square");
        assert_eq!(c.len(), p.nrows(), "c length must match P");
        assert_eq!(a_in.ncols(), p.nrows(), "A column count must match P");
        assert_eq!(b_in.len(), a_in.nrows(), "b length must match A rows");
        QpProblem { p, c, a_in, b_in }
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.a_in.nrows()
    }

    /// 0.5 u'Pu + c'u.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.p * u)) + self.c.dot(u)
    }

    /// Largest positive constraint violation max_i (A u - b)_i, or zero.
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        if self.m() == 0 {
            return 0.0;
        }
        let r = &self.a_in * u - &self.b_in;
        r.iter().fold(0.0f64, |acc, &x| acc.max(x))
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// KKT residuals and duality measure below tolerance.
    Optimal,
    /// Iteration cap reached; the best iterate found is returned.
    MaxIterations,
    /// Primal infeasibility detected (diverging multipliers with a stalled
    /// primal residual).
    Infeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpStatus::Optimal => write!(f, "optimal"),
            QpStatus::MaxIterations => write!(f, "max-iterations"),
            QpStatus::Infeasible => write!(f, "infeasible"),
        }
    }
}

/// One row of the per-iteration diagnostic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterateRecord {
    pub objective: f64,
    pub violation: f64,
    pub mu: f64,
}

/// Solver output.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u_star: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    /// Wall-clock solve time, seconds (diagnostic only).
    pub solve_time: f64,
    /// Infinity norm of the stationarity residual P u + c + A'z at exit.
    pub kkt_residual: f64,
    /// Objective / violation / duality measure per iteration.
    pub trace: Vec<IterateRecord>,
}

/// Solver tolerances and limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    /// Absolute tolerance on KKT residuals and the duality measure.
    pub tol: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Fraction-to-boundary damping.
    pub tau: f64,
}

impl Default for QpSettings {
    fn default() -> QpSettings {
        QpSettings { tol: 1e-9, max_iters: 100, tau: 0.99 }
    }
}

/// Solve with default settings.
pub fn solve(problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> QpSolution {
    solve_with(problem, warm_start, &QpSettings::default())
}

/// Solve with explicit settings.
pub fn solve_with(
    problem: &QpProblem,
    warm_start: Option<&DVector<f64>>,
    settings: &QpSettings,
) -> QpSolution {
    let start = Instant::now();
    let n = problem.n();
    let m = problem.m();

    let p_reg = regularized_cost(&problem.p);

    let mut u = match warm_start {
        Some(w) => {
            assert_eq!(w.len(), n, "warm start length must match P");
            w.clone()
        }
        None => DVector::zeros(n),
    };

    if m == 0 {
        let chol = factor_spd(p_reg.clone())
            .expect("cost matrix is not positive definite even after regularization");
        u = chol.solve(&(-&problem.c));
        let objective = problem.objective(&u);
        return QpSolution {
            kkt_residual: (&problem.p * &u + &problem.c).amax(),
            objective,
            status: QpStatus::Optimal,
            iterations: 0,
            solve_time: start.elapsed().as_secs_f64(),
            trace: vec![IterateRecord { objective, violation: 0.0, mu: 0.0 }],
            u_star: u,
        };
    }

    // Strictly interior start: slacks at least 1, multipliers 1.
    let au0 = &problem.a_in * &u;
    let mut s = DVector::from_fn(m, |i, _| (problem.b_in[i] - au0[i]).max(1.0));
    let mut z = DVector::from_element(m, 1.0);

    let mut best_u = u.clone();
    let mut best_score = f64::INFINITY;
    let mut trace = Vec::with_capacity(settings.max_iters + 1);
    let mut status = QpStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..settings.max_iters {
        let r_d = &problem.p * &u + &problem.c + problem.a_in.transpose() * &z;
        let r_p = &problem.a_in * &u + &s - &problem.b_in;
        let mu = s.dot(&z) / m as f64;
        let violation = problem.max_violation(&u);

        trace.push(IterateRecord { objective: problem.objective(&u), violation, mu });

        let score = r_d.amax().max(r_p.amax()).max(mu);
        if score < best_score {
            best_score = score;
            best_u.copy_from(&u);
        }

        if r_d.amax() < settings.tol && r_p.amax() < settings.tol && mu < settings.tol {
            status = QpStatus::Optimal;
            iterations = iter;
            best_u.copy_from(&u);
            break;
        }

        // Diverging multipliers against a primal residual that cannot shrink
        // to zero mean no feasible point exists.
        if iter >= 5 && z.amax() > 1e9 && r_p.amax() > 1e3 * settings.tol {
            status = QpStatus::Infeasible;
            iterations = iter;
            break;
        }

        // Condensed normal matrix P + A' diag(z/s) A, factored once.
        let mut w = p_reg.clone();
        for i in 0..m {
            let zi_si = z[i] / s[i];
            let row = problem.a_in.row(i);
            for a in 0..n {
                let ra = row[a] * zi_si;
                if ra == 0.0 {
                    continue;
                }
                for b in 0..n {
                    w[(a, b)] += ra * row[b];
                }
            }
        }
        let chol = match factor_spd(w) {
            Some(c) => c,
            None => {
                iterations = iter;
                break; // numerical breakdown: report best iterate
            }
        };

        // Predictor: aim at zero complementarity.
        let rc_aff = s.component_mul(&z);
        let (_du_aff, ds_aff, dz_aff) =
            newton_direction(problem, &chol, &r_d, &r_p, &rc_aff, &s, &z);

        let alpha_aff = max_step(&s, &ds_aff).min(max_step(&z, &dz_aff)).min(1.0);
        let mu_aff = (&s + alpha_aff * &ds_aff).dot(&(&z + alpha_aff * &dz_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector: recenter and cancel the second-order term.
        let rc = s.component_mul(&z) + ds_aff.component_mul(&dz_aff)
            - DVector::from_element(m, sigma * mu);
        let (du, ds, dz) = newton_direction(problem, &chol, &r_d, &r_p, &rc, &s, &z);

        let alpha = (settings.tau * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);

        u += alpha * &du;
        s += alpha * &ds;
        z += alpha * &dz;
        iterations = iter + 1;

        if !u.iter().all(|x| x.is_finite())
            || !s.iter().all(|x| x.is_finite())
            || !z.iter().all(|x| x.is_finite())
        {
            break; // numerical breakdown: report best iterate
        }
    }

    let u_final = if status == QpStatus::Optimal { u } else { best_u };
    let r_d = &problem.p * &u_final + &problem.c + problem.a_in.transpose() * &z;
    QpSolution {
        objective: problem.objective(&u_final),
        kkt_residual: r_d.amax(),
        status,
        iterations,
        solve_time: start.elapsed().as_secs_f64(),
        trace,
        u_star: u_final,
    }
}

/// Solve the three-equation Newton system for a given complementarity
/// target `rc`, reusing the factored condensed matrix.
fn newton_direction(
    problem: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    r_d: &DVector<f64>,
    r_p: &DVector<f64>,
    rc: &DVector<f64>,
    s: &DVector<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    // (P + A'S^-1 Z A) du = -r_d + A' S^-1 (rc - Z r_p)
    let packed = DVector::from_fn(rc.len(), |i, _| (rc[i] - z[i] * r_p[i]) / s[i]);
    let rhs = -r_d + problem.a_in.transpose() * packed;
    let du = chol.solve(&rhs);
    let ds = -r_p - &problem.a_in * &du;
    let dz = DVector::from_fn(rc.len(), |i, _| (-rc[i] - z[i] * ds[i]) / s[i]);
    (du, ds, dz)
}

/// Largest alpha in [0, inf) with x + alpha dx >= 0.
fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..x.len() {
        if dx[i] < 0.0 {
            alpha = alpha.min(-x[i] / dx[i]);
        }
    }
    alpha
}

/// Cholesky with a small escalating diagonal shift as fallback.
fn factor_spd(w: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(w.clone()) {
        return Some(c);
    }
    for reg in [1e-9, 1e-7, 1e-5] {
        let mut shifted = w.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += reg;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
    }
    None
}

/// The cost matrix with a 1e-9 diagonal shift applied when a Cholesky probe
/// says it is not safely positive definite (the probe stands in for an
/// eigenvalue bound: it fails only when the smallest eigenvalue is at or
/// below roundoff).
fn regularized_cost(p: &DMatrix<f64>) -> DMatrix<f64> {
    if Cholesky::new(p.clone()).is_some() {
        return p.clone();
    }
    let mut shifted = p.clone();
    for i in 0..p.nrows() {
        shifted[(i, i)] += 1e-9;
    }
    shifted
}
