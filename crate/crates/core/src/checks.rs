//! Independent numerical oracles.
//!
//! Everything in this module re-derives a library result by a second,
//! deliberately different route — finite differences where the library is
//! analytic, variational mechanics where the library assembles projections,
//! a first-order dual method where the library runs an interior point —
//! so agreement between the two is evidence rather than tautology. The
//! unit tests call these oracles at small sample counts; the CLI `check`
//! subcommand runs the suite wrappers at publication scale.

use crate::dynamics::{
    forward_dynamics, total_energy, GeneralizedInputs, RobotParams, RobotState, NU, NV,
};
use crate::mpc::{condensed_cost, prediction_matrices};
use crate::qp::{solve, QpProblem, QpStatus};
use crate::rom::{linearize, lip_accel, OperatingPoint, RomParams, RomState};
use crate::spatial::{forward_kinematics, point_jacobian, JointAngles, PointSelector, Side};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Rotation3, SMatrix, SVector, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::fmt;

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: &'static str,
    pub samples: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max error {:.3e} over {} samples (tolerance {:.0e}) {}",
            self.name,
            self.max_rel_error,
            self.samples,
            self.tolerance,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Deterministic generator for reproducible randomized tests.
pub fn test_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-2 {
            return v / n;
        }
    }
}

fn random_angles(rng: &mut ChaCha8Rng) -> JointAngles {
    JointAngles {
        gamma_h: rng.gen_range(-0.6..0.6),
        phi_h: rng.gen_range(-1.4..1.4),
        phi_k: rng.gen_range(-1.2..1.2),
    }
}

/// Random body pose and one set of leg angles, well inside joint ranges.
pub fn random_pose(rng: &mut ChaCha8Rng) -> (Vector3<f64>, Matrix3<f64>, JointAngles) {
    let p_b = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.3..1.5),
    );
    let axis = random_unit(rng);
    let angle = rng.gen_range(-PI..PI);
    let r_b = Rotation3::new(axis * angle).into_inner();
    (p_b, r_b, random_angles(rng))
}

/// Random full state with every velocity coordinate uniform in
/// `[-vel_scale, vel_scale]`.
pub fn random_state(rng: &mut ChaCha8Rng, vel_scale: f64) -> RobotState {
    let (p_b, r_b, left) = random_pose(rng);
    let right = random_angles(rng);
    let mut state = RobotState::standing(p_b, left, right);
    state.r_b = r_b;
    let mut v = SVector::<f64, NV>::zeros();
    for i in 0..NV {
        v[i] = vel_scale * rng.gen_range(-1.0..1.0);
    }
    state.set_velocity(&v);
    state
}

/// Move the configuration a parameter distance `h` along the velocity
/// direction `dir`, using the charts that define the generalized velocity:
/// the body-frame exponential for the rotation, straight lines for the
/// translation and joints. Velocities are left untouched.
pub fn advance_state(state: &RobotState, dir: &SVector<f64, NV>, h: f64) -> RobotState {
    let mut s = *state;
    let w = Vector3::new(dir[0], dir[1], dir[2]) * h;
    s.r_b = state.r_b * Rotation3::new(w).into_inner();
    s.p_b += h * Vector3::new(dir[3], dir[4], dir[5]);
    for i in 0..2 {
        s.gamma_h[i] += h * dir[6 + i];
        s.phi_h[i] += h * dir[8 + i];
        s.phi_k[i] += h * dir[10 + i];
    }
    s
}

fn point_of(state: &RobotState, params: &RobotParams, sel: PointSelector) -> Vector3<f64> {
    let side = match sel {
        PointSelector::Body => return state.p_b,
        PointSelector::Pelvis(s)
        | PointSelector::Hip(s)
        | PointSelector::Knee(s)
        | PointSelector::Foot(s)
        | PointSelector::Thruster(s) => s,
    };
    let pts = forward_kinematics(
        &state.p_b,
        &state.r_b,
        &state.joint_angles(side),
        &params.geometry(side),
    );
    match sel {
        PointSelector::Body => unreachable!(),
        PointSelector::Pelvis(_) => pts.pelvis,
        PointSelector::Hip(_) => pts.hip,
        PointSelector::Knee(_) => pts.knee,
        PointSelector::Foot(_) => pts.foot,
        PointSelector::Thruster(_) => pts.thruster,
    }
}

/// Point Jacobian by central differences of the position map along each
/// velocity chart direction.
pub fn fd_point_jacobian(
    state: &RobotState,
    params: &RobotParams,
    sel: PointSelector,
    h: f64,
) -> SMatrix<f64, 3, NV> {
    let mut j = SMatrix::<f64, 3, NV>::zeros();
    for k in 0..NV {
        let mut dir = SVector::<f64, NV>::zeros();
        dir[k] = 1.0;
        let plus = point_of(&advance_state(state, &dir, h), params, sel);
        let minus = point_of(&advance_state(state, &dir, -h), params, sel);
        j.set_column(k, &((plus - minus) / (2.0 * h)));
    }
    j
}

/// Jacobian time derivative by central differences of the (independently
/// verified) analytic Jacobian along the state's own velocity flow.
pub fn fd_point_jacobian_rate(
    state: &RobotState,
    params: &RobotParams,
    sel: PointSelector,
    h: f64,
) -> SMatrix<f64, 3, NV> {
    let v = state.velocity();
    let (j_plus, _) = point_jacobian(&advance_state(state, &v, h), params, sel);
    let (j_minus, _) = point_jacobian(&advance_state(state, &v, -h), params, sel);
    (j_plus - j_minus) / (2.0 * h)
}

/// Acceleration of one state from first principles: mass matrix as the
/// Hessian of the kinetic energy, bias as the variational-equation residual
/// at zero acceleration, generalized forces by virtual work.
///
/// Nothing here touches the library's projection assembly — only the
/// energy, the forward kinematics, and the input layout are shared.
fn lagrangian_accel(
    state: &RobotState,
    params: &RobotParams,
    inputs: &GeneralizedInputs,
) -> SVector<f64, NV> {
    // Mass matrix over the ten massive coordinates. Kinetic energy is an
    // exact quadratic form in the velocity at fixed configuration, so the
    // difference identity K(h ei + h ej) - K(h ei) - K(h ej) = h^2 M_ij
    // holds for any h; a large h keeps rounding noise negligible.
    let h_v = 0.5;
    let kinetic = |v: &SVector<f64, NV>| -> f64 {
        let mut s = *state;
        s.set_velocity(v);
        total_energy(&s, params).0
    };
    let mut m = SMatrix::<f64, 10, 10>::zeros();
    for i in 0..10 {
        for j in 0..=i {
            let mut vij = SVector::<f64, NV>::zeros();
            vij[i] += h_v;
            vij[j] += h_v;
            let mut vi = SVector::<f64, NV>::zeros();
            vi[i] = h_v;
            let mut vj = SVector::<f64, NV>::zeros();
            vj[j] = h_v;
            let mij = (kinetic(&vij) - kinetic(&vi) - kinetic(&vj)) / (h_v * h_v);
            m[(i, j)] = mij;
            m[(j, i)] = mij;
        }
    }

    let lagr = |s: &RobotState| -> f64 {
        let (k, v) = total_energy(s, params);
        k - v
    };

    // Momentum p_i = dL/dv_i: central difference, exact for a quadratic.
    let momentum = |s: &RobotState, i: usize| -> f64 {
        let mut sp = *s;
        let mut v = s.velocity();
        v[i] += h_v;
        sp.set_velocity(&v);
        let lp = lagr(&sp);
        v[i] -= 2.0 * h_v;
        sp.set_velocity(&v);
        let lm = lagr(&sp);
        (lp - lm) / (2.0 * h_v)
    };

    // d/dt p_i along the exact zero-acceleration flow (velocities frozen,
    // configuration advancing along its own velocity), five-point stencil.
    let h_t = 1e-3;
    let v_now = state.velocity();
    let flow = |tau: f64| advance_state(state, &v_now, tau);
    let dpdt = |i: usize| -> f64 {
        let p2 = momentum(&flow(2.0 * h_t), i);
        let p1 = momentum(&flow(h_t), i);
        let m1 = momentum(&flow(-h_t), i);
        let m2 = momentum(&flow(-2.0 * h_t), i);
        (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h_t)
    };

    // Configuration gradient of L along each chart direction; for the
    // rotation rows this is the body-frame (left-trivialized) derivative,
    // matching the body-frame angular velocity.
    let h_q = 1e-5;
    let chart_grad = |i: usize| -> f64 {
        let mut dir = SVector::<f64, NV>::zeros();
        dir[i] = 1.0;
        let lp = lagr(&advance_state(state, &dir, h_q));
        let lm = lagr(&advance_state(state, &dir, -h_q));
        (lp - lm) / (2.0 * h_q)
    };

    // Variational residual at zero acceleration = the bias force. The
    // rotation rows carry the quasi-velocity correction omega x p_omega;
    // the chart rows are plain Euler-Lagrange.
    let p_omega = Vector3::new(
        momentum(state, 0),
        momentum(state, 1),
        momentum(state, 2),
    );
    let gyro = state.omega_b.cross(&p_omega);
    let mut bias = SVector::<f64, 10>::zeros();
    for i in 0..10 {
        bias[i] = dpdt(i) - chart_grad(i);
        if i < 3 {
            bias[i] += gyro[i];
        }
    }

    // Generalized forces: direct joint channels, the already-generalized
    // thruster vector, and ground forces pulled back through the
    // finite-difference foot Jacobians (virtual work).
    let mut q_gen = SVector::<f64, 10>::zeros();
    q_gen[6] += inputs.u_j[0];
    q_gen[7] += inputs.u_j[1];
    q_gen[8] += inputs.u_j[2];
    q_gen[9] += inputs.u_j[3];
    for i in 0..10 {
        q_gen[i] += inputs.u_t[i];
    }
    for side in [Side::Left, Side::Right] {
        let j_fd = fd_point_jacobian(state, params, PointSelector::Foot(side), 1e-6);
        let f = Vector3::new(
            inputs.u_g[3 * side.index()],
            inputs.u_g[3 * side.index() + 1],
            inputs.u_g[3 * side.index() + 2],
        );
        let pulled = j_fd.transpose() * f;
        for i in 0..10 {
            q_gen[i] += pulled[i];
        }
    }

    let a10 = m
        .cholesky()
        .expect("oracle mass matrix must be positive definite")
        .solve(&(q_gen - bias));
    let mut a = SVector::<f64, NV>::zeros();
    a.fixed_rows_mut::<10>(0).copy_from(&a10);
    a[10] = inputs.u_j[4];
    a[11] = inputs.u_j[5];
    a
}

/// Compare an acceleration map against the variational oracle on random
/// states and inputs.
pub fn check_dynamics_against_lagrangian(
    params: &RobotParams,
    samples: usize,
    seed: u64,
    accel_fn: impl Fn(&RobotState, &GeneralizedInputs) -> SVector<f64, NV>,
) -> OracleReport {
    let mut rng = test_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let state = random_state(&mut rng, 1.0);
        let mut inputs = GeneralizedInputs::default();
        for i in 0..NU {
            inputs.u_j[i] = rng.gen_range(-5.0..5.0);
        }
        for i in 0..NV {
            inputs.u_t[i] = rng.gen_range(-10.0..10.0);
        }
        for i in 0..6 {
            inputs.u_g[i] = rng.gen_range(-30.0..30.0);
        }
        let a_lib = accel_fn(&state, &inputs);
        let a_orc = lagrangian_accel(&state, params, &inputs);
        let err = (a_lib - a_orc).norm() / a_orc.norm().max(1.0);
        worst = worst.max(err);
    }
    OracleReport {
        name: "dynamics-vs-variational-oracle",
        samples,
        max_rel_error: worst,
        tolerance: 1e-6,
    }
}

/// Linearization of a sagittal acceleration law by central differences.
fn fd_linearize(
    lip: &impl Fn(&RomState, &Vector2<f64>, &RomParams) -> f64,
    op: &OperatingPoint,
    p: &RomParams,
    h: f64,
) -> (Matrix2<f64>, Matrix2<f64>) {
    let f = |x: &Vector2<f64>, lambda: &Vector2<f64>| -> Vector2<f64> {
        let s = RomState { x: *x, c_x: op.c_x0 };
        Vector2::new(x.y, lip(&s, lambda, p))
    };
    let x0 = Vector2::new(op.p_bx0, 0.0);
    let l0 = Vector2::new(0.0, op.lambda_z0);
    let mut a = Matrix2::zeros();
    let mut b = Matrix2::zeros();
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = h;
        a.set_column(j, &((f(&(x0 + e), &l0) - f(&(x0 - e), &l0)) / (2.0 * h)));
        b.set_column(j, &((f(&x0, &(l0 + e)) - f(&x0, &(l0 - e))) / (2.0 * h)));
    }
    (a, b)
}

/// Finite-difference Jacobians of the reduced model about an operating
/// point, for comparison with the analytic linearization.
pub fn fd_rom_linearization(
    op: &OperatingPoint,
    p: &RomParams,
    h: f64,
) -> (Matrix2<f64>, Matrix2<f64>) {
    fd_linearize(&lip_accel, op, p, h)
}

/// Exact 2x2 matrix exponential of `a t` by scaling and squaring with a
/// Taylor tail.
pub fn expm2(a: &Matrix2<f64>, t: f64) -> Matrix2<f64> {
    let mut m = a * t;
    let mut squarings = 0u32;
    while m.amax() > 0.25 && squarings < 64 {
        m /= 2.0;
        squarings += 1;
    }
    let mut term = Matrix2::identity();
    let mut sum = Matrix2::identity();
    for k in 1..=16 {
        term = term * m / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Random strictly convex QP with eigenvalues of P in [1, 10] and a
/// strictly feasible interior point, so the optimum exists and is unique.
pub fn random_qp(rng: &mut ChaCha8Rng, n_max: usize, m_max: usize) -> QpProblem {
    let n = rng.gen_range(2..=n_max);
    let m = rng.gen_range(1..=m_max);
    let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let q = raw.qr().q();
    let eigs = DVector::from_fn(n, |_, _| rng.gen_range(1.0..10.0));
    let p = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
    let p = 0.5 * (&p + p.transpose());
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    let u_feas = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(m, |_, _| rng.gen_range(0.1..1.1));
    let b = &a * u_feas + slack;
    QpProblem::new(p, c, a, b)
}

/// Solve a strictly convex QP by an accelerated projected-gradient method
/// on the dual, entirely unlike the interior-point path: u(z) minimizes the
/// Lagrangian for fixed multipliers z >= 0, and z descends the dual with a
/// step from the power-iteration Lipschitz bound. Returns the primal point
/// and its objective.
pub fn projected_gradient_qp(problem: &QpProblem, max_iters: usize) -> (DVector<f64>, f64) {
    let m = problem.m();
    let p_chol = problem
        .p
        .clone()
        .cholesky()
        .expect("oracle requires a positive definite cost");
    let primal = |z: &DVector<f64>| -> DVector<f64> {
        -p_chol.solve(&(&problem.c + problem.a_in.transpose() * z))
    };
    if m == 0 {
        let u = primal(&DVector::zeros(0));
        let obj = problem.objective(&u);
        return (u, obj);
    }

    // Largest eigenvalue of A P^-1 A' bounds the dual gradient Lipschitz
    // constant; power iteration is plenty at these sizes.
    let mut w = DVector::from_element(m, 1.0 / (m as f64).sqrt());
    let mut lip: f64 = 1.0;
    for _ in 0..80 {
        let next = &problem.a_in * p_chol.solve(&(problem.a_in.transpose() * &w));
        let norm = next.norm();
        if norm < 1e-300 {
            break;
        }
        lip = norm;
        w = next / norm;
    }
    let step = 1.0 / (1.05 * lip.max(1e-12));

    // Dual gradient: b - A u(z). Nonnegative where z = 0 and zero where
    // z > 0 at the optimum — exactly primal feasibility with slackness.
    let grad = |z: &DVector<f64>| -> DVector<f64> { &problem.b_in - &problem.a_in * primal(z) };

    let mut z = DVector::<f64>::zeros(m);
    let mut y = z.clone();
    let mut t = 1.0f64;
    for iter in 0..max_iters {
        let g = grad(&y);
        let z_next = (&y - step * g).map(|v: f64| v.max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &z_next + ((t - 1.0) / t_next) * (&z_next - &z);
        z = z_next;
        t = t_next;

        if iter % 16 == 0 {
            let g_z = grad(&z);
            let resid = z
                .iter()
                .zip(g_z.iter())
                .map(|(&zi, &gi)| if zi > 0.0 { gi.abs() } else { (-gi).max(0.0) })
                .fold(0.0f64, f64::max);
            if resid < 1e-11 {
                break;
            }
        }
    }
    let u = primal(&z);
    let obj = problem.objective(&u);
    (u, obj)
}

/// Build one random horizon problem, evaluate the condensed quadratic cost
/// on random inputs, and compare against an explicit state rollout of the
/// stage-cost sum. Returns the worst relative gap.
pub fn condensed_vs_expanded_gap(rng: &mut ChaCha8Rng) -> f64 {
    let nx = 2;
    let nu = 2;
    let n = rng.gen_range(2..=6);
    let a = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.9..0.9));
    let b = DMatrix::from_fn(nx, nu, |_, _| rng.gen_range(-1.0..1.0));
    let q = DMatrix::from_diagonal(&DVector::from_fn(nx, |_, _| rng.gen_range(0.1..5.0)));
    let r = DMatrix::from_diagonal(&DVector::from_fn(nu, |_, _| rng.gen_range(0.1..2.0)));
    let x0 = DVector::from_fn(nx, |_, _| rng.gen_range(-1.0..1.0));
    let xd = DVector::from_fn(nx * (n + 1), |_, _| rng.gen_range(-1.0..1.0));

    let (f, g) = prediction_matrices(&a, &b, n);
    let (p, c) = condensed_cost(&f, &g, &q, &r, &x0, &xd);

    let expanded = |u: &DVector<f64>| -> f64 {
        let mut x = x0.clone();
        let mut cost = 0.0;
        for k in 0..=n {
            let e = &x - xd.rows(nx * k, nx).clone_owned();
            cost += 0.5 * e.dot(&(&q * &e));
            if k < n {
                let uk = u.rows(nu * k, nu).clone_owned();
                cost += 0.5 * uk.dot(&(&r * &uk));
                x = &a * x + &b * uk;
            }
        }
        cost
    };

    // The condensed form drops the input-independent constant; recover it
    // at u = 0 and the quadratic must then match everywhere.
    let constant = expanded(&DVector::zeros(nu * n));
    let mut gap = 0.0f64;
    for _ in 0..5 {
        let u = DVector::from_fn(nu * n, |_, _| rng.gen_range(-1.0..1.0));
        let condensed = 0.5 * u.dot(&(&p * &u)) + c.dot(&u) + constant;
        let truth = expanded(&u);
        gap = gap.max((condensed - truth).abs() / (1.0 + truth.abs()));
    }
    gap
}

/// Nearest rotation matrix in the Frobenius sense: the special orthogonal
/// polar factor via SVD.
pub fn polar_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd computed with vectors");
    let v_t = svd.v_t.expect("svd computed with vectors");
    let det = (u * v_t).determinant();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum())) * v_t
}

/// Suite: reference dynamics against the variational oracle.
pub fn check_dynamics(samples: usize, seed: u64) -> OracleReport {
    let params = RobotParams::reference();
    check_dynamics_against_lagrangian(&params, samples, seed, |state, inputs| {
        forward_dynamics(state, &params, inputs)
            .expect("reference dynamics must be solvable on sampled states")
    })
}

/// Suite: analytic reduced-model linearization against finite differences
/// of the supplied acceleration law (pass [`lip_accel`] for the library).
pub fn check_rom(
    samples: usize,
    seed: u64,
    lip: impl Fn(&RomState, &Vector2<f64>, &RomParams) -> f64,
) -> OracleReport {
    let p = RomParams::reference();
    let mut rng = test_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let op = OperatingPoint {
            lambda_z0: rng.gen_range(10.0..150.0),
            p_bx0: rng.gen_range(-1.0..1.0),
            c_x0: rng.gen_range(-1.0..1.0),
        };
        let (a, b) = linearize(&op, &p);
        let (a_fd, b_fd) = fd_linearize(&lip, &op, &p, 1e-5);
        worst = worst.max((a - a_fd).amax()).max((b - b_fd).amax());
    }
    OracleReport {
        name: "rom-linearization-vs-finite-difference",
        samples,
        max_rel_error: worst,
        tolerance: 1e-6,
    }
}

/// Suite: interior-point solutions against the dual projected-gradient
/// oracle on random strictly convex problems.
pub fn check_qp(samples: usize, seed: u64) -> OracleReport {
    let mut rng = test_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let problem = random_qp(&mut rng, 10, 20);
        let sol = solve(&problem, None);
        if sol.status != QpStatus::Optimal {
            worst = f64::INFINITY;
            continue;
        }
        let (_, obj_oracle) = projected_gradient_qp(&problem, 100_000);
        let gap = (sol.objective - obj_oracle).abs() / (1.0 + obj_oracle.abs());
        worst = worst.max(gap).max(problem.max_violation(&sol.u_star));
    }
    OracleReport {
        name: "qp-vs-projected-gradient",
        samples,
        max_rel_error: worst,
        tolerance: 1e-6,
    }
}

/// Suite: condensed horizon cost against explicit rollouts.
pub fn check_mpc(samples: usize, seed: u64) -> OracleReport {
    let mut rng = test_rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        worst = worst.max(condensed_vs_expanded_gap(&mut rng));
    }
    OracleReport {
        name: "mpc-condensed-cost-vs-rollout",
        samples,
        max_rel_error: worst,
        tolerance: 1e-9,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rom::discretize;
    use approx::assert_relative_eq;

    #[test]
    fn expm2_matches_closed_forms() {
        // Diagonal generator.
        let a = Matrix2::new(0.3, 0.0, 0.0, -1.2);
        let e = expm2(&a, 2.0);
        assert_relative_eq!(e[(0, 0)], (0.6f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 1)], (-2.4f64).exp(), epsilon = 1e-13);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-15);

        // Planar rotation generator.
        let w = Matrix2::new(0.0, -1.0, 1.0, 0.0);
        let theta = 0.77;
        let e = expm2(&w, theta);
        assert_relative_eq!(e[(0, 0)], theta.cos(), epsilon = 1e-13);
        assert_relative_eq!(e[(1, 0)], theta.sin(), epsilon = 1e-13);

        // Hyperbolic generator, as in the pendulum linearization.
        let a = Matrix2::new(0.0, 1.0, 4.0, 0.0);
        let e = expm2(&a, 0.5);
        assert_relative_eq!(e[(0, 0)], (1.0f64).cosh(), epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], 0.5 * (1.0f64).sinh(), epsilon = 1e-12);
    }

    #[test]
    fn expm2_semigroup_property() {
        let a = Matrix2::new(0.2, -0.9, 1.4, -0.3);
        let lhs = expm2(&a, 0.7);
        let rhs = expm2(&a, 0.4) * expm2(&a, 0.3);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn polar_factor_strips_stretch_and_keeps_rotation() {
        let r = Rotation3::new(Vector3::new(0.3, -0.8, 0.5)).into_inner();
        assert_relative_eq!(polar_rotation(&r), r, epsilon = 1e-12);
        assert_relative_eq!(polar_rotation(&(3.0 * r)), r, epsilon = 1e-12);
        let out = polar_rotation(&(r + Matrix3::new_scaling(0.01)));
        assert!((out.transpose() * out - Matrix3::identity()).abs().max() < 1e-12);
        assert!(out.determinant() > 0.0);
    }

    #[test]
    fn advance_state_flows_each_chart() {
        let mut rng = test_rng(5);
        let state = random_state(&mut rng, 1.0);
        let mut dir = SVector::<f64, NV>::zeros();
        dir[1] = 1.0; // pitch rate
        let s = advance_state(&state, &dir, 0.2);
        // Right-multiplication by the body-frame exponential.
        let expected = state.r_b * Rotation3::new(Vector3::new(0.0, 0.2, 0.0)).into_inner();
        assert_relative_eq!(s.r_b, expected, epsilon = 1e-14);
        assert_eq!(s.p_b, state.p_b);

        let mut dir = SVector::<f64, NV>::zeros();
        dir[5] = 1.0;
        dir[9] = 1.0;
        let s = advance_state(&state, &dir, 0.1);
        assert_relative_eq!(s.p_b.z, state.p_b.z + 0.1, epsilon = 1e-15);
        assert_relative_eq!(s.phi_h[1], state.phi_h[1] + 0.1, epsilon = 1e-15);
        assert_eq!(s.r_b, state.r_b);
    }

    #[test]
    fn projected_gradient_solves_a_clamped_least_squares() {
        // min 0.5|u - (1, 1)|^2 subject to u1 <= 0.5, u2 <= 2: the first
        // coordinate clamps, the second stays at its target.
        let problem = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_column_slice(&[-1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_column_slice(&[0.5, 2.0]),
        );
        let (u, obj) = projected_gradient_qp(&problem, 50_000);
        assert_relative_eq!(u[0], 0.5, epsilon = 1e-8);
        assert_relative_eq!(u[1], 1.0, epsilon = 1e-8);
        let expected = 0.5 * (0.25 + 1.0) - 0.5 - 1.0;
        assert_relative_eq!(obj, expected, epsilon = 1e-8);
    }

    #[test]
    fn random_qps_are_well_conditioned_and_strictly_feasible() {
        let mut rng = test_rng(17);
        for _ in 0..20 {
            let problem = random_qp(&mut rng, 10, 20);
            let eigs = problem.p.clone().symmetric_eigenvalues();
            assert!(eigs.min() > 0.99, "eigenvalue {}", eigs.min());
            assert!(eigs.max() < 10.01, "eigenvalue {}", eigs.max());
            assert!(problem.m() >= 1 && problem.m() <= 20);
        }
    }

    #[test]
    fn rom_suite_passes_for_the_library_and_fails_a_flipped_sign() {
        let good = check_rom(10, 3, lip_accel);
        assert!(good.passed(), "{good}");
        let bad = check_rom(10, 3, |s: &RomState, l: &Vector2<f64>, p: &RomParams| {
            lip_accel(s, &Vector2::new(-l.x, l.y), p)
        });
        assert!(!bad.passed(), "flipped sagittal sign slipped through");
    }

    #[test]
    fn mpc_suite_smoke() {
        let report = check_mpc(5, 9);
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn euler_map_error_is_second_order_in_dt() {
        // One independent cross-check that discretize is the first-order
        // Euler map: its defect against the exact exponential shrinks
        // quadratically.
        let a = Matrix2::new(0.0, 1.0, 25.0, 0.0);
        let err = |dt: f64| {
            let (a_d, _) = discretize(&a, &Matrix2::zeros(), dt);
            (a_d - expm2(&a, dt)).amax()
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }
}
