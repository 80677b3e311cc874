//! Independent reference computations used to check the analytic code.
//!
//! Nothing here calls into the Jacobian, prediction or solver modules it is
//! meant to check.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix5, Vector3};
use rand::Rng;

use crate::lie::{skew, ExtendedPose, Rotation, Se23Tangent, Vector9};
use crate::linmodel::{InnerModel, LinearModel};
use crate::reference::ReferenceKnot;
use crate::vehicle::{continuous_dynamics, VehicleParams, VehicleState, Wrench};

/// Parameters with every drag matrix populated and non-diagonal.
pub fn drag_heavy_params() -> VehicleParams {
    VehicleParams {
        drag_translational: Matrix3::from_diagonal(&Vector3::new(4.0, 6.0, 9.0)),
        drag_coupling: Matrix3::new(0.5, 0.1, 0.0, -0.2, 0.8, 0.3, 0.0, 0.4, 1.1),
        drag_rotational: Matrix3::new(3.0, 0.2, 0.1, 0.0, 5.0, -0.3, 0.4, 0.0, 4.0),
        ..VehicleParams::tandem_rotor()
    }
}

/// A reference knot with arbitrary attitude, velocity, thrust and body rate.
pub fn random_knot<R: Rng>(rng: &mut R, p: &VehicleParams) -> ReferenceKnot {
    let mut v3 = |s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let c = Rotation::exp(&v3(1.0));
    let v = v3(6.0);
    let r = v3(30.0);
    let omega = v3(1.0);
    let f_r = p.mass * p.gravity * rng.random_range(0.5..1.4);
    ReferenceKnot { t: 0.0, c_ar: c, v_r: v, r_r: r, a_r: Vector3::zeros(), f_r, omega_r: omega, psi_r: c.heading() }
}

fn wedge_expm(xi: &Se23Tangent) -> ExtendedPose {
    let m = DMatrix::from_column_slice(5, 5, xi.wedge().as_slice());
    let e = m.exp();
    ExtendedPose::from_matrix(&Matrix5::from_column_slice(e.as_slice()))
}

fn pose_rate(c_dot: &Matrix3<f64>, v_dot: &Vector3<f64>, r_dot: &Vector3<f64>) -> Matrix5<f64> {
    let mut m = Matrix5::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(c_dot);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(v_dot);
    m.fixed_view_mut::<3, 1>(0, 4).copy_from(r_dot);
    m
}

/// Rate of the reference pose when it obeys the drag model without wind.
fn reference_rate(knot: &ReferenceKnot, omega_r: &Vector3<f64>, p: &VehicleParams) -> Matrix5<f64> {
    let c = knot.c_ar.matrix();
    let v_dot = Vector3::z() * p.gravity
        - c * Vector3::z() * (knot.f_r / p.mass)
        - c * p.drag_translational * c.transpose() * knot.v_r / p.mass;
    pose_rate(&(c * skew(omega_r)), &v_dot, &knot.v_r)
}

/// Time derivative of `log(X_r^-1 X)` given both pose rates, by a five-point
/// stencil along the one-parameter subgroup through the current error.
fn log_error_rate(xr: &ExtendedPose, x: &ExtendedPose, xr_dot: &Matrix5<f64>, x_dot: &Matrix5<f64>) -> Vector9 {
    let xr_inv = xr.inverse().to_matrix();
    let dx = xr_inv * x.to_matrix();
    let dx_dot = -xr_inv * xr_dot * dx + xr_inv * x_dot;
    let body = Se23Tangent::vee(&(ExtendedPose::from_matrix(&dx).inverse().to_matrix() * dx_dot));
    let dx_pose = ExtendedPose::from_matrix(&dx);
    let h = 1e-3;
    let g = |s: f64| {
        let scaled = Se23Tangent::from_vector(&(body.to_vector() * s));
        dx_pose.compose(&wedge_expm(&scaled)).log().to_vector()
    };
    (g(-2.0 * h) - g(2.0 * h) + (g(h) - g(-h)) * 8.0) / (12.0 * h)
}

fn actual_pose(knot: &ReferenceKnot, xi: &Vector9) -> ExtendedPose {
    knot.pose().compose(&wedge_expm(&Se23Tangent::from_vector(xi)))
}

/// Nonlinear outer error rate: state `xi`, inputs `(df, domega)`.
pub fn outer_error_rate(knot: &ReferenceKnot, p: &VehicleParams, xi: &Vector9, du: &[f64; 4]) -> Vector9 {
    let x = actual_pose(knot, xi);
    let dc = knot.c_ar.transpose() * x.c;
    let omega = dc.transpose().matrix() * knot.omega_r + Vector3::new(du[1], du[2], du[3]);
    let state = VehicleState { pose: x, omega };
    let d = continuous_dynamics(&state, &Wrench::new(knot.f_r + du[0], Vector3::zeros()), &Vector3::zeros(), p);
    log_error_rate(&knot.pose(), &x, &reference_rate(knot, &knot.omega_r, p), &pose_rate(&d.c_dot, &d.v_dot, &d.r_dot))
}

/// Torque that keeps the reference body rate constant along `knot`.
fn steady_reference_torque(knot: &ReferenceKnot, omega_r: &Vector3<f64>, p: &VehicleParams) -> Vector3<f64> {
    p.drag_coupling * (knot.c_ar.transpose().matrix() * knot.v_r)
        + p.drag_rotational * omega_r
        + omega_r.cross(&(p.inertia * omega_r))
}

/// Momentum error rate and the actual state it was evaluated at.
fn momentum_error_rate(
    knot: &ReferenceKnot,
    omega_r: &Vector3<f64>,
    p: &VehicleParams,
    x: &ExtendedPose,
    dh: &Vector3<f64>,
    thrust: f64,
    dm: &Vector3<f64>,
) -> (Vector3<f64>, VehicleState, Matrix5<f64>) {
    let cr = knot.c_ar.matrix();
    let dc = cr.transpose() * x.c.matrix();
    let j = p.inertia;
    let omega = p.inertia_inv() * (dc.transpose() * (dh + j * omega_r));
    let torque = dc.transpose() * steady_reference_torque(knot, omega_r, p) + dm;
    let state = VehicleState { pose: *x, omega };
    let d = continuous_dynamics(&state, &Wrench::new(thrust, torque), &Vector3::zeros(), p);
    let dc_dot = (cr * skew(omega_r)).transpose() * x.c.matrix() + cr.transpose() * d.c_dot;
    // reference momentum is constant, so only the actual side contributes
    let dh_dot = dc_dot * (j * omega) + dc * (j * d.omega_dot);
    (dh_dot, state, pose_rate(&d.c_dot, &d.v_dot, &d.r_dot))
}

/// Nonlinear single-loop error rate: state `(xi, dh)`, inputs `(df, dm)`.
pub fn smpc_error_rate(knot: &ReferenceKnot, p: &VehicleParams, x12: &DVector<f64>, du: &[f64; 4]) -> DVector<f64> {
    let xi = Vector9::from_iterator(x12.rows(0, 9).iter().copied());
    let dh = Vector3::new(x12[9], x12[10], x12[11]);
    let x = actual_pose(knot, &xi);
    let (dh_dot, _, x_dot) =
        momentum_error_rate(knot, &knot.omega_r, p, &x, &dh, knot.f_r + du[0], &Vector3::new(du[1], du[2], du[3]));
    let xi_dot = log_error_rate(&knot.pose(), &x, &reference_rate(knot, &knot.omega_r, p), &x_dot);
    DVector::from_iterator(12, xi_dot.iter().chain(dh_dot.iter()).copied())
}

/// Nonlinear momentum error rate about `omega_ref`: state `(phi, v, h)`, input `dm`.
pub fn inner_error_rate(omega_ref: &Vector3<f64>, knot: &ReferenceKnot, p: &VehicleParams, x9: &Vector9, dm: &Vector3<f64>) -> Vector3<f64> {
    let xi = Vector9::from_iterator(x9.rows(0, 6).iter().copied().chain([0.0; 3]));
    let dh = Vector3::new(x9[6], x9[7], x9[8]);
    let x = actual_pose(knot, &xi);
    momentum_error_rate(knot, omega_ref, p, &x, &dh, knot.f_r, dm).0
}

/// Central differences of `rate` over state and input, about zero.
fn central_jacobian<F>(n: usize, m: usize, eps: f64, rate: F) -> (DMatrix<f64>, DMatrix<f64>)
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let zx = DVector::zeros(n);
    let zu = DVector::zeros(m);
    let rows = rate(&zx, &zu).len();
    let mut a = DMatrix::zeros(rows, n);
    let mut b = DMatrix::zeros(rows, m);
    for j in 0..n {
        let mut e = zx.clone();
        e[j] = eps;
        a.set_column(j, &((rate(&e, &zu) - rate(&(-&e), &zu)) / (2.0 * eps)));
    }
    for j in 0..m {
        let mut e = zu.clone();
        e[j] = eps;
        b.set_column(j, &((rate(&zx, &e) - rate(&zx, &(-&e))) / (2.0 * eps)));
    }
    (a, b)
}

fn arr4(u: &DVector<f64>) -> [f64; 4] {
    [u[0], u[1], u[2], u[3]]
}

pub fn fd_outer(knot: &ReferenceKnot, p: &VehicleParams, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    central_jacobian(9, 4, eps, |x, u| {
        let xi = Vector9::from_iterator(x.iter().copied());
        DVector::from_iterator(9, outer_error_rate(knot, p, &xi, &arr4(u)).iter().copied())
    })
}

pub fn fd_smpc(knot: &ReferenceKnot, p: &VehicleParams, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    central_jacobian(12, 4, eps, |x, u| smpc_error_rate(knot, p, x, &arr4(u)))
}

/// Rows of the momentum rate over `(phi, v, h)` and `dm`.
pub fn fd_inner(omega_ref: &Vector3<f64>, knot: &ReferenceKnot, p: &VehicleParams, eps: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    central_jacobian(9, 3, eps, |x, u| {
        let x9 = Vector9::from_iterator(x.iter().copied());
        let dm = Vector3::new(u[0], u[1], u[2]);
        DVector::from_iterator(3, inner_error_rate(omega_ref, knot, p, &x9, &dm).iter().copied())
    })
}

/// Column norms below this are treated as this size when forming relative errors.
const COLUMN_FLOOR: f64 = 1e-3;

fn column_error(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    assert_eq!(analytic.shape(), fd.shape());
    (0..fd.ncols())
        .map(|j| (analytic.column(j) - fd.column(j)).amax() / fd.column(j).amax().max(COLUMN_FLOOR))
        .fold(0.0, f64::max)
}

/// Largest relative column error over `A` and `B`.
pub fn compare_columns(analytic: &LinearModel, fd: &(DMatrix<f64>, DMatrix<f64>)) -> f64 {
    column_error(&analytic.a, &fd.0).max(column_error(&analytic.b, &fd.1))
}

pub fn compare_inner(analytic: &InnerModel, fd: &(DMatrix<f64>, DMatrix<f64>)) -> f64 {
    let mut a = DMatrix::zeros(3, 9);
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&analytic.coupling_phi);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&analytic.coupling_v);
    a.view_mut((0, 6), (3, 3)).copy_from(&analytic.model.a);
    column_error(&a, &fd.0).max(column_error(&analytic.model.b, &fd.1))
}

/// Discrete `(A_d, B_d)` by Euler sub-integration with `steps` and `2 steps`
/// substeps, combined by Richardson extrapolation.
pub fn euler_zoh(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64, steps: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let run = |k: usize| {
        let h = dt / k as f64;
        let n = a.nrows();
        let step = DMatrix::identity(n, n) + a * h;
        let gain = b * h;
        let mut ad = DMatrix::identity(n, n);
        let mut bd = DMatrix::zeros(n, b.ncols());
        for _ in 0..k {
            bd = &step * bd + &gain;
            ad = &step * ad;
        }
        (ad, bd)
    };
    let (a1, b1) = run(steps);
    let (a2, b2) = run(2 * steps);
    (a2 * 2.0 - a1, b2 * 2.0 - b1)
}

/// Strictly convex QP with a known interior point, so every draw is feasible.
pub fn random_qp<R: Rng>(rng: &mut R, n: usize, m: usize) -> crate::qpsolve::QpProblem {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let g = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    // a strictly feasible interior point keeps every draw feasible
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let w = &g * &x0 + DVector::from_fn(m, |_, _| rng.random_range(0.01..1.0));
    crate::qpsolve::QpProblem::new(h, f, g, w).expect("shapes agree by construction")
}

/// Brute-force QP minimum: every subset of at most `n` rows is solved as an
/// equality-constrained problem and the best feasible point kept.
pub fn enumerate_qp(p: &crate::qpsolve::QpProblem) -> Option<(DVector<f64>, f64)> {
    let (n, m) = (p.n(), p.m());
    assert!(m <= 16, "enumeration is exponential in the row count");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if rows.len() > n {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.f));
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = p.g[(i, j)];
                kkt[(j, n + r)] = p.g[(i, j)];
            }
            rhs[n + r] = p.w[i];
        }
        let svd = kkt.svd(true, true);
        if svd.singular_values.min() < 1e-12 * svd.singular_values.max() {
            continue;
        }
        let Ok(sol) = svd.solve(&rhs, 0.0) else { continue };
        let x = sol.rows(0, n).into_owned();
        if (&p.g * &x - &p.w).iter().any(|s| *s > 1e-10) {
            continue;
        }
        let j = p.objective(&x);
        if best.as_ref().is_none_or(|(_, b)| j < *b) {
            best = Some((x, j));
        }
    }
    best
}

/// Finite-horizon LQR by the backward Riccati recursion over time-varying
/// models; returns the optimal open-loop input sequence from `x0`.
///
/// Stage weight `q` on states 1..N-1, terminal `p` on state N, `r` on every input.
pub fn lqr_sequence(models: &[LinearModel], q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>, x0: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = models.len();
    let mut gains = vec![DMatrix::zeros(0, 0); n];
    let mut cost_to_go = p.clone();
    for k in (0..n).rev() {
        let (a, b) = (&models[k].a, &models[k].b);
        let lhs = r + b.transpose() * &cost_to_go * b;
        let rhs = b.transpose() * &cost_to_go * a;
        let gain = lhs.lu().solve(&rhs).expect("input penalty keeps the Riccati step invertible");
        cost_to_go = q + a.transpose() * &cost_to_go * (a - b * &gain);
        cost_to_go = (&cost_to_go + cost_to_go.transpose()) * 0.5;
        gains[k] = gain;
    }
    let mut x = x0.clone();
    let mut out = Vec::with_capacity(n);
    for (k, model) in models.iter().enumerate() {
        let u = -(&gains[k] * &x);
        x = &model.a * &x + &model.b * &u;
        out.push(u);
    }
    out
}
