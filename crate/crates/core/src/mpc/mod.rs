//! Condensed linear time-varying MPC.
//!
//! The decision vector is `z = [dmu; eps]`: `nu` input-perturbation blocks
//! followed by one slack per soft constraint family, shared over the
//! constraint horizon. The QP minimizes
//! `1/2 dmu' H dmu + (S' Qbar M dx0)' dmu + rho_q |eps|^2 + rho_l sum(eps)`
//! with `H = S' Qbar S + Rbar`, subject to `G z <= W + T dx0`.

mod constraints;
mod horizon;
mod prediction;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use constraints::{constraint_matrices, keep_in_row, l1_sign_patterns, ConstraintSet, ConstraintSpec, MomentumBox, RowKind};
pub use horizon::{move_blocking_expand, nonuniform_schedule, HorizonSpec};
pub use prediction::{prediction_matrices_lti, prediction_matrices_ltv, prediction_matrices_ltv_blocked, PredictionMatrices};

use crate::error::{Error, Result};
use crate::linalg::block_diag;
use crate::linmodel::LinearModel;
use crate::qpsolve::{self, QpProblem, QpSettings, QpSolution, QpStatus, WarmStart};
use crate::reference::ReferenceKnot;

const ACTIVE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub slack_quadratic: f64,
    pub slack_linear: f64,
}

fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(values))
}

fn repeat(value: f64, n: usize) -> Vec<f64> {
    vec![value; n]
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, p: DMatrix<f64>) -> Self {
        Self { q, r, p, slack_quadratic: 1e4, slack_linear: 1e2 }
    }

    /// Attitude, velocity, position weights 1000, 10, 100; thrust 0.001.
    pub fn outer() -> Self {
        let q = diag(&[repeat(1000.0, 3), repeat(10.0, 3), repeat(100.0, 3)].concat());
        Self::new(q.clone(), diag(&[0.001, 1.0, 1.0, 1.0]), q)
    }

    pub fn inner() -> Self {
        let q = DMatrix::identity(3, 3) * 1000.0;
        Self::new(q.clone(), DMatrix::identity(3, 3), q)
    }

    pub fn smpc() -> Self {
        let q = diag(&[repeat(1000.0, 3), repeat(10.0, 3), repeat(100.0, 3), repeat(10.0, 3)].concat());
        Self::new(q.clone(), diag(&[0.001, 1.0, 1.0, 1.0]), q)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.nrows();
        if self.q.shape() != (n, n) || self.p.shape() != (n, n) {
            return Err(Error::DimensionMismatch { context: "state penalty", expected: n, got: self.p.nrows() });
        }
        if !self.r.is_square() {
            return Err(Error::Config("input penalty must be square".into()));
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P", &self.p)] {
            if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return Err(Error::Config(format!("{name} is not symmetric")));
            }
        }
        let min_eig = |m: &DMatrix<f64>| m.clone().symmetric_eigenvalues().min();
        if min_eig(&self.q) < -1e-12 || min_eig(&self.p) < -1e-12 {
            return Err(Error::Config("Q and P must be positive semidefinite".into()));
        }
        if !(min_eig(&self.r) > 0.0) {
            return Err(Error::Config("R must be positive definite".into()));
        }
        if !(self.slack_quadratic > 0.0 && self.slack_linear >= 0.0) {
            return Err(Error::Config("slack weights must be positive".into()));
        }
        Ok(())
    }
}

/// Hessian over `z` and the map from `dx0` to the linear term.
#[derive(Clone, Debug)]
pub struct CondensedCost {
    pub h: DMatrix<f64>,
    /// `S' Qbar M`.
    pub f_map: DMatrix<f64>,
    pub n_slack: usize,
    pub slack_linear: f64,
}

impl CondensedCost {
    pub fn new(pred: &PredictionMatrices, cost: &CostSpec, n_slack: usize) -> Result<Self> {
        let (nx, m) = (pred.nx, pred.nu_dim);
        if cost.q.nrows() != nx {
            return Err(Error::DimensionMismatch { context: "state penalty", expected: nx, got: cost.q.nrows() });
        }
        if cost.r.nrows() != m {
            return Err(Error::DimensionMismatch { context: "input penalty", expected: m, got: cost.r.nrows() });
        }
        let n_mu = pred.nu * m;
        let mut hs = DMatrix::zeros(n_mu, n_mu);
        let mut f_map = DMatrix::zeros(n_mu, nx);
        for i in 0..pred.steps {
            let w = if i + 1 == pred.steps { &cost.p } else { &cost.q };
            let s_i = pred.s_block(i);
            let ws = w * s_i;
            hs += s_i.transpose() * &ws;
            f_map += ws.transpose() * pred.m_block(i);
        }
        let r_bar = block_diag(&vec![&cost.r; pred.nu]);
        hs += r_bar;
        let hs = (&hs + hs.transpose()) * 0.5;
        let mut h = DMatrix::zeros(n_mu + n_slack, n_mu + n_slack);
        h.view_mut((0, 0), (n_mu, n_mu)).copy_from(&hs);
        for j in 0..n_slack {
            h[(n_mu + j, n_mu + j)] = 2.0 * cost.slack_quadratic;
        }
        Ok(Self { h, f_map, n_slack, slack_linear: cost.slack_linear })
    }

    pub fn n_mu(&self) -> usize {
        self.f_map.nrows()
    }

    pub fn f(&self, dx0: &DVector<f64>) -> DVector<f64> {
        let mut f = DVector::from_element(self.h.nrows(), self.slack_linear);
        f.rows_mut(0, self.n_mu()).copy_from(&(&self.f_map * dx0));
        f
    }
}

/// `(H, F)` over `[dmu; eps]` for the given initial error.
pub fn condense_cost(pred: &PredictionMatrices, cost: &CostSpec, dx0: &DVector<f64>, n_slack: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let c = CondensedCost::new(pred, cost, n_slack)?;
    let f = c.f(dx0);
    Ok((c.h, f))
}

/// Prediction, condensed cost and constraints for one horizon.
#[derive(Clone, Debug)]
pub struct Assembled {
    pub pred: PredictionMatrices,
    pub cost: CondensedCost,
    pub cons: ConstraintSet,
}

impl Assembled {
    /// Builds everything from discrete models. `knots` must hold the
    /// reference at the start of each step and at the horizon end.
    pub fn new(
        models: &[LinearModel],
        nu: usize,
        nc: usize,
        cost: &CostSpec,
        spec: &ConstraintSpec,
        knots: &[ReferenceKnot],
        u_ff: &[DVector<f64>],
    ) -> Result<Self> {
        let pred = prediction_matrices_ltv_blocked(models, nu)?;
        Self::from_prediction(pred, models[0].states, nc, cost, spec, knots, u_ff)
    }

    pub fn from_prediction(
        pred: PredictionMatrices,
        states: &[crate::linmodel::Partition],
        nc: usize,
        cost: &CostSpec,
        spec: &ConstraintSpec,
        knots: &[ReferenceKnot],
        u_ff: &[DVector<f64>],
    ) -> Result<Self> {
        cost.validate()?;
        let cons = constraint_matrices(spec, knots, &pred, states, nc, u_ff)?;
        let cost = CondensedCost::new(&pred, cost, cons.slack_kinds.len())?;
        Ok(Self { pred, cost, cons })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MpcDiagnostics {
    pub status: Option<QpStatus>,
    pub iterations: usize,
    pub solve_time: f64,
    pub polished: bool,
    pub keep_in_active: bool,
    pub l1_active: bool,
    pub momentum_active: bool,
    pub input_active: bool,
    pub slack_keep_in: f64,
    pub slack_l1: f64,
    pub slack_momentum: f64,
    pub n_vars: usize,
    pub n_rows: usize,
}

impl MpcDiagnostics {
    pub fn max_slack(&self) -> f64 {
        self.slack_keep_in.max(self.slack_l1).max(self.slack_momentum)
    }
}

#[derive(Clone, Debug)]
pub struct MpcOutput {
    /// Input perturbation per control block.
    pub du: Vec<DVector<f64>>,
    /// Clamped feedforward plus perturbation, per control block.
    pub u_total: Vec<DVector<f64>>,
    pub slacks: DVector<f64>,
    pub diagnostics: MpcDiagnostics,
    pub solution: QpSolution,
}

impl MpcOutput {
    pub fn is_fault(&self) -> bool {
        self.solution.status != QpStatus::Optimal
    }

    /// Previous solution shifted one block ahead with the last block repeated.
    pub fn shifted_warm_start(&self) -> WarmStart {
        let mut mu = self.solution.mu.clone();
        let blocks = self.du.len();
        if blocks > 1 {
            let m = self.du[0].len();
            for b in 0..blocks - 1 {
                let next = mu.rows((b + 1) * m, m).into_owned();
                mu.rows_mut(b * m, m).copy_from(&next);
            }
        }
        WarmStart { mu, lambda: DVector::zeros(self.solution.lambda.len()) }
    }
}

/// Solves one condensed MPC problem. A solver fault is reported through
/// [`MpcOutput::is_fault`] so the caller can fall back.
pub fn mpc_step(dx0: &DVector<f64>, problem: &Assembled, settings: &QpSettings, warm: Option<&WarmStart>) -> Result<MpcOutput> {
    let cons = &problem.cons;
    if dx0.len() != problem.pred.nx {
        return Err(Error::DimensionMismatch { context: "initial error", expected: problem.pred.nx, got: dx0.len() });
    }
    if !dx0.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("initial error"));
    }
    if !cons.soft_feasible(dx0) {
        return Err(Error::Config("hard constraint rows are infeasible at zero perturbation".into()));
    }
    let qp = QpProblem::new(problem.cost.h.clone(), problem.cost.f(dx0), cons.g.clone(), cons.rhs(dx0))?;
    let warm = warm.filter(|w| w.mu.len() == qp.n() && w.lambda.len() == qp.m());
    let started = Instant::now();
    let mut solution = qpsolve::solve(&qp, settings, warm);
    solution.solve_time = solution.solve_time.max(started.elapsed().as_secs_f64());
    Ok(unpack(problem, solution))
}

fn unpack(problem: &Assembled, solution: QpSolution) -> MpcOutput {
    let cons = &problem.cons;
    let (m, nu) = (problem.pred.nu_dim, problem.pred.nu);
    let n_mu = nu * m;
    let ok = solution.status == QpStatus::Optimal;
    let du: Vec<DVector<f64>> =
        (0..nu).map(|b| if ok { solution.mu.rows(b * m, m).into_owned() } else { DVector::zeros(m) }).collect();
    let slacks =
        if ok { solution.mu.rows(n_mu, cons.slack_kinds.len()).map(|e| e.max(0.0)) } else { DVector::zeros(cons.slack_kinds.len()) };
    let u_total = du.iter().zip(&cons.u_ff).map(|(d, ff)| ff + d).collect();

    let mut diag = MpcDiagnostics {
        status: Some(solution.status),
        iterations: solution.iterations,
        solve_time: solution.solve_time,
        polished: solution.polished,
        n_vars: solution.mu.len(),
        n_rows: cons.len(),
        ..Default::default()
    };
    if ok {
        for (i, kind) in cons.kinds.iter().enumerate() {
            if solution.lambda[i] > ACTIVE_TOL {
                match kind {
                    RowKind::KeepIn => diag.keep_in_active = true,
                    RowKind::L1 => diag.l1_active = true,
                    RowKind::Momentum => diag.momentum_active = true,
                    RowKind::Input => diag.input_active = true,
                    RowKind::SlackSign => {}
                }
            }
        }
        for (j, kind) in cons.slack_kinds.iter().enumerate() {
            let eps = slacks[j];
            match kind {
                RowKind::KeepIn => diag.slack_keep_in = eps,
                RowKind::L1 => diag.slack_l1 = eps,
                RowKind::Momentum => diag.slack_momentum = eps,
                _ => {}
            }
            if eps > ACTIVE_TOL {
                match kind {
                    RowKind::KeepIn => diag.keep_in_active = true,
                    RowKind::L1 => diag.l1_active = true,
                    RowKind::Momentum => diag.momentum_active = true,
                    _ => {}
                }
            }
        }
    }
    MpcOutput { du, u_total, slacks, diagnostics: diag, solution }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmodel::{discretize_zoh, outer_jacobians, INNER_INPUTS, INNER_STATES};
    use crate::verify::oracles::lqr_sequence;
    use crate::vehicle::VehicleParams;
    use nalgebra::Vector3;

    fn scalar_model(a: f64, b: f64) -> LinearModel {
        LinearModel {
            a: DMatrix::from_element(1, 1, a),
            b: DMatrix::from_element(1, 1, b),
            dt: 0.1,
            states: INNER_STATES,
            inputs: INNER_INPUTS,
        }
    }

    fn hover_outer(n: usize, dt: f64) -> (Vec<LinearModel>, Vec<ReferenceKnot>) {
        let p = VehicleParams::tandem_rotor();
        let knots: Vec<_> = (0..=n).map(|k| ReferenceKnot::hover(k as f64 * dt, Vector3::zeros(), 0.0, &p)).collect();
        let models = knots[..n].iter().map(|k| discretize_zoh(&outer_jacobians(k, &p), dt)).collect();
        (models, knots)
    }

    fn hover_ff(nu: usize) -> Vec<DVector<f64>> {
        let p = VehicleParams::tandem_rotor();
        vec![DVector::from_row_slice(&[p.mass * p.gravity, 0.0, 0.0, 0.0]); nu]
    }

    fn double_integrator(dt: f64) -> LinearModel {
        LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
            dt,
            states: INNER_STATES,
            inputs: INNER_INPUTS,
        }
    }

    fn loose_box(m: usize) -> ConstraintSpec {
        ConstraintSpec {
            keep_in: None,
            l1: None,
            u_min: DVector::from_element(m, -1e9),
            u_max: DVector::from_element(m, 1e9),
            momentum: None,
        }
    }

    #[test]
    fn table_costs_validate() {
        for c in [CostSpec::outer(), CostSpec::inner(), CostSpec::smpc()] {
            c.validate().unwrap();
            assert_eq!(c.p, c.q);
        }
        assert_eq!(CostSpec::outer().q[(0, 0)], 1000.0);
        assert_eq!(CostSpec::outer().q[(8, 8)], 100.0);
        assert_eq!(CostSpec::smpc().q[(11, 11)], 10.0);
        let mut bad = CostSpec::inner();
        bad.r[(0, 0)] = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_prediction_gives_input_penalty_only() {
        let pred = prediction_matrices_ltv(&vec![scalar_model(0.0, 0.0); 3]).unwrap();
        let cost = CostSpec::new(DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 2.0, DMatrix::identity(1, 1));
        let (h, f) = condense_cost(&pred, &cost, &DVector::from_element(1, 3.0), 0).unwrap();
        assert_eq!(h, DMatrix::identity(3, 3) * 2.0);
        assert_eq!(f.amax(), 0.0);
    }

    #[test]
    fn one_step_scalar_hand_expansion() {
        let (a, b, q, r, x0) = (0.9, 0.4, 3.0, 0.5, 1.7);
        let pred = prediction_matrices_ltv(&[scalar_model(a, b)]).unwrap();
        let cost = CostSpec::new(DMatrix::from_element(1, 1, q), DMatrix::from_element(1, 1, r), DMatrix::from_element(1, 1, q));
        let (h, f) = condense_cost(&pred, &cost, &DVector::from_element(1, x0), 1).unwrap();
        assert!((h[(0, 0)] - (b * b * q + r)).abs() < 1e-15);
        assert!((f[0] - b * q * a * x0).abs() < 1e-15);
        assert_eq!(h[(1, 1)], 2e4);
        assert_eq!(f[1], 1e2);
    }

    #[test]
    fn hessian_bounded_below_by_input_penalty() {
        let (models, _) = hover_outer(12, 0.1);
        let pred = prediction_matrices_ltv_blocked(&models, 5).unwrap();
        let cost = CostSpec::outer();
        let c = CondensedCost::new(&pred, &cost, 0).unwrap();
        let min_r = cost.r.clone().symmetric_eigenvalues().min();
        assert!(c.h.clone().symmetric_eigenvalues().min() >= min_r - 1e-10);
    }

    #[test]
    fn origin_is_optimal() {
        let (models, knots) = hover_outer(10, 0.1);
        let spec = ConstraintSpec::outer(0.14, 0.1, 3000.0, 2.0);
        let prob = Assembled::new(&models, 5, 5, &CostSpec::outer(), &spec, &knots, &hover_ff(5)).unwrap();
        let out = mpc_step(&DVector::zeros(9), &prob, &QpSettings::default(), None).unwrap();
        assert!(!out.is_fault());
        assert!(out.du.iter().all(|d| d.amax() < 1e-9));
        assert!(out.slacks.amax() < 1e-9);
        assert!(!out.diagnostics.l1_active && !out.diagnostics.keep_in_active);
    }

    #[test]
    fn unconstrained_matches_riccati() {
        let model = double_integrator(0.1);
        let models = vec![model; 20];
        let q = DMatrix::from_diagonal(&DVector::from_row_slice(&[10.0, 1.0]));
        let cost = CostSpec::new(q.clone(), DMatrix::from_element(1, 1, 0.3), q * 3.0);
        let spec = loose_box(1);
        let ff = vec![DVector::zeros(1); 20];
        let prob = Assembled::new(&models, 20, 0, &cost, &spec, &[], &ff).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, -0.5]);
        let out = mpc_step(&x0, &prob, &QpSettings::default(), None).unwrap();
        let lqr = lqr_sequence(&models, &cost.q, &cost.r, &cost.p, &x0);
        for (k, u) in lqr.iter().enumerate() {
            assert!((&out.du[k] - u).amax() < 1e-6, "step {k}");
        }
    }

    #[test]
    fn l1_violation_activates_slack() {
        let (models, knots) = hover_outer(10, 0.1);
        let spec = ConstraintSpec::outer(0.14, 0.1, 3000.0, 2.0);
        let prob = Assembled::new(&models, 5, 5, &CostSpec::outer(), &spec, &knots, &hover_ff(5)).unwrap();
        let mut dx0 = DVector::zeros(9);
        dx0[0] = 0.5;
        dx0[1] = -0.1;
        let out = mpc_step(&dx0, &prob, &QpSettings::default(), None).unwrap();
        assert!(!out.is_fault());
        assert!(out.diagnostics.l1_active);
        assert!(out.diagnostics.slack_l1 > 0.0);
        // one step at the 2 rad/s limit leaves |phi|_1 >= 0.3
        assert!(out.diagnostics.slack_l1 >= 0.2 - 1e-6);
    }

    #[test]
    fn totals_respect_input_box() {
        let (models, knots) = hover_outer(10, 0.1);
        let spec = ConstraintSpec::outer(0.14, 0.1, 3000.0, 2.0);
        let prob = Assembled::new(&models, 5, 5, &CostSpec::outer(), &spec, &knots, &hover_ff(5)).unwrap();
        let mut dx0 = DVector::zeros(9);
        dx0[6] = 40.0;
        dx0[8] = -30.0;
        dx0[0] = 0.6;
        let out = mpc_step(&dx0, &prob, &QpSettings::default(), None).unwrap();
        assert!(!out.is_fault());
        assert!(out.diagnostics.input_active);
        for u in &out.u_total {
            for i in 0..4 {
                assert!(u[i] >= spec.u_min[i] - 1e-9 && u[i] <= spec.u_max[i] + 1e-9, "{u}");
            }
        }
    }

    #[test]
    fn larger_input_penalty_shrinks_the_move() {
        let models = vec![double_integrator(0.1); 15];
        let q = DMatrix::identity(2, 2);
        let x0 = DVector::from_row_slice(&[0.8, 0.2]);
        let mut norms = Vec::new();
        for r in [0.2, 0.4] {
            let cost = CostSpec::new(q.clone(), DMatrix::from_element(1, 1, r), q.clone());
            let prob = Assembled::new(&models, 15, 0, &cost, &loose_box(1), &[], &vec![DVector::zeros(1); 15]).unwrap();
            let out = mpc_step(&x0, &prob, &QpSettings::default(), None).unwrap();
            norms.push(out.solution.mu.norm());
        }
        assert!(norms[1] < norms[0]);
    }

    #[test]
    fn shifted_warm_start_moves_blocks() {
        let prob = Assembled::new(
            &vec![double_integrator(0.1); 4],
            3,
            0,
            &CostSpec::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1), DMatrix::identity(2, 2)),
            &loose_box(1),
            &[],
            &vec![DVector::zeros(1); 3],
        )
        .unwrap();
        let out = mpc_step(&DVector::from_row_slice(&[1.0, 0.0]), &prob, &QpSettings::default(), None).unwrap();
        let warm = out.shifted_warm_start();
        assert_eq!(warm.mu[0], out.du[1][0]);
        assert_eq!(warm.mu[1], out.du[2][0]);
        assert_eq!(warm.mu[2], out.du[2][0]);
        let again = mpc_step(&DVector::from_row_slice(&[1.0, 0.0]), &prob, &QpSettings::default(), Some(&out.solution.warm_start())).unwrap();
        assert!((&again.solution.mu - &out.solution.mu).amax() < 1e-9);
    }
}
