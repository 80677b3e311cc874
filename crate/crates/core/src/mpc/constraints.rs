use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::prediction::PredictionMatrices;
use crate::error::{Error, Result};
use crate::linmodel::Partition;
use crate::reference::ReferenceKnot;

/// Bound on angular momentum, `|h_i| <= J_ii * omega_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumBox {
    pub omega_max: f64,
    pub inertia: nalgebra::Matrix3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Keep-in cone half angle (rad).
    pub keep_in: Option<f64>,
    /// Bound on the 1-norm of the attitude error (rad).
    pub l1: Option<f64>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub momentum: Option<MomentumBox>,
}

impl ConstraintSpec {
    /// Thrust in `[0, f_max]`, body rates in `[-w, w]`.
    pub fn outer(alpha: f64, gamma: f64, f_max: f64, omega_max: f64) -> Self {
        Self {
            keep_in: Some(alpha),
            l1: Some(gamma),
            u_min: DVector::from_row_slice(&[0.0, -omega_max, -omega_max, -omega_max]),
            u_max: DVector::from_row_slice(&[f_max, omega_max, omega_max, omega_max]),
            momentum: None,
        }
    }

    pub fn inner(torque_max: f64) -> Self {
        Self {
            keep_in: None,
            l1: None,
            u_min: DVector::from_element(3, -torque_max),
            u_max: DVector::from_element(3, torque_max),
            momentum: None,
        }
    }

    pub fn smpc(alpha: f64, gamma: f64, f_max: f64, torque_max: f64, momentum: MomentumBox) -> Self {
        Self {
            keep_in: Some(alpha),
            l1: Some(gamma),
            u_min: DVector::from_row_slice(&[0.0, -torque_max, -torque_max, -torque_max]),
            u_max: DVector::from_row_slice(&[f_max, torque_max, torque_max, torque_max]),
            momentum: Some(momentum),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("keep-in angle", self.keep_in), ("l1 bound", self.l1)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be positive, got {v}")));
                }
            }
        }
        if self.u_min.len() != self.u_max.len() {
            return Err(Error::DimensionMismatch { context: "input bounds", expected: self.u_min.len(), got: self.u_max.len() });
        }
        if self.u_min.iter().zip(self.u_max.iter()).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("input bounds need u_min < u_max".into()));
        }
        if let Some(mb) = &self.momentum {
            if !(mb.omega_max > 0.0) {
                return Err(Error::Config("momentum bound needs a positive rate limit".into()));
            }
        }
        Ok(())
    }

    /// Slack variables in the order keep-in, l1, momentum.
    pub fn slack_kinds(&self) -> Vec<RowKind> {
        let mut out = Vec::new();
        if self.keep_in.is_some() {
            out.push(RowKind::KeepIn);
        }
        if self.l1.is_some() {
            out.push(RowKind::L1);
        }
        if self.momentum.is_some() {
            out.push(RowKind::Momentum);
        }
        out
    }

    /// Clamps a feedforward input into the box.
    pub fn clamp_input(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.u_min[i], self.u_max[i]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    KeepIn,
    L1,
    Momentum,
    Input,
    SlackSign,
}

/// Stacked rows `G z <= W + T dx0` over `z = [dmu; slacks]`.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    pub g: DMatrix<f64>,
    pub w: DVector<f64>,
    pub t: DMatrix<f64>,
    pub kinds: Vec<RowKind>,
    pub slack_kinds: Vec<RowKind>,
    /// Feedforward after clamping, one entry per input block.
    pub u_ff: Vec<DVector<f64>>,
}

impl ConstraintSet {
    pub fn rhs(&self, dx0: &DVector<f64>) -> DVector<f64> {
        &self.w + &self.t * dx0
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    /// Checks that `dmu = 0` with large enough slacks satisfies every row.
    pub fn soft_feasible(&self, dx0: &DVector<f64>) -> bool {
        let n_mu = self.g.ncols() - self.slack_kinds.len();
        let rhs = self.rhs(dx0);
        (0..self.len()).all(|i| {
            let has_slack = (n_mu..self.g.ncols()).any(|j| self.g[(i, j)] < 0.0);
            has_slack || rhs[i] >= -1e-12 * (1.0 + rhs[i].abs())
        })
    }
}

fn offset_of(parts: &[Partition], name: &str) -> Option<usize> {
    let mut off = 0;
    for p in parts {
        if p.name == name {
            return Some(off);
        }
        off += p.len;
    }
    None
}

/// Half-space normals of the l1 ball in three dimensions.
pub fn l1_sign_patterns() -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (k, s) in out.iter_mut().enumerate() {
        for i in 0..3 {
            s[i] = if k >> i & 1 == 1 { -1.0 } else { 1.0 };
        }
    }
    out
}

/// First-order keep-in row about the reference attitude: returns `(a, b)`
/// with `a . phi <= b` equivalent to `e3' (I - phi^x) C_ref' e3 >= cos(alpha)`.
pub fn keep_in_row(c_ref: &nalgebra::Matrix3<f64>, alpha: f64) -> (Vector3<f64>, f64) {
    let e3 = Vector3::z();
    let w = c_ref.transpose() * e3;
    // e3 . (phi x w) = phi . (w x e3)
    (w.cross(&e3), w[2] - alpha.cos())
}

struct Builder {
    cols: usize,
    nx: usize,
    g: Vec<DVector<f64>>,
    t: Vec<DVector<f64>>,
    w: Vec<f64>,
    kinds: Vec<RowKind>,
}

impl Builder {
    fn push(&mut self, g: DVector<f64>, t: DVector<f64>, w: f64, kind: RowKind) {
        self.g.push(g);
        self.t.push(t);
        self.w.push(w);
        self.kinds.push(kind);
    }

    /// `a' x_i - eps <= b` with `x_i = S_i z + M_i dx0`.
    fn state_row(&mut self, pred: &PredictionMatrices, step: usize, a: &DVector<f64>, slack_col: usize, b: f64, kind: RowKind) {
        let mut g = DVector::zeros(self.cols);
        g.rows_mut(0, pred.s.ncols()).copy_from(&(pred.s_block(step).transpose() * a));
        g[slack_col] = -1.0;
        let t = -(pred.m_block(step).transpose() * a);
        self.push(g, t, b, kind);
    }

    fn finish(self, slack_kinds: Vec<RowKind>, u_ff: Vec<DVector<f64>>) -> ConstraintSet {
        let rows = self.kinds.len();
        let mut g = DMatrix::zeros(rows, self.cols);
        let mut t = DMatrix::zeros(rows, self.nx);
        for i in 0..rows {
            g.row_mut(i).copy_from(&self.g[i].transpose());
            t.row_mut(i).copy_from(&self.t[i].transpose());
        }
        ConstraintSet { g, w: DVector::from_vec(self.w), t, kinds: self.kinds, slack_kinds, u_ff }
    }
}

/// Assembles the soft state rows on predicted steps `1..=nc` and the input
/// box on every input block.
///
/// `knots[i]` is the reference at the start of step `i`, so state rows use
/// `knots[1..=nc]`. `u_ff` holds one feedforward per input block; it is
/// clamped into the box, making `dmu = 0` feasible for the input rows.
pub fn constraint_matrices(
    spec: &ConstraintSpec,
    knots: &[ReferenceKnot],
    pred: &PredictionMatrices,
    states: &[Partition],
    nc: usize,
    u_ff: &[DVector<f64>],
) -> Result<ConstraintSet> {
    spec.validate()?;
    let (nx, m, nu) = (pred.nx, pred.nu_dim, pred.nu);
    if spec.u_min.len() != m {
        return Err(Error::DimensionMismatch { context: "input bounds", expected: m, got: spec.u_min.len() });
    }
    if u_ff.len() != nu {
        return Err(Error::DimensionMismatch { context: "feedforward blocks", expected: nu, got: u_ff.len() });
    }
    if nc > pred.steps {
        return Err(Error::Config(format!("constraint horizon {nc} exceeds prediction horizon {}", pred.steps)));
    }
    let slack_kinds = spec.slack_kinds();
    let n_mu = nu * m;
    let cols = n_mu + slack_kinds.len();
    let slack_col = |kind| n_mu + slack_kinds.iter().position(|k| *k == kind).expect("slack exists for kind");
    let mut b = Builder { cols, nx, g: Vec::new(), t: Vec::new(), w: Vec::new(), kinds: Vec::new() };

    let needs_phi = spec.keep_in.is_some() || spec.l1.is_some();
    let phi = if needs_phi { offset_of(states, "phi").ok_or_else(|| Error::Config("attitude rows need a phi state".into()))? } else { 0 };
    if spec.keep_in.is_some() && knots.len() <= nc {
        return Err(Error::DimensionMismatch { context: "constraint knots", expected: nc + 1, got: knots.len() });
    }

    for step in 1..=nc {
        let row = step - 1;
        if let Some(alpha) = spec.keep_in {
            let (a3, rhs) = keep_in_row(knots[step].c_ar.matrix(), alpha);
            let mut a = DVector::zeros(nx);
            a.rows_mut(phi, 3).copy_from(&a3);
            b.state_row(pred, row, &a, slack_col(RowKind::KeepIn), rhs, RowKind::KeepIn);
        }
        if let Some(gamma) = spec.l1 {
            for s in l1_sign_patterns() {
                let mut a = DVector::zeros(nx);
                a.rows_mut(phi, 3).copy_from(&s);
                b.state_row(pred, row, &a, slack_col(RowKind::L1), gamma, RowKind::L1);
            }
        }
        if let Some(mb) = &spec.momentum {
            let h = offset_of(states, "h").ok_or_else(|| Error::Config("momentum rows need an h state".into()))?;
            let knot = knots.get(step).ok_or(Error::DimensionMismatch { context: "constraint knots", expected: nc + 1, got: knots.len() })?;
            let h_ref = mb.inertia * knot.omega_r;
            for i in 0..3 {
                let limit = mb.inertia[(i, i)] * mb.omega_max;
                for sign in [1.0, -1.0] {
                    let mut a = DVector::zeros(nx);
                    a[h + i] = sign;
                    b.state_row(pred, row, &a, slack_col(RowKind::Momentum), limit - sign * h_ref[i], RowKind::Momentum);
                }
            }
        }
    }

    let clamped: Vec<DVector<f64>> = u_ff.iter().map(|u| spec.clamp_input(u)).collect();
    for (blk, ff) in clamped.iter().enumerate() {
        for i in 0..m {
            for sign in [1.0, -1.0] {
                let mut g = DVector::zeros(cols);
                g[blk * m + i] = sign;
                let rhs = if sign > 0.0 { spec.u_max[i] - ff[i] } else { ff[i] - spec.u_min[i] };
                b.push(g, DVector::zeros(nx), rhs, RowKind::Input);
            }
        }
    }
    for j in 0..slack_kinds.len() {
        let mut g = DVector::zeros(cols);
        g[n_mu + j] = -1.0;
        b.push(g, DVector::zeros(nx), 0.0, RowKind::SlackSign);
    }
    Ok(b.finish(slack_kinds, clamped))
}
