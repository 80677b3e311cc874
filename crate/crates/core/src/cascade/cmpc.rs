use std::time::Instant;

use nalgebra::{DVector, Vector3};

use super::{outer_error, whole_ratio, Controller, ControllerConfig, ControllerKind, Guidance, TickOutput};
use crate::error::Result;
use crate::linmodel::{discretize_zoh, inner_lti_model, outer_jacobians, INNER_STATES};
use crate::mpc::{
    constraint_matrices, mpc_step, prediction_matrices_lti, Assembled, CondensedCost, ConstraintSpec, CostSpec, HorizonSpec,
    MpcDiagnostics, MpcOutput, PredictionMatrices,
};
use crate::qpsolve::WarmStart;
use crate::reference::{torque_reference, Target};
use crate::vehicle::{VehicleParams, VehicleState, Wrench};

/// Output of one outer-loop solve.
#[derive(Clone, Debug, PartialEq)]
pub struct OuterCommand {
    pub t: f64,
    pub f: f64,
    pub omega_cmd: Vector3<f64>,
    /// Composed rate commands at each outer step of the horizon.
    pub omega_star_seq: Vec<Vector3<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerCommand {
    pub m_b: Vector3<f64>,
}

/// Inner prediction and condensed cost, built once per outer iteration.
#[derive(Clone, Debug)]
struct InnerCache {
    pred: PredictionMatrices,
    cost: CondensedCost,
}

pub struct CascadedController {
    cfg: ControllerConfig,
    params: VehicleParams,
    guidance: Guidance,
    outer_horizon: HorizonSpec,
    outer_cost: CostSpec,
    outer_spec: ConstraintSpec,
    inner_cost: CostSpec,
    inner_spec: ConstraintSpec,
    ratio: usize,
    tick_count: usize,
    held: Option<OuterCommand>,
    cache: Option<InnerCache>,
    outer_warm: Option<WarmStart>,
    inner_warm: Option<WarmStart>,
    outer_faults: usize,
    inner_faults: usize,
    last_torque: Option<Vector3<f64>>,
}

fn clamp3(v: &Vector3<f64>, lo: f64, hi: f64) -> Vector3<f64> {
    v.map(|x| x.clamp(lo, hi))
}

impl CascadedController {
    pub fn new(cfg: &ControllerConfig, params: &VehicleParams, x0: &VehicleState, target: Target) -> Result<Self> {
        cfg.validate()?;
        let ratio = whole_ratio(cfg.outer.dt, cfg.inner.dt).expect("validated");
        let guidance = Guidance::new(x0, target, &cfg.guidance, params, cfg.outer.dt, cfg.outer.dt, cfg.constraints.alpha)?;
        Ok(Self {
            outer_horizon: cfg.outer.horizon()?,
            outer_cost: cfg.outer.cost(&cfg.constraints),
            outer_spec: cfg.constraints.outer(),
            inner_cost: cfg.inner.cost(&cfg.constraints),
            inner_spec: cfg.constraints.inner(),
            cfg: cfg.clone(),
            params: params.clone(),
            guidance,
            ratio,
            tick_count: 0,
            held: None,
            cache: None,
            outer_warm: None,
            inner_warm: None,
            outer_faults: 0,
            inner_faults: 0,
            last_torque: None,
        })
    }

    /// Solves the outer QP at `t` and returns the composed command with the
    /// solver diagnostics.
    pub fn outer_step(&mut self, t: f64, x: &VehicleState) -> Result<(OuterCommand, MpcOutput)> {
        let h = &self.outer_horizon;
        let knots = self.guidance.knots(t, &h.knot_offsets())?;
        let (err, dx0) = outer_error(&knots[0], x);
        let dc_t = err.c.transpose();
        let dc_t = dc_t.matrix();
        let models: Vec<_> =
            knots[..h.n].iter().zip(&h.dt_schedule).map(|(k, dt)| discretize_zoh(&outer_jacobians(k, &self.params), *dt)).collect();
        let u_ff: Vec<DVector<f64>> = (0..h.nu)
            .map(|j| {
                let w = dc_t * knots[j].omega_r;
                DVector::from_row_slice(&[knots[j].f_r, w.x, w.y, w.z])
            })
            .collect();
        let problem = Assembled::new(&models, h.nu, h.nc, &self.outer_cost, &self.outer_spec, &knots, &u_ff)?;
        let warm = self.outer_warm.take();
        let out = mpc_step(&dx0, &problem, &self.cfg.solver, warm.as_ref())?;

        let cmd = if out.is_fault() {
            self.outer_faults += 1;
            match (&self.held, self.outer_faults) {
                (Some(prev), 1) => OuterCommand { t, ..prev.clone() },
                _ => self.compose(t, &knots, dc_t, &vec![DVector::zeros(4); h.nu], &problem.cons.u_ff),
            }
        } else {
            self.outer_faults = 0;
            self.outer_warm = Some(out.shifted_warm_start());
            self.compose(t, &knots, dc_t, &out.du, &problem.cons.u_ff)
        };
        Ok((cmd, out))
    }

    fn compose(
        &self,
        t: f64,
        knots: &[crate::reference::ReferenceKnot],
        dc_t: &nalgebra::Matrix3<f64>,
        du: &[DVector<f64>],
        u_ff: &[DVector<f64>],
    ) -> OuterCommand {
        let c = &self.cfg.constraints;
        let n = self.outer_horizon.n;
        let seq: Vec<Vector3<f64>> = (0..n)
            .map(|k| {
                let b = k.min(du.len() - 1);
                let ff = if k < u_ff.len() {
                    Vector3::new(u_ff[k][1], u_ff[k][2], u_ff[k][3])
                } else {
                    clamp3(&(dc_t * knots[k].omega_r), -c.rate_max, c.rate_max)
                };
                clamp3(&(ff + Vector3::new(du[b][1], du[b][2], du[b][3])), -c.rate_max, c.rate_max)
            })
            .collect();
        OuterCommand { t, f: (u_ff[0][0] + du[0][0]).clamp(0.0, c.thrust_max), omega_cmd: seq[0], omega_star_seq: seq }
    }

    /// Rebuilds the inner prediction about the first entry of the held sequence.
    fn rebuild_inner(&mut self, omega0: &Vector3<f64>) -> Result<()> {
        let inner = &self.cfg.inner;
        let model = discretize_zoh(&inner_lti_model(omega0), inner.dt);
        let pred = prediction_matrices_lti(&model, inner.n)?.with_blocking(inner.nu);
        let cost = CondensedCost::new(&pred, &self.inner_cost, 0)?;
        self.cache = Some(InnerCache { pred, cost });
        Ok(())
    }

    /// Inner-loop reference rate `i` ticks after substep `j` of the held command.
    fn reference_rate(&self, held: &OuterCommand, j: usize, i: usize) -> Vector3<f64> {
        let k = ((j + i) / self.ratio).min(held.omega_star_seq.len() - 1);
        held.omega_star_seq[k]
    }

    /// One inner solve at substep `j` (0-based) of the held outer command.
    pub fn inner_step(&mut self, x: &VehicleState, j: usize) -> Result<(InnerCommand, MpcOutput)> {
        let held = self.held.clone().expect("inner step needs an outer command");
        let inner = self.cfg.inner.clone();
        let seq: Vec<Vector3<f64>> = (0..=inner.n).map(|i| self.reference_rate(&held, j, i)).collect();
        let j_hat = self.params.inertia;
        let torques = torque_reference(&seq, inner.dt, &j_hat);
        let v_body = x.pose.c.matrix().transpose() * x.pose.v;
        let drag = |w: &Vector3<f64>| self.params.drag_rotational * w + self.params.drag_coupling * v_body;
        let u_ff: Vec<DVector<f64>> = (0..inner.nu)
            .map(|i| {
                let m = torques.at(i) + drag(&seq[i]);
                DVector::from_row_slice(m.as_slice())
            })
            .collect();
        let dh = j_hat * (x.omega - seq[0]);
        let dx0 = DVector::from_row_slice(dh.as_slice());

        let cache = self.cache.as_ref().expect("inner cache is built with the outer command");
        let cons = constraint_matrices(&self.inner_spec, &[], &cache.pred, INNER_STATES, 0, &u_ff)?;
        let problem = Assembled { pred: cache.pred.clone(), cost: cache.cost.clone(), cons };
        let warm = self.inner_warm.take();
        let out = mpc_step(&dx0, &problem, &self.cfg.solver, warm.as_ref())?;

        let limit = self.cfg.constraints.torque_max;
        let ff0 = Vector3::from_column_slice(problem.cons.u_ff[0].as_slice());
        let m_b = if out.is_fault() {
            self.inner_faults += 1;
            match (self.last_torque, self.inner_faults) {
                (Some(prev), 1) => prev,
                _ => ff0,
            }
        } else {
            self.inner_faults = 0;
            self.inner_warm = Some(out.shifted_warm_start());
            clamp3(&(ff0 + Vector3::from_column_slice(out.du[0].as_slice())), -limit, limit)
        };
        self.last_torque = Some(m_b);
        Ok((InnerCommand { m_b }, out))
    }

    pub fn held(&self) -> Option<&OuterCommand> {
        self.held.as_ref()
    }
}

impl Controller for CascadedController {
    fn tick(&mut self, t: f64, x: &VehicleState) -> Result<TickOutput> {
        let j = self.tick_count % self.ratio;
        self.tick_count += 1;
        let mut solves: Vec<MpcDiagnostics> = Vec::new();
        let mut fault = false;
        let mut replanned = false;
        let mut assembly = 0.0;
        if j == 0 {
            let started = Instant::now();
            let (cmd, out) = self.outer_step(t, x)?;
            fault |= out.is_fault();
            replanned = self.guidance.observe(t, x, out.diagnostics.l1_active)?;
            self.rebuild_inner(&cmd.omega_star_seq[0])?;
            self.held = Some(cmd);
            assembly += started.elapsed().as_secs_f64() - out.diagnostics.solve_time;
            solves.push(out.diagnostics);
        }
        let started = Instant::now();
        let (inner_cmd, out) = self.inner_step(x, j)?;
        assembly += started.elapsed().as_secs_f64() - out.diagnostics.solve_time;
        fault |= out.is_fault();
        solves.push(out.diagnostics);

        let held = self.held.as_ref().expect("set above");
        Ok(TickOutput {
            wrench: Wrench::new(held.f, inner_cmd.m_b),
            omega_cmd: Some(self.reference_rate(held, j, 0)),
            solve_time: solves.iter().map(|d| d.solve_time).sum(),
            iterations: solves.iter().map(|d| d.iterations).sum(),
            assembly_time: assembly.max(0.0),
            solves,
            fault,
            replanned,
        })
    }

    fn guidance(&self) -> &Guidance {
        &self.guidance
    }

    fn kind(&self) -> ControllerKind {
        ControllerKind::Cmpc
    }
}
