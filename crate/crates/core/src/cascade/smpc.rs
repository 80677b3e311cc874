use std::time::Instant;

use nalgebra::{DVector, Vector3};

use super::{outer_error, rigid_body_torque, Controller, ControllerConfig, ControllerKind, Guidance, TickOutput};
use crate::error::Result;
use crate::linmodel::{discretize_zoh, smpc_jacobians};
use crate::mpc::{mpc_step, Assembled, ConstraintSpec, CostSpec, HorizonSpec, MpcOutput};
use crate::qpsolve::WarmStart;
use crate::reference::{ReferenceKnot, Target};
use crate::vehicle::{VehicleParams, VehicleState, Wrench};

/// Single 12-state controller: attitude, velocity and position error plus
/// the angular-momentum error, with thrust and torque as inputs.
pub struct SmpcController {
    cfg: ControllerConfig,
    params: VehicleParams,
    guidance: Guidance,
    horizon: HorizonSpec,
    cost: CostSpec,
    spec: ConstraintSpec,
    warm: Option<WarmStart>,
    faults: usize,
    last: Option<Wrench>,
}

impl SmpcController {
    pub fn new(cfg: &ControllerConfig, params: &VehicleParams, x0: &VehicleState, target: Target) -> Result<Self> {
        cfg.validate()?;
        let guidance = Guidance::new(x0, target, &cfg.guidance, params, cfg.outer.dt, cfg.smpc.dt, cfg.constraints.alpha)?;
        Ok(Self {
            horizon: cfg.smpc.horizon()?,
            cost: cfg.smpc.cost(&cfg.constraints),
            spec: cfg.constraints.smpc(&params.inertia),
            cfg: cfg.clone(),
            params: params.clone(),
            guidance,
            warm: None,
            faults: 0,
            last: None,
        })
    }

    /// 12-state error about `knot`: the outer tangent error followed by
    /// `dC J w - J w_r`.
    pub fn error_state(&self, knot: &ReferenceKnot, x: &VehicleState) -> (nalgebra::Matrix3<f64>, DVector<f64>) {
        let (err, xi) = outer_error(knot, x);
        let j = &self.params.inertia;
        let dh = err.c.matrix() * (j * x.omega) - j * knot.omega_r;
        let mut dx = DVector::zeros(12);
        dx.rows_mut(0, 9).copy_from(&xi);
        dx.rows_mut(9, 3).copy_from(&dh);
        (*err.c.matrix(), dx)
    }

    /// One solve; returns `(f, m_b)` and the solver output.
    pub fn smpc_step(&mut self, t: f64, x: &VehicleState) -> Result<(Wrench, MpcOutput)> {
        let h = &self.horizon;
        let knots = self.guidance.knots(t, &h.knot_offsets())?;
        let (dc, dx0) = self.error_state(&knots[0], x);
        let dc_t = dc.transpose();
        let models: Vec<_> =
            knots[..h.n].iter().zip(&h.dt_schedule).map(|(k, dt)| discretize_zoh(&smpc_jacobians(k, &self.params), *dt)).collect();
        let u_ff: Vec<DVector<f64>> = (0..h.nu)
            .map(|j| {
                let w_dot = (knots[j + 1].omega_r - knots[j].omega_r) / h.dt_schedule[j];
                let m = dc_t * rigid_body_torque(&knots[j], &w_dot, &self.params);
                DVector::from_row_slice(&[knots[j].f_r, m.x, m.y, m.z])
            })
            .collect();
        let problem = Assembled::new(&models, h.nu, h.nc, &self.cost, &self.spec, &knots, &u_ff)?;
        let warm = self.warm.take();
        let out = mpc_step(&dx0, &problem, &self.cfg.solver, warm.as_ref())?;

        let c = &self.cfg.constraints;
        let ff = &problem.cons.u_ff[0];
        let feedforward = Wrench::new(ff[0], Vector3::new(ff[1], ff[2], ff[3]));
        let wrench = if out.is_fault() {
            self.faults += 1;
            match (self.last, self.faults) {
                (Some(prev), 1) => prev,
                _ => feedforward,
            }
        } else {
            self.faults = 0;
            self.warm = Some(out.shifted_warm_start());
            let u = &out.u_total[0];
            Wrench::new(u[0].clamp(0.0, c.thrust_max), Vector3::new(u[1], u[2], u[3]).map(|m| m.clamp(-c.torque_max, c.torque_max)))
        };
        self.last = Some(wrench);
        Ok((wrench, out))
    }
}

impl Controller for SmpcController {
    fn tick(&mut self, t: f64, x: &VehicleState) -> Result<TickOutput> {
        let started = Instant::now();
        let (wrench, out) = self.smpc_step(t, x)?;
        let replanned = self.guidance.observe(t, x, out.diagnostics.l1_active)?;
        let elapsed = started.elapsed().as_secs_f64();
        Ok(TickOutput {
            wrench,
            omega_cmd: None,
            solve_time: out.diagnostics.solve_time,
            iterations: out.diagnostics.iterations,
            assembly_time: (elapsed - out.diagnostics.solve_time).max(0.0),
            fault: out.is_fault(),
            solves: vec![out.diagnostics],
            replanned,
        })
    }

    fn guidance(&self) -> &Guidance {
        &self.guidance
    }

    fn kind(&self) -> ControllerKind {
        ControllerKind::Smpc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::{ConstraintSpec, CostSpec};
    use crate::verify::oracles::lqr_sequence;

    fn hover() -> (SmpcController, VehicleState) {
        let p = VehicleParams::benchmark();
        let x = VehicleState::hover_at(Vector3::zeros());
        (SmpcController::new(&ControllerConfig::default(), &p, &x, Target::default()).unwrap(), x)
    }

    #[test]
    fn hover_gives_weight_and_zero_torque() {
        let (mut c, x) = hover();
        let (w, out) = c.smpc_step(0.0, &x).unwrap();
        assert!(!out.is_fault());
        assert!((w.thrust - 218.0 * 9.81).abs() < 1e-6);
        assert!(w.torque.amax() < 1e-9);
    }

    #[test]
    fn unconstrained_single_loop_matches_lqr() {
        let (c, _) = hover();
        let p = VehicleParams::benchmark();
        let knot = ReferenceKnot::hover(0.0, Vector3::zeros(), 0.0, &p);
        let model = discretize_zoh(&smpc_jacobians(&knot, &p), 0.02);
        let models = vec![model; 30];
        let cost = CostSpec::smpc();
        let loose = ConstraintSpec {
            keep_in: None,
            l1: None,
            u_min: DVector::from_element(4, -1e9),
            u_max: DVector::from_element(4, 1e9),
            momentum: None,
        };
        let ff = vec![DVector::zeros(4); 30];
        let problem = Assembled::new(&models, 30, 0, &cost, &loose, &[], &ff).unwrap();
        let dx0 = DVector::from_fn(12, |i, _| 0.05 * ((i as f64) - 5.0));
        let out = mpc_step(&dx0, &problem, &c.cfg.solver, None).unwrap();
        let lqr = lqr_sequence(&models, &cost.q, &cost.r, &cost.p, &dx0);
        for (k, u) in lqr.iter().enumerate() {
            assert!((&out.du[k] - u).amax() < 1e-6, "step {k}: {} vs {}", out.du[k], u);
        }
    }

    #[test]
    fn fast_spin_activates_momentum_rows() {
        let (mut c, mut x) = hover();
        x.omega = Vector3::new(2.6, 0.0, 0.0);
        let (w, out) = c.smpc_step(0.0, &x).unwrap();
        assert!(!out.is_fault());
        assert!(out.diagnostics.momentum_active);
        assert!(w.torque.amax() <= 200.0);
    }
}
