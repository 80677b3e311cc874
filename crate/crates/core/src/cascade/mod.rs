//! Controller executives and the closed-loop simulation driver.
//!
//! Every controller ticks at 0.02 s. The cascaded controller runs its outer
//! QP on every fifth tick and the inner QP on every tick; the single-loop
//! baseline solves one QP per tick. Between ticks the truth model is
//! integrated at 0.002 s with the command held. Each command passes through
//! the mixer (wrench to rotor forces and back) before it reaches the truth
//! model, and the log records the command as issued by the controller.

mod cmpc;
mod log;
mod smpc;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use cmpc::{CascadedController, InnerCommand, OuterCommand};
pub use log::{ControlRecord, Event, EventKind, SimLog, TruthSample};
pub use smpc::SmpcController;

use crate::error::{Error, Result};
use crate::lie::{left_invariant_error, skew};
use crate::mpc::{ConstraintSpec, CostSpec, HorizonSpec, MpcDiagnostics};
use crate::qpsolve::QpSettings;
use crate::reference::{level_flight_acceleration, plan_from, plan_trajectory, PlannerConfig, ReferenceKnot, ReferenceTrajectory, ReplanMonitor, Target};
use crate::vehicle::{DrydenGust, WindConfig};
use crate::vehicle::{rk4_step, Mixer, VehicleParams, VehicleState, Wrench};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Cmpc,
    Smpc,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cmpc => "cmpc",
            Self::Smpc => "smpc",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cmpc" => Ok(Self::Cmpc),
            "smpc" => Ok(Self::Smpc),
            other => Err(Error::Config(format!("unknown controller {other:?} (expected cmpc or smpc)"))),
        }
    }
}

/// Timing, horizons and diagonal weights for one MPC loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    pub dt: f64,
    pub n: usize,
    pub nu: usize,
    pub nc: usize,
    pub t_total: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    /// Terminal weight as a multiple of the stage weight.
    pub terminal_scale: f64,
}

impl LoopConfig {
    pub fn outer() -> Self {
        Self {
            dt: 0.1,
            n: 48,
            nu: 10,
            nc: 10,
            t_total: 28.8,
            q_diag: [[1000.0; 3], [10.0; 3], [100.0; 3]].concat(),
            r_diag: vec![0.001, 1.0, 1.0, 1.0],
            terminal_scale: 1.0,
        }
    }

    pub fn inner() -> Self {
        Self { dt: 0.02, n: 10, nu: 5, nc: 5, t_total: 0.2, q_diag: vec![1000.0; 3], r_diag: vec![1.0; 3], terminal_scale: 1.0 }
    }

    pub fn smpc() -> Self {
        Self {
            dt: 0.02,
            n: 48,
            nu: 10,
            nc: 10,
            t_total: 5.76,
            q_diag: [[1000.0; 3], [10.0; 3], [100.0; 3], [10.0; 3]].concat(),
            r_diag: vec![0.001, 1.0, 1.0, 1.0],
            terminal_scale: 1.0,
        }
    }

    pub fn horizon(&self) -> Result<HorizonSpec> {
        HorizonSpec::new(self.dt, self.n, self.nu, self.nc, self.t_total)
    }

    pub fn cost(&self, c: &ConstraintConfig) -> CostSpec {
        let q = nalgebra::DMatrix::from_diagonal(&DVector::from_row_slice(&self.q_diag));
        let r = nalgebra::DMatrix::from_diagonal(&DVector::from_row_slice(&self.r_diag));
        let p = &q * self.terminal_scale;
        CostSpec { q, r, p, slack_quadratic: c.slack_quadratic, slack_linear: c.slack_linear }
    }

    fn validate(&self, name: &str, states: usize, inputs: usize, c: &ConstraintConfig) -> Result<()> {
        if self.q_diag.len() != states || self.r_diag.len() != inputs {
            return Err(Error::Config(format!(
                "{name}: expected {states} state weights and {inputs} input weights, got {} and {}",
                self.q_diag.len(),
                self.r_diag.len()
            )));
        }
        if !(self.terminal_scale >= 0.0) {
            return Err(Error::Config(format!("{name}: terminal_scale must be nonnegative")));
        }
        self.horizon().map_err(|e| Error::Config(format!("{name}: {e}")))?;
        self.cost(c).validate().map_err(|e| Error::Config(format!("{name}: {e}")))
    }
}

/// Constraint values shared by all loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub thrust_max: f64,
    pub rate_max: f64,
    pub torque_max: f64,
    pub slack_quadratic: f64,
    pub slack_linear: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self { alpha: 0.14, gamma: 0.1, thrust_max: 3000.0, rate_max: 2.0, torque_max: 200.0, slack_quadratic: 1e4, slack_linear: 1e2 }
    }
}

impl ConstraintConfig {
    pub fn outer(&self) -> ConstraintSpec {
        ConstraintSpec::outer(self.alpha, self.gamma, self.thrust_max, self.rate_max)
    }

    pub fn inner(&self) -> ConstraintSpec {
        ConstraintSpec::inner(self.torque_max)
    }

    pub fn smpc(&self, inertia: &Matrix3<f64>) -> ConstraintSpec {
        let mb = crate::mpc::MomentumBox { omega_max: self.rate_max, inertia: *inertia };
        ConstraintSpec::smpc(self.alpha, self.gamma, self.thrust_max, self.torque_max, mb)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    pub planner: PlannerConfig,
    pub replan: bool,
    /// Sustained l1 activity (s) that triggers a replan.
    pub replan_window: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { planner: PlannerConfig::default(), replan: true, replan_window: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub outer: LoopConfig,
    pub inner: LoopConfig,
    pub smpc: LoopConfig,
    pub constraints: ConstraintConfig,
    pub guidance: GuidanceConfig,
    pub solver: QpSettings,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            outer: LoopConfig::outer(),
            inner: LoopConfig::inner(),
            smpc: LoopConfig::smpc(),
            constraints: ConstraintConfig::default(),
            guidance: GuidanceConfig::default(),
            solver: QpSettings::default(),
        }
    }
}

/// `a / b` as a whole number, if it is one.
pub(crate) fn whole_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    (k >= 1.0 && (r - k).abs() < 1e-9).then_some(k as usize)
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        let c = &self.constraints;
        self.outer.validate("outer", 9, 4, c)?;
        self.inner.validate("inner", 3, 3, c)?;
        self.smpc.validate("smpc", 12, 4, c)?;
        self.constraints.outer().validate()?;
        self.constraints.inner().validate()?;
        if whole_ratio(self.outer.dt, self.inner.dt).is_none() {
            return Err(Error::Config(format!("outer dt {} is not a multiple of inner dt {}", self.outer.dt, self.inner.dt)));
        }
        if !(self.guidance.replan_window > 0.0) {
            return Err(Error::Config("replan_window must be positive".into()));
        }
        let p = &self.guidance.planner;
        if !(p.cruise_speed > 0.0 && p.max_accel > 0.0 && p.min_duration > 0.0 && p.max_duration >= p.min_duration) {
            return Err(Error::Config("planner speeds and durations must be positive and ordered".into()));
        }
        Ok(())
    }

    /// Controller tick period for `kind`.
    pub fn tick(&self, kind: ControllerKind) -> f64 {
        match kind {
            ControllerKind::Cmpc => self.inner.dt,
            ControllerKind::Smpc => self.smpc.dt,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub truth_dt: f64,
    pub duration: f64,
    pub arrival_radius: f64,
    pub arrival_dwell: f64,
    /// Airspeed and altitude fed to the gust filter.
    pub gust_airspeed: f64,
    pub gust_altitude: f64,
    /// Keep every truth step in the log (otherwise only controller ticks).
    pub record_truth: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            truth_dt: 0.002,
            duration: 60.0,
            arrival_radius: 0.5,
            arrival_dwell: 1.0,
            gust_airspeed: 5.0,
            gust_altitude: 20.0,
            record_truth: false,
        }
    }
}

/// Everything one closed-loop run needs besides the controller settings.
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub x0: VehicleState,
    pub target: Target,
    /// Parameters of the simulated vehicle.
    pub truth: VehicleParams,
    /// Parameters the controller believes.
    pub model: VehicleParams,
    pub wind: Option<WindConfig>,
}

/// Command issued at one controller tick, with what produced it.
#[derive(Clone, Debug, Default)]
pub struct TickOutput {
    pub wrench: Wrench,
    pub omega_cmd: Option<Vector3<f64>>,
    pub solve_time: f64,
    pub iterations: usize,
    pub assembly_time: f64,
    /// Diagnostics of every QP solved this tick.
    pub solves: Vec<MpcDiagnostics>,
    pub fault: bool,
    pub replanned: bool,
}

/// Reference trajectory owner with the replanning rule.
#[derive(Clone, Debug)]
pub struct Guidance {
    pub traj: ReferenceTrajectory,
    pub target: Target,
    cfg: GuidanceConfig,
    params: VehicleParams,
    monitor: ReplanMonitor,
    grid_dt: f64,
    max_tilt: f64,
}

impl Guidance {
    /// `max_tilt` bounds the tilt a replanned reference starts from.
    pub fn new(
        x0: &VehicleState,
        target: Target,
        cfg: &GuidanceConfig,
        params: &VehicleParams,
        grid_dt: f64,
        monitor_dt: f64,
        max_tilt: f64,
    ) -> Result<Self> {
        let duration = cfg.planner.duration_for(x0, &target);
        let traj = plan_trajectory(x0, &target, duration, grid_dt, 0.0, params)?;
        let monitor = ReplanMonitor::new(monitor_dt, cfg.replan_window);
        Ok(Self { traj, target, cfg: cfg.clone(), params: params.clone(), monitor, grid_dt, max_tilt })
    }

    /// Feeds one l1 activity sample; replans from `x` when the trigger fires.
    /// The new plan starts at the acceleration matching the current thrust
    /// axis, so the reference attitude begins at the vehicle's (up to the
    /// tilt cap).
    pub fn observe(&mut self, t: f64, x: &VehicleState, l1_active: bool) -> Result<bool> {
        if !self.cfg.replan || !self.monitor.push(l1_active) {
            return Ok(false);
        }
        let a0 = level_flight_acceleration(x, &self.params, self.max_tilt);
        let duration = self.cfg.planner.duration_from(x, &a0, &self.target);
        self.traj = plan_from(x, &a0, &self.target, duration, self.grid_dt, t, &self.params)?;
        Ok(true)
    }

    pub fn knots(&self, t: f64, offsets: &[f64]) -> Result<Vec<ReferenceKnot>> {
        offsets.iter().map(|o| self.traj.sample(t + o)).collect()
    }

    /// Reference torque along the plan by central differences of the
    /// reference body rate.
    pub fn torque_at(&self, t: f64) -> Result<Vector3<f64>> {
        const H: f64 = 1e-3;
        let k = self.traj.sample(t)?;
        let w_dot = (self.traj.sample(t + H)?.omega_r - self.traj.sample(t - H)?.omega_r) / (2.0 * H);
        Ok(rigid_body_torque(&k, &w_dot, &self.params))
    }
}

/// Torque that keeps the model on a reference with body-rate derivative `w_dot`.
pub fn rigid_body_torque(k: &ReferenceKnot, w_dot: &Vector3<f64>, p: &VehicleParams) -> Vector3<f64> {
    let w = k.omega_r;
    let v_body = k.c_ar.matrix().transpose() * k.v_r;
    p.inertia * w_dot + skew(&w) * (p.inertia * w) + p.drag_rotational * w + p.drag_coupling * v_body
}

/// Common interface of the two executives.
pub trait Controller {
    fn tick(&mut self, t: f64, x: &VehicleState) -> Result<TickOutput>;
    fn guidance(&self) -> &Guidance;
    fn kind(&self) -> ControllerKind;
}

pub fn make_controller(kind: ControllerKind, setup: &SimSetup, cfg: &ControllerConfig) -> Result<Box<dyn Controller>> {
    Ok(match kind {
        ControllerKind::Cmpc => Box::new(CascadedController::new(cfg, &setup.model, &setup.x0, setup.target)?),
        ControllerKind::Smpc => Box::new(SmpcController::new(cfg, &setup.model, &setup.x0, setup.target)?),
    })
}

/// Runs one closed-loop simulation. An integration fault ends the run early
/// and is reported in [`SimLog::aborted`].
pub fn run_simulation(setup: &SimSetup, kind: ControllerKind, cfg: &ControllerConfig, sim: &SimConfig) -> Result<SimLog> {
    cfg.validate()?;
    setup.truth.validate()?;
    setup.model.validate()?;
    let tick_dt = cfg.tick(kind);
    let substeps = whole_ratio(tick_dt, sim.truth_dt)
        .ok_or_else(|| Error::Config(format!("controller period {tick_dt} is not a multiple of truth step {}", sim.truth_dt)))?;
    if !(sim.duration > 0.0) {
        return Err(Error::Config("simulation duration must be positive".into()));
    }
    let ticks = (sim.duration / tick_dt).round() as usize;
    let mixer = Mixer::new(&setup.truth)?;
    let mut gust = setup.wind.as_ref().map(|w| DrydenGust::new(w, sim.gust_airspeed, sim.gust_altitude, sim.truth_dt));
    let steady = setup.wind.as_ref().map_or(Vector3::zeros(), |w| w.steady);

    let mut controller = make_controller(kind, setup, cfg)?;
    let mut log = SimLog::new(kind, setup.target);
    let mut x = setup.x0;
    let mut step = 0usize;
    log.push_truth(0.0, &x);

    for tick in 0..ticks {
        let t = tick as f64 * tick_dt;
        let out = controller.tick(t, &x)?;
        log.push_tick(t, &x, &out, controller.guidance())?;
        let applied = mixer.wrench(&mixer.allocate(&out.wrench));
        for _ in 0..substeps {
            let wind = steady + gust.as_mut().map_or(Vector3::zeros(), |g| g.next_gust());
            let ts = step as f64 * sim.truth_dt;
            match rk4_step(&x, &applied, &wind, &setup.truth, sim.truth_dt) {
                Ok(next) if next.is_finite() => x = next,
                _ => {
                    log.abort(ts, format!("integration fault at t = {ts:.3} s"));
                    return Ok(log);
                }
            }
            step += 1;
            if sim.record_truth {
                log.push_truth(step as f64 * sim.truth_dt, &x);
            }
        }
        if !sim.record_truth {
            log.push_truth((tick + 1) as f64 * tick_dt, &x);
        }
    }
    Ok(log)
}

/// Tangent error `(phi, v, r)` of `x` about a reference knot.
pub fn outer_error(knot: &ReferenceKnot, x: &VehicleState) -> (crate::lie::ExtendedPose, DVector<f64>) {
    let err = left_invariant_error(&knot.pose(), &x.pose);
    let xi = err.log().to_vector();
    (err, DVector::from_column_slice(xi.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = ControllerConfig::default();
        cfg.validate().unwrap();
        assert_eq!(whole_ratio(cfg.outer.dt, cfg.inner.dt), Some(5));
        assert!((cfg.outer.horizon().unwrap().t_total() - 28.8).abs() < 1e-9);
        assert!((cfg.smpc.horizon().unwrap().t_total() - 5.76).abs() < 1e-9);
    }

    #[test]
    fn config_rejects_bad_ratio_and_weights() {
        let mut cfg = ControllerConfig::default();
        cfg.outer.dt = 0.03;
        assert!(cfg.validate().is_err());
        let mut cfg = ControllerConfig::default();
        cfg.inner.r_diag = vec![1.0, 0.0, 1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ControllerConfig::default();
        cfg.smpc.q_diag.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn controller_kind_parses() {
        assert_eq!("CMPC".parse::<ControllerKind>().unwrap(), ControllerKind::Cmpc);
        assert!("lqr".parse::<ControllerKind>().is_err());
    }

    #[test]
    fn hover_torque_is_zero() {
        let p = VehicleParams::benchmark();
        let k = ReferenceKnot::hover(0.0, Vector3::zeros(), 0.0, &p);
        assert_eq!(rigid_body_torque(&k, &Vector3::zeros(), &p), Vector3::zeros());
    }
}
