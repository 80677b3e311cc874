//! Guidance: flat-output trajectories, their full-state feedforward, the
//! torque feedforward for the inner loop and the replanning trigger.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{skew, vee3, Rotation};
use crate::vehicle::{VehicleParams, VehicleState};

/// Smallest thrust-per-mass magnitude accepted by the flatness map (m/s^2).
const MIN_SPECIFIC_THRUST: f64 = 1e-6;
/// Step for the central difference used when drag makes the attitude implicit.
const OMEGA_FD_STEP: f64 = 1e-5;

/// One sample of the outer-loop reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceKnot {
    pub t: f64,
    pub c_ar: Rotation,
    pub v_r: Vector3<f64>,
    pub r_r: Vector3<f64>,
    pub a_r: Vector3<f64>,
    pub f_r: f64,
    pub omega_r: Vector3<f64>,
    pub psi_r: f64,
}

impl ReferenceKnot {
    pub fn pose(&self) -> crate::lie::ExtendedPose {
        crate::lie::ExtendedPose::new(self.c_ar, self.v_r, self.r_r)
    }

    /// Static hover at `r` with heading `psi`.
    pub fn hover(t: f64, r: Vector3<f64>, psi: f64, p: &VehicleParams) -> Self {
        Self {
            t,
            c_ar: Rotation::exp(&Vector3::new(0.0, 0.0, psi)),
            v_r: Vector3::zeros(),
            r_r: r,
            a_r: Vector3::zeros(),
            f_r: p.mass * p.gravity,
            omega_r: Vector3::zeros(),
            psi_r: psi,
        }
    }
}

/// Position and heading derivatives at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FlatOutputs {
    pub r: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub psi: f64,
    pub psi_dot: f64,
}

/// Desired final position and heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub position: Vector3<f64>,
    pub heading: f64,
}

impl Default for Target {
    fn default() -> Self {
        Self { position: Vector3::zeros(), heading: 0.0 }
    }
}

/// Quintic `p(t) = sum c_i t^i` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quintic {
    c: [f64; 6],
}

impl Quintic {
    /// Matches position, velocity and acceleration at both ends.
    pub fn new(start: [f64; 3], end: [f64; 3], duration: f64) -> Self {
        let [p0, v0, a0] = start;
        let [p1, v1, a1] = end;
        let t = duration;
        let (c0, c1, c2) = (p0, v0, 0.5 * a0);
        let dp = p1 - (c0 + c1 * t + c2 * t * t);
        let dv = v1 - (c1 + 2.0 * c2 * t);
        let da = a1 - 2.0 * c2;
        let c3 = (20.0 * dp - 8.0 * dv * t + da * t * t) / (2.0 * t.powi(3));
        let c4 = (-30.0 * dp + 14.0 * dv * t - 2.0 * da * t * t) / (2.0 * t.powi(4));
        let c5 = (12.0 * dp - 6.0 * dv * t + da * t * t) / (2.0 * t.powi(5));
        Self { c: [c0, c1, c2, c3, c4, c5] }
    }

    /// Position, velocity, acceleration and jerk.
    pub fn eval(&self, t: f64) -> [f64; 4] {
        let c = &self.c;
        let p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
        let v = c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])));
        let a = 2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]));
        let j = 6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5]);
        [p, v, a, j]
    }
}

/// Reference attitude and thrust for a thrust vector `m (g e3 - a) - drag`.
fn attitude_from_thrust(t_vec: &Vector3<f64>, psi: f64) -> Result<Rotation> {
    let b3 = t_vec.normalize();
    let heading = Vector3::new(psi.cos(), psi.sin(), 0.0);
    let n = b3.cross(&heading);
    if n.norm() < 1e-9 {
        return Err(Error::DegenerateAttitude("thrust axis aligned with heading"));
    }
    let b2 = n.normalize();
    let b1 = b2.cross(&b3);
    Ok(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Required thrust direction and magnitude, with two fixed-point passes on
/// the attitude-dependent drag.
fn thrust_and_attitude(flat: &FlatOutputs, p: &VehicleParams) -> Result<(Rotation, f64)> {
    let base = (Vector3::z() * p.gravity - flat.a) * p.mass;
    let check = |t: &Vector3<f64>| {
        if t.norm() < MIN_SPECIFIC_THRUST * p.mass {
            Err(Error::DegenerateAttitude("required thrust vanishes"))
        } else {
            Ok(())
        }
    };
    check(&base)?;
    let mut c = attitude_from_thrust(&base, flat.psi)?;
    let mut t_vec = base;
    if p.drag_translational.amax() > 0.0 {
        for _ in 0..2 {
            let cm = c.matrix();
            t_vec = base - cm * (p.drag_translational * (cm.transpose() * flat.v));
            check(&t_vec)?;
            c = attitude_from_thrust(&t_vec, flat.psi)?;
        }
    }
    Ok((c, t_vec.norm()))
}

/// Full reference state and feedforward inputs from flat outputs.
pub fn flat_outputs_to_knot(t: f64, flat: &FlatOutputs, p: &VehicleParams) -> Result<ReferenceKnot> {
    let finite = [flat.r, flat.v, flat.a, flat.jerk].iter().all(|v| v.iter().all(|x| x.is_finite()))
        && flat.psi.is_finite()
        && flat.psi_dot.is_finite();
    if !finite {
        return Err(Error::NonFinite("flat_outputs_to_knot"));
    }
    let (c, f) = thrust_and_attitude(flat, p)?;

    let omega = if p.drag_translational.amax() > 0.0 {
        // attitude depends on velocity through drag; differentiate along the flat-output tangent
        let shifted = |s: f64| FlatOutputs {
            r: flat.r,
            v: flat.v + flat.a * s,
            a: flat.a + flat.jerk * s,
            jerk: flat.jerk,
            psi: flat.psi + flat.psi_dot * s,
            psi_dot: flat.psi_dot,
        };
        let (cm, _) = thrust_and_attitude(&shifted(-OMEGA_FD_STEP), p)?;
        let (cp, _) = thrust_and_attitude(&shifted(OMEGA_FD_STEP), p)?;
        (cm.transpose() * cp).log() / (2.0 * OMEGA_FD_STEP)
    } else {
        analytic_body_rate(flat, &c, p)
    };

    Ok(ReferenceKnot { t, c_ar: c, v_r: flat.v, r_r: flat.r, a_r: flat.a, f_r: f, omega_r: omega, psi_r: flat.psi })
}

/// `omega = vee(C^T C_dot)` with `C_dot` from the derivatives of the body axes.
fn analytic_body_rate(flat: &FlatOutputs, c: &Rotation, p: &VehicleParams) -> Vector3<f64> {
    let t_vec = (Vector3::z() * p.gravity - flat.a) * p.mass;
    let t_dot = -flat.jerk * p.mass;
    let cm = c.matrix();
    let (b2, b3) = (cm.column(1).into_owned(), cm.column(2).into_owned());

    let b3_dot = (Matrix3::identity() - b3 * b3.transpose()) * t_dot / t_vec.norm();
    let heading = Vector3::new(flat.psi.cos(), flat.psi.sin(), 0.0);
    let heading_dot = Vector3::new(-flat.psi.sin(), flat.psi.cos(), 0.0) * flat.psi_dot;
    let n = b3.cross(&heading);
    let n_dot = b3_dot.cross(&heading) + b3.cross(&heading_dot);
    let b2_dot = (Matrix3::identity() - b2 * b2.transpose()) * n_dot / n.norm();
    let b1_dot = b2_dot.cross(&b3) + b2.cross(&b3_dot);
    let c_dot = Matrix3::from_columns(&[b1_dot, b2_dot, b3_dot]);
    vee3(&(cm.transpose() * c_dot))
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI
}

/// Settings that pick a plan duration from the distance to go.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerConfig {
    /// Average speed used to size the duration (m/s).
    pub cruise_speed: f64,
    /// Largest acceleration the quintic may demand (m/s^2).
    pub max_accel: f64,
    pub min_duration: f64,
    pub max_duration: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { cruise_speed: 1.5, max_accel: 0.8, min_duration: 5.0, max_duration: 120.0 }
    }
}

impl PlannerConfig {
    /// Smallest duration, at least `distance / cruise_speed`, whose quintic
    /// stays within `max_accel`.
    pub fn duration_for(&self, x0: &VehicleState, target: &Target) -> f64 {
        self.duration_from(x0, &Vector3::zeros(), target)
    }

    /// As [`duration_for`](Self::duration_for) for a plan starting at
    /// acceleration `a0`; the bound is raised to `|a0|` when that is larger.
    pub fn duration_from(&self, x0: &VehicleState, a0: &Vector3<f64>, target: &Target) -> f64 {
        let dist = (target.position - x0.pose.r).norm();
        let bound = self.max_accel.max(a0.norm() * 1.0001);
        let mut t = (dist / self.cruise_speed).max(self.min_duration);
        while t < self.max_duration {
            let axes: Vec<Quintic> = (0..3)
                .map(|i| Quintic::new([x0.pose.r[i], x0.pose.v[i], a0[i]], [target.position[i], 0.0, 0.0], t))
                .collect();
            let peak = (0..=200)
                .map(|k| {
                    let s = t * k as f64 / 200.0;
                    Vector3::from_iterator(axes.iter().map(|q| q.eval(s)[2])).norm()
                })
                .fold(0.0, f64::max);
            if peak <= bound {
                break;
            }
            t *= 1.05;
        }
        t.min(self.max_duration)
    }
}

/// A planned reference: quintic flat outputs plus the knots sampled on a grid.
///
/// Outside `[t0, t0 + duration]` the reference holds hover at the end points.
#[derive(Clone, Debug)]
pub struct ReferenceTrajectory {
    pub t0: f64,
    pub duration: f64,
    pub target: Target,
    axes: [Quintic; 3],
    psi0: f64,
    psi_delta: f64,
    params: VehicleParams,
    pub knots: Vec<ReferenceKnot>,
}

impl ReferenceTrajectory {
    pub fn flat_at(&self, t: f64) -> FlatOutputs {
        let s = (t - self.t0).clamp(0.0, self.duration);
        let moving = t > self.t0 && t < self.t0 + self.duration;
        let e: Vec<[f64; 4]> = self.axes.iter().map(|q| q.eval(s)).collect();
        let pick = |k: usize| Vector3::new(e[0][k], e[1][k], e[2][k]);
        let frac = s / self.duration;
        FlatOutputs {
            r: pick(0),
            v: pick(1),
            a: pick(2),
            jerk: if moving { pick(3) } else { Vector3::zeros() },
            psi: wrap_angle(self.psi0 + self.psi_delta * frac),
            psi_dot: if moving { self.psi_delta / self.duration } else { 0.0 },
        }
    }

    /// Evaluates the reference at an arbitrary time.
    pub fn sample(&self, t: f64) -> Result<ReferenceKnot> {
        flat_outputs_to_knot(t, &self.flat_at(t), &self.params)
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    /// Writes `t, r, v, psi, f_r, omega_r` for every grid knot.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,r_x,r_y,r_z,v_x,v_y,v_z,psi,f_r,omega_x,omega_y,omega_z")?;
        for k in &self.knots {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                k.t, k.r_r.x, k.r_r.y, k.r_r.z, k.v_r.x, k.v_r.y, k.v_r.z, k.psi_r, k.f_r, k.omega_r.x, k.omega_r.y,
                k.omega_r.z
            )?;
        }
        Ok(())
    }
}

/// Acceleration at which the vehicle's current thrust axis is the reference
/// thrust axis, with the vertical component zero. The horizontal part is
/// clipped to what a tilt of `max_tilt` sustains, and is zero when the
/// vehicle is tilted too far for level flight.
pub fn level_flight_acceleration(x: &VehicleState, p: &VehicleParams, max_tilt: f64) -> Vector3<f64> {
    let cm = x.pose.c.matrix();
    let b3 = cm.column(2).into_owned();
    if b3.z < 0.3 || !x.is_finite() {
        return Vector3::zeros();
    }
    let drag = cm * (p.drag_translational * (cm.transpose() * x.pose.v));
    let k = (p.mass * p.gravity - drag.z) / b3.z;
    let mut a = Vector3::z() * p.gravity - (b3 * k + drag) / p.mass;
    a.z = 0.0;
    let cap = p.gravity * max_tilt.clamp(0.0, 1.2).tan();
    if a.norm() > cap {
        a *= cap / a.norm();
    }
    a
}

/// Plans a quintic from the current position and velocity (zero acceleration)
/// to rest at the target, with heading interpolated linearly.
pub fn plan_trajectory(
    x0: &VehicleState,
    target: &Target,
    duration: f64,
    grid_dt: f64,
    t0: f64,
    p: &VehicleParams,
) -> Result<ReferenceTrajectory> {
    plan_from(x0, &Vector3::zeros(), target, duration, grid_dt, t0, p)
}

/// [`plan_trajectory`] with initial acceleration `a0`.
pub fn plan_from(
    x0: &VehicleState,
    a0: &Vector3<f64>,
    target: &Target,
    duration: f64,
    grid_dt: f64,
    t0: f64,
    p: &VehicleParams,
) -> Result<ReferenceTrajectory> {
    let finite = x0.is_finite()
        && a0.iter().all(|x| x.is_finite())
        && target.position.iter().all(|x| x.is_finite())
        && target.heading.is_finite()
        && duration.is_finite()
        && grid_dt.is_finite()
        && t0.is_finite();
    if !finite {
        return Err(Error::NonFinite("plan_trajectory"));
    }
    if duration <= 0.0 || grid_dt <= 0.0 {
        return Err(Error::Config("plan duration and grid spacing must be positive".into()));
    }
    let axes = [0, 1, 2].map(|i| Quintic::new([x0.pose.r[i], x0.pose.v[i], a0[i]], [target.position[i], 0.0, 0.0], duration));
    let psi0 = x0.pose.c.heading();
    let mut traj = ReferenceTrajectory {
        t0,
        duration,
        target: *target,
        axes,
        psi0,
        psi_delta: wrap_angle(target.heading - psi0),
        params: p.clone(),
        knots: Vec::new(),
    };
    let steps = (duration / grid_dt).ceil() as usize;
    let mut knots = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = t0 + (k as f64 * grid_dt).min(duration);
        if knots.last().is_some_and(|prev: &ReferenceKnot| t <= prev.t) {
            continue;
        }
        knots.push(traj.sample(t)?);
    }
    traj.knots = knots;
    Ok(traj)
}

/// Torque feedforward aligned with an angular-velocity sequence.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct TorqueReference {
    pub torques: Vec<Vector3<f64>>,
}

impl TorqueReference {
    /// Entry `k`, holding the last one past the end.
    pub fn at(&self, k: usize) -> Vector3<f64> {
        self.torques.get(k.min(self.torques.len().saturating_sub(1))).copied().unwrap_or_else(Vector3::zeros)
    }
}

/// Rigid-body inverse dynamics along `omega_seq`:
/// `m[k] = J (w[k+1] - w[k]) / dt + w[k] x J w[k]`, last entry held.
pub fn torque_reference(omega_seq: &[Vector3<f64>], dt: f64, inertia: &Matrix3<f64>) -> TorqueReference {
    let gyro = |w: &Vector3<f64>| skew(w) * (inertia * w);
    let torques = match omega_seq.len() {
        0 => Vec::new(),
        1 => vec![gyro(&omega_seq[0])],
        n => {
            let mut out: Vec<Vector3<f64>> =
                omega_seq.windows(2).map(|w| inertia * (w[1] - w[0]) / dt + gyro(&w[0])).collect();
            out.push(out[n - 2]);
            out
        }
    };
    TorqueReference { torques }
}

/// True when the trailing run of active samples spans at least `window`
/// seconds, measured from the first to the last active sample.
pub fn replan_trigger(active_history: &[bool], dt: f64, window: f64) -> bool {
    let run = active_history.iter().rev().take_while(|a| **a).count();
    run > 0 && (run - 1) as f64 * dt >= window - 1e-9
}

/// Streaming form of [`replan_trigger`] that resets after firing.
#[derive(Clone, Debug)]
pub struct ReplanMonitor {
    dt: f64,
    window: f64,
    run: usize,
}

impl ReplanMonitor {
    pub fn new(dt: f64, window: f64) -> Self {
        Self { dt, window, run: 0 }
    }

    /// Records one sample; returns true (and resets) when a replan is due.
    pub fn push(&mut self, active: bool) -> bool {
        self.run = if active { self.run + 1 } else { 0 };
        if self.run > 0 && (self.run - 1) as f64 * self.dt >= self.window - 1e-9 {
            self.run = 0;
            return true;
        }
        false
    }

    pub fn reset(&mut self) {
        self.run = 0;
    }
}
