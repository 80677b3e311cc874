//! Nonlinear tandem-rotor truth model.
//!
//! Frames follow North-East-Down: gravity acts along `+e3` and the rotors
//! push along `-b3`. Wind enters only through the relative airspeed used by
//! the drag terms.

mod dryden;
mod mixer;

pub use dryden::{dryden_gust_sequence, DrydenGust, DrydenScales, WindConfig};
pub use mixer::{Mixer, RotorForces};

use nalgebra::{Matrix3, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{skew, ExtendedPose, Rotation};

pub const GRAVITY: f64 = 9.81;

/// Physical parameters. Drag matrices follow the naming of the rigid-body
/// model: `drag_translational` (D), `drag_coupling` (E), `drag_rotational` (F).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    pub rotor_front: Vector3<f64>,
    pub rotor_rear: Vector3<f64>,
    pub drag_translational: Matrix3<f64>,
    pub drag_coupling: Matrix3<f64>,
    pub drag_rotational: Matrix3<f64>,
    pub gravity: f64,
}

impl VehicleParams {
    /// Tandem-rotor mass properties and rotor placement, with all drag set to zero.
    pub fn tandem_rotor() -> Self {
        Self {
            mass: 218.0,
            inertia: Matrix3::from_diagonal(&Vector3::new(26.8, 97.6, 87.2)),
            rotor_front: Vector3::new(1.045, 0.0, -0.514),
            rotor_rear: Vector3::new(-0.937, 0.0, -0.686),
            drag_translational: Matrix3::zeros(),
            drag_coupling: Matrix3::zeros(),
            drag_rotational: Matrix3::zeros(),
            gravity: GRAVITY,
        }
    }

    /// [`Self::tandem_rotor`] with the benchmark's drag defaults. These are
    /// configuration choices, not measured coefficients.
    pub fn benchmark() -> Self {
        Self {
            drag_translational: Matrix3::from_diagonal(&Vector3::new(0.6, 0.6, 0.9)),
            drag_rotational: Matrix3::identity(),
            ..Self::tandem_rotor()
        }
    }

    pub fn without_drag(&self) -> Self {
        Self {
            drag_translational: Matrix3::zeros(),
            drag_coupling: Matrix3::zeros(),
            drag_rotational: Matrix3::zeros(),
            ..self.clone()
        }
    }

    pub fn has_rotational_drag(&self) -> bool {
        self.drag_coupling.amax() > 0.0 || self.drag_rotational.amax() > 0.0
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().unwrap_or_else(Matrix3::zeros)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.mass.is_finite()
            && self.gravity.is_finite()
            && self.inertia.iter().all(|x| x.is_finite())
            && self.rotor_front.iter().chain(self.rotor_rear.iter()).all(|x| x.is_finite())
            && self.drag_translational.iter().all(|x| x.is_finite())
            && self.drag_coupling.iter().all(|x| x.is_finite())
            && self.drag_rotational.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("vehicle parameters must be finite".into()));
        }
        if self.mass <= 0.0 {
            return Err(Error::Config(format!("mass must be positive, got {}", self.mass)));
        }
        if (self.inertia - self.inertia.transpose()).amax() > 1e-9 * self.inertia.amax().max(1.0)
            || self.inertia.cholesky().is_none()
        {
            return Err(Error::Config("inertia must be symmetric positive definite".into()));
        }
        let d = &self.drag_translational;
        let off_diag = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).any(|(i, j)| i != j && d[(i, j)] != 0.0);
        if off_diag || (0..3).any(|i| d[(i, i)] < 0.0) {
            return Err(Error::Config("translational drag must be diagonal and nonnegative".into()));
        }
        Ok(())
    }
}

/// Extended pose plus body angular velocity.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct VehicleState {
    pub pose: ExtendedPose,
    pub omega: Vector3<f64>,
}

impl VehicleState {
    pub fn new(c: Rotation, v: Vector3<f64>, r: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { pose: ExtendedPose::new(c, v, r), omega }
    }

    pub fn hover_at(r: Vector3<f64>) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), r, Vector3::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.pose.c.matrix().iter().all(|x| x.is_finite())
            && self.pose.v.iter().all(|x| x.is_finite())
            && self.pose.r.iter().all(|x| x.is_finite())
            && self.omega.iter().all(|x| x.is_finite())
    }
}

/// Total thrust (positive up) and body torque.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub thrust: f64,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(thrust: f64, torque: Vector3<f64>) -> Self {
        Self { thrust, torque }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDerivative {
    pub c_dot: Matrix3<f64>,
    pub r_dot: Vector3<f64>,
    pub v_dot: Vector3<f64>,
    pub omega_dot: Vector3<f64>,
}

pub fn continuous_dynamics(
    x: &VehicleState,
    u: &Wrench,
    wind: &Vector3<f64>,
    p: &VehicleParams,
) -> StateDerivative {
    let c = x.pose.c.matrix();
    let v_air = x.pose.v - wind;
    let e3 = Vector3::z();

    let drag = c * (p.drag_translational * (c.transpose() * v_air));
    let v_dot = e3 * p.gravity - (c * e3) * (u.thrust / p.mass) - drag / p.mass;

    let jw = p.inertia * x.omega;
    let torque = u.torque
        - p.drag_coupling * (c.transpose() * v_air)
        - p.drag_rotational * x.omega
        - x.omega.cross(&jw);
    let omega_dot = p.inertia_inv() * torque;

    StateDerivative { c_dot: c * skew(&x.omega), r_dot: x.pose.v, v_dot, omega_dot }
}

type Flat = SVector<f64, 18>;

fn flatten(x: &VehicleState) -> Flat {
    let mut f = Flat::zeros();
    f.fixed_rows_mut::<9>(0).copy_from_slice(x.pose.c.matrix().as_slice());
    f.fixed_rows_mut::<3>(9).copy_from(&x.pose.v);
    f.fixed_rows_mut::<3>(12).copy_from(&x.pose.r);
    f.fixed_rows_mut::<3>(15).copy_from(&x.omega);
    f
}

fn unflatten(f: &Flat) -> VehicleState {
    VehicleState {
        pose: ExtendedPose {
            c: Rotation::from_matrix_unchecked(Matrix3::from_column_slice(f.fixed_rows::<9>(0).as_slice())),
            v: f.fixed_rows::<3>(9).into_owned(),
            r: f.fixed_rows::<3>(12).into_owned(),
        },
        omega: f.fixed_rows::<3>(15).into_owned(),
    }
}

fn flat_derivative(f: &Flat, u: &Wrench, wind: &Vector3<f64>, p: &VehicleParams) -> Flat {
    let d = continuous_dynamics(&unflatten(f), u, wind, p);
    let mut out = Flat::zeros();
    out.fixed_rows_mut::<9>(0).copy_from_slice(d.c_dot.as_slice());
    out.fixed_rows_mut::<3>(9).copy_from(&d.v_dot);
    out.fixed_rows_mut::<3>(12).copy_from(&d.r_dot);
    out.fixed_rows_mut::<3>(15).copy_from(&d.omega_dot);
    out
}

/// One classical Runge-Kutta step with the input and wind held, followed by
/// a polar projection of the attitude back onto SO(3).
pub fn rk4_step(
    x: &VehicleState,
    u: &Wrench,
    wind: &Vector3<f64>,
    p: &VehicleParams,
    dt: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("integration step must be positive, got {dt}")));
    }
    let y = flatten(x);
    let k1 = flat_derivative(&y, u, wind, p);
    let k2 = flat_derivative(&(y + k1 * (0.5 * dt)), u, wind, p);
    let k3 = flat_derivative(&(y + k2 * (0.5 * dt)), u, wind, p);
    let k4 = flat_derivative(&(y + k3 * dt), u, wind, p);
    let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if !next.iter().all(|v| v.is_finite()) {
        return Err(Error::IntegrationFault { t: f64::NAN });
    }
    let mut state = unflatten(&next);
    state.pose.c = Rotation::project(state.pose.c.matrix());
    Ok(state)
}

/// Body angular momentum `J * omega`.
pub fn angular_momentum(x: &VehicleState, p: &VehicleParams) -> Vector3<f64> {
    p.inertia * x.omega
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Rotation;

    fn tumbling_state() -> VehicleState {
        VehicleState::new(
            Rotation::exp(&Vector3::new(0.3, -0.2, 0.5)),
            Vector3::new(1.0, -0.5, 0.2),
            Vector3::new(3.0, 1.0, -2.0),
            Vector3::new(0.4, -0.7, 0.9),
        )
    }

    fn kinetic_energy(x: &VehicleState, p: &VehicleParams) -> f64 {
        0.5 * x.omega.dot(&(p.inertia * x.omega))
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let p = VehicleParams::benchmark();
        let x = VehicleState::hover_at(Vector3::new(1.0, 2.0, -3.0));
        let d = continuous_dynamics(&x, &Wrench::new(218.0 * 9.81, Vector3::zeros()), &Vector3::zeros(), &p);
        assert!(d.v_dot.amax() < 1e-12);
        assert!(d.omega_dot.amax() < 1e-12);
        assert!(d.c_dot.amax() < 1e-12);
        assert_eq!(d.r_dot, Vector3::zeros());

        let next = rk4_step(&x, &Wrench::new(218.0 * 9.81, Vector3::zeros()), &Vector3::zeros(), &p, 0.002).unwrap();
        assert!((next.pose.r - x.pose.r).amax() < 1e-12);
        assert!(next.pose.v.amax() < 1e-12);
    }

    #[test]
    fn free_fall_accelerates_at_g() {
        let p = VehicleParams::tandem_rotor();
        let x = tumbling_state();
        let d = continuous_dynamics(&x, &Wrench::default(), &Vector3::zeros(), &p);
        assert!((d.v_dot - Vector3::new(0.0, 0.0, 9.81)).amax() < 1e-14);
    }

    #[test]
    fn rotational_dynamics_match_euler_equation() {
        let p = VehicleParams::tandem_rotor();
        let x = tumbling_state();
        let m = Vector3::new(12.0, -40.0, 7.5);
        let d = continuous_dynamics(&x, &Wrench::new(100.0, m), &Vector3::zeros(), &p);
        let j = [26.8, 97.6, 87.2];
        let w = x.omega;
        // component form of J w_dot = m - w x (J w) for a diagonal inertia
        let expected = Vector3::new(
            (m.x - (j[2] - j[1]) * w.y * w.z) / j[0],
            (m.y - (j[0] - j[2]) * w.z * w.x) / j[1],
            (m.z - (j[1] - j[0]) * w.x * w.y) / j[2],
        );
        assert!((d.omega_dot - expected).amax() < 1e-13);
    }

    #[test]
    fn wind_only_enters_through_drag() {
        let p = VehicleParams::tandem_rotor();
        let x = tumbling_state();
        let u = Wrench::new(2000.0, Vector3::new(1.0, 2.0, 3.0));
        let a = continuous_dynamics(&x, &u, &Vector3::zeros(), &p);
        let b = continuous_dynamics(&x, &u, &Vector3::new(5.0, -3.0, 1.0), &p);
        assert_eq!(a, b);

        let p = VehicleParams::benchmark();
        let still = VehicleState::hover_at(Vector3::zeros());
        let d = continuous_dynamics(&still, &Wrench::new(218.0 * 9.81, Vector3::zeros()), &Vector3::new(0.0, -5.0, 0.0), &p);
        // the helicopter is pushed along with the wind
        assert!((d.v_dot.y - (-0.6 * -5.0 / -218.0)).abs() < 1e-12 && d.v_dot.y < 0.0);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = VehicleParams::benchmark();
        let x0 = tumbling_state();
        let u = Wrench::new(2500.0, Vector3::new(30.0, -20.0, 10.0));
        let wind = Vector3::new(1.0, 2.0, 0.0);
        let integrate = |dt: f64, n: usize| {
            let mut x = x0;
            for _ in 0..n {
                x = rk4_step(&x, &u, &wind, &p, dt).unwrap();
            }
            x
        };
        let t = 0.4;
        let reference = integrate(t / 64.0, 64);
        let err = |n: usize| {
            let x = integrate(t / n as f64, n);
            (x.pose.r - reference.pose.r).norm() + (x.omega - reference.omega).norm()
        };
        let (e4, e8) = (err(4), err(8));
        let ratio = e4 / e8;
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn torque_free_motion_conserves_energy_and_momentum() {
        let p = VehicleParams { gravity: 0.0, ..VehicleParams::tandem_rotor() };
        let mut x = tumbling_state();
        let e0 = kinetic_energy(&x, &p);
        let h0 = (x.pose.c.matrix() * (p.inertia * x.omega)).norm();
        for _ in 0..1000 {
            x = rk4_step(&x, &Wrench::default(), &Vector3::zeros(), &p, 1e-3).unwrap();
        }
        assert!((kinetic_energy(&x, &p) - e0).abs() < 1e-8);
        assert!(((x.pose.c.matrix() * (p.inertia * x.omega)).norm() - h0).abs() < 1e-8);
    }

    #[test]
    fn attitude_stays_orthonormal() {
        let p = VehicleParams::benchmark();
        let mut x = tumbling_state();
        let u = Wrench::new(2100.0, Vector3::new(5.0, -3.0, 2.0));
        for _ in 0..30_000 {
            x = rk4_step(&x, &u, &Vector3::zeros(), &p, 0.002).unwrap();
            assert!(x.pose.c.orthonormality_error() < 1e-9);
        }
    }

    #[test]
    fn non_finite_input_is_an_integration_fault() {
        let p = VehicleParams::tandem_rotor();
        let err = rk4_step(&tumbling_state(), &Wrench::new(f64::NAN, Vector3::zeros()), &Vector3::zeros(), &p, 0.01);
        assert!(matches!(err, Err(Error::IntegrationFault { .. })));
        assert!(rk4_step(&tumbling_state(), &Wrench::default(), &Vector3::zeros(), &p, 0.0).is_err());
    }

    #[test]
    fn angular_momentum_uses_inertia() {
        let p = VehicleParams::tandem_rotor();
        let mut x = VehicleState::default();
        assert_eq!(angular_momentum(&x, &p), Vector3::zeros());
        x.omega = Vector3::x();
        assert_eq!(angular_momentum(&x, &p), Vector3::new(26.8, 0.0, 0.0));
    }

    #[test]
    fn validation_rejects_bad_params() {
        assert!(VehicleParams::benchmark().validate().is_ok());
        let mut p = VehicleParams::tandem_rotor();
        p.mass = -1.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::tandem_rotor();
        p.inertia[(0, 1)] = 5.0;
        assert!(p.validate().is_err());
        let mut p = VehicleParams::tandem_rotor();
        p.drag_translational[(0, 0)] = -0.1;
        assert!(p.validate().is_err());
    }
}
