use nalgebra::{Matrix4, SMatrix, SVector, Vector3, Vector4};

use super::{VehicleParams, Wrench};
use crate::error::{Error, Result};
use crate::lie::skew;

/// Force vectors applied at the front and rear rotor hubs, in the body frame.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct RotorForces {
    pub front: Vector3<f64>,
    pub rear: Vector3<f64>,
}

/// Minimum-norm actuator mixer.
///
/// Each rotor produces a full force vector at its hub. The wrench map is
/// `f = -e3 . (f1 + f2)` and `m = r1 x f1 + r2 x f2`, four equations in six
/// unknowns, inverted with the right pseudo-inverse. Allocation followed by
/// [`Mixer::wrench`] is exact for every wrench.
#[derive(Clone, Debug)]
pub struct Mixer {
    map: SMatrix<f64, 4, 6>,
    alloc: SMatrix<f64, 6, 4>,
}

impl Mixer {
    pub fn new(p: &VehicleParams) -> Result<Self> {
        let mut map = SMatrix::<f64, 4, 6>::zeros();
        map[(0, 2)] = -1.0;
        map[(0, 5)] = -1.0;
        map.fixed_view_mut::<3, 3>(1, 0).copy_from(&skew(&p.rotor_front));
        map.fixed_view_mut::<3, 3>(1, 3).copy_from(&skew(&p.rotor_rear));

        let gram: Matrix4<f64> = map * map.transpose();
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Config("rotor geometry gives a singular allocation map".into()))?;
        if chol.l().diagonal().min() < 1e-9 {
            return Err(Error::Config("rotor geometry gives a singular allocation map".into()));
        }
        let alloc = map.transpose() * chol.inverse();
        Ok(Self { map, alloc })
    }

    pub fn allocate(&self, w: &Wrench) -> RotorForces {
        let x: SVector<f64, 6> = self.alloc * Vector4::new(w.thrust, w.torque.x, w.torque.y, w.torque.z);
        RotorForces { front: x.fixed_rows::<3>(0).into_owned(), rear: x.fixed_rows::<3>(3).into_owned() }
    }

    pub fn wrench(&self, rf: &RotorForces) -> Wrench {
        let mut x = SVector::<f64, 6>::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&rf.front);
        x.fixed_rows_mut::<3>(3).copy_from(&rf.rear);
        let y = self.map * x;
        Wrench { thrust: y[0], torque: Vector3::new(y[1], y[2], y[3]) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mixer() -> Mixer {
        Mixer::new(&VehicleParams::tandem_rotor()).unwrap()
    }

    #[test]
    fn hover_split_roundtrips() {
        let m = mixer();
        let w = Wrench::new(218.0 * 9.81, Vector3::zeros());
        let rf = m.allocate(&w);
        let back = m.wrench(&rf);
        assert!((back.thrust - w.thrust).abs() < 1e-10);
        assert!(back.torque.amax() < 1e-10);
        // both rotors lift
        assert!(rf.front.z < 0.0 && rf.rear.z < 0.0);
    }

    #[test]
    fn zero_wrench_gives_zero_forces() {
        let rf = mixer().allocate(&Wrench::default());
        assert_eq!(rf, RotorForces::default());
    }

    #[test]
    fn pitch_torque_uses_opposing_vertical_forces() {
        let m = mixer();
        let w = Wrench::new(0.0, Vector3::new(0.0, 100.0, 0.0));
        let rf = m.allocate(&w);
        assert!((rf.front.z + rf.rear.z).abs() < 1e-10);
        // nose-up pitch torque: front rotor pushes up (-z), rear pushes down
        assert!(rf.front.z < 0.0 && rf.rear.z > 0.0);
        let back = m.wrench(&rf);
        assert!((back.torque - w.torque).amax() < 1e-10 && back.thrust.abs() < 1e-10);
    }

    #[test]
    fn degenerate_geometry_is_rejected() {
        let p = VehicleParams { rotor_front: Vector3::zeros(), rotor_rear: Vector3::zeros(), ..VehicleParams::tandem_rotor() };
        assert!(Mixer::new(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn roundtrip_within_input_bounds(f in 0.0..3000.0f64, mx in -200.0..200.0f64, my in -200.0..200.0f64, mz in -200.0..200.0f64) {
            let m = mixer();
            let w = Wrench::new(f, Vector3::new(mx, my, mz));
            let back = m.wrench(&m.allocate(&w));
            prop_assert!((back.thrust - w.thrust).abs() < 1e-10);
            prop_assert!((back.torque - w.torque).amax() < 1e-10);
        }
    }
}
