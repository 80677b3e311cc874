//! SO(3) and SE2(3) matrix Lie groups.
//!
//! Extended poses bundle attitude, velocity and position into the 5x5 matrix
//!
//! ```text
//!     | C  v  r |
//!     | 0  1  0 |
//!     | 0  0  1 |
//! ```
//!
//! Tangent vectors are ordered `(phi, v, r)` everywhere in the crate.

use nalgebra::{Matrix3, Matrix5, SVector, Vector3};

pub type Vector9 = SVector<f64, 9>;

/// Below this rotation angle the closed-form trig expressions are replaced by series.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Distance from pi inside which the SO(3) logarithm switches to the symmetric-part axis.
pub const NEAR_PI: f64 = 1e-3;

/// The cross operator: `skew(u) * w == u.cross(&w)`.
#[inline]
pub fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Inverse of [`skew`] for the antisymmetric part of `m`.
#[inline]
pub fn vee3(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// A direction cosine matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Matrix3<f64>);

/// Result of the SO(3) logarithm with its conditioning flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationLog {
    pub phi: Vector3<f64>,
    /// Set when the angle is within [`NEAR_PI`] of pi, where the axis sign is ambiguous.
    pub ill_conditioned: bool,
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Wraps `m` if it is orthonormal with unit determinant to within `tol`.
    pub fn try_from_matrix(m: Matrix3<f64>, tol: f64) -> Option<Self> {
        let r = Self(m);
        (r.orthonormality_error() <= tol && (m.determinant() - 1.0).abs() <= tol).then_some(r)
    }

    /// Nearest rotation in the Frobenius sense (polar projection).
    pub fn project(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut c = u * v_t;
        if c.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            c = u * v_t;
        }
        Self(c)
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    #[inline]
    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `max |C^T C - I|` over entries.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).amax()
    }

    /// Rodrigues' formula.
    pub fn exp(phi: &Vector3<f64>) -> Self {
        let angle = phi.norm();
        let k = skew(phi);
        if angle < SMALL_ANGLE {
            return Self(Matrix3::identity() + k + 0.5 * k * k);
        }
        let (s, c) = angle.sin_cos();
        let a = phi / angle;
        Self(c * Matrix3::identity() + (1.0 - c) * a * a.transpose() + s * skew(&a))
    }

    pub fn log(&self) -> Vector3<f64> {
        self.log_checked().phi
    }

    pub fn log_checked(&self) -> RotationLog {
        let c = &self.0;
        let w = vee3(c);
        let sin_angle = w.norm();
        let cos_angle = 0.5 * (c.trace() - 1.0);
        let angle = sin_angle.atan2(cos_angle);

        if angle < SMALL_ANGLE {
            // angle / sin(angle) = 1 + angle^2 / 6 + ...
            return RotationLog { phi: w * (1.0 + angle * angle / 6.0), ill_conditioned: false };
        }
        if std::f64::consts::PI - angle > NEAR_PI {
            return RotationLog { phi: w * (angle / sin_angle), ill_conditioned: false };
        }

        // (C + C^T)/2 - cos(angle) I = (1 - cos(angle)) a a^T
        let b = 0.5 * (c + c.transpose()) - cos_angle * Matrix3::identity();
        let col = (0..3)
            .max_by(|&i, &j| b.column(i).norm().total_cmp(&b.column(j).norm()))
            .unwrap_or(0);
        let mut axis: Vector3<f64> = b.column(col).into_owned();
        let n = axis.norm();
        if n > 0.0 {
            axis /= n;
        } else {
            axis = Vector3::x();
        }
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        RotationLog { phi: axis * angle, ill_conditioned: true }
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.log().norm()
    }

    /// Angle between the body z axis and the inertial z axis.
    pub fn tilt(&self) -> f64 {
        self.0[(2, 2)].clamp(-1.0, 1.0).acos()
    }

    /// Heading of the body x axis projected on the horizontal plane.
    pub fn heading(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

impl std::ops::Mul<&Vector3<f64>> for &Rotation {
    type Output = Vector3<f64>;
    fn mul(self, rhs: &Vector3<f64>) -> Vector3<f64> {
        self.0 * rhs
    }
}

/// SO(3) left Jacobian.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    if angle < SMALL_ANGLE {
        let k = skew(phi);
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let a = phi / angle;
    let s = angle.sin() / angle;
    let half = 0.5 * angle;
    // (1 - cos)/angle without the cancellation
    let c = 2.0 * half.sin().powi(2) / angle;
    s * Matrix3::identity() + (1.0 - s) * a * a.transpose() + c * skew(&a)
}

/// Inverse of [`left_jacobian`].
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let angle = phi.norm();
    if angle < SMALL_ANGLE {
        let k = skew(phi);
        return Matrix3::identity() - 0.5 * k + k * k / 12.0;
    }
    let a = phi / angle;
    let half = 0.5 * angle;
    let hc = half / half.tan();
    hc * Matrix3::identity() + (1.0 - hc) * a * a.transpose() - half * skew(&a)
}

/// Element of the Lie algebra of SE2(3), stored as its 9-vector.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Se23Tangent {
    pub phi: Vector3<f64>,
    pub v: Vector3<f64>,
    pub r: Vector3<f64>,
}

impl Se23Tangent {
    pub fn new(phi: Vector3<f64>, v: Vector3<f64>, r: Vector3<f64>) -> Self {
        Self { phi, v, r }
    }

    pub fn from_vector(xi: &Vector9) -> Self {
        Self {
            phi: xi.fixed_rows::<3>(0).into_owned(),
            v: xi.fixed_rows::<3>(3).into_owned(),
            r: xi.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector9 {
        let mut xi = Vector9::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&self.phi);
        xi.fixed_rows_mut::<3>(3).copy_from(&self.v);
        xi.fixed_rows_mut::<3>(6).copy_from(&self.r);
        xi
    }

    pub fn wedge(&self) -> Matrix5<f64> {
        let mut m = Matrix5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.phi));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.r);
        m
    }

    /// Reads the tangent back out of a 5x5 algebra element.
    pub fn vee(m: &Matrix5<f64>) -> Self {
        let k: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        Self {
            phi: Vector3::new(k[(2, 1)], k[(0, 2)], k[(1, 0)]),
            v: m.fixed_view::<3, 1>(0, 3).into_owned(),
            r: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }
}

/// Element of SE2(3): attitude, velocity and position.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ExtendedPose {
    pub c: Rotation,
    pub v: Vector3<f64>,
    pub r: Vector3<f64>,
}

impl ExtendedPose {
    pub fn new(c: Rotation, v: Vector3<f64>, r: Vector3<f64>) -> Self {
        Self { c, v, r }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn compose(&self, other: &ExtendedPose) -> ExtendedPose {
        ExtendedPose {
            c: self.c * other.c,
            v: self.c.matrix() * other.v + self.v,
            r: self.c.matrix() * other.r + self.r,
        }
    }

    pub fn inverse(&self) -> ExtendedPose {
        let ct = self.c.transpose();
        ExtendedPose { c: ct, v: -(ct.matrix() * self.v), r: -(ct.matrix() * self.r) }
    }

    pub fn to_matrix(&self) -> Matrix5<f64> {
        let mut m = Matrix5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.c.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.v);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.r);
        m
    }

    /// Reads the blocks of a 5x5 embedding; the lower rows are not checked.
    pub fn from_matrix(m: &Matrix5<f64>) -> Self {
        Self {
            c: Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            v: m.fixed_view::<3, 1>(0, 3).into_owned(),
            r: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }

    pub fn exp(xi: &Se23Tangent) -> Self {
        let jl = left_jacobian(&xi.phi);
        Self { c: Rotation::exp(&xi.phi), v: jl * xi.v, r: jl * xi.r }
    }

    pub fn log(&self) -> Se23Tangent {
        self.log_checked().0
    }

    /// Logarithm plus the ill-conditioning flag of the attitude part.
    pub fn log_checked(&self) -> (Se23Tangent, bool) {
        let l = self.c.log_checked();
        let jinv = left_jacobian_inv(&l.phi);
        (Se23Tangent { phi: l.phi, v: jinv * self.v, r: jinv * self.r }, l.ill_conditioned)
    }
}

/// Left-invariant tracking error `X_ref^{-1} X`.
pub fn left_invariant_error(reference: &ExtendedPose, actual: &ExtendedPose) -> ExtendedPose {
    let crt = reference.c.transpose();
    ExtendedPose {
        c: crt * actual.c,
        v: crt.matrix() * (actual.v - reference.v),
        r: crt.matrix() * (actual.r - reference.r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn v3() -> impl Strategy<Value = Vector3<f64>> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(a, b, c)| Vector3::new(a, b, c))
    }

    #[test]
    fn skew_basis() {
        let k = skew(&Vector3::x());
        assert_eq!(k, Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
        assert_eq!(skew(&Vector3::zeros()), Matrix3::zeros());
    }

    #[test]
    fn quarter_turn_maps_e2_to_e3() {
        let c = Rotation::exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0));
        assert!((c * Vector3::y() - Vector3::z()).amax() < 1e-15);
        assert_eq!(Rotation::exp(&Vector3::zeros()).matrix(), &Matrix3::identity());
    }

    #[test]
    fn log_near_pi_is_flagged() {
        let phi = Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-5);
        let l = Rotation::exp(&phi).log_checked();
        assert!(l.ill_conditioned);
        assert!((l.phi - phi).amax() < 1e-6);
        assert!(!Rotation::exp(&Vector3::new(0.3, 0.1, 0.0)).log_checked().ill_conditioned);
    }

    #[test]
    fn jacobians_at_zero_are_identity() {
        assert_eq!(left_jacobian(&Vector3::zeros()), Matrix3::identity());
        assert_eq!(left_jacobian_inv(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn series_branch_is_continuous() {
        let a = Vector3::new(0.6, -0.3, 0.74).normalize();
        let below = a * (SMALL_ANGLE * (1.0 - 1e-9));
        let above = a * (SMALL_ANGLE * (1.0 + 1e-9));
        assert!((left_jacobian(&below) - left_jacobian(&above)).amax() < 1e-12);
        assert!((left_jacobian_inv(&below) - left_jacobian_inv(&above)).amax() < 1e-12);
        assert!((Rotation::exp(&below).matrix() - Rotation::exp(&above).matrix()).amax() < 1e-12);
    }

    #[test]
    fn se23_exp_with_zero_rotation() {
        let xi = Se23Tangent::from_vector(&Vector9::from_column_slice(&[
            0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0,
        ]));
        let x = ExtendedPose::exp(&xi);
        assert_eq!(x.c.matrix(), &Matrix3::identity());
        assert_eq!(x.v, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(x.r, Vector3::new(4.0, 5.0, 6.0));
        assert_eq!(ExtendedPose::exp(&Se23Tangent::default()), ExtendedPose::identity());
    }

    #[test]
    fn error_of_identical_poses_is_identity() {
        let x = ExtendedPose::exp(&Se23Tangent::new(
            Vector3::new(0.2, -0.1, 0.4),
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(-4.0, 0.5, 2.0),
        ));
        let e = left_invariant_error(&x, &x);
        assert!((e.to_matrix() - Matrix5::identity()).amax() < 1e-15);
        let e = left_invariant_error(&ExtendedPose::identity(), &x);
        assert!((e.to_matrix() - x.to_matrix()).amax() < 1e-15);
    }

    #[test]
    fn first_order_error_decays_quadratically() {
        let dir = Vector3::new(0.3, -0.7, 0.2).normalize();
        let dv = Vector3::new(1.0, -2.0, 0.5).normalize();
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..5 {
            let eps = 1e-2 / 2f64.powi(k);
            let phi = dir * eps;
            let e_rot = (Rotation::exp(&phi).matrix() - (Matrix3::identity() + skew(&phi))).amax();
            let e_vel = (left_jacobian(&phi) * (dv * eps) - dv * eps).amax();
            if let Some((pr, pv)) = prev {
                assert!((pr / e_rot - 4.0).abs() < 0.2, "rotation ratio {}", pr / e_rot);
                assert!((pv / e_vel - 4.0).abs() < 0.2, "velocity ratio {}", pv / e_vel);
            }
            prev = Some((e_rot, e_vel));
        }
    }

    proptest! {
        #[test]
        fn skew_anticommutes(u in v3(), w in v3()) {
            prop_assert!((skew(&u) * w + skew(&w) * u).amax() < 1e-14);
            prop_assert!((skew(&u) * w - u.cross(&w)).amax() < 1e-14);
            prop_assert_eq!(vee3(&skew(&u)), u);
        }

        #[test]
        fn wedge_vee_roundtrip(p in v3(), v in v3(), r in v3()) {
            let xi = Se23Tangent::new(p, v, r);
            prop_assert_eq!(Se23Tangent::vee(&xi.wedge()), xi);
            let w = xi.wedge();
            prop_assert!(w.fixed_view::<2, 5>(3, 0).iter().all(|&x| x == 0.0));
        }

        #[test]
        fn jacobian_matches_series(p in v3()) {
            let k = skew(&p);
            let mut term = Matrix3::identity();
            let mut sum = Matrix3::identity();
            let mut fact = 1.0;
            for n in 1..40 {
                term *= k;
                fact *= (n + 1) as f64;
                sum += term / fact;
            }
            prop_assert!((left_jacobian(&p) - sum).amax() < 1e-10);
            prop_assert!((left_jacobian(&p) * left_jacobian_inv(&p) - Matrix3::identity()).amax() < 1e-10);
        }

        #[test]
        fn group_axioms(a in v3(), b in v3(), c in v3(), d in v3(), e in v3(), f in v3()) {
            let x = ExtendedPose::exp(&Se23Tangent::new(a * 0.5, b, c));
            let y = ExtendedPose::exp(&Se23Tangent::new(d * 0.5, e, f));
            let z = ExtendedPose::exp(&Se23Tangent::new(c * 0.5, a, e));
            let lhs = x.compose(&y).compose(&z).to_matrix();
            let rhs = x.compose(&y.compose(&z)).to_matrix();
            prop_assert!((lhs - rhs).amax() < 1e-12);
            prop_assert!((x.compose(&x.inverse()).to_matrix() - Matrix5::identity()).amax() < 1e-12);
            prop_assert!((x.to_matrix() * y.to_matrix() - x.compose(&y).to_matrix()).amax() < 1e-12);
        }
    }
}
