//! Coordinate systems, rotations, spherical bases, and the global-to-local
//! angular transform.
//!
//! Two frames are used throughout the crate: a global coordinate system (GCS)
//! in which propagation paths are described, and a local coordinate system
//! (LCS) rigidly attached to each antenna panel. A panel orientation is a
//! vector `[alpha, gamma, beta]` of rotations about the z, y and x axes; the
//! induced rotation is applied in that order, `R = Rz(alpha) Ry(gamma) Rx(beta)`.
//!
//! Elevation `theta` is measured from the +z axis, azimuth `phi` from +x
//! toward +y. Canonical ranges are `theta in [0, pi]` and `phi in (-pi, pi]`,
//! with `phi = 0` at the poles so canonicalization is deterministic.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// A direction in spherical coordinates: elevation from +z, azimuth from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphericalAngle {
    /// Elevation angle in radians, canonical range `[0, pi]`.
    pub theta: f64,
    /// Azimuth angle in radians, canonical range `(-pi, pi]`.
    pub phi: f64,
}

impl SphericalAngle {
    /// Builds an angle pair and canonicalizes it.
    pub fn new(theta: f64, phi: f64) -> Self {
        Self { theta, phi }.canonicalize()
    }

    /// Maps arbitrary real angles into `theta in [0, pi]`, `phi in (-pi, pi]`.
    ///
    /// Goes through the direction vector, which is well defined for any real
    /// input and handles sign flips like `theta < 0` correctly. At the poles
    /// the azimuth is fixed to 0.
    pub fn canonicalize(self) -> Self {
        Self::from_unit_vec(&UnitVec3::from_angle_raw(self.theta, self.phi))
    }

    /// The direction this angle pair points at.
    pub fn unit_vec(&self) -> UnitVec3 {
        UnitVec3::from_angle_raw(self.theta, self.phi)
    }

    /// Recovers canonical angles from a direction.
    pub fn from_unit_vec(v: &UnitVec3) -> Self {
        let z = v.0.z.clamp(-1.0, 1.0);
        let theta = z.acos();
        let phi = if v.0.x == 0.0 && v.0.y == 0.0 {
            0.0
        } else {
            let p = v.0.y.atan2(v.0.x);
            // atan2 returns [-pi, pi]; fold -pi onto +pi for the canonical range.
            if p <= -PI { PI } else { p }
        };
        // A vector numerically at the pole has an ill-conditioned azimuth.
        if theta == 0.0 || theta == PI {
            Self { theta, phi: 0.0 }
        } else {
            Self { theta, phi }
        }
    }

    /// Great-circle distance to another direction, in radians.
    pub fn great_circle_distance(&self, other: &Self) -> f64 {
        // Chord-based formula: well conditioned for nearby directions, where
        // acos of the dot product loses half the significant digits.
        let chord = (self.unit_vec().0 - other.unit_vec().0).norm();
        2.0 * (0.5 * chord).clamp(0.0, 1.0).asin()
    }
}

/// Panel orientation `[alpha, gamma, beta]`: rotations about z, y, x in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Orientation {
    pub alpha: f64,
    pub gamma: f64,
    pub beta: f64,
}

impl Orientation {
    pub fn new(alpha: f64, gamma: f64, beta: f64) -> Self {
        Self { alpha, gamma, beta }
    }

    /// Identity orientation: LCS coincides with GCS.
    pub fn identity() -> Self {
        Self::default()
    }

    /// Pure rotation about the z axis.
    pub fn about_z(alpha: f64) -> Self {
        Self { alpha, gamma: 0.0, beta: 0.0 }
    }
}

/// A unit-norm 3D direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitVec3(pub(crate) Vector3<f64>);

impl UnitVec3 {
    /// Normalizes the input; returns an error for a near-zero vector.
    pub fn try_new(x: f64, y: f64, z: f64) -> crate::Result<Self> {
        let v = Vector3::new(x, y, z);
        let n = v.norm();
        if n < 1e-300 {
            return Err(crate::Error::InvalidParameter(
                "cannot normalize a zero vector".into(),
            ));
        }
        Ok(Self(v / n))
    }

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::try_new(x, y, z).expect("non-zero vector")
    }

    fn from_angle_raw(theta: f64, phi: f64) -> Self {
        Self(Vector3::new(
            theta.sin() * phi.cos(),
            theta.sin() * phi.sin(),
            theta.cos(),
        ))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn cross(&self, other: &Self) -> Vector3<f64> {
        self.0.cross(&other.0)
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Rotation matrix `Rz(alpha) Ry(gamma) Rx(beta)` for a panel orientation.
///
/// The result is orthonormal with determinant +1; it maps LCS coordinates to
/// GCS coordinates.
pub fn rotation_matrix(o: &Orientation) -> Matrix3<f64> {
    let (sa, ca) = o.alpha.sin_cos();
    let (sg, cg) = o.gamma.sin_cos();
    let (sb, cb) = o.beta.sin_cos();
    let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cg, 0.0, sg, 0.0, 1.0, 0.0, -sg, 0.0, cg);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cb, -sb, 0.0, sb, cb);
    rz * ry * rx
}

/// Spherical basis `(r̂, θ̂, φ̂)` at the given direction.
///
/// `r̂ = (sinθ cosφ, sinθ sinφ, cosθ)`; the triple is right-handed and
/// orthonormal, with `θ̂` pointing toward increasing elevation (away from +z)
/// and `φ̂` toward increasing azimuth.
pub fn spherical_basis(a: &SphericalAngle) -> (UnitVec3, UnitVec3, UnitVec3) {
    let (st, ct) = a.theta.sin_cos();
    let (sp, cp) = a.phi.sin_cos();
    let r = UnitVec3(Vector3::new(st * cp, st * sp, ct));
    let th = UnitVec3(Vector3::new(ct * cp, ct * sp, -st));
    let ph = UnitVec3(Vector3::new(-sp, cp, 0.0));
    (r, th, ph)
}

/// Global-to-local angular transform: the local angles `(θ', φ')` at which a
/// panel with orientation `o` sees a global direction `a`.
///
/// Defined by `Rᵀ r̂(θ, φ) = r̂(θ', φ')`. Output is canonical; any real-valued
/// input is accepted, so the transform inherently handles periodicity.
pub fn gcs_to_lcs(a: &SphericalAngle, o: &Orientation) -> SphericalAngle {
    let r = rotation_matrix(o);
    let v = r.transpose() * UnitVec3::from_angle_raw(a.theta, a.phi).0;
    SphericalAngle::from_unit_vec(&UnitVec3(v))
}

/// Inverse of [`gcs_to_lcs`]: maps local angles back to the global frame.
pub fn lcs_to_gcs(a: &SphericalAngle, o: &Orientation) -> SphericalAngle {
    let r = rotation_matrix(o);
    let v = r * UnitVec3::from_angle_raw(a.theta, a.phi).0;
    SphericalAngle::from_unit_vec(&UnitVec3(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn assert_orthonormal(m: &Matrix3<f64>, tol: f64) {
        let d = m.transpose() * m - Matrix3::identity();
        assert!(d.abs().max() <= tol, "R'R - I = {d}");
    }

    #[test]
    fn rotation_matrix_zero_is_identity() {
        let r = rotation_matrix(&Orientation::identity());
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_matrix_quarter_turn_maps_x_to_y() {
        let r = rotation_matrix(&Orientation::about_z(PI / 2.0));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_matrix_is_orthonormal_with_unit_det() {
        let r = rotation_matrix(&Orientation::new(0.3, -0.2, 0.7));
        assert_orthonormal(&r, 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn z_rotations_compose_additively() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let a1: f64 = rng.random_range(-6.0..6.0);
            let a2: f64 = rng.random_range(-6.0..6.0);
            let lhs = rotation_matrix(&Orientation::about_z(a1))
                * rotation_matrix(&Orientation::about_z(a2));
            let rhs = rotation_matrix(&Orientation::about_z(a1 + a2));
            assert!((lhs - rhs).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn spherical_basis_on_x_axis() {
        let (r, th, ph) = spherical_basis(&SphericalAngle::new(PI / 2.0, 0.0));
        assert_relative_eq!(*r.as_vector(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(*th.as_vector(), Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
        assert_relative_eq!(*ph.as_vector(), Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn spherical_basis_at_pole() {
        let (r, _, _) = spherical_basis(&SphericalAngle::new(0.0, 2.4));
        assert_relative_eq!(*r.as_vector(), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn spherical_basis_is_right_handed_orthonormal() {
        let a = SphericalAngle::new(1.0, 2.0);
        let (r, th, ph) = spherical_basis(&a);
        assert!(r.dot(&th).abs() <= 1e-12);
        assert!(r.dot(&ph).abs() <= 1e-12);
        assert!(th.dot(&ph).abs() <= 1e-12);
        // Literal right-handedness: r . (theta x phi) = +1.
        let triple = r.as_vector().dot(&th.cross(&ph));
        assert_relative_eq!(triple, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gcs_to_lcs_identity_orientation_is_identity() {
        let a = SphericalAngle::new(0.7, -2.1);
        let b = gcs_to_lcs(&a, &Orientation::identity());
        assert_relative_eq!(a.theta, b.theta, epsilon = 1e-14);
        assert_relative_eq!(a.phi, b.phi, epsilon = 1e-14);
    }

    #[test]
    fn gcs_to_lcs_pure_azimuth_rotation_subtracts_alpha() {
        let a = SphericalAngle::new(PI / 2.0, 0.0);
        let b = gcs_to_lcs(&a, &Orientation::about_z(PI / 2.0));
        assert_relative_eq!(b.theta, PI / 2.0, epsilon = 1e-14);
        assert_relative_eq!(b.phi, -PI / 2.0, epsilon = 1e-14);
    }

    #[test]
    fn gcs_lcs_round_trip() {
        let mut rng = StdRng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let a = SphericalAngle::new(rng.random_range(0.0..PI), rng.random_range(-PI..PI));
            let o = Orientation::new(
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
                rng.random_range(-PI..PI),
            );
            let back = lcs_to_gcs(&gcs_to_lcs(&a, &o), &o);
            max_err = max_err.max(a.great_circle_distance(&back));
        }
        assert!(max_err < 1e-10, "round-trip error {max_err:e}");
    }

    #[test]
    fn lcs_to_gcs_pole_input_is_canonical() {
        let out = lcs_to_gcs(&SphericalAngle { theta: 0.0, phi: 1.9 }, &Orientation::identity());
        assert_eq!(out.phi, 0.0);
        assert_relative_eq!(out.theta, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn canonicalize_handles_out_of_range_angles() {
        let a = SphericalAngle::new(-0.1, 0.3);
        assert!(a.theta >= 0.0 && a.theta <= PI);
        assert!(a.phi > -PI && a.phi <= PI);
        // (-0.1, 0.3) points the same way as (0.1, 0.3 - pi).
        let b = SphericalAngle::new(0.1, 0.3 - PI);
        assert!(a.great_circle_distance(&b) < 1e-12);
    }

    proptest! {
        // Angular separation between two directions is invariant under any
        // orientation change.
        #[test]
        fn prop_gcs_to_lcs_preserves_separation(
            t1 in 0.0..PI, p1 in -3.1..3.1,
            t2 in 0.0..PI, p2 in -3.1..3.1,
            al in -3.1..3.1, ga in -3.1..3.1, be in -3.1..3.1,
        ) {
            let a1 = SphericalAngle::new(t1, p1);
            let a2 = SphericalAngle::new(t2, p2);
            let o = Orientation::new(al, ga, be);
            let before = a1.great_circle_distance(&a2);
            let after = gcs_to_lcs(&a1, &o).great_circle_distance(&gcs_to_lcs(&a2, &o));
            prop_assert!((before - after).abs() < 1e-10);
        }
    }
}
