//! Points, frame-tagged rigid transforms and the cup-angle parametrization.
//!
//! A [`RigidTransform`] maps column vectors from its `from` frame into its
//! `to` frame: `q = R * p + t`. Frame tags are ordinary runtime data, not
//! types, so a transform chain read from a config file is checked the same
//! way as one built in code: [`RigidTransform::compose`] refuses mismatched
//! frames instead of producing a silently wrong transform.
//!
//! Tool orientation is described by an abduction/anteversion [`AnglePair`]
//! (degrees). The corresponding unit axis is
//! `(sin α·cos β, sin β, cos α·cos β)` with abduction `α` and anteversion
//! `β`, so `(0°, 0°)` is the +z axis and abduction tilts it toward +x.
//! The inverse mapping is undefined at `(0, ±1, 0)` where abduction loses
//! meaning; that case is reported as an error rather than patched over.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// How far `R·Rᵀ` may deviate from identity before a matrix is rejected as
/// a rotation. Construction-time checks use this; composed transforms stay
/// well inside it for thousands of chained multiplications.
pub const ROTATION_TOL: f64 = 1e-9;

/// Errors from transform construction and angle conversions.
#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// Tried to chain `outer ∘ inner` where `inner` does not land in the
    /// frame `outer` starts from.
    #[error("frame mismatch: cannot apply {outer_from}->{outer_to} after {inner_from}->{inner_to}")]
    FrameMismatch {
        outer_from: FrameTag,
        outer_to: FrameTag,
        inner_from: FrameTag,
        inner_to: FrameTag,
    },
    /// Expected a specific frame pairing on an input transform.
    #[error("expected a {expected_from}->{expected_to} transform, got {got_from}->{got_to}")]
    WrongFrames {
        expected_from: FrameTag,
        expected_to: FrameTag,
        got_from: FrameTag,
        got_to: FrameTag,
    },
    /// The supplied matrix is not orthonormal with determinant +1.
    #[error("matrix is not a rotation (orthonormality/determinant off by more than {ROTATION_TOL:e})")]
    NotARotation,
    /// A coordinate was NaN or infinite.
    #[error("non-finite coordinate")]
    NonFinite,
    /// A vector too short to normalize safely.
    #[error("vector norm {norm:e} too small to normalize")]
    DegenerateVector { norm: f64 },
    /// The axis points along ±y, where abduction is undefined.
    #[error("axis is parallel to +/-y; abduction/anteversion are undefined there")]
    DegenerateAxis,
    /// Angles outside the measurable domain.
    #[error("angles out of domain: abduction {abduction_deg} must lie in [0,90], anteversion {anteversion_deg} in (-90,90)")]
    AngleOutOfDomain {
        abduction_deg: f64,
        anteversion_deg: f64,
    },
}

/// A position in some Cartesian frame, millimetres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn vec(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vec(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// Euclidean distance to `other`, mm.
    pub fn dist(&self, other: &Point3) -> f64 {
        (self.vec() - other.vec()).norm()
    }
}

impl std::ops::Index<usize> for Point3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Point3 index {i} out of range"),
        }
    }
}

/// A direction with unit norm (enforced on construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3 {
    v: Vector3<f64>,
}

impl UnitVec3 {
    /// Normalizes `v`; errors when the norm is below `1e-12` or non-finite.
    pub fn normalize(v: Vector3<f64>) -> Result<Self, GeometryError> {
        if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let norm = v.norm();
        if norm < 1e-12 {
            return Err(GeometryError::DegenerateVector { norm });
        }
        Ok(Self { v: v / norm })
    }

    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::normalize(Vector3::new(x, y, z))
    }

    pub fn x(&self) -> f64 {
        self.v.x
    }

    pub fn y(&self) -> f64 {
        self.v.y
    }

    pub fn z(&self) -> f64 {
        self.v.z
    }

    pub fn vec(&self) -> Vector3<f64> {
        self.v
    }
}

/// The coordinate frames that appear in the surgical setup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FrameTag {
    /// Robot arm base.
    Base,
    /// Optical tracker (camera).
    Cam,
    /// CT image volume.
    Pic,
    /// Patient body reference.
    Patient,
    /// Robot end-effector / grinding tool.
    Tool,
}

impl std::fmt::Display for FrameTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FrameTag::Base => "base",
            FrameTag::Cam => "cam",
            FrameTag::Pic => "pic",
            FrameTag::Patient => "patient",
            FrameTag::Tool => "tool",
        };
        f.write_str(name)
    }
}

/// A rigid motion `q = R·p + t` from one tagged frame into another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    from: FrameTag,
    to: FrameTag,
}

impl RigidTransform {
    /// Builds a transform after checking that `rotation` is orthonormal with
    /// determinant +1 (within [`ROTATION_TOL`]) and that all entries are
    /// finite.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameTag,
        to: FrameTag,
    ) -> Result<Self, GeometryError> {
        if !rotation.iter().all(|e| e.is_finite())
            || !translation.iter().all(|e| e.is_finite())
        {
            return Err(GeometryError::NonFinite);
        }
        let gram = rotation * rotation.transpose();
        let dev = (gram - Matrix3::identity()).abs().max();
        if dev > ROTATION_TOL || (rotation.determinant() - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotARotation);
        }
        Ok(Self {
            rotation,
            translation,
            from,
            to,
        })
    }

    /// Identity motion between two frames (which may be the same frame).
    pub fn identity(from: FrameTag, to: FrameTag) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    /// Pure translation.
    pub fn translation_only(t: Vector3<f64>, from: FrameTag, to: FrameTag) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
            from,
            to,
        }
    }

    /// Rotation about an arbitrary axis by `angle_deg`, plus translation,
    /// via the Rodrigues formula.
    pub fn from_axis_angle_deg(
        axis: &UnitVec3,
        angle_deg: f64,
        translation: Vector3<f64>,
        from: FrameTag,
        to: FrameTag,
    ) -> Result<Self, GeometryError> {
        let r = rotation_about(axis.vec(), angle_deg.to_radians());
        Self::new(r, translation, from, to)
    }

    /// Rotation about the x axis by `deg`.
    pub fn rot_x_deg(deg: f64, from: FrameTag, to: FrameTag) -> Self {
        Self {
            rotation: rot_x(deg.to_radians()),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    /// Rotation about the y axis by `deg`.
    pub fn rot_y_deg(deg: f64, from: FrameTag, to: FrameTag) -> Self {
        Self {
            rotation: rot_y(deg.to_radians()),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    /// Rotation about the z axis by `deg`.
    pub fn rot_z_deg(deg: f64, from: FrameTag, to: FrameTag) -> Self {
        Self {
            rotation: rot_z(deg.to_radians()),
            translation: Vector3::zeros(),
            from,
            to,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn from_frame(&self) -> FrameTag {
        self.from
    }

    pub fn to_frame(&self) -> FrameTag {
        self.to
    }

    /// Replaces both frame tags. The motion itself is untouched; use this
    /// when a numerically identical motion is reinterpreted between other
    /// frames (e.g. a measured relative pose).
    pub fn retagged(&self, from: FrameTag, to: FrameTag) -> Self {
        Self { from, to, ..*self }
    }

    /// `self ∘ inner`: applies `inner` first. Requires
    /// `inner.to == self.from`; the result maps `inner.from` to `self.to`.
    pub fn compose(&self, inner: &RigidTransform) -> Result<Self, GeometryError> {
        if inner.to != self.from {
            return Err(GeometryError::FrameMismatch {
                outer_from: self.from,
                outer_to: self.to,
                inner_from: inner.from,
                inner_to: inner.to,
            });
        }
        Ok(Self {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            from: inner.from,
            to: self.to,
        })
    }

    /// The inverse motion, with frame tags swapped.
    pub fn invert(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to,
            to: self.from,
        }
    }

    /// Maps a point expressed in `self.from` coordinates into `self.to`
    /// coordinates. Points carry no frame tag of their own, so expressing
    /// `p` in the right frame is the caller's contract.
    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_vec(self.rotation * p.vec() + self.translation)
    }

    /// Rotates a direction (no translation part).
    pub fn apply_dir(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Largest deviation of `R·Rᵀ` from identity — used by drift tests.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation * self.rotation.transpose() - Matrix3::identity())
            .abs()
            .max()
    }
}

pub(crate) fn rot_x(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub(crate) fn rot_y(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub(crate) fn rot_z(rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rodrigues rotation about a unit `axis` by `rad`.
pub(crate) fn rotation_about(axis: Vector3<f64>, rad: f64) -> Matrix3<f64> {
    let (s, c) = rad.sin_cos();
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, //
        axis.z, 0.0, -axis.x, //
        -axis.y, axis.x, 0.0,
    );
    Matrix3::identity() + k * s + k * k * (1.0 - c)
}

/// Cup orientation: abduction tilts the tool axis from +z toward +x,
/// anteversion lifts it toward +y. Degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub abduction_deg: f64,
    pub anteversion_deg: f64,
}

impl AnglePair {
    /// Validated constructor: abduction in `[0, 90]`, anteversion in
    /// `(-90, 90)`.
    pub fn new(abduction_deg: f64, anteversion_deg: f64) -> Result<Self, GeometryError> {
        let pair = Self {
            abduction_deg,
            anteversion_deg,
        };
        if !pair.in_domain() {
            return Err(GeometryError::AngleOutOfDomain {
                abduction_deg,
                anteversion_deg,
            });
        }
        Ok(pair)
    }

    pub fn in_domain(&self) -> bool {
        self.abduction_deg.is_finite()
            && self.anteversion_deg.is_finite()
            && (0.0..=90.0).contains(&self.abduction_deg)
            && self.anteversion_deg > -90.0
            && self.anteversion_deg < 90.0
    }
}

/// Unit tool axis for an abduction/anteversion pair:
/// `(sin α·cos β, sin β, cos α·cos β)`.
pub fn axis_from_angles(angles: &AnglePair) -> Result<UnitVec3, GeometryError> {
    if !angles.in_domain() {
        return Err(GeometryError::AngleOutOfDomain {
            abduction_deg: angles.abduction_deg,
            anteversion_deg: angles.anteversion_deg,
        });
    }
    let a = angles.abduction_deg.to_radians();
    let b = angles.anteversion_deg.to_radians();
    UnitVec3::new(a.sin() * b.cos(), b.sin(), a.cos() * b.cos())
}

/// Recovers abduction/anteversion from a unit axis:
/// `anteversion = asin(v_y)`, `abduction = atan2(v_x, v_z)`.
///
/// Errors with [`GeometryError::DegenerateAxis`] when the axis is within
/// numerical noise of `(0, ±1, 0)`, and with
/// [`GeometryError::AngleOutOfDomain`] when the axis points outside the
/// measurable hemisphere (abduction outside `[0°, 90°]`).
pub fn angles_from_axis(axis: &UnitVec3) -> Result<AnglePair, GeometryError> {
    if axis.x().hypot(axis.z()) < 1e-12 {
        return Err(GeometryError::DegenerateAxis);
    }
    let anteversion = axis.y().clamp(-1.0, 1.0).asin().to_degrees();
    let abduction = axis.x().atan2(axis.z()).to_degrees();
    AnglePair::new(abduction, anteversion)
}

/// Component-wise absolute angle difference `(|Δabduction|, |Δanteversion|)`
/// in degrees.
pub fn angular_error(a: &AnglePair, b: &AnglePair) -> (f64, f64) {
    (
        (a.abduction_deg - b.abduction_deg).abs(),
        (a.anteversion_deg - b.anteversion_deg).abs(),
    )
}

/// Rotation whose +z axis is the tool axis for `angles`: `R_y(α)·R_x(−β)`.
///
/// This is the commanded-orientation builder used by the alignment pipeline;
/// `R·ẑ == axis_from_angles(angles)` exactly (up to rounding), and the two
/// factors keep abduction and anteversion independently adjustable.
pub fn rotation_from_angles(angles: &AnglePair) -> Result<Matrix3<f64>, GeometryError> {
    if !angles.in_domain() {
        return Err(GeometryError::AngleOutOfDomain {
            abduction_deg: angles.abduction_deg,
            anteversion_deg: angles.anteversion_deg,
        });
    }
    let a = angles.abduction_deg.to_radians();
    let b = angles.anteversion_deg.to_radians();
    Ok(rot_y(a) * rot_x(-b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng, from: FrameTag, to: FrameTag) -> RigidTransform {
        let axis = UnitVec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0f64) + 1.5, // keep away from zero vector
        )
        .unwrap();
        let t = Vector3::new(
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
        );
        RigidTransform::from_axis_angle_deg(&axis, rng.random_range(-180.0..180.0), t, from, to)
            .unwrap()
    }

    /// Independent oracle: the same motion as a 4x4 homogeneous matrix.
    fn homogeneous(t: &RigidTransform) -> [[f64; 4]; 4] {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = t.rotation()[(r, c)];
            }
            m[r][3] = t.translation()[r];
        }
        m[3][3] = 1.0;
        m
    }

    fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                for k in 0..4 {
                    out[r][c] += a[r][k] * b[k][c];
                }
            }
        }
        out
    }

    #[test]
    fn identity_apply_returns_input() {
        let t = RigidTransform::identity(FrameTag::Base, FrameTag::Base);
        let p = Point3::new(1.0, -2.0, 3.5);
        assert_eq!(t.apply(&p), p);
    }

    #[test]
    fn compose_matches_homogeneous_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a = random_transform(&mut rng, FrameTag::Cam, FrameTag::Base);
            let b = random_transform(&mut rng, FrameTag::Pic, FrameTag::Cam);
            let ab = a.compose(&b).unwrap();
            let oracle = mat4_mul(&homogeneous(&a), &homogeneous(&b));
            let got = homogeneous(&ab);
            for r in 0..4 {
                for c in 0..4 {
                    assert_abs_diff_eq!(got[r][c], oracle[r][c], epsilon = 1e-9);
                }
            }
            assert_eq!(ab.from_frame(), FrameTag::Pic);
            assert_eq!(ab.to_frame(), FrameTag::Base);
        }
    }

    #[test]
    fn compose_equals_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let a = random_transform(&mut rng, FrameTag::Cam, FrameTag::Base);
            let b = random_transform(&mut rng, FrameTag::Pic, FrameTag::Cam);
            let p = Point3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            );
            let via_compose = a.compose(&b).unwrap().apply(&p);
            let sequential = a.apply(&b.apply(&p));
            assert_abs_diff_eq!(via_compose.dist(&sequential), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn compose_rejects_frame_mismatch() {
        let a = RigidTransform::identity(FrameTag::Cam, FrameTag::Base);
        let b = RigidTransform::identity(FrameTag::Pic, FrameTag::Patient);
        let err = a.compose(&b).unwrap_err();
        assert!(matches!(err, GeometryError::FrameMismatch { .. }));
    }

    #[test]
    fn invert_round_trips_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10_000 {
            let t = random_transform(&mut rng, FrameTag::Base, FrameTag::Cam);
            let p = Point3::new(
                rng.random_range(-1000.0..1000.0),
                rng.random_range(-1000.0..1000.0),
                rng.random_range(-1000.0..1000.0),
            );
            let back = t.invert().apply(&t.apply(&p));
            assert!(back.dist(&p) < 1e-9, "round trip error {}", back.dist(&p));
        }
    }

    #[test]
    fn invert_swaps_frames() {
        let t = RigidTransform::rot_z_deg(30.0, FrameTag::Base, FrameTag::Cam);
        let inv = t.invert();
        assert_eq!(inv.from_frame(), FrameTag::Cam);
        assert_eq!(inv.to_frame(), FrameTag::Base);
        let both = t.compose(&inv).unwrap();
        assert!(both.orthonormality_error() < 1e-12);
        assert_abs_diff_eq!(both.translation().norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_stays_orthonormal_after_1000_compositions() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut acc = RigidTransform::identity(FrameTag::Base, FrameTag::Base);
        for _ in 0..1000 {
            let step = random_transform(&mut rng, FrameTag::Base, FrameTag::Base);
            acc = acc.compose(&step).unwrap();
        }
        assert!(
            acc.orthonormality_error() < 1e-6,
            "drift {}",
            acc.orthonormality_error()
        );
    }

    #[test]
    fn new_rejects_reflection_and_garbage() {
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(
            RigidTransform::new(reflection, Vector3::zeros(), FrameTag::Base, FrameTag::Base)
                .unwrap_err(),
            GeometryError::NotARotation
        );
        let scaled = Matrix3::identity() * 1.001;
        assert_eq!(
            RigidTransform::new(scaled, Vector3::zeros(), FrameTag::Base, FrameTag::Base)
                .unwrap_err(),
            GeometryError::NotARotation
        );
        let nan = Matrix3::identity() * f64::NAN;
        assert_eq!(
            RigidTransform::new(nan, Vector3::zeros(), FrameTag::Base, FrameTag::Base)
                .unwrap_err(),
            GeometryError::NonFinite
        );
    }

    #[test]
    fn zero_angles_give_plus_z() {
        let axis = axis_from_angles(&AnglePair::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!((axis.x(), axis.y(), axis.z()), (0.0, 0.0, 1.0));
    }

    #[test]
    fn ninety_abduction_gives_plus_x() {
        let axis = axis_from_angles(&AnglePair::new(90.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(axis.x(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(axis.y(), 0.0, epsilon = 1e-15);
        // cos(90°) via radians is ~6e-17, not exactly zero.
        assert_abs_diff_eq!(axis.z(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn target_cup_orientation_axis() {
        // 40° abduction / 15° anteversion, components computed from the
        // closed form with independent trig evaluation.
        let axis = axis_from_angles(&AnglePair::new(40.0, 15.0).unwrap()).unwrap();
        assert_abs_diff_eq!(axis.x(), 0.6208851530148456, epsilon = 1e-12);
        assert_abs_diff_eq!(axis.y(), 0.25881904510252074, epsilon = 1e-12);
        assert_abs_diff_eq!(axis.z(), 0.739942111693848, epsilon = 1e-12);
    }

    #[test]
    fn angle_round_trip_over_domain_grid() {
        for ab10 in 0..=90 {
            for an10 in -89..=89 {
                let pair = AnglePair::new(f64::from(ab10), f64::from(an10)).unwrap();
                let back = angles_from_axis(&axis_from_angles(&pair).unwrap()).unwrap();
                let (ea, ev) = angular_error(&pair, &back);
                assert!(ea < 1e-9 && ev < 1e-9, "round trip failed at {pair:?}");
            }
        }
    }

    #[test]
    fn pole_axis_is_degenerate() {
        let pole = UnitVec3::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(
            angles_from_axis(&pole).unwrap_err(),
            GeometryError::DegenerateAxis
        );
        let south = UnitVec3::new(0.0, -1.0, 0.0).unwrap();
        assert_eq!(
            angles_from_axis(&south).unwrap_err(),
            GeometryError::DegenerateAxis
        );
    }

    #[test]
    fn out_of_domain_angles_rejected() {
        assert!(AnglePair::new(-1.0, 0.0).is_err());
        assert!(AnglePair::new(91.0, 0.0).is_err());
        assert!(AnglePair::new(40.0, 90.0).is_err());
        assert!(axis_from_angles(&AnglePair {
            abduction_deg: 120.0,
            anteversion_deg: 0.0
        })
        .is_err());
    }

    #[test]
    fn angular_error_is_componentwise_absolute() {
        let desired = AnglePair::new(40.0, 15.0).unwrap();
        let measured = AnglePair::new(41.79, 15.99).unwrap();
        let (ea, ev) = angular_error(&desired, &measured);
        assert_abs_diff_eq!(ea, 1.79, epsilon = 1e-12);
        assert_abs_diff_eq!(ev, 0.99, epsilon = 1e-12);
    }

    #[test]
    fn rotation_from_angles_carries_z_to_axis() {
        for (ab, an) in [(0.0, 0.0), (40.0, 15.0), (90.0, 0.0), (10.0, -30.0), (75.0, 60.0)] {
            let pair = AnglePair::new(ab, an).unwrap();
            let r = rotation_from_angles(&pair).unwrap();
            let axis = axis_from_angles(&pair).unwrap();
            let z = r * Vector3::z();
            assert_abs_diff_eq!((z - axis.vec()).norm(), 0.0, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn apply_preserves_distances(
            seed in 0u64..1000,
            ax in -200.0..200.0f64, ay in -200.0..200.0f64, az in -200.0..200.0f64,
            bx in -200.0..200.0f64, by in -200.0..200.0f64, bz in -200.0..200.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_transform(&mut rng, FrameTag::Base, FrameTag::Cam);
            let p = Point3::new(ax, ay, az);
            let q = Point3::new(bx, by, bz);
            let before = p.dist(&q);
            let after = t.apply(&p).dist(&t.apply(&q));
            prop_assert!((before - after).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_transform(&mut rng, FrameTag::Cam, FrameTag::Base);
            let b = random_transform(&mut rng, FrameTag::Pic, FrameTag::Cam);
            let c = random_transform(&mut rng, FrameTag::Patient, FrameTag::Pic);
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            let dr = (left.rotation() - right.rotation()).abs().max();
            let dt = (left.translation() - right.translation()).norm();
            prop_assert!(dr < 1e-9 && dt < 1e-9);
        }

        #[test]
        fn unit_axis_round_trip(ab in 0.001..89.999f64, an in -89.9..89.9f64) {
            let pair = AnglePair::new(ab, an).unwrap();
            let axis = axis_from_angles(&pair).unwrap();
            prop_assert!((axis.vec().norm() - 1.0).abs() < 1e-12);
            let back = angles_from_axis(&axis).unwrap();
            let (ea, ev) = angular_error(&pair, &back);
            prop_assert!(ea < 1e-9 && ev < 1e-9);
        }
    }
}
