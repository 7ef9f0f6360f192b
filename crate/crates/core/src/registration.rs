//! Rigid point-set registration with iterative outlier rejection.
//!
//! [`kabsch`] recovers the rigid motion that best maps one point list onto
//! another in the least-squares sense, via the SVD of the cross-covariance
//! matrix, with an explicit reflection guard: when the raw product would
//! have determinant −1, the column of V paired with the smallest singular
//! value is negated and the rotation recomputed, so the result is always a
//! proper rotation.
//!
//! [`register_filtered`] wraps the solver in a rejection loop for real
//! measurement sets: after each fit, every pair whose residual exceeds the
//! threshold `beta` is dropped (all of them, not just the worst) and the
//! remainder refit, stopping when the largest retained residual is below
//! `beta`. The loop fails rather than degrade silently: fewer than four
//! surviving pairs, a round that cannot drop anything, or running out of
//! rounds all surface as [`RegistrationError::Exhausted`].

use nalgebra::{DMatrix, Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{FrameTag, GeometryError, Point3, RigidTransform};

/// Default residual threshold for rejection, mm.
pub const DEFAULT_BETA_MM: f64 = 2.0;
/// Default cap on fit/reject rounds.
pub const DEFAULT_MAX_ROUNDS: u32 = 10;

/// Relative floor on the second singular value of the demeaned source set;
/// below it the points are collinear and the rotation is unobservable.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("correspondence lists differ in length: {p} vs {q}")]
    LengthMismatch { p: usize, q: usize },
    #[error("at least 3 correspondence pairs are required, got {got}")]
    TooFewPairs { got: usize },
    #[error("non-finite coordinate in correspondence set")]
    NonFinite,
    #[error("degenerate configuration: source points are collinear (rank < 2 after demeaning)")]
    DegenerateConfiguration,
    #[error(
        "outlier rejection exhausted after {rounds} round(s) with {remaining} pair(s) retained \
         and max residual {max_residual_mm:.3} mm"
    )]
    Exhausted {
        rounds: u32,
        remaining: usize,
        max_residual_mm: f64,
    },
    #[error("beta must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("max_rounds must be at least 1")]
    BadRounds,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Paired observations of the same physical points in two frames:
/// `q[i]` is `p[i]` seen from the other side.
#[derive(Debug, Clone)]
pub struct Correspondences {
    p: Vec<Point3>,
    q: Vec<Point3>,
    p_frame: FrameTag,
    q_frame: FrameTag,
}

impl Correspondences {
    pub fn new(
        p: Vec<Point3>,
        q: Vec<Point3>,
        p_frame: FrameTag,
        q_frame: FrameTag,
    ) -> Result<Self, RegistrationError> {
        if p.len() != q.len() {
            return Err(RegistrationError::LengthMismatch {
                p: p.len(),
                q: q.len(),
            });
        }
        if p.len() < 3 {
            return Err(RegistrationError::TooFewPairs { got: p.len() });
        }
        if !p.iter().chain(q.iter()).all(Point3::is_finite) {
            return Err(RegistrationError::NonFinite);
        }
        Ok(Self {
            p,
            q,
            p_frame,
            q_frame,
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p(&self) -> &[Point3] {
        &self.p
    }

    pub fn q(&self) -> &[Point3] {
        &self.q
    }

    pub fn p_frame(&self) -> FrameTag {
        self.p_frame
    }

    pub fn q_frame(&self) -> FrameTag {
        self.q_frame
    }

    /// The subset at `indices`, in the given order. Invariants were checked
    /// at construction; the subset inherits them (callers keep `len >= 3`).
    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            p: indices.iter().map(|&i| self.p[i]).collect(),
            q: indices.iter().map(|&i| self.q[i]).collect(),
            p_frame: self.p_frame,
            q_frame: self.q_frame,
        }
    }
}

/// Outcome of [`register_filtered`].
#[derive(Debug, Clone)]
pub struct RegistrationResult {
    /// Rigid motion from the `p` frame into the `q` frame.
    pub transform: RigidTransform,
    /// Residual per retained pair, mm, parallel to `retained`.
    pub residuals: Vec<f64>,
    /// Original indices of pairs that survived rejection, ascending.
    pub retained: Vec<usize>,
    /// Original indices of rejected pairs, ascending.
    pub rejected: Vec<usize>,
    /// Number of fit rounds performed.
    pub iterations: u32,
    /// RMS residual over retained pairs, mm.
    pub rms_mm: f64,
    /// RMS after each fit round, in order; never increases.
    pub round_rms_mm: Vec<f64>,
}

/// Best proper rotation from a 3x3 cross-covariance matrix, reflection-safe.
pub(crate) fn rotation_from_cross_covariance(h: &Matrix3<f64>) -> Matrix3<f64> {
    // Singular values come back sorted descending, so index 2 is the
    // smallest — the direction to flip if the product is a reflection.
    let svd = h.svd(true, true);
    let u = svd.u.expect("SVD of a finite 3x3 matrix yields U");
    let v_t = svd.v_t.expect("SVD of a finite 3x3 matrix yields V^T");
    let mut v = v_t.transpose();
    let r = v * u.transpose();
    if r.determinant() < 0.0 {
        let flipped = -v.column(2).clone_owned();
        v.set_column(2, &flipped);
        v * u.transpose()
    } else {
        r
    }
}

/// Least-squares rigid fit: finds `(R, T)` minimizing
/// `Σ ‖q_i − (R·p_i + T)‖²`; the returned transform maps the `p` frame
/// into the `q` frame.
pub fn kabsch(c: &Correspondences) -> Result<RigidTransform, RegistrationError> {
    let n = c.len() as f64;
    let p_mean = c.p.iter().fold(Vector3::zeros(), |acc, p| acc + p.vec()) / n;
    let q_mean = c.q.iter().fold(Vector3::zeros(), |acc, q| acc + q.vec()) / n;

    // Rank of the demeaned source set: collinear points leave the rotation
    // about their axis unobservable.
    let demeaned = DMatrix::from_fn(c.len(), 3, |r, col| c.p[r].vec()[col] - p_mean[col]);
    let sv = demeaned.singular_values();
    if sv[1] <= RANK_TOL * sv[0].max(f64::MIN_POSITIVE) {
        return Err(RegistrationError::DegenerateConfiguration);
    }

    let mut h = Matrix3::zeros();
    for (p, q) in c.p.iter().zip(&c.q) {
        h += (p.vec() - p_mean) * (q.vec() - q_mean).transpose();
    }
    let r = rotation_from_cross_covariance(&h);
    let t = q_mean - r * p_mean;
    Ok(RigidTransform::new(r, t, c.p_frame, c.q_frame)?)
}

/// Per-pair alignment error `‖q_i − (R·p_i + T)‖`, mm.
pub fn residuals(
    t: &RigidTransform,
    c: &Correspondences,
) -> Result<Vec<f64>, RegistrationError> {
    if t.from_frame() != c.p_frame || t.to_frame() != c.q_frame {
        return Err(GeometryError::WrongFrames {
            expected_from: c.p_frame,
            expected_to: c.q_frame,
            got_from: t.from_frame(),
            got_to: t.to_frame(),
        }
        .into());
    }
    Ok(c.p
        .iter()
        .zip(&c.q)
        .map(|(p, q)| t.apply(p).dist(q))
        .collect())
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Fit-and-reject loop around [`kabsch`].
///
/// Each round fits the retained pairs, then drops every pair whose residual
/// exceeds `beta_mm`. Success requires the largest retained residual to be
/// strictly below `beta_mm`. At least four pairs must survive any rejection
/// for the next round to proceed.
pub fn register_filtered(
    c: &Correspondences,
    beta_mm: f64,
    max_rounds: u32,
) -> Result<RegistrationResult, RegistrationError> {
    if !(beta_mm > 0.0 && beta_mm.is_finite()) {
        return Err(RegistrationError::BadBeta(beta_mm));
    }
    if max_rounds == 0 {
        return Err(RegistrationError::BadRounds);
    }

    let mut retained: Vec<usize> = (0..c.len()).collect();
    let mut rejected: Vec<usize> = Vec::new();
    let mut round_rms_mm = Vec::new();

    for round in 1..=max_rounds {
        let subset = c.subset(&retained);
        let transform = kabsch(&subset)?;
        let res = residuals(&transform, &subset)?;
        round_rms_mm.push(rms(&res));

        let max_residual = res.iter().cloned().fold(0.0, f64::max);
        if max_residual < beta_mm {
            return Ok(RegistrationResult {
                transform,
                rms_mm: rms(&res),
                residuals: res,
                retained,
                rejected,
                iterations: round,
                round_rms_mm,
            });
        }

        let mut drop = Vec::new();
        let mut keep = Vec::new();
        for (&idx, &r) in retained.iter().zip(&res) {
            if r > beta_mm {
                drop.push(idx);
            } else {
                keep.push(idx);
            }
        }
        if drop.is_empty() || keep.len() < 4 {
            // Either residuals sit exactly on the threshold (no progress is
            // possible) or rejection would leave too few pairs to trust.
            return Err(RegistrationError::Exhausted {
                rounds: round,
                remaining: keep.len(),
                max_residual_mm: max_residual,
            });
        }
        rejected.extend(&drop);
        retained = keep;
    }

    // Out of rounds: report the state of the final retained set.
    let subset = c.subset(&retained);
    let transform = kabsch(&subset)?;
    let res = residuals(&transform, &subset)?;
    Err(RegistrationError::Exhausted {
        rounds: max_rounds,
        remaining: retained.len(),
        max_residual_mm: res.iter().cloned().fold(0.0, f64::max),
    })
}

/// Chains an image-to-camera registration with a camera-to-base calibration
/// into the image-to-base transform used for robot planning.
pub fn chain_image_to_base(
    pic_to_cam: &RigidTransform,
    cam_to_base: &RigidTransform,
) -> Result<RigidTransform, RegistrationError> {
    expect_frames(pic_to_cam, FrameTag::Pic, FrameTag::Cam)?;
    expect_frames(cam_to_base, FrameTag::Cam, FrameTag::Base)?;
    Ok(cam_to_base.compose(pic_to_cam)?)
}

fn expect_frames(
    t: &RigidTransform,
    from: FrameTag,
    to: FrameTag,
) -> Result<(), RegistrationError> {
    if t.from_frame() != from || t.to_frame() != to {
        return Err(GeometryError::WrongFrames {
            expected_from: from,
            expected_to: to,
            got_from: t.from_frame(),
            got_to: t.to_frame(),
        }
        .into());
    }
    Ok(())
}
