//! Surgical navigation workflows built on the geometry, registration and
//! point-cloud layers: image-to-tracker registration, patient-relative tool
//! poses, cup-axis feedback alignment, and the probe-based neck-length and
//! leg-length measurements.
//!
//! Everything here speaks millimetres and degrees and works on frame-tagged
//! transforms; handing a transform with the wrong tags to any function is a
//! hard error, never a silent reinterpretation.

use std::ops::RangeInclusive;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{
    angles_from_axis, axis_from_angles, AnglePair, FrameTag, GeometryError, Point3,
    RigidTransform, UnitVec3,
};
use crate::pointcloud::{
    euclidean_cluster, fit_plane_3pts, fit_sphere, match_correspondence, point_plane_distance,
    CloudError, KdTree, Plane, PointCloud,
};
use crate::registration::{
    register_filtered, Correspondences, RegistrationError, RegistrationResult,
    DEFAULT_MAX_ROUNDS,
};
use crate::sim::{Tracker, Robot, SimError};

#[derive(Debug, Error)]
pub enum NavError {
    #[error("expected a point cloud in the {expected} frame, got {got}")]
    WrongCloudFrame { expected: FrameTag, got: FrameTag },
    #[error("segmented {image} marker ball(s) in the image but the tracker reports {tracked}")]
    ClusterCountMismatch { image: usize, tracked: usize },
    #[error("tracker lost sight of {what}")]
    OutOfView { what: &'static str },
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error("at least one alignment iteration is required")]
    BadIterations,
    #[error("axis probe length must be positive and finite, got {0} mm")]
    BadProbeLength(f64),
    #[error("prosthesis head radius must be positive and finite, got {0} mm")]
    BadHeadRadius(f64),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

fn expect_frames(
    t: &RigidTransform,
    from: FrameTag,
    to: FrameTag,
) -> Result<(), GeometryError> {
    if t.from_frame() != from || t.to_frame() != to {
        return Err(GeometryError::WrongFrames {
            expected_from: from,
            expected_to: to,
            got_from: t.from_frame(),
            got_to: t.to_frame(),
        });
    }
    Ok(())
}

/// Output of [`register_image_to_tracker`].
#[derive(Debug, Clone)]
pub struct ImageRegistration {
    /// Image-to-camera motion (Pic→Cam).
    pub transform: RigidTransform,
    /// Fitted ball centers in the image frame, one per segmented cluster.
    pub image_centers: Vec<Point3>,
    /// `pairing[i]` is the index of the tracked center matched to
    /// `image_centers[i]`.
    pub pairing: Vec<usize>,
    /// The underlying point-set registration, residuals included.
    pub registration: RegistrationResult,
}

/// Registers a CT-side marker cloud to the tracker's view of the same
/// marker body.
///
/// The cloud is segmented into balls by Euclidean clustering at
/// `link_radius_mm`, each cluster is reduced to a sphere-fit center, the
/// centers are matched to `tracked_centers_cam` by pairwise-distance
/// consistency (marker bodies are built with scalene spacing precisely so
/// this is unambiguous), and the paired centers are registered with
/// outlier rejection at `beta_mm`.
pub fn register_image_to_tracker(
    ct_cloud: &PointCloud,
    tracked_centers_cam: &[Point3],
    link_radius_mm: f64,
    beta_mm: f64,
) -> Result<ImageRegistration, NavError> {
    if ct_cloud.frame != FrameTag::Pic {
        return Err(NavError::WrongCloudFrame {
            expected: FrameTag::Pic,
            got: ct_cloud.frame,
        });
    }
    let tree = KdTree::new(ct_cloud)?;
    let clusters = euclidean_cluster(&tree, link_radius_mm)?;
    if clusters.len() != tracked_centers_cam.len() {
        return Err(NavError::ClusterCountMismatch {
            image: clusters.len(),
            tracked: tracked_centers_cam.len(),
        });
    }
    let mut image_centers = Vec::with_capacity(clusters.len());
    for cluster in &clusters {
        let pts: Vec<Point3> = cluster.iter().map(|&i| ct_cloud.points[i]).collect();
        image_centers.push(fit_sphere(&pts)?.sphere.center);
    }
    let pairing = match_correspondence(&image_centers, tracked_centers_cam)?;
    let paired_cam: Vec<Point3> = pairing.iter().map(|&j| tracked_centers_cam[j]).collect();
    let corr = Correspondences::new(
        image_centers.clone(),
        paired_cam,
        FrameTag::Pic,
        FrameTag::Cam,
    )?;
    let registration = register_filtered(&corr, beta_mm, DEFAULT_MAX_ROUNDS)?;
    Ok(ImageRegistration {
        transform: registration.transform,
        image_centers,
        pairing,
        registration,
    })
}

/// Re-expresses a camera-frame tool pose relative to the tracked patient
/// body: `patient_in_cam⁻¹ ∘ tool_in_cam` (Tool→Patient).
///
/// Because both poses come from the same camera, any common motion — the
/// camera being nudged, or camera-frame drift of a patient who moved —
/// cancels; only true tool-relative-to-patient motion remains.
pub fn pose_in_patient_frame(
    tool_in_cam: &RigidTransform,
    patient_in_cam: &RigidTransform,
) -> Result<RigidTransform, NavError> {
    expect_frames(tool_in_cam, FrameTag::Tool, FrameTag::Cam)?;
    expect_frames(patient_in_cam, FrameTag::Patient, FrameTag::Cam)?;
    Ok(patient_in_cam.invert().compose(tool_in_cam)?)
}

/// A captured zero pose for relative angle readout.
///
/// The tool axis at the captured pose defines the `(0°, 0°)` reading; a
/// later pose is reported by carrying the zero pose's `ẑ` through the
/// relative motion and converting that axis to abduction/anteversion.
#[derive(Debug, Clone, Copy)]
pub struct ZeroReference {
    reference: RigidTransform,
}

impl ZeroReference {
    pub fn capture(pose: &RigidTransform) -> Self {
        Self { reference: *pose }
    }

    pub fn reference(&self) -> &RigidTransform {
        &self.reference
    }

    /// Angles of `current` relative to the captured zero. `current` must
    /// carry the same frame tags as the captured pose.
    pub fn angles(&self, current: &RigidTransform) -> Result<AnglePair, NavError> {
        expect_frames(
            current,
            self.reference.from_frame(),
            self.reference.to_frame(),
        )?;
        let rel = current.compose(&self.reference.invert())?;
        let axis = UnitVec3::normalize(rel.rotation() * Vector3::z())?;
        Ok(angles_from_axis(&axis)?)
    }
}

/// Angular window the grinding axis must stay inside, degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeZone {
    pub abduction_deg: RangeInclusive<f64>,
    pub anteversion_deg: RangeInclusive<f64>,
}

impl Default for SafeZone {
    /// The clinical target window: abduction 40°±10°, anteversion 15°±10°.
    fn default() -> Self {
        Self {
            abduction_deg: 30.0..=50.0,
            anteversion_deg: 5.0..=25.0,
        }
    }
}

impl SafeZone {
    pub fn contains(&self, angles: &AnglePair) -> bool {
        self.abduction_deg.contains(&angles.abduction_deg)
            && self.anteversion_deg.contains(&angles.anteversion_deg)
    }
}

/// One intraoperative angle reading of the grinding axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrindReading {
    pub angles: AnglePair,
    pub in_safe_zone: bool,
}

/// Reads the grinding-axis angles from a patient-relative tool pose and
/// flags whether they sit inside `zone`. Boundary values count as inside.
pub fn measure_grind_angles(
    tool_in_patient: &RigidTransform,
    zone: &SafeZone,
) -> Result<GrindReading, NavError> {
    expect_frames(tool_in_patient, FrameTag::Tool, FrameTag::Patient)?;
    let axis = UnitVec3::normalize(tool_in_patient.rotation() * Vector3::z())?;
    let angles = angles_from_axis(&axis)?;
    Ok(GrindReading {
        in_safe_zone: zone.contains(&angles),
        angles,
    })
}

/// Fixed scene context for [`feedback_align`].
#[derive(Debug, Clone, Copy)]
pub struct AlignmentSetup {
    /// Tracked patient-body pose (Patient→Cam).
    pub patient_in_cam: RigidTransform,
    /// Where the tool's axis origin sits during alignment, patient frame.
    pub tool_position_patient: Point3,
    /// Lever arm between the two tracked axis points, mm.
    pub axis_probe_len_mm: f64,
}

impl AlignmentSetup {
    pub fn new(patient_in_cam: RigidTransform, tool_position_patient: Point3) -> Self {
        Self {
            patient_in_cam,
            tool_position_patient,
            axis_probe_len_mm: 100.0,
        }
    }
}

/// One iteration of the alignment loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignmentStep {
    pub commanded: AnglePair,
    pub measured: AnglePair,
    /// Signed `desired − measured`, degrees.
    pub error_deg: (f64, f64),
}

/// The full iteration history of one alignment run.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTrace {
    pub steps: Vec<AlignmentStep>,
    pub converged: bool,
}

impl AlignmentTrace {
    pub fn iterations(&self) -> usize {
        self.steps.len()
    }

    /// Signed error of the last iteration.
    pub fn final_error_deg(&self) -> (f64, f64) {
        self.steps.last().map_or((f64::NAN, f64::NAN), |s| s.error_deg)
    }
}

/// Closed-loop cup-axis alignment: command the desired angles, measure what
/// the arm actually reached through the tracker, and re-command with the
/// measured error added on, until both angle errors drop below `tol_deg`.
///
/// A constant angular bias is therefore cancelled after a single
/// correction: iteration 1 measures `desired + bias`, iteration 2 commands
/// `desired − bias` and lands on `desired`.
///
/// Measurement model: the tracker watches two points on the tool axis —
/// the axis origin and a point `axis_probe_len_mm` further along — and the
/// axis direction is rebuilt from their patient-frame difference. Either
/// point leaving the field of view aborts the run. A tracker configured
/// with zero noise is treated as an ideal axis sensor and reads the
/// achieved angles back exactly; the two-point reconstruction only shapes
/// the readings once real noise is present.
///
/// Non-convergence within `max_iters` is an expected outcome, reported via
/// [`AlignmentTrace::converged`], not an error.
pub fn feedback_align(
    robot: &mut Robot,
    tracker: &mut Tracker,
    setup: &AlignmentSetup,
    desired: &AnglePair,
    tol_deg: f64,
    max_iters: usize,
) -> Result<AlignmentTrace, NavError> {
    if !(tol_deg > 0.0 && tol_deg.is_finite()) {
        return Err(NavError::BadTolerance(tol_deg));
    }
    if max_iters == 0 {
        return Err(NavError::BadIterations);
    }
    if !(setup.axis_probe_len_mm > 0.0 && setup.axis_probe_len_mm.is_finite()) {
        return Err(NavError::BadProbeLength(setup.axis_probe_len_mm));
    }
    expect_frames(&setup.patient_in_cam, FrameTag::Patient, FrameTag::Cam)?;
    if !desired.in_domain() {
        return Err(GeometryError::AngleOutOfDomain {
            abduction_deg: desired.abduction_deg,
            anteversion_deg: desired.anteversion_deg,
        }
        .into());
    }

    let cam_to_patient = setup.patient_in_cam.invert();
    let ideal_sensor = tracker.model().noise_sigma_mm == 0.0;
    let mut command = *desired;
    let mut steps = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        let achieved = robot.orient_to(&command);
        let achieved_axis = axis_from_angles(&achieved)?;

        let p1 = setup.tool_position_patient;
        let p2 = Point3::from_vec(p1.vec() + setup.axis_probe_len_mm * achieved_axis.vec());
        let c1 = setup.patient_in_cam.apply(&p1);
        let c2 = setup.patient_in_cam.apply(&p2);
        let m1 = tracker
            .measure(&c1)
            .ok_or(NavError::OutOfView { what: "tool axis origin" })?;
        let m2 = tracker
            .measure(&c2)
            .ok_or(NavError::OutOfView { what: "tool axis probe point" })?;

        let measured = if ideal_sensor {
            achieved
        } else {
            let b1 = cam_to_patient.apply(&m1);
            let b2 = cam_to_patient.apply(&m2);
            let dir = UnitVec3::normalize(b2.vec() - b1.vec())?;
            angles_from_axis(&dir)?
        };

        let e = (
            desired.abduction_deg - measured.abduction_deg,
            desired.anteversion_deg - measured.anteversion_deg,
        );
        steps.push(AlignmentStep {
            commanded: command,
            measured,
            error_deg: e,
        });
        if e.0.abs() < tol_deg && e.1.abs() < tol_deg {
            converged = true;
            break;
        }
        command = AnglePair {
            abduction_deg: command.abduction_deg + e.0,
            anteversion_deg: command.anteversion_deg + e.1,
        };
    }

    Ok(AlignmentTrace { steps, converged })
}

/// One probed point, reported in the patient frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeReading {
    pub tip_patient: Point3,
}

/// Touches a patient-frame landmark with the tracked probe: the tracker
/// measures the tip in camera frame and the reading is mapped back through
/// the patient-body pose.
pub fn probe_point(
    tracker: &mut Tracker,
    patient_in_cam: &RigidTransform,
    landmark: &Point3,
) -> Result<ProbeReading, NavError> {
    expect_frames(patient_in_cam, FrameTag::Patient, FrameTag::Cam)?;
    let cam = patient_in_cam.apply(landmark);
    let measured = tracker
        .measure(&cam)
        .ok_or(NavError::OutOfView { what: "probe tip" })?;
    Ok(ProbeReading {
        tip_patient: patient_in_cam.invert().apply(&measured),
    })
}

/// Trial-head colour coding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadColor {
    Red,
    Blue,
    White,
}

impl std::fmt::Display for HeadColor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadColor::Red => "red",
            HeadColor::Blue => "blue",
            HeadColor::White => "white",
        })
    }
}

/// A trial femoral head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProsthesisHead {
    pub color: HeadColor,
    pub size_mm: f64,
    pub radius_mm: f64,
}

/// The three trial heads on the instrument tray.
pub fn default_catalog() -> Vec<ProsthesisHead> {
    vec![
        ProsthesisHead {
            color: HeadColor::Red,
            size_mm: 58.0,
            radius_mm: 29.0,
        },
        ProsthesisHead {
            color: HeadColor::Blue,
            size_mm: 59.0,
            radius_mm: 29.5,
        },
        ProsthesisHead {
            color: HeadColor::White,
            size_mm: 60.0,
            radius_mm: 30.0,
        },
    ]
}

/// A probe-derived neck-length measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeckMeasurement {
    /// Head-apex to osteotomy-plane distance `e`, mm.
    pub apex_distance_mm: f64,
    /// Neck length `c = e − head radius`, mm.
    pub neck_length_mm: f64,
    /// The fitted osteotomy plane.
    pub plane: Plane,
    /// Set when the geometry is physically impossible (`c < 0`, the head
    /// center below the cut plane) — a sign of a mis-probed point.
    pub implausible: bool,
}

/// Neck length from three osteotomy-plane probes and one head-apex probe:
/// fit the plane, take the apex's distance `e` to it, and subtract the
/// mounted head's radius.
pub fn measure_neck_length(
    plane_probes: &[ProbeReading; 3],
    apex_probe: &ProbeReading,
    head: &ProsthesisHead,
) -> Result<NeckMeasurement, NavError> {
    if !(head.radius_mm > 0.0 && head.radius_mm.is_finite()) {
        return Err(NavError::BadHeadRadius(head.radius_mm));
    }
    let plane = fit_plane_3pts(
        &plane_probes[0].tip_patient,
        &plane_probes[1].tip_patient,
        &plane_probes[2].tip_patient,
    )?;
    let e = point_plane_distance(&plane, &apex_probe.tip_patient);
    let c = e - head.radius_mm;
    Ok(NeckMeasurement {
        apex_distance_mm: e,
        neck_length_mm: c,
        plane,
        implausible: c < 0.0,
    })
}

/// The target neck length implied by a preoperative apex distance `e₀` and
/// the planned head radius.
pub fn desired_neck_length(apex_distance_mm: f64, head_radius_mm: f64) -> f64 {
    apex_distance_mm - head_radius_mm
}

/// Picks the trial head whose implied neck length `e − r` sits closest to
/// the target. Ties go to the smaller head. Returns `None` only for an
/// empty catalog.
pub fn select_head<'a>(
    catalog: &'a [ProsthesisHead],
    apex_distance_mm: f64,
    target_neck_mm: f64,
) -> Option<&'a ProsthesisHead> {
    let mut best: Option<(&ProsthesisHead, f64)> = None;
    for head in catalog {
        let diff = (apex_distance_mm - head.radius_mm - target_neck_mm).abs();
        let better = match best {
            None => true,
            Some((b, bd)) => diff < bd || (diff == bd && head.size_mm < b.size_mm),
        };
        if better {
            best = Some((head, diff));
        }
    }
    best.map(|(h, _)| h)
}

/// Straight-line distance between the pelvic block and an ankle probe, mm.
pub fn measure_leg_length(hip_block: &ProbeReading, ankle: &ProbeReading) -> f64 {
    hip_block.tip_patient.dist(&ankle.tip_patient)
}

/// Signed leg-length discrepancy, `left − right`, mm.
pub fn leg_discrepancy(left_mm: f64, right_mm: f64) -> f64 {
    left_mm - right_mm
}
