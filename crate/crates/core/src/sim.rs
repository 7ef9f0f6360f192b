//! Simulated hardware: optical tracker, robot arm and the measurement
//! phantom that stands in for patient anatomy.
//!
//! Every stochastic device owns its own seeded ChaCha stream (see
//! [`crate::seed`]), so measurement order inside one device never disturbs
//! another and a scenario replays byte-identically. Noise magnitudes are
//! always drawn as a standard normal scaled by the configured sigma, which
//! keeps the draw count — and therefore the stream position — independent
//! of the sigma values themselves.
//!
//! The phantom carries the scene's ground truth: marker-ball geometry for
//! each rigid body, anatomical landmarks in the patient frame, the static
//! body poses in camera frame, and the true base-to-camera transform that
//! the calibration pipeline is supposed to recover.

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use thiserror::Error;

use crate::geometry::{FrameTag, GeometryError, Point3, RigidTransform, UnitVec3};
use crate::pointcloud::PointCloud;
use crate::registration::{Correspondences, RegistrationError};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("noise sigma must be non-negative and finite, got {0}")]
    BadSigma(f64),
    #[error("field of view must have positive volume (min strictly below max on every axis)")]
    BadFov,
    #[error("jitter sigma must be non-negative and finite, got {0}")]
    BadJitter(f64),
    #[error("dance step must be positive and finite, got {0} mm")]
    BadStep(f64),
    #[error("calibration dance produced {visible} in-view pair(s); at least {needed} are required")]
    InsufficientPairs { visible: usize, needed: usize },
    #[error("phantom has no marker body named {name:?}")]
    UnknownBody { name: String },
    #[error("marker body {name:?} needs at least 3 non-collinear balls with positive radius")]
    BadMarkerBody { name: String },
    #[error("phantom body pose {name:?} does not match any body or its frame")]
    BadBodyPose { name: String },
    #[error("ball surface synthesis needs at least 20 points per ball, got {got}")]
    BadSampleCount { got: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Cloud(#[from] crate::pointcloud::CloudError),
}

/// Axis-aligned box, used as the tracker's measurable volume (camera frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    fn is_valid(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }
}

/// Optical tracker configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerModel {
    /// Isotropic Gaussian noise per axis, mm.
    pub noise_sigma_mm: f64,
    /// Measurable volume in camera frame.
    pub fov: Aabb,
    pub seed: u64,
}

/// A live tracker: model plus its private noise stream.
#[derive(Debug, Clone)]
pub struct Tracker {
    model: TrackerModel,
    rng: ChaCha8Rng,
}

impl Tracker {
    pub fn new(model: TrackerModel) -> Result<Self, SimError> {
        if !(model.noise_sigma_mm >= 0.0 && model.noise_sigma_mm.is_finite()) {
            return Err(SimError::BadSigma(model.noise_sigma_mm));
        }
        if !model.fov.is_valid() {
            return Err(SimError::BadFov);
        }
        Ok(Self {
            rng: rng_for(model.seed),
            model,
        })
    }

    pub fn model(&self) -> &TrackerModel {
        &self.model
    }

    /// Measures a true camera-frame point. Outside the field of view the
    /// tracker simply reports nothing — losing sight of a marker is an
    /// expected signal, not a fault — and consumes no noise draws.
    pub fn measure(&mut self, true_point_cam: &Point3) -> Option<Point3> {
        if !self.model.fov.contains(true_point_cam) {
            return None;
        }
        let s = self.model.noise_sigma_mm;
        // Fixed draw order x, y, z.
        let dx: f64 = StandardNormal.sample(&mut self.rng);
        let dy: f64 = StandardNormal.sample(&mut self.rng);
        let dz: f64 = StandardNormal.sample(&mut self.rng);
        Some(Point3::new(
            true_point_cam.x + s * dx,
            true_point_cam.y + s * dy,
            true_point_cam.z + s * dz,
        ))
    }
}

/// Robot arm error model.
///
/// `pose_bias` is a constant tool-frame pose error applied to every
/// commanded pose (positioning pipeline). `angle_bias_deg` is the constant
/// angular error of the orientation stage, expressed directly in the
/// abduction/anteversion coordinates the alignment pipeline commands in —
/// the per-angle form the feedback loop observes and cancels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotModel {
    /// Constant tool-frame pose error (frames Tool→Tool).
    pub pose_bias: RigidTransform,
    /// Constant (abduction, anteversion) error, degrees.
    pub angle_bias_deg: (f64, f64),
    /// Per-move translational jitter sigma, mm.
    pub jitter_sigma_trans_mm: f64,
    /// Per-move rotational jitter sigma, degrees.
    pub jitter_sigma_rot_deg: f64,
    pub seed: u64,
}

impl RobotModel {
    /// A perfectly accurate, perfectly repeatable arm.
    pub fn ideal(seed: u64) -> Self {
        Self {
            pose_bias: RigidTransform::identity(FrameTag::Tool, FrameTag::Tool),
            angle_bias_deg: (0.0, 0.0),
            jitter_sigma_trans_mm: 0.0,
            jitter_sigma_rot_deg: 0.0,
            seed,
        }
    }
}

/// A live robot arm: model plus its private jitter stream.
#[derive(Debug, Clone)]
pub struct Robot {
    model: RobotModel,
    rng: ChaCha8Rng,
}

impl Robot {
    pub fn new(model: RobotModel) -> Result<Self, SimError> {
        if model.pose_bias.from_frame() != FrameTag::Tool
            || model.pose_bias.to_frame() != FrameTag::Tool
        {
            return Err(GeometryError::WrongFrames {
                expected_from: FrameTag::Tool,
                expected_to: FrameTag::Tool,
                got_from: model.pose_bias.from_frame(),
                got_to: model.pose_bias.to_frame(),
            }
            .into());
        }
        for sigma in [model.jitter_sigma_trans_mm, model.jitter_sigma_rot_deg] {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(SimError::BadJitter(sigma));
            }
        }
        if !(model.angle_bias_deg.0.is_finite() && model.angle_bias_deg.1.is_finite()) {
            return Err(SimError::BadJitter(f64::NAN));
        }
        Ok(Self {
            rng: rng_for(model.seed),
            model,
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    /// Moves to a commanded tool pose (tool-in-base, frames Tool→Base) and
    /// returns the pose actually reached:
    /// `achieved = command ∘ pose_bias ∘ jitter`, both error factors acting
    /// in the tool frame. Draw order per move: translation x, y, z, then
    /// jitter axis, then jitter angle.
    pub fn move_to(&mut self, command: &RigidTransform) -> Result<RigidTransform, SimError> {
        if command.from_frame() != FrameTag::Tool || command.to_frame() != FrameTag::Base {
            return Err(GeometryError::WrongFrames {
                expected_from: FrameTag::Tool,
                expected_to: FrameTag::Base,
                got_from: command.from_frame(),
                got_to: command.to_frame(),
            }
            .into());
        }
        let st = self.model.jitter_sigma_trans_mm;
        let tx: f64 = StandardNormal.sample(&mut self.rng);
        let ty: f64 = StandardNormal.sample(&mut self.rng);
        let tz: f64 = StandardNormal.sample(&mut self.rng);
        let axis: [f64; 3] = UnitSphere.sample(&mut self.rng);
        let angle: f64 = StandardNormal.sample(&mut self.rng);
        let jitter = RigidTransform::from_axis_angle_deg(
            &UnitVec3::new(axis[0], axis[1], axis[2])?,
            angle * self.model.jitter_sigma_rot_deg,
            Vector3::new(st * tx, st * ty, st * tz),
            FrameTag::Tool,
            FrameTag::Tool,
        )?;
        let achieved = command.compose(&self.model.pose_bias)?.compose(&jitter)?;
        Ok(achieved)
    }

    /// The angular-stage counterpart of [`Robot::move_to`]: the orientation
    /// actually reached for a commanded abduction/anteversion pair,
    /// `achieved = command + angle_bias + jitter`, component-wise degrees.
    /// Draw order per call: abduction jitter, then anteversion jitter.
    pub fn orient_to(&mut self, command: &crate::geometry::AnglePair) -> crate::geometry::AnglePair {
        let g1: f64 = StandardNormal.sample(&mut self.rng);
        let g2: f64 = StandardNormal.sample(&mut self.rng);
        let s = self.model.jitter_sigma_rot_deg;
        crate::geometry::AnglePair {
            abduction_deg: command.abduction_deg + self.model.angle_bias_deg.0 + s * g1,
            anteversion_deg: command.anteversion_deg + self.model.angle_bias_deg.1 + s * g2,
        }
    }
}

/// A rigid cluster of retro-reflective balls.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerBody {
    pub name: String,
    /// The frame the ball centers are expressed in (and that any pose for
    /// this body maps from).
    pub frame: FrameTag,
    pub ball_centers: Vec<Point3>,
    pub ball_radius_mm: f64,
}

/// Anatomical reference points, patient frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmarks {
    /// Pelvic reference the leg-length tape is anchored to.
    pub hip_block: Point3,
    pub ankle_left: Point3,
    pub ankle_right: Point3,
    /// Three probe targets on the femoral osteotomy (cut) plane.
    pub osteotomy: [Point3; 3],
    /// Apex of the trial femoral head.
    pub head_apex: Point3,
}

/// The bench-top scene every pipeline is verified against.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub bodies: Vec<MarkerBody>,
    /// Ground-truth poses of the static bodies, `(body name, body→Cam)`.
    pub body_poses_cam: Vec<(String, RigidTransform)>,
    pub landmarks: Landmarks,
    /// Ground-truth robot-base-to-camera transform (Base→Cam).
    pub cam_from_base: RigidTransform,
    /// Calibration ball center in the tool frame; doubles as the tracked
    /// tip in positioning runs.
    pub tool_marker: Point3,
}

impl Phantom {
    /// The reference phantom: a four-ball hip body with scalene spacing
    /// (unambiguous correspondence), a three-ball tool body, leg-length
    /// landmarks and an osteotomy plane at patient z = 0 with the head apex
    /// 34 mm above it.
    pub fn reference() -> Self {
        let hip = MarkerBody {
            name: "hip".to_string(),
            frame: FrameTag::Patient,
            ball_centers: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(70.0, 5.0, 5.0),
                Point3::new(15.0, 60.0, -10.0),
                Point3::new(25.0, 20.0, 55.0),
            ],
            ball_radius_mm: 6.0,
        };
        let tool = MarkerBody {
            name: "tool".to_string(),
            frame: FrameTag::Tool,
            ball_centers: vec![
                Point3::new(0.0, 0.0, -40.0),
                Point3::new(55.0, 0.0, -45.0),
                Point3::new(20.0, 45.0, -50.0),
            ],
            ball_radius_mm: 6.0,
        };
        let patient_in_cam = RigidTransform::rot_y_deg(25.0, FrameTag::Patient, FrameTag::Cam)
            .compose(&RigidTransform::rot_x_deg(
                10.0,
                FrameTag::Patient,
                FrameTag::Patient,
            ))
            .expect("fixed frame chain")
            .compose(&RigidTransform::translation_only(
                Vector3::new(150.0, -80.0, 0.0),
                FrameTag::Patient,
                FrameTag::Patient,
            ))
            .expect("fixed frame chain");
        let patient_in_cam = RigidTransform::translation_only(
            Vector3::new(0.0, 0.0, 1000.0),
            FrameTag::Cam,
            FrameTag::Cam,
        )
        .compose(&patient_in_cam)
        .expect("fixed frame chain");

        let cam_from_base = RigidTransform::rot_z_deg(15.0, FrameTag::Base, FrameTag::Cam)
            .compose(&RigidTransform::rot_x_deg(
                -20.0,
                FrameTag::Base,
                FrameTag::Base,
            ))
            .expect("fixed frame chain");
        let cam_from_base = RigidTransform::translation_only(
            Vector3::new(250.0, 120.0, 900.0),
            FrameTag::Cam,
            FrameTag::Cam,
        )
        .compose(&cam_from_base)
        .expect("fixed frame chain");

        Self {
            bodies: vec![hip, tool],
            body_poses_cam: vec![("hip".to_string(), patient_in_cam)],
            landmarks: Landmarks {
                hip_block: Point3::new(0.0, 0.0, 0.0),
                ankle_left: Point3::new(0.0, 0.0, -832.128),
                ankle_right: Point3::new(0.0, 0.0, -832.298),
                osteotomy: [
                    Point3::new(20.0, 0.0, 0.0),
                    Point3::new(-15.0, 25.0, 0.0),
                    Point3::new(-10.0, -20.0, 0.0),
                ],
                head_apex: Point3::new(0.0, 0.0, 34.0),
            },
            cam_from_base,
            tool_marker: Point3::new(0.0, 0.0, 150.0),
        }
    }

    pub fn body(&self, name: &str) -> Option<&MarkerBody> {
        self.bodies.iter().find(|b| b.name == name)
    }

    /// Ground-truth camera pose of a static body.
    pub fn body_pose_cam(&self, name: &str) -> Option<&RigidTransform> {
        self.body_poses_cam
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Checks marker-body geometry and pose/frame consistency.
    pub fn validate(&self) -> Result<(), SimError> {
        for body in &self.bodies {
            let ok = body.ball_centers.len() >= 3
                && body.ball_radius_mm > 0.0
                && body.ball_radius_mm.is_finite()
                && body.ball_centers.iter().all(Point3::is_finite)
                && !collinear(&body.ball_centers);
            if !ok {
                return Err(SimError::BadMarkerBody {
                    name: body.name.clone(),
                });
            }
        }
        for (name, pose) in &self.body_poses_cam {
            let body = self.body(name).ok_or_else(|| SimError::BadBodyPose {
                name: name.clone(),
            })?;
            if pose.from_frame() != body.frame || pose.to_frame() != FrameTag::Cam {
                return Err(SimError::BadBodyPose { name: name.clone() });
            }
        }
        if self.cam_from_base.from_frame() != FrameTag::Base
            || self.cam_from_base.to_frame() != FrameTag::Cam
        {
            return Err(SimError::BadBodyPose {
                name: "cam_from_base".to_string(),
            });
        }
        Ok(())
    }
}

fn collinear(points: &[Point3]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let origin = points[0].vec();
    let mut first_dir: Option<Vector3<f64>> = None;
    for p in &points[1..] {
        let d = p.vec() - origin;
        if d.norm() < 1e-9 {
            continue;
        }
        match &first_dir {
            None => first_dir = Some(d),
            Some(f) => {
                if f.cross(&d).norm() > 1e-9 {
                    return false;
                }
            }
        }
    }
    true
}

/// Drives the arm through an `nx × ny × nz` grid of commanded poses
/// (translated copies of `start`, spaced `step_mm` along the base axes) and
/// pairs each commanded calibration-ball position (base frame) with the
/// tracker's measurement of the true ball position (camera frame).
///
/// Grid order is x-major (`ix`, then `iy`, then `iz`), which fixes the
/// device draw order. Positions the tracker cannot see are skipped; at
/// least four visible pairs are required.
pub fn calibration_dance(
    robot: &mut Robot,
    tracker: &mut Tracker,
    phantom: &Phantom,
    start: &RigidTransform,
    step_mm: f64,
    grid: (u32, u32, u32),
) -> Result<Correspondences, SimError> {
    if !(step_mm > 0.0 && step_mm.is_finite()) {
        return Err(SimError::BadStep(step_mm));
    }
    if start.from_frame() != FrameTag::Tool || start.to_frame() != FrameTag::Base {
        return Err(GeometryError::WrongFrames {
            expected_from: FrameTag::Tool,
            expected_to: FrameTag::Base,
            got_from: start.from_frame(),
            got_to: start.to_frame(),
        }
        .into());
    }
    let mut p = Vec::new();
    let mut q = Vec::new();
    for ix in 0..grid.0 {
        for iy in 0..grid.1 {
            for iz in 0..grid.2 {
                let offset = Vector3::new(
                    step_mm * f64::from(ix),
                    step_mm * f64::from(iy),
                    step_mm * f64::from(iz),
                );
                let command = RigidTransform::translation_only(
                    offset,
                    FrameTag::Base,
                    FrameTag::Base,
                )
                .compose(start)?;
                let commanded_ball = command.apply(&phantom.tool_marker);
                let achieved = robot.move_to(&command)?;
                let true_ball_base = achieved.apply(&phantom.tool_marker);
                let true_ball_cam = phantom.cam_from_base.apply(&true_ball_base);
                if let Some(measured) = tracker.measure(&true_ball_cam) {
                    p.push(commanded_ball);
                    q.push(measured);
                }
            }
        }
    }
    if p.len() < 4 {
        return Err(SimError::InsufficientPairs {
            visible: p.len(),
            needed: 4,
        });
    }
    Ok(Correspondences::new(p, q, FrameTag::Base, FrameTag::Cam)?)
}

/// Synthesizes the CT-side marker cloud: uniform samples on each ball
/// surface of `body`, mapped into the image frame by `pic_pose`
/// (body frame → Pic). Sampling is seeded and ball-ordered, so the cloud is
/// reproducible point-for-point.
pub fn synth_ct_markers(
    phantom: &Phantom,
    body_name: &str,
    points_per_ball: usize,
    pic_pose: &RigidTransform,
    seed: u64,
) -> Result<PointCloud, SimError> {
    let body = phantom.body(body_name).ok_or_else(|| SimError::UnknownBody {
        name: body_name.to_string(),
    })?;
    if points_per_ball < 20 {
        return Err(SimError::BadSampleCount {
            got: points_per_ball,
        });
    }
    if pic_pose.from_frame() != body.frame || pic_pose.to_frame() != FrameTag::Pic {
        return Err(GeometryError::WrongFrames {
            expected_from: body.frame,
            expected_to: FrameTag::Pic,
            got_from: pic_pose.from_frame(),
            got_to: pic_pose.to_frame(),
        }
        .into());
    }
    let mut rng = rng_for(seed);
    let mut points = Vec::with_capacity(body.ball_centers.len() * points_per_ball);
    for center in &body.ball_centers {
        for _ in 0..points_per_ball {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let surface = Point3::new(
                center.x + body.ball_radius_mm * dir[0],
                center.y + body.ball_radius_mm * dir[1],
                center.z + body.ball_radius_mm * dir[2],
            );
            points.push(pic_pose.apply(&surface));
        }
    }
    Ok(PointCloud::new(points, FrameTag::Pic)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{kabsch, register_filtered, DEFAULT_MAX_ROUNDS};
    use approx::assert_abs_diff_eq;

    fn wide_fov() -> Aabb {
        Aabb {
            min: Point3::new(-5000.0, -5000.0, -5000.0),
            max: Point3::new(5000.0, 5000.0, 5000.0),
        }
    }

    fn tracker(sigma: f64, seed: u64) -> Tracker {
        Tracker::new(TrackerModel {
            noise_sigma_mm: sigma,
            fov: wide_fov(),
            seed,
        })
        .unwrap()
    }

    fn dance_start() -> RigidTransform {
        RigidTransform::translation_only(
            Vector3::new(300.0, -50.0, 400.0),
            FrameTag::Tool,
            FrameTag::Base,
        )
    }

    #[test]
    fn zero_noise_tracker_is_exact_and_fov_is_a_signal() {
        let mut t = Tracker::new(TrackerModel {
            noise_sigma_mm: 0.0,
            fov: Aabb {
                min: Point3::new(-10.0, -10.0, -10.0),
                max: Point3::new(10.0, 10.0, 10.0),
            },
            seed: 1,
        })
        .unwrap();
        let inside = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(t.measure(&inside), Some(inside));
        assert_eq!(t.measure(&Point3::new(0.0, 0.0, 11.0)), None);
        // Boundary is inclusive.
        assert_eq!(
            t.measure(&Point3::new(10.0, 10.0, 10.0)),
            Some(Point3::new(10.0, 10.0, 10.0))
        );
    }

    #[test]
    fn tracker_noise_has_configured_scale() {
        let mut t = tracker(0.5, 7);
        let origin = Point3::new(0.0, 0.0, 0.0);
        let n = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let m = t.measure(&origin).unwrap();
            for v in [m.x, m.y, m.z] {
                sum += v;
                sum_sq += v * v;
            }
        }
        let mean = sum / (3 * n) as f64;
        let sd = (sum_sq / (3 * n) as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((sd - 0.5).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn tracker_replays_identically_for_same_seed() {
        let p = Point3::new(5.0, 6.0, 7.0);
        let mut a = tracker(0.3, 99);
        let mut b = tracker(0.3, 99);
        for _ in 0..100 {
            assert_eq!(a.measure(&p), b.measure(&p));
        }
    }

    #[test]
    fn invalid_device_configs_are_rejected() {
        assert!(matches!(
            Tracker::new(TrackerModel {
                noise_sigma_mm: -0.1,
                fov: wide_fov(),
                seed: 0
            }),
            Err(SimError::BadSigma(_))
        ));
        assert!(matches!(
            Tracker::new(TrackerModel {
                noise_sigma_mm: 0.1,
                fov: Aabb {
                    min: Point3::new(1.0, 0.0, 0.0),
                    max: Point3::new(-1.0, 1.0, 1.0)
                },
                seed: 0
            }),
            Err(SimError::BadFov)
        ));
        let mut bad = RobotModel::ideal(0);
        bad.jitter_sigma_rot_deg = f64::INFINITY;
        assert!(matches!(Robot::new(bad), Err(SimError::BadJitter(_))));
        let mut bad_bias = RobotModel::ideal(0);
        bad_bias.pose_bias = RigidTransform::identity(FrameTag::Base, FrameTag::Base);
        assert!(matches!(
            Robot::new(bad_bias),
            Err(SimError::Geometry(GeometryError::WrongFrames { .. }))
        ));
    }

    #[test]
    fn ideal_robot_reaches_command_exactly() {
        let mut robot = Robot::new(RobotModel::ideal(3)).unwrap();
        let command = RigidTransform::rot_y_deg(30.0, FrameTag::Tool, FrameTag::Base);
        let achieved = robot.move_to(&command).unwrap();
        assert_abs_diff_eq!(
            (achieved.rotation() - command.rotation()).abs().max(),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(achieved.translation().norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn translation_bias_offsets_along_tool_axis() {
        let mut model = RobotModel::ideal(4);
        model.pose_bias = RigidTransform::translation_only(
            Vector3::new(1.0, 0.0, 0.0),
            FrameTag::Tool,
            FrameTag::Tool,
        );
        let mut robot = Robot::new(model).unwrap();
        // Tool rotated 90° about z: tool x points along base y.
        let command = RigidTransform::rot_z_deg(90.0, FrameTag::Tool, FrameTag::Base);
        let achieved = robot.move_to(&command).unwrap();
        let origin_shift = achieved.apply(&Point3::new(0.0, 0.0, 0.0));
        assert_abs_diff_eq!(origin_shift.x, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(origin_shift.y, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(origin_shift.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn orient_to_applies_additive_bias() {
        let mut model = RobotModel::ideal(5);
        model.angle_bias_deg = (1.79, 0.99);
        let mut robot = Robot::new(model).unwrap();
        let cmd = crate::geometry::AnglePair {
            abduction_deg: 40.0,
            anteversion_deg: 15.0,
        };
        let achieved = robot.orient_to(&cmd);
        assert_eq!(achieved.abduction_deg, 40.0 + 1.79);
        assert_eq!(achieved.anteversion_deg, 15.0 + 0.99);
    }

    #[test]
    fn reference_phantom_validates() {
        Phantom::reference().validate().unwrap();
    }

    #[test]
    fn degenerate_marker_bodies_rejected() {
        let mut phantom = Phantom::reference();
        phantom.bodies[0].ball_centers = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(10.0, 0.0, 0.0),
            Point3::new(20.0, 0.0, 0.0),
        ];
        assert!(matches!(
            phantom.validate(),
            Err(SimError::BadMarkerBody { .. })
        ));
    }

    #[test]
    fn noiseless_dance_recovers_ground_truth() {
        let phantom = Phantom::reference();
        let mut robot = Robot::new(RobotModel::ideal(10)).unwrap();
        let mut t = tracker(0.0, 11);
        let pairs =
            calibration_dance(&mut robot, &mut t, &phantom, &dance_start(), 20.0, (3, 3, 3))
                .unwrap();
        assert_eq!(pairs.len(), 27);
        let fit = kabsch(&pairs).unwrap();
        let dr = (fit.rotation() - phantom.cam_from_base.rotation()).abs().max();
        let dt = (fit.translation() - phantom.cam_from_base.translation()).norm();
        assert!(dr < 1e-9 && dt < 1e-9, "dr={dr:e} dt={dt:e}");
    }

    #[test]
    fn noisy_dance_still_registers_tightly() {
        let phantom = Phantom::reference();
        let mut robot = Robot::new(RobotModel::ideal(12)).unwrap();
        let mut t = tracker(0.2, 13);
        let pairs =
            calibration_dance(&mut robot, &mut t, &phantom, &dance_start(), 20.0, (3, 3, 3))
                .unwrap();
        let result = register_filtered(&pairs, 2.0, DEFAULT_MAX_ROUNDS).unwrap();
        assert!(result.rms_mm < 0.5, "rms {}", result.rms_mm);
        // Judge the fit where it is used: mapping error across the dance
        // volume, not at the distant frame origin where rotation noise is
        // amplified by the lever arm.
        for p in pairs.p() {
            let err = result
                .transform
                .apply(p)
                .dist(&phantom.cam_from_base.apply(p));
            assert!(err < 0.5, "mapped-point error {err} mm");
        }
    }

    #[test]
    fn dance_skips_out_of_view_positions() {
        let phantom = Phantom::reference();
        // The dance spans 40 mm in base x/y/z from the start pose; clip the
        // fov so only part of the grid is visible.
        let start_ball_cam = phantom
            .cam_from_base
            .apply(&dance_start().apply(&phantom.tool_marker));
        let fov = Aabb {
            min: Point3::new(start_ball_cam.x - 5.0, -5000.0, -5000.0),
            max: Point3::new(start_ball_cam.x + 25.0, 5000.0, 5000.0),
        };
        let mut robot = Robot::new(RobotModel::ideal(14)).unwrap();
        let mut t = Tracker::new(TrackerModel {
            noise_sigma_mm: 0.0,
            fov,
            seed: 15,
        })
        .unwrap();
        let pairs =
            calibration_dance(&mut robot, &mut t, &phantom, &dance_start(), 20.0, (3, 3, 3))
                .unwrap();
        assert!(pairs.len() < 27, "expected clipped grid, got all 27");
        assert!(pairs.len() >= 4);
    }

    #[test]
    fn single_point_dance_is_insufficient() {
        let phantom = Phantom::reference();
        let mut robot = Robot::new(RobotModel::ideal(16)).unwrap();
        let mut t = tracker(0.0, 17);
        assert!(matches!(
            calibration_dance(&mut robot, &mut t, &phantom, &dance_start(), 20.0, (1, 1, 1)),
            Err(SimError::InsufficientPairs {
                visible: 1,
                needed: 4
            })
        ));
    }

    #[test]
    fn dance_replays_identically() {
        let phantom = Phantom::reference();
        let run = || {
            let mut robot = Robot::new(RobotModel {
                jitter_sigma_trans_mm: 0.3,
                jitter_sigma_rot_deg: 0.05,
                ..RobotModel::ideal(18)
            })
            .unwrap();
            let mut t = tracker(0.25, 19);
            calibration_dance(&mut robot, &mut t, &phantom, &dance_start(), 20.0, (3, 3, 3))
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.p(), b.p());
        assert_eq!(a.q(), b.q());
    }

    #[test]
    fn synthetic_markers_sit_on_their_spheres() {
        let phantom = Phantom::reference();
        let pic_pose = RigidTransform::rot_z_deg(40.0, FrameTag::Patient, FrameTag::Pic);
        let cloud = synth_ct_markers(&phantom, "hip", 200, &pic_pose, 77).unwrap();
        assert_eq!(cloud.len(), 4 * 200);
        assert_eq!(cloud.frame, FrameTag::Pic);
        let body = phantom.body("hip").unwrap();
        for (b, center) in body.ball_centers.iter().enumerate() {
            let c = pic_pose.apply(center);
            for i in 0..200 {
                let p = &cloud.points[b * 200 + i];
                assert_abs_diff_eq!(p.dist(&c), body.ball_radius_mm, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn synth_rejects_unknown_body_and_small_counts() {
        let phantom = Phantom::reference();
        let pic_pose = RigidTransform::identity(FrameTag::Patient, FrameTag::Pic);
        assert!(matches!(
            synth_ct_markers(&phantom, "femur", 50, &pic_pose, 0),
            Err(SimError::UnknownBody { .. })
        ));
        assert!(matches!(
            synth_ct_markers(&phantom, "hip", 5, &pic_pose, 0),
            Err(SimError::BadSampleCount { got: 5 })
        ));
        let wrong_frame = RigidTransform::identity(FrameTag::Tool, FrameTag::Pic);
        assert!(matches!(
            synth_ct_markers(&phantom, "hip", 50, &wrong_frame, 0),
            Err(SimError::Geometry(GeometryError::WrongFrames { .. }))
        ));
    }
}
