//! Simulation core for an optically guided hip-replacement robot.
//!
//! The crate models the computational pipeline of a surgical robot that grinds
//! the femoral head under optical tracking: hand-eye calibration between the
//! robot arm and the tracker, registration of a CT image into tracker space,
//! feedback-driven alignment of the grinding tool, intraoperative probe
//! measurements (neck length, leg length) and a force-supervised grinding
//! controller. Simulated hardware (tracker, robot arm, measurement phantom)
//! stands in for the real devices so every pipeline can be exercised
//! end-to-end with known ground truth.
//!
//! # Conventions
//!
//! * Lengths are millimetres and angles are degrees at every public boundary;
//!   trigonometry is done in radians internally.
//! * Transforms use the column-vector convention: [`RigidTransform`] maps
//!   points expressed in its `from` frame into its `to` frame via
//!   `R * p + t`. `a.compose(&b)` applies `b` first, then `a`.
//! * Every transform carries [`FrameTag`]s which are checked at runtime;
//!   chaining mismatched frames is a hard error, never a silent fix-up.
//! * All randomness flows through named, seeded ChaCha streams (see [`seed`]);
//!   the same configuration always reproduces the same bytes in every report.
//!
//! # Module map
//!
//! * [`geometry`] — points, frame-tagged rigid transforms, the
//!   abduction/anteversion angle parametrization.
//! * [`registration`] — SVD point-set registration with iterative outlier
//!   rejection, and the image-to-base transform chain.
//! * [`pointcloud`] — k-d tree, Euclidean clustering, sphere/plane fitting,
//!   marker correspondence matching, XYZ file I/O.
//! * [`sim`] — seeded tracker / robot / phantom models, the calibration dance,
//!   synthetic CT marker clouds.
//! * [`nav`] — image-to-tracker registration, patient-frame poses, feedback
//!   alignment, neck-length and leg-length measurement.
//! * [`effector`] — the grinding state machine with contact detection and the
//!   30 N emergency stop, plus pressure-profile CSV I/O.
//! * [`scenario`] — JSON-configured experiment scenarios, the repeat runner
//!   and CSV / text report emission.

pub mod effector;
pub mod geometry;
pub mod nav;
pub mod par;
pub mod pointcloud;
pub mod registration;
pub mod scenario;
pub mod seed;
pub mod sim;

pub use geometry::{AnglePair, FrameTag, Point3, RigidTransform, UnitVec3};
pub use registration::{Correspondences, RegistrationResult};
