//! Scenario files: JSON descriptions of which experiments to run, with what
//! hardware error models, how many repeats, and which statistical bounds the
//! summary must satisfy.
//!
//! Unknown keys are rejected everywhere — a typo in a scenario file should
//! fail loudly at load time, not silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::geometry::Point3;
use crate::sim::{Aabb, Phantom, TrackerModel};

use super::ScenarioError;

/// Top-level scenario description.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scenario name; also the stem of the emitted report files.
    pub name: String,
    /// Master seed; every device stream in every repeat derives from it.
    pub seed: u64,
    /// Number of independent repeats per experiment.
    #[serde(default = "one")]
    pub repeats: u32,
    pub tests: Vec<TestConfig>,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub phantom: PhantomConfig,
    /// Statistical acceptance bounds checked against the summary.
    #[serde(default)]
    pub bounds: Vec<BoundSpec>,
    /// Directory the scenario file was loaded from; profile paths resolve
    /// against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn one() -> u32 {
    1
}

impl ScenarioConfig {
    /// Loads and validates a scenario file.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut config: ScenarioConfig =
            serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        config.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        config.validate()?;
        Ok(config)
    }

    /// Structural checks that do not require running anything.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(bad(format!(
                "scenario name {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.name
            )));
        }
        if self.repeats == 0 {
            return Err(bad("repeats must be at least 1".to_string()));
        }
        if self.tests.is_empty() {
            return Err(bad("a scenario needs at least one test".to_string()));
        }
        let mut seen = Vec::new();
        for test in &self.tests {
            let id = test.id();
            if seen.contains(&id) {
                return Err(bad(format!("duplicate test {id:?}")));
            }
            seen.push(id);
            test.validate()?;
        }
        self.tracker.validate()?;
        self.robot.validate()?;
        self.phantom.validate()?;
        for bound in &self.bounds {
            bound.validate()?;
            if !seen.contains(&bound.test.as_str()) {
                return Err(bad(format!(
                    "bound references test {:?} which is not configured",
                    bound.test
                )));
            }
        }
        Ok(())
    }
}

fn bad(msg: String) -> ScenarioError {
    ScenarioError::Invalid(msg)
}

/// One experiment inside a scenario, selected by its `id`.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum TestConfig {
    /// Hand-eye calibration plus positioning-accuracy validation.
    Test1(PositioningParams),
    /// Closed-loop cup-axis alignment.
    Test2(AlignmentParams),
    /// Grinding safety controller over randomized force profiles.
    Test3(SafetyParams),
    /// Probe-based neck-length measurement and head selection.
    Test4Neck(NeckParams),
    /// Probe-based leg-length measurement under planted shifts.
    Test4Legs(LegParams),
}

impl TestConfig {
    pub fn id(&self) -> &'static str {
        match self {
            TestConfig::Test1(_) => "test1",
            TestConfig::Test2(_) => "test2",
            TestConfig::Test3(_) => "test3",
            TestConfig::Test4Neck(_) => "test4_neck",
            TestConfig::Test4Legs(_) => "test4_legs",
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        match self {
            TestConfig::Test1(p) => p.validate(),
            TestConfig::Test2(p) => p.validate(),
            TestConfig::Test3(p) => p.validate(),
            TestConfig::Test4Neck(p) => p.validate(),
            TestConfig::Test4Legs(p) => p.validate(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PositioningParams {
    /// Calibration dance grid (x, y, z counts).
    pub grid: [u32; 3],
    /// Dance step along each base axis, mm.
    pub step_mm: f64,
    /// Commanded tool position the dance starts from, base frame.
    pub start_mm: [f64; 3],
    /// Extra commanded positions where positioning error is evaluated.
    pub validation_points: u32,
    /// Outlier-rejection threshold for the calibration fit, mm.
    pub beta_mm: f64,
    pub max_rounds: u32,
}

impl Default for PositioningParams {
    fn default() -> Self {
        Self {
            grid: [3, 3, 3],
            step_mm: 20.0,
            start_mm: [300.0, -50.0, 400.0],
            validation_points: 10,
            beta_mm: crate::registration::DEFAULT_BETA_MM,
            max_rounds: crate::registration::DEFAULT_MAX_ROUNDS,
        }
    }
}

impl PositioningParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.grid.iter().any(|&g| g == 0) {
            return Err(bad("test1: grid counts must all be at least 1".to_string()));
        }
        if self.grid.iter().map(|&g| g as u64).product::<u64>() < 4 {
            return Err(bad(
                "test1: the dance grid must contain at least 4 poses".to_string(),
            ));
        }
        if !(self.step_mm > 0.0 && self.step_mm.is_finite()) {
            return Err(bad(format!("test1: step_mm must be positive, got {}", self.step_mm)));
        }
        if !self.start_mm.iter().all(|v| v.is_finite()) {
            return Err(bad("test1: start_mm must be finite".to_string()));
        }
        if self.validation_points == 0 {
            return Err(bad("test1: validation_points must be at least 1".to_string()));
        }
        if !(self.beta_mm > 0.0 && self.beta_mm.is_finite()) {
            return Err(bad(format!("test1: beta_mm must be positive, got {}", self.beta_mm)));
        }
        if self.max_rounds == 0 {
            return Err(bad("test1: max_rounds must be at least 1".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignmentParams {
    /// Target (abduction, anteversion), degrees.
    pub desired_deg: [f64; 2],
    pub tol_deg: f64,
    pub max_iters: usize,
    /// Tool axis origin during alignment, patient frame, mm.
    pub tool_position_mm: [f64; 3],
    /// Lever arm between the two tracked axis points, mm.
    pub probe_len_mm: f64,
}

impl Default for AlignmentParams {
    fn default() -> Self {
        Self {
            desired_deg: [40.0, 15.0],
            tol_deg: 0.5,
            max_iters: 10,
            tool_position_mm: [30.0, -20.0, 60.0],
            probe_len_mm: 100.0,
        }
    }
}

impl AlignmentParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        let d = crate::geometry::AnglePair {
            abduction_deg: self.desired_deg[0],
            anteversion_deg: self.desired_deg[1],
        };
        if !d.in_domain() {
            return Err(bad(format!(
                "test2: desired_deg {:?} outside abduction [0,90] / anteversion (-90,90)",
                self.desired_deg
            )));
        }
        if !(self.tol_deg > 0.0 && self.tol_deg.is_finite()) {
            return Err(bad(format!("test2: tol_deg must be positive, got {}", self.tol_deg)));
        }
        if self.max_iters == 0 {
            return Err(bad("test2: max_iters must be at least 1".to_string()));
        }
        if !self.tool_position_mm.iter().all(|v| v.is_finite()) {
            return Err(bad("test2: tool_position_mm must be finite".to_string()));
        }
        if !(self.probe_len_mm > 0.0 && self.probe_len_mm.is_finite()) {
            return Err(bad(format!(
                "test2: probe_len_mm must be positive, got {}",
                self.probe_len_mm
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SafetyParams {
    /// Randomized profiles synthesized per repeat.
    pub profiles: u32,
    /// Samples per synthesized profile.
    pub ticks: u32,
    /// Tick at which grinding contact begins, drawn uniformly.
    pub contact_tick_range: [u64; 2],
    /// Post-contact force slope, N per tick, drawn uniformly.
    pub ramp_n_per_tick_range: [f64; 2],
    /// Gaussian force noise, N.
    pub noise_sigma_n: f64,
    /// Probability that a profile contains a hard-inclusion force spike.
    pub spike_probability: f64,
    /// Spike magnitude, N, drawn uniformly.
    pub spike_force_range_n: [f64; 2],
    /// Extra recorded profiles (CSV, `tick,force_N`), resolved against the
    /// scenario file's directory.
    pub profile_files: Vec<String>,
    pub contact_threshold_n: f64,
    pub pressure_threshold_n: f64,
    pub feed_per_tick_mm: f64,
    pub target_depth_mm: f64,
    pub tick_period_ms: u32,
}

impl Default for SafetyParams {
    fn default() -> Self {
        let c = crate::effector::ControllerConfig::default();
        Self {
            profiles: 1000,
            ticks: 200,
            contact_tick_range: [5, 60],
            ramp_n_per_tick_range: [0.05, 0.6],
            noise_sigma_n: 0.05,
            spike_probability: 0.3,
            spike_force_range_n: [30.0, 80.0],
            profile_files: Vec::new(),
            contact_threshold_n: c.contact_threshold_n,
            pressure_threshold_n: c.pressure_threshold_n,
            feed_per_tick_mm: c.feed_per_tick_mm,
            target_depth_mm: c.target_depth_mm,
            tick_period_ms: c.tick_period_ms,
        }
    }
}

impl SafetyParams {
    pub fn controller_config(&self) -> crate::effector::ControllerConfig {
        crate::effector::ControllerConfig {
            contact_threshold_n: self.contact_threshold_n,
            pressure_threshold_n: self.pressure_threshold_n,
            feed_per_tick_mm: self.feed_per_tick_mm,
            target_depth_mm: self.target_depth_mm,
            tick_period_ms: self.tick_period_ms,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.profiles == 0 && self.profile_files.is_empty() {
            return Err(bad("test3: nothing to run (profiles = 0 and no profile_files)".to_string()));
        }
        if self.profiles > 0 && self.ticks == 0 {
            return Err(bad("test3: ticks must be at least 1".to_string()));
        }
        if self.contact_tick_range[0] > self.contact_tick_range[1] {
            return Err(bad("test3: contact_tick_range must be lo <= hi".to_string()));
        }
        for (name, r) in [
            ("ramp_n_per_tick_range", self.ramp_n_per_tick_range),
            ("spike_force_range_n", self.spike_force_range_n),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= 0.0) {
                return Err(bad(format!("test3: {name} must be finite, non-negative, lo <= hi")));
            }
        }
        if !(self.noise_sigma_n >= 0.0 && self.noise_sigma_n.is_finite()) {
            return Err(bad(format!(
                "test3: noise_sigma_n must be non-negative, got {}",
                self.noise_sigma_n
            )));
        }
        if !(0.0..=1.0).contains(&self.spike_probability) {
            return Err(bad(format!(
                "test3: spike_probability must lie in [0,1], got {}",
                self.spike_probability
            )));
        }
        self.controller_config().validate().map_err(|e| bad(format!("test3: {e}")))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeckParams {
    /// Trial head mounted during the measurement: "red", "blue" or "white".
    pub head: String,
    /// Desired neck length the selector aims for, mm; defaults to the value
    /// implied by the phantom's true geometry (zero planned change).
    pub target_neck_mm: Option<f64>,
}

impl Default for NeckParams {
    fn default() -> Self {
        Self {
            head: "red".to_string(),
            target_neck_mm: None,
        }
    }
}

impl NeckParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        if !matches!(self.head.as_str(), "red" | "blue" | "white") {
            return Err(bad(format!(
                "test4_neck: head must be red, blue or white, got {:?}",
                self.head
            )));
        }
        if let Some(t) = self.target_neck_mm {
            if !t.is_finite() {
                return Err(bad("test4_neck: target_neck_mm must be finite".to_string()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LegParams {
    /// Planted left-leg lengthenings, mm; each becomes its own metric group.
    pub shifts_mm: Vec<f64>,
}

impl Default for LegParams {
    fn default() -> Self {
        Self {
            shifts_mm: vec![0.0, 5.0, 10.0],
        }
    }
}

impl LegParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.shifts_mm.is_empty() {
            return Err(bad("test4_legs: shifts_mm must not be empty".to_string()));
        }
        if !self.shifts_mm.iter().all(|s| s.is_finite()) {
            return Err(bad("test4_legs: shifts_mm must be finite".to_string()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub noise_sigma_mm: f64,
    pub fov_min_mm: [f64; 3],
    pub fov_max_mm: [f64; 3],
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            noise_sigma_mm: 0.0,
            fov_min_mm: [-5000.0, -5000.0, -5000.0],
            fov_max_mm: [5000.0, 5000.0, 5000.0],
        }
    }
}

impl TrackerConfig {
    pub fn model(&self, seed: u64) -> TrackerModel {
        TrackerModel {
            noise_sigma_mm: self.noise_sigma_mm,
            fov: Aabb {
                min: Point3::new(self.fov_min_mm[0], self.fov_min_mm[1], self.fov_min_mm[2]),
                max: Point3::new(self.fov_max_mm[0], self.fov_max_mm[1], self.fov_max_mm[2]),
            },
            seed,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        // Full checks live in Tracker::new; catch the config shape here.
        crate::sim::Tracker::new(self.model(0))
            .map(|_| ())
            .map_err(|e| bad(format!("tracker: {e}")))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobotConfig {
    /// Constant tool-frame orientation bias, applied as
    /// `Rx(bias_rot_deg[0]) · Ry(bias_rot_deg[1]) · Rz(bias_rot_deg[2])`.
    pub bias_rot_deg: [f64; 3],
    /// Constant tool-frame translation bias, mm.
    pub bias_t_mm: [f64; 3],
    /// Constant (abduction, anteversion) bias of the orientation stage, deg.
    pub angle_bias_deg: [f64; 2],
    pub jitter_sigma_trans_mm: f64,
    pub jitter_sigma_rot_deg: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            bias_rot_deg: [0.0; 3],
            bias_t_mm: [0.0; 3],
            angle_bias_deg: [0.0; 2],
            jitter_sigma_trans_mm: 0.0,
            jitter_sigma_rot_deg: 0.0,
        }
    }
}

impl RobotConfig {
    pub fn model(&self, seed: u64) -> Result<crate::sim::RobotModel, ScenarioError> {
        use crate::geometry::{FrameTag, RigidTransform};
        use nalgebra::Vector3;
        let t = FrameTag::Tool;
        let rot = RigidTransform::rot_x_deg(self.bias_rot_deg[0], t, t)
            .compose(&RigidTransform::rot_y_deg(self.bias_rot_deg[1], t, t))
            .and_then(|r| r.compose(&RigidTransform::rot_z_deg(self.bias_rot_deg[2], t, t)))
            .map_err(|e| bad(format!("robot: {e}")))?;
        let pose_bias = RigidTransform::new(
            *rot.rotation(),
            Vector3::new(self.bias_t_mm[0], self.bias_t_mm[1], self.bias_t_mm[2]),
            t,
            t,
        )
        .map_err(|e| bad(format!("robot: {e}")))?;
        Ok(crate::sim::RobotModel {
            pose_bias,
            angle_bias_deg: (self.angle_bias_deg[0], self.angle_bias_deg[1]),
            jitter_sigma_trans_mm: self.jitter_sigma_trans_mm,
            jitter_sigma_rot_deg: self.jitter_sigma_rot_deg,
            seed,
        })
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let model = self.model(0)?;
        crate::sim::Robot::new(model)
            .map(|_| ())
            .map_err(|e| bad(format!("robot: {e}")))
    }
}

/// Optional overrides of the reference phantom's landmark geometry.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub ankle_left_z_mm: Option<f64>,
    pub ankle_right_z_mm: Option<f64>,
    pub head_apex_z_mm: Option<f64>,
}

impl PhantomConfig {
    pub fn build(&self) -> Phantom {
        let mut phantom = Phantom::reference();
        if let Some(z) = self.ankle_left_z_mm {
            phantom.landmarks.ankle_left.z = z;
        }
        if let Some(z) = self.ankle_right_z_mm {
            phantom.landmarks.ankle_right.z = z;
        }
        if let Some(z) = self.head_apex_z_mm {
            phantom.landmarks.head_apex.z = z;
        }
        phantom
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        for v in [self.ankle_left_z_mm, self.ankle_right_z_mm, self.head_apex_z_mm]
            .into_iter()
            .flatten()
        {
            if !v.is_finite() {
                return Err(bad("phantom: overrides must be finite".to_string()));
            }
        }
        self.build().validate().map_err(|e| bad(format!("phantom: {e}")))
    }
}

/// Which summary statistic a bound constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stat {
    Mean,
    Sd,
    Min,
    Max,
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stat::Mean => "mean",
            Stat::Sd => "sd",
            Stat::Min => "min",
            Stat::Max => "max",
        })
    }
}

/// One statistical acceptance bound on a summary entry.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundSpec {
    pub test: String,
    pub metric: String,
    pub stat: Stat,
    #[serde(default)]
    pub at_least: Option<f64>,
    #[serde(default)]
    pub at_most: Option<f64>,
}

impl BoundSpec {
    fn validate(&self) -> Result<(), ScenarioError> {
        match (self.at_least, self.at_most) {
            (None, None) => Err(bad(format!(
                "bound on {}/{} has neither at_least nor at_most",
                self.test, self.metric
            ))),
            (Some(lo), Some(hi)) if lo > hi => Err(bad(format!(
                "bound on {}/{}: at_least {lo} exceeds at_most {hi}",
                self.test, self.metric
            ))),
            _ => {
                for v in [self.at_least, self.at_most].into_iter().flatten() {
                    if !v.is_finite() {
                        return Err(bad(format!(
                            "bound on {}/{} has a non-finite limit",
                            self.test, self.metric
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}
