//! Scenario execution: load a JSON description of the bench experiments,
//! run the configured pipelines repeat-by-repeat against simulated
//! hardware, and reduce the results to raw/summary CSV plus a pass/fail
//! report.
//!
//! Repeats are independent by construction — every device stream inside
//! repeat `r` derives from `indexed_seed(scenario seed, r)` — so the
//! repeat loop runs through [`crate::par::map_indexed`] and produces
//! byte-identical reports whether it executed on one thread or many.

mod config;
mod report;

pub use config::{
    AlignmentParams, BoundSpec, LegParams, NeckParams, PhantomConfig, PositioningParams,
    RobotConfig, SafetyParams, ScenarioConfig, Stat, TestConfig, TrackerConfig,
};
pub use report::{check_bounds, summarize, CheckResult, RawRow, Report, SummaryRow};

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::effector::{run_profile, read_profile_csv, EffectorError, GrindState, PressureSample};
use crate::geometry::{AnglePair, FrameTag, GeometryError, Point3, RigidTransform};
use crate::nav::{
    default_catalog, feedback_align, measure_leg_length, measure_neck_length, probe_point,
    select_head, AlignmentSetup, HeadColor, NavError,
};
use crate::pointcloud::{fit_plane_3pts, point_plane_distance};
use crate::registration::{register_filtered, RegistrationError};
use crate::seed::{child_seed, indexed_seed, rng_for};
use crate::sim::{calibration_dance, Robot, SimError, Tracker};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid scenario JSON: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nav(#[from] NavError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Effector(#[from] EffectorError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Cloud(#[from] crate::pointcloud::CloudError),
}

/// Metric values produced by one repeat of one test, in emission order.
type Metrics = Vec<(String, f64)>;

/// Runs every configured test for every repeat and reduces the results.
///
/// The returned [`Report`] carries raw rows, summary statistics and the
/// bound checks; writing files is the caller's decision
/// ([`Report::write_files`]).
pub fn run_scenario(config: &ScenarioConfig) -> Result<Report, ScenarioError> {
    config.validate()?;
    let mut raw = Vec::new();
    for test in &config.tests {
        let per_repeat = crate::par::map_indexed(config.repeats as usize, |r| {
            run_repeat(config, test, indexed_seed(config.seed, r as u64))
        });
        for (repeat, result) in per_repeat.into_iter().enumerate() {
            for (metric, value) in result? {
                raw.push(RawRow {
                    repeat: repeat as u32,
                    test: test.id().to_string(),
                    metric,
                    value,
                });
            }
        }
    }
    let summary = summarize(&raw);
    let checks = check_bounds(&config.bounds, &summary)?;
    Ok(Report {
        scenario: config.name.clone(),
        seed: config.seed,
        repeats: config.repeats,
        raw,
        summary,
        checks,
    })
}

fn run_repeat(
    config: &ScenarioConfig,
    test: &TestConfig,
    repeat_seed: u64,
) -> Result<Metrics, ScenarioError> {
    match test {
        TestConfig::Test1(p) => run_positioning(config, p, repeat_seed),
        TestConfig::Test2(p) => run_alignment(config, p, repeat_seed),
        TestConfig::Test3(p) => run_safety(config, p, repeat_seed),
        TestConfig::Test4Neck(p) => run_neck(config, p, repeat_seed),
        TestConfig::Test4Legs(p) => run_legs(config, p, repeat_seed),
    }
}

/// Hand-eye calibration followed by positioning validation: dance, fit the
/// base-to-camera transform with outlier rejection, then command fresh
/// targets and compare where the navigation stack thinks the tool ball is
/// against where it was commanded to be.
fn run_positioning(
    config: &ScenarioConfig,
    p: &PositioningParams,
    seed: u64,
) -> Result<Metrics, ScenarioError> {
    let phantom = config.phantom.build();
    let mut robot = Robot::new(config.robot.model(child_seed(seed, "test1.robot"))?)?;
    let mut tracker = Tracker::new(config.tracker.model(child_seed(seed, "test1.tracker")))?;
    let start_vec = Vector3::new(p.start_mm[0], p.start_mm[1], p.start_mm[2]);
    let start = RigidTransform::translation_only(start_vec, FrameTag::Tool, FrameTag::Base);

    let pairs = calibration_dance(
        &mut robot,
        &mut tracker,
        &phantom,
        &start,
        p.step_mm,
        (p.grid[0], p.grid[1], p.grid[2]),
    )?;
    let fit = register_filtered(&pairs, p.beta_mm, p.max_rounds)?;
    let cam_to_base = fit.transform.invert();

    let mut rng = rng_for(child_seed(seed, "test1.targets"));
    let span = [
        p.step_mm * f64::from(p.grid[0].saturating_sub(1)),
        p.step_mm * f64::from(p.grid[1].saturating_sub(1)),
        p.step_mm * f64::from(p.grid[2].saturating_sub(1)),
    ];
    let (mut sx, mut sy, mut sz, mut se) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..p.validation_points {
        let offset = Vector3::new(
            rng.random_range(0.0..=span[0]),
            rng.random_range(0.0..=span[1]),
            rng.random_range(0.0..=span[2]),
        );
        let command =
            RigidTransform::translation_only(start_vec + offset, FrameTag::Tool, FrameTag::Base);
        let commanded_ball = command.apply(&phantom.tool_marker);
        let achieved = robot.move_to(&command)?;
        let true_cam = phantom.cam_from_base.apply(&achieved.apply(&phantom.tool_marker));
        let measured = tracker.measure(&true_cam).ok_or_else(|| {
            ScenarioError::Invalid("test1: a validation target left the tracker view".to_string())
        })?;
        let seen_base = cam_to_base.apply(&measured);
        let e = seen_base.vec() - commanded_ball.vec();
        sx += e.x.abs();
        sy += e.y.abs();
        sz += e.z.abs();
        se += e.norm();
    }
    let n = f64::from(p.validation_points);
    Ok(vec![
        ("err_x_mm".to_string(), sx / n),
        ("err_y_mm".to_string(), sy / n),
        ("err_z_mm".to_string(), sz / n),
        ("err_euclid_mm".to_string(), se / n),
        ("cal_rms_mm".to_string(), fit.rms_mm),
        ("cal_retained".to_string(), fit.retained.len() as f64),
    ])
}

/// Closed-loop cup-axis alignment against the tracked phantom.
fn run_alignment(
    config: &ScenarioConfig,
    p: &AlignmentParams,
    seed: u64,
) -> Result<Metrics, ScenarioError> {
    let phantom = config.phantom.build();
    let patient_in_cam = *phantom
        .body_pose_cam("hip")
        .expect("reference phantom always carries the hip body pose");
    let mut robot = Robot::new(config.robot.model(child_seed(seed, "test2.robot"))?)?;
    let mut tracker = Tracker::new(config.tracker.model(child_seed(seed, "test2.tracker")))?;
    let setup = AlignmentSetup {
        patient_in_cam,
        tool_position_patient: Point3::new(
            p.tool_position_mm[0],
            p.tool_position_mm[1],
            p.tool_position_mm[2],
        ),
        axis_probe_len_mm: p.probe_len_mm,
    };
    let desired = AnglePair::new(p.desired_deg[0], p.desired_deg[1])?;
    let trace = feedback_align(
        &mut robot,
        &mut tracker,
        &setup,
        &desired,
        p.tol_deg,
        p.max_iters,
    )?;
    let first = trace.steps.first().expect("max_iters >= 1 guarantees a step");
    let last = trace.steps.last().expect("max_iters >= 1 guarantees a step");
    Ok(vec![
        ("pre_abduction_err_deg".to_string(), first.error_deg.0.abs()),
        ("pre_anteversion_err_deg".to_string(), first.error_deg.1.abs()),
        ("final_abduction_err_deg".to_string(), last.error_deg.0.abs()),
        ("final_anteversion_err_deg".to_string(), last.error_deg.1.abs()),
        ("iterations".to_string(), trace.iterations() as f64),
        ("converged".to_string(), f64::from(u8::from(trace.converged))),
    ])
}

/// Safety controller over randomized (plus optional recorded) force
/// profiles. `oracle_agreement` compares every emergency stop against a
/// linear scan for the first over-threshold sample and should sit at 1.0 —
/// it is an invariant reported as data.
fn run_safety(
    config: &ScenarioConfig,
    p: &SafetyParams,
    seed: u64,
) -> Result<Metrics, ScenarioError> {
    let cc = p.controller_config();
    let profile_seed = child_seed(seed, "test3.profiles");
    let mut total = 0u32;
    let mut emergencies = 0u32;
    let mut completes = 0u32;
    let mut agreements = 0u32;
    let mut false_stops = 0u32;
    let mut stop_ticks: Vec<f64> = Vec::new();

    let mut tally = |profile: &[PressureSample]| -> Result<(), ScenarioError> {
        let log = run_profile(cc, profile)?;
        total += 1;
        // First over-threshold sample among those the controller consumed.
        let oracle = log
            .rows
            .iter()
            .find(|r| r.force_n >= cc.pressure_threshold_n)
            .map(|r| r.tick);
        match log.terminal {
            GrindState::EmergencyStopped => {
                emergencies += 1;
                if let Some(t) = log.stop_tick {
                    stop_ticks.push(t as f64);
                }
                if oracle == log.stop_tick {
                    agreements += 1;
                }
                if oracle.is_none() {
                    false_stops += 1;
                }
            }
            other => {
                if other == GrindState::Complete {
                    completes += 1;
                }
                if oracle.is_none() {
                    agreements += 1;
                }
            }
        }
        Ok(())
    };

    for i in 0..p.profiles {
        let mut rng = rng_for(indexed_seed(profile_seed, u64::from(i)));
        let profile = synth_profile(p, &mut rng);
        tally(&profile)?;
    }
    for file in &p.profile_files {
        let path = config.base_dir.join(file);
        let profile = read_profile_csv(&path)?;
        tally(&profile)?;
    }

    let n = f64::from(total);
    let mut metrics = vec![
        ("emergency_fraction".to_string(), f64::from(emergencies) / n),
        ("complete_fraction".to_string(), f64::from(completes) / n),
        ("oracle_agreement".to_string(), f64::from(agreements) / n),
        ("false_stop_fraction".to_string(), f64::from(false_stops) / n),
    ];
    if !stop_ticks.is_empty() {
        let mean = stop_ticks.iter().sum::<f64>() / stop_ticks.len() as f64;
        metrics.push(("mean_stop_tick".to_string(), mean));
    }
    Ok(metrics)
}

/// One synthetic grinding force profile: quiet approach, a ramp from the
/// contact tick onward, optional hard-inclusion spike, Gaussian noise
/// throughout, clamped at zero.
fn synth_profile(p: &SafetyParams, rng: &mut ChaCha8Rng) -> Vec<PressureSample> {
    let ticks = u64::from(p.ticks);
    let contact = rng.random_range(p.contact_tick_range[0]..=p.contact_tick_range[1]);
    let ramp = rng.random_range(p.ramp_n_per_tick_range[0]..=p.ramp_n_per_tick_range[1]);
    let spike_at = if rng.random_bool(p.spike_probability) && contact + 1 < ticks {
        Some(rng.random_range(contact + 1..ticks))
    } else {
        None
    };
    let spike_force = if spike_at.is_some() {
        rng.random_range(p.spike_force_range_n[0]..=p.spike_force_range_n[1])
    } else {
        0.0
    };
    (0..ticks)
        .map(|t| {
            let noise: f64 = StandardNormal.sample(rng);
            let base = if t < contact {
                0.0
            } else {
                p.contact_threshold_n + ramp * (t - contact) as f64
            };
            let force = if spike_at == Some(t) {
                spike_force
            } else {
                base + p.noise_sigma_n * noise
            };
            PressureSample {
                tick: t,
                force_n: force.max(0.0),
            }
        })
        .collect()
}

/// Probe-based neck-length measurement with the configured trial head, plus
/// the head the selector would hand the surgeon.
fn run_neck(
    config: &ScenarioConfig,
    p: &NeckParams,
    seed: u64,
) -> Result<Metrics, ScenarioError> {
    let phantom = config.phantom.build();
    let landmarks = &phantom.landmarks;
    let patient_in_cam = *phantom
        .body_pose_cam("hip")
        .expect("reference phantom always carries the hip body pose");
    let mut tracker = Tracker::new(config.tracker.model(child_seed(seed, "test4_neck.tracker")))?;

    let catalog = default_catalog();
    let want = match p.head.as_str() {
        "red" => HeadColor::Red,
        "blue" => HeadColor::Blue,
        _ => HeadColor::White,
    };
    let head = *catalog
        .iter()
        .find(|h| h.color == want)
        .expect("catalog covers all three colours");

    // Ground truth straight from the landmark geometry.
    let true_plane = fit_plane_3pts(
        &landmarks.osteotomy[0],
        &landmarks.osteotomy[1],
        &landmarks.osteotomy[2],
    )?;
    let true_e = point_plane_distance(&true_plane, &landmarks.head_apex);
    let target = p.target_neck_mm.unwrap_or(true_e - head.radius_mm);

    let probes = [
        probe_point(&mut tracker, &patient_in_cam, &landmarks.osteotomy[0])?,
        probe_point(&mut tracker, &patient_in_cam, &landmarks.osteotomy[1])?,
        probe_point(&mut tracker, &patient_in_cam, &landmarks.osteotomy[2])?,
    ];
    let apex = probe_point(&mut tracker, &patient_in_cam, &landmarks.head_apex)?;
    let m = measure_neck_length(&probes, &apex, &head)?;

    let chosen = select_head(&catalog, m.apex_distance_mm, target);
    let ideal = select_head(&catalog, true_e, target);
    let head_ok = match (chosen, ideal) {
        (Some(a), Some(b)) => a.color == b.color,
        _ => false,
    };
    Ok(vec![
        ("apex_distance_mm".to_string(), m.apex_distance_mm),
        ("neck_length_mm".to_string(), m.neck_length_mm),
        (
            "apex_abs_err_mm".to_string(),
            (m.apex_distance_mm - true_e).abs(),
        ),
        ("head_ok".to_string(), f64::from(u8::from(head_ok))),
        ("implausible".to_string(), f64::from(u8::from(m.implausible))),
    ])
}

/// Probe-based leg lengths: the right leg as-is, the left under each
/// configured lengthening, and the signed discrepancy for each.
fn run_legs(config: &ScenarioConfig, p: &LegParams, seed: u64) -> Result<Metrics, ScenarioError> {
    let phantom = config.phantom.build();
    let landmarks = &phantom.landmarks;
    let patient_in_cam = *phantom
        .body_pose_cam("hip")
        .expect("reference phantom always carries the hip body pose");
    let mut tracker = Tracker::new(config.tracker.model(child_seed(seed, "test4_legs.tracker")))?;

    let hip = probe_point(&mut tracker, &patient_in_cam, &landmarks.hip_block)?;
    let right = probe_point(&mut tracker, &patient_in_cam, &landmarks.ankle_right)?;
    let right_len = measure_leg_length(&hip, &right);

    let mut metrics = vec![("right_len_mm".to_string(), right_len)];
    for &shift in &p.shifts_mm {
        // The ankle landmark sits below the hip block (negative z); moving
        // it another `shift` mm down lengthens the leg by exactly `shift`.
        let ankle = Point3::new(
            landmarks.ankle_left.x,
            landmarks.ankle_left.y,
            landmarks.ankle_left.z - shift,
        );
        let probe = probe_point(&mut tracker, &patient_in_cam, &ankle)?;
        let left_len = measure_leg_length(&hip, &probe);
        metrics.push((format!("left_len_mm_shift{shift}"), left_len));
        metrics.push((
            format!("disc_mm_shift{shift}"),
            crate::nav::leg_discrepancy(left_len, right_len),
        ));
    }
    Ok(metrics)
}
