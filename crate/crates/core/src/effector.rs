//! Grinding end-effector controller: contact detection, feed tracking and
//! the hard 30 N emergency stop.
//!
//! The controller is a small state machine fed one pressure sample per
//! tick:
//!
//! ```text
//! Idle --start--> Advancing --force >= contact--> Grinding --depth >= target--> Complete
//!                                                    |
//!                                           force >= pressure threshold
//!                                                    v
//!                                             EmergencyStopped
//!
//! {Complete, EmergencyStopped} --reset--> (Reset) --> Idle
//! ```
//!
//! Within a tick, checks run in safety order: contact promotion first, then
//! the emergency threshold, then completion, then feed. A sample at or above
//! the pressure threshold therefore stops the controller **in the very tick
//! it arrives**, even if that same tick would have been first contact, and
//! the depth never advances on a stopping or completing tick.
//!
//! [`GrindState::Reset`] is the transient acknowledgment between a terminal
//! state and `Idle`; [`Controller::reset`] passes through it atomically, so
//! per-tick logs never contain it.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EffectorError {
    #[error("contact threshold must satisfy 0 < contact < pressure threshold; got contact {contact_n} N, pressure {pressure_n} N")]
    BadThresholds { contact_n: f64, pressure_n: f64 },
    #[error("feed per tick must be positive and finite, got {0} mm")]
    BadFeed(f64),
    #[error("target depth must be positive and finite, got {0} mm")]
    BadTargetDepth(f64),
    #[error("tick period must be positive, got {0} ms")]
    BadTickPeriod(u32),
    #[error("controller not started: samples are only accepted in Advancing or Grinding")]
    NotStarted,
    #[error("start is only legal from Idle, current state is {state}")]
    AlreadyStarted { state: GrindState },
    #[error("controller is in terminal state {state}; reset before feeding more samples")]
    TerminalState { state: GrindState },
    #[error("out-of-order sample: expected tick {expected}, got {got}")]
    OutOfOrderSample { expected: u64, got: u64 },
    #[error("sample force must be finite and non-negative, got {0} N at tick {1}")]
    BadForce(f64, u64),
    #[error("reset is only legal from Complete or EmergencyStopped, current state is {state}")]
    IllegalReset { state: GrindState },
    #[error("{path}:{line}: expected 'tick,force_N', got {content:?}")]
    MalformedCsvLine {
        path: String,
        line: usize,
        content: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Controller phases. See the module docs for the transition diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GrindState {
    Idle,
    Advancing,
    Grinding,
    Complete,
    EmergencyStopped,
    Reset,
}

impl GrindState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            GrindState::Complete | GrindState::EmergencyStopped | GrindState::Reset
        )
    }

    /// Stable lower-snake name used in log files.
    pub fn name(self) -> &'static str {
        match self {
            GrindState::Idle => "idle",
            GrindState::Advancing => "advancing",
            GrindState::Grinding => "grinding",
            GrindState::Complete => "complete",
            GrindState::EmergencyStopped => "emergency_stopped",
            GrindState::Reset => "reset",
        }
    }
}

impl std::fmt::Display for GrindState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Grinding parameters. Thresholds are forces at the tool tip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Force at which advancing is considered to have met bone, N.
    pub contact_threshold_n: f64,
    /// Emergency-stop force, N.
    pub pressure_threshold_n: f64,
    /// Feed advance per tick, mm.
    pub feed_per_tick_mm: f64,
    /// Total feed travel at which grinding is complete, mm.
    pub target_depth_mm: f64,
    /// Sample period, ms (bookkeeping only; the controller is tick-based).
    pub tick_period_ms: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            contact_threshold_n: 0.5,
            pressure_threshold_n: 30.0,
            feed_per_tick_mm: 0.02,
            target_depth_mm: 4.0,
            tick_period_ms: 10,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), EffectorError> {
        if !(self.contact_threshold_n > 0.0
            && self.contact_threshold_n.is_finite()
            && self.pressure_threshold_n.is_finite()
            && self.contact_threshold_n < self.pressure_threshold_n)
        {
            return Err(EffectorError::BadThresholds {
                contact_n: self.contact_threshold_n,
                pressure_n: self.pressure_threshold_n,
            });
        }
        if !(self.feed_per_tick_mm > 0.0 && self.feed_per_tick_mm.is_finite()) {
            return Err(EffectorError::BadFeed(self.feed_per_tick_mm));
        }
        if !(self.target_depth_mm > 0.0 && self.target_depth_mm.is_finite()) {
            return Err(EffectorError::BadTargetDepth(self.target_depth_mm));
        }
        if self.tick_period_ms == 0 {
            return Err(EffectorError::BadTickPeriod(self.tick_period_ms));
        }
        Ok(())
    }
}

/// One force reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureSample {
    pub tick: u64,
    pub force_n: f64,
}

/// One processed tick in a grind log: the state after the tick's checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub tick: u64,
    pub state: GrindState,
    pub depth_mm: f64,
    pub force_n: f64,
}

/// Complete record of one grinding run.
#[derive(Debug, Clone, PartialEq)]
pub struct GrindLog {
    pub rows: Vec<LogRow>,
    /// State when the run ended (not necessarily Complete/EmergencyStopped:
    /// a profile can simply run out of samples mid-grind).
    pub terminal: GrindState,
    /// Tick of the Complete / EmergencyStopped transition, if one happened.
    pub stop_tick: Option<u64>,
}

impl GrindLog {
    /// Writes `tick,state,depth_mm,force_N` rows, six-decimal floats.
    pub fn write_csv(&self, path: &Path) -> Result<(), EffectorError> {
        let display = path.display().to_string();
        let file = std::fs::File::create(path).map_err(|source| EffectorError::Io {
            path: display.clone(),
            source,
        })?;
        let mut w = BufWriter::new(file);
        let mut emit = |line: String| -> Result<(), EffectorError> {
            writeln!(w, "{line}").map_err(|source| EffectorError::Io {
                path: display.clone(),
                source,
            })
        };
        emit("tick,state,depth_mm,force_N".to_string())?;
        for row in &self.rows {
            emit(format!(
                "{},{},{:.6},{:.6}",
                row.tick, row.state, row.depth_mm, row.force_n
            ))?;
        }
        w.flush().map_err(|source| EffectorError::Io {
            path: display,
            source,
        })
    }
}

/// Reads a `tick,force_N` profile CSV. A header line is accepted and
/// skipped; ticks must be contiguous from 0 (checked later by the
/// controller, reported here only as parse-level sanity).
pub fn read_profile_csv(path: &Path) -> Result<Vec<PressureSample>, EffectorError> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| EffectorError::Io {
        path: display.clone(),
        source,
    })?;
    let mut samples = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| EffectorError::Io {
            path: display.clone(),
            source,
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if idx == 0 && trimmed.to_ascii_lowercase().starts_with("tick") {
            continue;
        }
        let mut fields = trimmed.split(',');
        let parsed = (|| {
            let tick: u64 = fields.next()?.trim().parse().ok()?;
            let force: f64 = fields.next()?.trim().parse().ok()?;
            if fields.next().is_some() {
                return None;
            }
            Some(PressureSample {
                tick,
                force_n: force,
            })
        })();
        match parsed {
            Some(sample) => samples.push(sample),
            None => {
                return Err(EffectorError::MalformedCsvLine {
                    path: display,
                    line: idx + 1,
                    content: trimmed.to_string(),
                })
            }
        }
    }
    Ok(samples)
}

/// The grinding state machine. Feed one sample per tick with
/// [`Controller::step`]; the controller refuses out-of-order ticks and any
/// sample after a terminal transition.
#[derive(Debug, Clone)]
pub struct Controller {
    config: ControllerConfig,
    state: GrindState,
    depth_mm: f64,
    next_tick: u64,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self, EffectorError> {
        config.validate()?;
        Ok(Self {
            config,
            state: GrindState::Idle,
            depth_mm: 0.0,
            next_tick: 0,
        })
    }

    pub fn state(&self) -> GrindState {
        self.state
    }

    pub fn depth_mm(&self) -> f64 {
        self.depth_mm
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Begins a run: Idle → Advancing.
    pub fn start(&mut self) -> Result<(), EffectorError> {
        if self.state != GrindState::Idle {
            return Err(EffectorError::AlreadyStarted { state: self.state });
        }
        self.state = GrindState::Advancing;
        Ok(())
    }

    /// Processes one tick. Returns the state after the tick.
    pub fn step(&mut self, sample: PressureSample) -> Result<GrindState, EffectorError> {
        match self.state {
            GrindState::Idle => return Err(EffectorError::NotStarted),
            GrindState::Complete | GrindState::EmergencyStopped | GrindState::Reset => {
                return Err(EffectorError::TerminalState { state: self.state })
            }
            GrindState::Advancing | GrindState::Grinding => {}
        }
        if sample.tick != self.next_tick {
            return Err(EffectorError::OutOfOrderSample {
                expected: self.next_tick,
                got: sample.tick,
            });
        }
        if !(sample.force_n.is_finite() && sample.force_n >= 0.0) {
            return Err(EffectorError::BadForce(sample.force_n, sample.tick));
        }
        self.next_tick += 1;

        // Safety ordering within the tick: contact promotion, emergency
        // stop, completion, then feed. The cascade means a first-contact
        // sample that already exceeds the pressure threshold stops the
        // controller in this same tick.
        if self.state == GrindState::Advancing && sample.force_n >= self.config.contact_threshold_n
        {
            self.state = GrindState::Grinding;
        }
        if self.state == GrindState::Grinding {
            if sample.force_n >= self.config.pressure_threshold_n {
                self.state = GrindState::EmergencyStopped;
                return Ok(self.state);
            }
            if self.depth_mm >= self.config.target_depth_mm {
                self.state = GrindState::Complete;
                return Ok(self.state);
            }
        }
        self.depth_mm += self.config.feed_per_tick_mm;
        Ok(self.state)
    }

    /// Acknowledges a terminal state and rearms: {Complete,
    /// EmergencyStopped} → Reset → Idle, with depth and tick counter
    /// cleared. The intermediate Reset state is passed through atomically.
    pub fn reset(&mut self) -> Result<(), EffectorError> {
        if !self.state.is_terminal() {
            return Err(EffectorError::IllegalReset { state: self.state });
        }
        self.state = GrindState::Reset;
        self.state = GrindState::Idle;
        self.depth_mm = 0.0;
        self.next_tick = 0;
        Ok(())
    }
}

/// Runs a whole profile through a fresh controller and logs every processed
/// tick. Samples after a Complete/EmergencyStopped transition are not
/// consumed (the log simply ends at the stop tick). An empty profile yields
/// a single Idle row.
pub fn run_profile(
    config: ControllerConfig,
    profile: &[PressureSample],
) -> Result<GrindLog, EffectorError> {
    let mut controller = Controller::new(config)?;
    if profile.is_empty() {
        return Ok(GrindLog {
            rows: vec![LogRow {
                tick: 0,
                state: GrindState::Idle,
                depth_mm: 0.0,
                force_n: 0.0,
            }],
            terminal: GrindState::Idle,
            stop_tick: None,
        });
    }
    controller.start()?;
    let mut rows = Vec::with_capacity(profile.len());
    let mut stop_tick = None;
    for sample in profile {
        let state = controller.step(*sample)?;
        rows.push(LogRow {
            tick: sample.tick,
            state,
            depth_mm: controller.depth_mm(),
            force_n: sample.force_n,
        });
        if state.is_terminal() {
            stop_tick = Some(sample.tick);
            break;
        }
    }
    Ok(GrindLog {
        terminal: rows.last().map(|r| r.state).unwrap_or(GrindState::Idle),
        rows,
        stop_tick,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile_from_forces(forces: &[f64]) -> Vec<PressureSample> {
        forces
            .iter()
            .enumerate()
            .map(|(tick, &force_n)| PressureSample {
                tick: tick as u64,
                force_n,
            })
            .collect()
    }

    fn config() -> ControllerConfig {
        ControllerConfig::default()
    }

    #[test]
    fn config_validation_catches_inverted_thresholds() {
        let mut cfg = config();
        cfg.contact_threshold_n = 35.0;
        assert!(matches!(
            cfg.validate(),
            Err(EffectorError::BadThresholds { .. })
        ));
        let mut cfg = config();
        cfg.feed_per_tick_mm = 0.0;
        assert!(matches!(cfg.validate(), Err(EffectorError::BadFeed(_))));
    }

    #[test]
    fn steady_grind_completes_at_expected_tick() {
        // Steady 10 N from tick 0, target = 40 feed steps: contact at tick
        // 0, depth reaches target after tick 39, Complete fires at tick 40.
        let mut cfg = config();
        cfg.target_depth_mm = cfg.feed_per_tick_mm * 40.0;
        let profile = profile_from_forces(&[10.0; 100]);
        let log = run_profile(cfg, &profile).unwrap();
        assert_eq!(log.terminal, GrindState::Complete);
        assert_eq!(log.stop_tick, Some(40));
        assert_eq!(log.rows.len(), 41);
        assert!((log.rows.last().unwrap().depth_mm - cfg.target_depth_mm).abs() < 1e-12);
    }

    #[test]
    fn zero_force_never_leaves_advancing() {
        let profile = profile_from_forces(&[0.0; 200]);
        let log = run_profile(config(), &profile).unwrap();
        assert_eq!(log.terminal, GrindState::Advancing);
        assert_eq!(log.stop_tick, None);
        assert!((log.rows.last().unwrap().depth_mm - 200.0 * config().feed_per_tick_mm).abs() < 1e-9);
    }

    #[test]
    fn ramp_stops_exactly_at_first_crossing() {
        // Linear ramp: force = 0.53 * tick crosses 30 N at tick 57
        // (0.53 * 57 = 30.21, 0.53 * 56 = 29.68).
        let forces: Vec<f64> = (0..120).map(|t| 0.53 * f64::from(t)).collect();
        let log = run_profile(config(), &profile_from_forces(&forces)).unwrap();
        assert_eq!(log.terminal, GrindState::EmergencyStopped);
        assert_eq!(log.stop_tick, Some(57));
    }

    #[test]
    fn spike_on_first_contact_tick_stops_same_tick() {
        // Below contact threshold, then a 31 N spike: contact and emergency
        // fire in the same tick.
        let mut forces = vec![0.0; 10];
        forces.push(31.0);
        let log = run_profile(config(), &profile_from_forces(&forces)).unwrap();
        assert_eq!(log.terminal, GrindState::EmergencyStopped);
        assert_eq!(log.stop_tick, Some(10));
        // Depth froze at the pre-spike value.
        let depth_before = log.rows[9].depth_mm;
        assert_eq!(log.rows[10].depth_mm, depth_before);
    }

    #[test]
    fn exact_threshold_force_stops() {
        let mut forces = vec![10.0; 5];
        forces.push(30.0); // >= comparison: exactly 30 N stops
        let log = run_profile(config(), &profile_from_forces(&forces)).unwrap();
        assert_eq!(log.terminal, GrindState::EmergencyStopped);
        assert_eq!(log.stop_tick, Some(5));
    }

    #[test]
    fn sub_threshold_profile_never_stops_falsely() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..50 {
            let forces: Vec<f64> = (0..300).map(|_| rng.random_range(0.0..29.999)).collect();
            let log = run_profile(config(), &profile_from_forces(&forces)).unwrap();
            assert_ne!(log.terminal, GrindState::EmergencyStopped);
        }
    }

    #[test]
    fn randomized_profiles_stop_at_scan_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut cfg = config();
        for _ in 0..200 {
            let len = rng.random_range(1..400);
            let forces: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..60.0)).collect();
            // Target depth beyond profile reach so completion can't preempt.
            cfg.target_depth_mm = cfg.feed_per_tick_mm * (len as f64 + 2.0);
            let oracle = forces.iter().position(|f| *f >= cfg.pressure_threshold_n);
            let log = run_profile(cfg, &profile_from_forces(&forces)).unwrap();
            match oracle {
                Some(t) => {
                    assert_eq!(log.terminal, GrindState::EmergencyStopped);
                    assert_eq!(log.stop_tick, Some(t as u64));
                }
                None => assert_ne!(log.terminal, GrindState::EmergencyStopped),
            }
        }
    }

    #[test]
    fn depth_is_monotone_and_frozen_after_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let forces: Vec<f64> = (0..150).map(|_| rng.random_range(0.0..35.0)).collect();
        let log = run_profile(config(), &profile_from_forces(&forces)).unwrap();
        for w in log.rows.windows(2) {
            assert!(w[1].depth_mm >= w[0].depth_mm);
        }
        if log.stop_tick.is_some() {
            let last_two: Vec<f64> = log.rows.iter().rev().take(2).map(|r| r.depth_mm).collect();
            assert_eq!(last_two[0], last_two[1]);
        }
    }

    #[test]
    fn lowering_threshold_never_delays_stop() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..100 {
            let forces: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..40.0)).collect();
            let profile = profile_from_forces(&forces);
            let mut strict = config();
            strict.pressure_threshold_n = 20.0;
            let lax = config();
            let stop_strict = run_profile(strict, &profile).unwrap().stop_tick;
            let stop_lax = run_profile(lax, &profile).unwrap().stop_tick;
            match (stop_strict, stop_lax) {
                (Some(s), Some(l)) => assert!(s <= l),
                (None, Some(_)) => panic!("stricter threshold missed a stop the laxer one made"),
                _ => {}
            }
        }
    }

    #[test]
    fn out_of_order_and_post_terminal_samples_rejected() {
        let mut c = Controller::new(config()).unwrap();
        c.start().unwrap();
        assert!(matches!(
            c.step(PressureSample {
                tick: 5,
                force_n: 1.0
            }),
            Err(EffectorError::OutOfOrderSample {
                expected: 0,
                got: 5
            })
        ));
        c.step(PressureSample {
            tick: 0,
            force_n: 31.0,
        })
        .unwrap();
        assert_eq!(c.state(), GrindState::EmergencyStopped);
        assert!(matches!(
            c.step(PressureSample {
                tick: 1,
                force_n: 0.0
            }),
            Err(EffectorError::TerminalState {
                state: GrindState::EmergencyStopped
            })
        ));
    }

    #[test]
    fn idle_rejects_samples_and_double_start() {
        let mut c = Controller::new(config()).unwrap();
        assert!(matches!(
            c.step(PressureSample {
                tick: 0,
                force_n: 0.0
            }),
            Err(EffectorError::NotStarted)
        ));
        c.start().unwrap();
        assert!(matches!(
            c.start(),
            Err(EffectorError::AlreadyStarted {
                state: GrindState::Advancing
            })
        ));
    }

    #[test]
    fn reset_only_from_terminal_and_replays_identically() {
        let mut c = Controller::new(config()).unwrap();
        c.start().unwrap();
        c.step(PressureSample {
            tick: 0,
            force_n: 1.0,
        })
        .unwrap();
        assert!(matches!(
            c.reset(),
            Err(EffectorError::IllegalReset {
                state: GrindState::Grinding
            })
        ));

        // Drive to emergency stop, reset, re-run the same profile: logs match.
        let forces: Vec<f64> = vec![1.0, 2.0, 10.0, 31.0];
        let profile = profile_from_forces(&forces);
        let first = run_profile(config(), &profile).unwrap();
        c.step(PressureSample {
            tick: 1,
            force_n: 31.0,
        })
        .unwrap();
        c.reset().unwrap();
        assert_eq!(c.state(), GrindState::Idle);
        assert_eq!(c.depth_mm(), 0.0);
        let second = run_profile(config(), &profile).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn negative_force_rejected() {
        let mut c = Controller::new(config()).unwrap();
        c.start().unwrap();
        assert!(matches!(
            c.step(PressureSample {
                tick: 0,
                force_n: -1.0
            }),
            Err(EffectorError::BadForce(..))
        ));
    }

    #[test]
    fn empty_profile_logs_single_idle_row() {
        let log = run_profile(config(), &[]).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].state, GrindState::Idle);
        assert_eq!(log.terminal, GrindState::Idle);
        assert_eq!(log.stop_tick, None);
    }

    #[test]
    fn csv_round_trip_and_log_format() {
        let dir = tempfile::tempdir().unwrap();
        let profile_path = dir.path().join("profile.csv");
        std::fs::write(&profile_path, "tick,force_N\n0,0.2\n1,5.0\n2,31.5\n").unwrap();
        let profile = read_profile_csv(&profile_path).unwrap();
        assert_eq!(profile.len(), 3);
        assert_eq!(profile[2].force_n, 31.5);

        let log = run_profile(config(), &profile).unwrap();
        let log_path = dir.path().join("log.csv");
        log.write_csv(&log_path).unwrap();
        let text = std::fs::read_to_string(&log_path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tick,state,depth_mm,force_N"));
        assert!(text.lines().any(|l| l.contains("emergency_stopped")));
    }

    #[test]
    fn malformed_profile_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "tick,force_N\n0,1.0\nnot,a,row\n").unwrap();
        match read_profile_csv(&path) {
            Err(EffectorError::MalformedCsvLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
    }
}
