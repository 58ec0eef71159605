//! Landing phase state machine and per-phase proportional control laws.
//!
//! Commands are VirtualStick-style rates: `pitch` forward, `roll` right,
//! `yaw` clockwise, `throttle` up and `gimbal_tilt` tilt-up velocity, each
//! limited to `[-0.2, 0.2]`, with throttle limited to `[-0.2, 0]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::wrap_angle;
use crate::marker_model::{deg, Detection, FiducialKind};

pub const COMMAND_LIMIT: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Takeoff,
    Search,
    Approach,
    YawAlign,
    Descent,
    LandingCommit,
    Landed,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::Takeoff => "takeoff",
            Phase::Search => "search",
            Phase::Approach => "approach",
            Phase::YawAlign => "yaw-align",
            Phase::Descent => "descent",
            Phase::LandingCommit => "landing-commit",
            Phase::Landed => "landed",
        }
    }

    /// Phases driven by detections, which fall back to search on loss.
    pub fn is_tracking(&self) -> bool {
        matches!(self, Phase::Approach | Phase::YawAlign | Phase::Descent)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("non-finite {channel} command: {value}")]
    NonFinite { channel: &'static str, value: f64 },
    #[error("invalid controller config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
    pub throttle: f64,
    pub gimbal_tilt: f64,
}

impl ControlCommand {
    pub fn neutral() -> Self {
        Self::default()
    }

    pub fn channels(&self) -> [(&'static str, f64); 5] {
        [
            ("pitch", self.pitch),
            ("roll", self.roll),
            ("yaw", self.yaw),
            ("throttle", self.throttle),
            ("gimbal_tilt", self.gimbal_tilt),
        ]
    }

    /// True when every channel is inside its allowed interval.
    pub fn is_within_limits(&self) -> bool {
        let sym = |x: f64| x.is_finite() && x.abs() <= COMMAND_LIMIT;
        sym(self.pitch)
            && sym(self.roll)
            && sym(self.yaw)
            && sym(self.gimbal_tilt)
            && self.throttle.is_finite()
            && (-COMMAND_LIMIT..=0.0).contains(&self.throttle)
    }
}

fn limit(x: f64) -> f64 {
    x.clamp(-COMMAND_LIMIT, COMMAND_LIMIT)
}

/// Channel-wise saturation; throttle may only command descent.
pub fn clamp(raw: ControlCommand) -> Result<ControlCommand, ControlError> {
    for (channel, value) in raw.channels() {
        if !value.is_finite() {
            return Err(ControlError::NonFinite { channel, value });
        }
    }
    Ok(ControlCommand {
        pitch: limit(raw.pitch),
        roll: limit(raw.roll),
        yaw: limit(raw.yaw),
        throttle: raw.throttle.clamp(-COMMAND_LIMIT, 0.0),
        gimbal_tilt: limit(raw.gimbal_tilt),
    })
}

fn saturate(raw: ControlCommand) -> ControlCommand {
    clamp(raw).expect("control laws require finite detections")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// m.
    pub takeoff_altitude: f64,
    /// Magnitude of the counterclockwise search spin, command units.
    pub search_yaw_rate: f64,
    /// s.
    pub gimbal_sweep_period: f64,
    /// Tilt interval swept during search, radians `[low, high]`.
    pub gimbal_sweep_range: [f64; 2],
    /// Tilt rate per unit gimbal command the sweep assumes, rad/s.
    pub gimbal_rate_scale: f64,
    /// m.
    pub deadzone_radius: f64,
    /// Command units per meter.
    pub approach_gain: f64,
    pub tracking_gain_u: f64,
    pub tracking_gain_v: f64,
    /// Command units per radian.
    pub yaw_align_gain: f64,
    pub descent_rate: f64,
    pub lock_count: u32,
    /// Longest gap between deliveries that still counts as consecutive, s.
    pub max_delivery_gap: f64,
    /// s.
    pub loss_timeout: f64,
    /// Reported height at which the blind landing starts, per marker system.
    pub commit_altitude: BTreeMap<FiducialKind, f64>,
    /// m.
    pub approach_handoff_radius: f64,
    /// rad.
    pub yaw_align_tolerance: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let commit_altitude = FiducialKind::ALL
            .into_iter()
            .map(|k| (k, if k.is_apriltag() { 0.35 } else { 0.6 }))
            .collect();
        ControllerConfig {
            takeoff_altitude: 1.2,
            search_yaw_rate: 0.15,
            gimbal_sweep_period: 16.0,
            gimbal_sweep_range: [deg(-85.0), 0.0],
            gimbal_rate_scale: 1.0,
            deadzone_radius: 0.2,
            approach_gain: 0.3,
            tracking_gain_u: 0.8,
            tracking_gain_v: 0.8,
            yaw_align_gain: 1.0,
            descent_rate: 0.15,
            lock_count: 3,
            max_delivery_gap: 1.0,
            loss_timeout: 2.0,
            commit_altitude,
            approach_handoff_radius: 0.5,
            yaw_align_tolerance: deg(10.0),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let gains = [
            self.takeoff_altitude,
            self.search_yaw_rate,
            self.gimbal_sweep_period,
            self.gimbal_sweep_range[0],
            self.gimbal_sweep_range[1],
            self.gimbal_rate_scale,
            self.approach_gain,
            self.tracking_gain_u,
            self.tracking_gain_v,
            self.yaw_align_gain,
            self.descent_rate,
            self.max_delivery_gap,
            self.loss_timeout,
            self.approach_handoff_radius,
            self.yaw_align_tolerance,
        ];
        if gains.iter().any(|g| !g.is_finite()) {
            return Err(ControlError::InvalidConfig("all parameters must be finite"));
        }
        if self.deadzone_radius.is_nan() || self.deadzone_radius <= 0.0 {
            return Err(ControlError::InvalidConfig(
                "deadzone_radius must be positive",
            ));
        }
        if self
            .commit_altitude
            .values()
            .any(|a| a.is_nan() || *a <= 0.0)
        {
            return Err(ControlError::InvalidConfig(
                "commit_altitude must be positive",
            ));
        }
        if self.gimbal_sweep_period <= 0.0 || self.gimbal_rate_scale <= 0.0 {
            return Err(ControlError::InvalidConfig(
                "sweep period and gimbal rate scale must be positive",
            ));
        }
        Ok(())
    }

    pub fn commit_altitude_for(&self, kind: FiducialKind) -> f64 {
        self.commit_altitude
            .get(&kind)
            .copied()
            .unwrap_or(if kind.is_apriltag() { 0.35 } else { 0.6 })
    }
}

/// Spin counterclockwise while sweeping the gimbal through its range.
///
/// The sweep is open loop: the tilt follows a triangle wave that starts at the
/// top of the range, so the commanded rate is a square wave. `t` is measured
/// from the start of the search.
pub fn search_command(t: f64, cfg: &ControllerConfig) -> ControlCommand {
    let period = cfg.gimbal_sweep_period;
    let span = (cfg.gimbal_sweep_range[1] - cfg.gimbal_sweep_range[0]).abs();
    let speed = 2.0 * span / period / cfg.gimbal_rate_scale;
    let phase = t.rem_euclid(period) / period;
    let direction = if phase < 0.5 { -1.0 } else { 1.0 };
    saturate(ControlCommand {
        yaw: -cfg.search_yaw_rate.abs(),
        gimbal_tilt: direction * speed,
        ..ControlCommand::neutral()
    })
}

/// Yaw and gimbal rates that center the pad in the image.
pub fn track_command(det: &Detection, cfg: &ControllerConfig) -> (f64, f64) {
    (
        limit(cfg.tracking_gain_u * det.pixel.u),
        limit(-cfg.tracking_gain_v * det.pixel.v),
    )
}

/// Pitch and roll toward the pad, zero inside the deadzone.
fn planar_command(det: &Detection, cfg: &ControllerConfig) -> (f64, f64) {
    let target = &det.position_target;
    if target.planar_distance() < cfg.deadzone_radius {
        return (0.0, 0.0);
    }
    (
        limit(-cfg.approach_gain * target.north),
        limit(-cfg.approach_gain * target.east),
    )
}

pub fn approach_command(det: &Detection, cfg: &ControllerConfig) -> ControlCommand {
    let (pitch, roll) = planar_command(det, cfg);
    let (yaw, gimbal_tilt) = track_command(det, cfg);
    saturate(ControlCommand {
        pitch,
        roll,
        yaw,
        throttle: 0.0,
        gimbal_tilt,
    })
}

pub fn yaw_align_command(det: &Detection, cfg: &ControllerConfig) -> ControlCommand {
    let (pitch, roll) = planar_command(det, cfg);
    let (_, gimbal_tilt) = track_command(det, cfg);
    saturate(ControlCommand {
        pitch,
        roll,
        yaw: cfg.yaw_align_gain * wrap_angle(det.pad_yaw),
        throttle: 0.0,
        gimbal_tilt,
    })
}

pub fn descent_command(det: &Detection, cfg: &ControllerConfig) -> ControlCommand {
    let (pitch, roll) = planar_command(det, cfg);
    let (yaw, gimbal_tilt) = track_command(det, cfg);
    saturate(ControlCommand {
        pitch,
        roll,
        yaw,
        throttle: -cfg.descent_rate.abs(),
        gimbal_tilt,
    })
}

/// The landing state machine for one flight.
#[derive(Clone, Debug)]
pub struct Controller {
    cfg: ControllerConfig,
    commit_altitude: f64,
    phase: Phase,
    lock_streak: u32,
    last_detection: Option<f64>,
    search_started: f64,
    /// Last planar setpoint, kept between deliveries while station-keeping.
    held_planar: (f64, f64),
}

impl Controller {
    pub fn new(cfg: ControllerConfig, marker: FiducialKind) -> Self {
        let commit_altitude = cfg.commit_altitude_for(marker);
        Controller {
            cfg,
            commit_altitude,
            phase: Phase::Takeoff,
            lock_streak: 0,
            last_detection: None,
            search_started: 0.0,
            held_planar: (0.0, 0.0),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn commit_altitude(&self) -> f64 {
        self.commit_altitude
    }

    fn enter_search(&mut self, t: f64) {
        self.phase = Phase::Search;
        self.lock_streak = 0;
        self.search_started = t;
        self.held_planar = (0.0, 0.0);
    }

    /// Advances the state machine by one control tick.
    ///
    /// `det` is the detection delivered this tick, if any. Returns the
    /// command to hold until the next tick; the current phase is available
    /// through [`Controller::phase`].
    pub fn step(&mut self, det: Option<&Detection>, altitude: f64, t: f64) -> ControlCommand {
        if det.is_some() {
            self.last_detection = Some(t);
        }
        if self.phase.is_tracking() && det.is_none() {
            let silent_for = self.last_detection.map_or(f64::INFINITY, |last| t - last);
            if silent_for >= self.cfg.loss_timeout {
                self.enter_search(t);
            }
        }
        match self.phase {
            Phase::Takeoff => {
                if altitude >= self.cfg.takeoff_altitude {
                    self.enter_search(t);
                    return search_command(0.0, &self.cfg);
                }
                ControlCommand::neutral()
            }
            Phase::Search => {
                match det {
                    Some(d) => {
                        self.lock_streak += 1;
                        if self.lock_streak >= self.cfg.lock_count {
                            self.phase = Phase::Approach;
                            return self.step_tracking(d);
                        }
                    }
                    None => {
                        let silent_for = self.last_detection.map_or(f64::INFINITY, |last| t - last);
                        if silent_for > self.cfg.max_delivery_gap {
                            self.lock_streak = 0;
                        }
                    }
                }
                search_command(t - self.search_started, &self.cfg)
            }
            Phase::Approach | Phase::YawAlign | Phase::Descent => match det {
                Some(d) => self.step_tracking(d),
                // Tracking rates must not outlive the frame they came from.
                // Over the pad the planar setpoint stays in force, as a
                // velocity-setpoint autopilot would keep it.
                None if self.phase == Phase::Approach => ControlCommand::neutral(),
                None => ControlCommand {
                    pitch: self.held_planar.0,
                    roll: self.held_planar.1,
                    ..ControlCommand::neutral()
                },
            },
            Phase::LandingCommit | Phase::Landed => ControlCommand::neutral(),
        }
    }

    fn step_tracking(&mut self, det: &Detection) -> ControlCommand {
        if self.phase == Phase::Approach
            && det.position_target.planar_distance() < self.cfg.approach_handoff_radius
        {
            self.phase = Phase::YawAlign;
        }
        if self.phase == Phase::YawAlign
            && wrap_angle(det.pad_yaw).abs() < self.cfg.yaw_align_tolerance
        {
            self.phase = Phase::Descent;
        }
        if self.phase == Phase::Descent && det.position_target.up <= self.commit_altitude {
            self.phase = Phase::LandingCommit;
            return ControlCommand::neutral();
        }
        let cmd = match self.phase {
            Phase::Approach => approach_command(det, &self.cfg),
            Phase::YawAlign => yaw_align_command(det, &self.cfg),
            _ => descent_command(det, &self.cfg),
        };
        self.held_planar = (cmd.pitch, cmd.roll);
        cmd
    }

    /// The vehicle reports touchdown during the blind landing.
    pub fn touchdown(&mut self) {
        self.phase = Phase::Landed;
    }
}
