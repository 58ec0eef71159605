//! Seeded closed-loop trials and 20-landing rotation campaigns.

pub mod export;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::controller::{ControlCommand, ControlError, Controller, ControllerConfig, Phase};
use crate::geometry::{wrap_angle, CameraModel, Frame, GeometryError, Pose, Rotation, Vec3};
use crate::marker_model::{
    detection_schedule, FiducialKind, FiducialProfile, MarkerSensor, PerceptionToggles,
    ProfileError, View,
};
use crate::vehicle_sim::{
    step_auto, step_dynamics, touchdown_check, AutoManeuver, LatencyConfig, LatencyPipeline,
    VehicleError, VehicleParams, VehicleState,
};

/// Landings per campaign.
pub const CAMPAIGN_TRIALS: usize = 20;
/// Clockwise pad rotation between consecutive landings, degrees.
pub const CAMPAIGN_YAW_STEP_DEG: f64 = 18.0;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid trial config: {0}")]
    Invalid(&'static str),
}

/// Simulation clock, arena and termination settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    /// Hz.
    pub tick_rate: f64,
    /// Minimum controller update rate, Hz.
    pub heartbeat_rate: f64,
    /// Simulated seconds before the attempt is abandoned.
    pub timeout: f64,
    /// Leaving this planar radius around the pad ends the attempt, m.
    pub arena_radius: f64,
    /// Half-width of the landing pad, m.
    pub pad_extent: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            tick_rate: 50.0,
            heartbeat_rate: 5.0,
            timeout: 180.0,
            arena_radius: 15.0,
            pad_extent: 0.28,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub profile: FiducialProfile,
    /// Pad heading, counterclockwise positive seen from above; each
    /// clockwise step of the experiment subtracts 18°.
    pub pad_yaw: f64,
    /// m.
    pub start_distance: f64,
    /// Drone heading relative to the bearing of the pad; π faces away.
    pub start_facing: f64,
    pub seed: u64,
    pub controller: ControllerConfig,
    pub vehicle: VehicleParams,
    pub latency: LatencyConfig,
    pub camera: CameraModel,
    pub perception: PerceptionToggles,
    pub sim: SimSettings,
}

impl TrialConfig {
    pub fn new(kind: FiducialKind, pad_yaw: f64, seed: u64) -> Self {
        TrialConfig {
            profile: FiducialProfile::builtin(kind),
            pad_yaw,
            start_distance: 2.5,
            start_facing: PI,
            seed,
            controller: ControllerConfig::default(),
            vehicle: VehicleParams::default(),
            latency: LatencyConfig::default(),
            camera: CameraModel::default(),
            perception: PerceptionToggles::default(),
            sim: SimSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.profile.validate()?;
        self.controller.validate()?;
        self.vehicle.validate()?;
        self.latency.validate()?;
        self.camera.validate()?;
        if !(self.start_distance.is_finite() && self.start_distance > 0.0) {
            return Err(HarnessError::Invalid("start_distance must be positive"));
        }
        if !(self.pad_yaw.is_finite() && self.start_facing.is_finite()) {
            return Err(HarnessError::Invalid(
                "pad_yaw and start_facing must be finite",
            ));
        }
        let s = &self.sim;
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(s.tick_rate)
            && positive(s.heartbeat_rate)
            && positive(s.timeout)
            && positive(s.arena_radius)
            && positive(s.pad_extent))
        {
            return Err(HarnessError::Invalid(
                "simulation settings must be positive",
            ));
        }
        if s.arena_radius <= self.start_distance {
            return Err(HarnessError::Invalid(
                "arena must contain the start position",
            ));
        }
        Ok(())
    }

    /// The landing pad in the world. The pad faces north for `pad_yaw = 0`.
    pub fn pad_pose(&self) -> Pose {
        Pose::new(
            Frame::World,
            Frame::Marker,
            Vec3::zeros(),
            Rotation::about_z(-self.pad_yaw),
        )
    }

    /// Initial vehicle state: on the ground south of the pad, so that the
    /// pad initially faces away from it.
    pub fn initial_state(&self) -> VehicleState {
        VehicleState::on_ground(-self.start_distance, 0.0, wrap_angle(self.start_facing))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    LandedOnPad,
    GroundTouch,
    Timeout,
    LeftArena,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub t: f64,
    pub phase: Phase,
}

/// Ambiguity flip produced by the marker model for a captured frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipEvent {
    pub t_capture: f64,
    pub incidence: f64,
}

/// One simulation tick. Vehicle quantities are North/East/Up; `det_*`
/// columns are filled on ticks where a detection was delivered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub phase: Phase,
    pub north: f64,
    pub east: f64,
    pub up: f64,
    pub yaw: f64,
    pub gimbal_tilt: f64,
    pub det_capture_t: Option<f64>,
    pub det_u: Option<f64>,
    pub det_v: Option<f64>,
    pub det_north: Option<f64>,
    pub det_east: Option<f64>,
    pub det_up: Option<f64>,
    pub det_pad_yaw: Option<f64>,
    pub det_flip: Option<bool>,
    pub pitch: f64,
    pub roll: f64,
    pub yaw_cmd: f64,
    pub throttle: f64,
    pub gimbal_cmd: f64,
    /// When the held command was computed.
    pub cmd_t: f64,
    /// Capture time of the detection the held command was computed from.
    pub cmd_source_t: Option<f64>,
    /// A frame captured this tick was flipped by the ambiguity model.
    pub capture_flip: bool,
}

impl TickRecord {
    pub fn command(&self) -> ControlCommand {
        ControlCommand {
            pitch: self.pitch,
            roll: self.roll,
            yaw: self.yaw_cmd,
            throttle: self.throttle,
            gimbal_tilt: self.gimbal_cmd,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub profile: FiducialKind,
    pub seed: u64,
    pub pad_yaw: f64,
    pub success: bool,
    pub landing_radius: Option<f64>,
    pub termination: Termination,
    pub duration: f64,
    pub phase_timeline: Vec<PhaseChange>,
    pub flip_events: Vec<FlipEvent>,
    pub frames_captured: usize,
    pub detections_delivered: usize,
    pub detections_dropped: usize,
    pub series: Vec<TickRecord>,
}

impl TrialResult {
    /// Phases in the order they were entered.
    pub fn phases(&self) -> impl Iterator<Item = Phase> + '_ {
        self.phase_timeline.iter().map(|c| c.phase)
    }

    /// Time spent in `phase` over the whole trial, s.
    pub fn time_in(&self, phase: Phase) -> f64 {
        let end = self.duration;
        self.phase_timeline
            .iter()
            .enumerate()
            .filter(|(_, c)| c.phase == phase)
            .map(|(i, c)| self.phase_timeline.get(i + 1).map_or(end, |n| n.t) - c.t)
            .sum()
    }
}

/// Runs one landing attempt from takeoff to touchdown or termination.
pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult, HarnessError> {
    cfg.validate()?;
    let dt = 1.0 / cfg.sim.tick_rate;
    let heartbeat = 1.0 / cfg.sim.heartbeat_rate;
    let frame_interval = detection_schedule(&cfg.profile, cfg.latency.link_rate);
    let pad = cfg.pad_pose();
    let sensor = MarkerSensor::new(cfg.profile.clone(), cfg.camera, cfg.perception);
    let mut controller = Controller::new(cfg.controller.clone(), cfg.profile.kind);
    let mut pipeline = LatencyPipeline::new(cfg.latency.min, cfg.latency.max, frame_interval);

    let mut perception_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut link_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    link_rng.set_stream(1);
    let mut vehicle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    vehicle_rng.set_stream(2);
    let drift_heading = vehicle_rng.random_range(0.0..TAU);
    let mut commit_started = None;

    let mut state = cfg.initial_state();
    let mut command = ControlCommand::neutral();
    let mut command_t = 0.0;
    let mut command_source: Option<f64> = None;
    let mut last_step = f64::NEG_INFINITY;
    let mut next_capture: u64 = 0;

    let mut series = Vec::new();
    let mut flip_events = Vec::new();
    let mut timeline = vec![PhaseChange {
        t: 0.0,
        phase: controller.phase(),
    }];
    let mut frames_captured = 0;
    let mut delivered_count = 0;
    let max_ticks = (cfg.sim.timeout * cfg.sim.tick_rate).round() as u64;

    let mut outcome = None;
    for tick in 0..max_ticks {
        let t = tick as f64 * dt;
        state.t = t;
        let phase_before = controller.phase();

        let mut capture_flip = false;
        if t + TIME_EPS >= next_capture as f64 * frame_interval {
            next_capture += 1;
            if state.airborne {
                frames_captured += 1;
                let view = View {
                    drone: &state.pose,
                    gimbal_tilt: state.gimbal_tilt,
                    pad: &pad,
                    sweeping: phase_before == Phase::Search,
                };
                if let Some(det) = sensor.synthesize(&view, &mut perception_rng, t) {
                    if det.ambiguity_flip {
                        capture_flip = true;
                        flip_events.push(FlipEvent {
                            t_capture: t,
                            incidence: det.incidence,
                        });
                    }
                    pipeline.push(det, t, &mut link_rng);
                }
            }
        }

        let delivered = pipeline.pop(t);
        if let Some(det) = &delivered {
            delivered_count += 1;
            command = controller.step(Some(det), state.altitude(), t);
            command_t = t;
            command_source = Some(det.timestamp);
            last_step = t;
        } else if t - last_step >= heartbeat - TIME_EPS {
            command = controller.step(None, state.altitude(), t);
            command_t = t;
            command_source = None;
            last_step = t;
        }
        let phase = controller.phase();
        if phase != phase_before {
            timeline.push(PhaseChange { t, phase });
        }

        series.push(record(
            t,
            phase,
            &state,
            delivered.as_ref(),
            &command,
            command_t,
            command_source,
            capture_flip,
        ));

        state = match phase {
            Phase::Takeoff => step_auto(
                &state,
                AutoManeuver::Takeoff {
                    altitude: cfg.controller.takeoff_altitude,
                },
                dt,
                &cfg.vehicle,
            ),
            Phase::LandingCommit | Phase::Landed => {
                let blind_for = t - *commit_started.get_or_insert(t);
                let speed = cfg.vehicle.blind_drift_rate * blind_for;
                let drift = [speed * drift_heading.cos(), speed * drift_heading.sin()];
                step_auto(&state, AutoManeuver::Land { drift }, dt, &cfg.vehicle)
            }
            _ => step_dynamics(&state, &command, dt, &cfg.vehicle),
        };

        if phase != Phase::Takeoff {
            if let Some(td) = touchdown_check(
                &state,
                &pad,
                cfg.sim.pad_extent,
                cfg.vehicle.touchdown_altitude,
            ) {
                if phase == Phase::LandingCommit {
                    controller.touchdown();
                    timeline.push(PhaseChange {
                        t: t + dt,
                        phase: controller.phase(),
                    });
                }
                let termination = if td.on_pad {
                    Termination::LandedOnPad
                } else {
                    Termination::GroundTouch
                };
                outcome = Some((termination, Some(td.landing_radius), t + dt));
                break;
            }
        }
        let offset = state.pose.position - pad.position;
        if offset.x.hypot(offset.y) > cfg.sim.arena_radius {
            outcome = Some((Termination::LeftArena, None, t + dt));
            break;
        }
    }
    let (termination, landing_radius, duration) =
        outcome.unwrap_or((Termination::Timeout, None, max_ticks as f64 * dt));

    Ok(TrialResult {
        profile: cfg.profile.kind,
        seed: cfg.seed,
        pad_yaw: cfg.pad_yaw,
        success: termination == Termination::LandedOnPad,
        landing_radius,
        termination,
        duration,
        phase_timeline: timeline,
        flip_events,
        frames_captured,
        detections_delivered: delivered_count,
        detections_dropped: pipeline.dropped(),
        series,
    })
}

#[allow(clippy::too_many_arguments)]
fn record(
    t: f64,
    phase: Phase,
    state: &VehicleState,
    det: Option<&crate::marker_model::Detection>,
    cmd: &ControlCommand,
    cmd_t: f64,
    cmd_source_t: Option<f64>,
    capture_flip: bool,
) -> TickRecord {
    TickRecord {
        t,
        phase,
        north: state.pose.position.x,
        east: state.pose.position.y,
        up: state.altitude(),
        yaw: state.yaw(),
        gimbal_tilt: state.gimbal_tilt,
        det_capture_t: det.map(|d| d.timestamp),
        det_u: det.map(|d| d.pixel.u),
        det_v: det.map(|d| d.pixel.v),
        det_north: det.map(|d| d.position_target.north),
        det_east: det.map(|d| d.position_target.east),
        det_up: det.map(|d| d.position_target.up),
        det_pad_yaw: det.map(|d| d.pad_yaw),
        det_flip: det.map(|d| d.ambiguity_flip),
        pitch: cmd.pitch,
        roll: cmd.roll,
        yaw_cmd: cmd.yaw,
        throttle: cmd.throttle,
        gimbal_cmd: cmd.gimbal_tilt,
        cmd_t,
        cmd_source_t,
        capture_flip,
    }
}

/// Stable per-trial seed from the campaign seed, marker system and index.
pub fn derive_seed(base_seed: u64, kind: FiducialKind, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    h.update(kind.name().as_bytes());
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Pad heading for the `index`-th landing: rotated clockwise 18° each time.
pub fn campaign_pad_yaw(index: usize) -> f64 {
    0.0 - index as f64 * CAMPAIGN_YAW_STEP_DEG.to_radians()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl RadiusSummary {
    /// Linear-interpolation quantiles; `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(RadiusSummary {
            count: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub profile: FiducialKind,
    pub base_seed: u64,
    pub successes: usize,
    /// Landing radii of every touchdown, on or off the pad.
    pub radius_summary: Option<RadiusSummary>,
    pub trials: Vec<TrialResult>,
}

impl CampaignResult {
    pub fn from_trials(profile: FiducialKind, base_seed: u64, trials: Vec<TrialResult>) -> Self {
        let successes = trials.iter().filter(|t| t.success).count();
        let radii: Vec<f64> = trials.iter().filter_map(|t| t.landing_radius).collect();
        CampaignResult {
            profile,
            base_seed,
            successes,
            radius_summary: RadiusSummary::from_samples(&radii),
            trials,
        }
    }
}

/// The trial configurations of a campaign, in landing order.
pub fn campaign_configs(template: &TrialConfig, base_seed: u64) -> Vec<TrialConfig> {
    (0..CAMPAIGN_TRIALS)
        .map(|i| TrialConfig {
            pad_yaw: campaign_pad_yaw(i),
            seed: derive_seed(base_seed, template.profile.kind, i),
            ..template.clone()
        })
        .collect()
}

/// Runs the 20-landing campaign for the template's marker system.
pub fn run_campaign(
    template: &TrialConfig,
    base_seed: u64,
    execution: Execution,
) -> Result<CampaignResult, HarnessError> {
    let configs = campaign_configs(template, base_seed);
    let trials = match execution {
        Execution::Serial => configs
            .iter()
            .map(run_trial)
            .collect::<Result<Vec<_>, _>>()?,
        Execution::Parallel => configs
            .par_iter()
            .map(run_trial)
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok(CampaignResult::from_trials(
        template.profile.kind,
        base_seed,
        trials,
    ))
}
