//! Velocity-setpoint quadrotor and gimbal kinematics, plus the video-link
//! latency pipeline between frame capture and the controller.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControlCommand;
use crate::geometry::{Frame, Pose, Rotation, Vec3, GIMBAL_TILT_MAX, GIMBAL_TILT_MIN};
use crate::marker_model::Detection;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("vehicle parameter {0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("vehicle parameter {0} must be non-negative and finite")]
    Negative(&'static str),
    #[error("vehicle parameter {0} must be finite")]
    NonFinite(&'static str),
    #[error("latency bounds must satisfy 0 <= min <= max (got {min}, {max})")]
    LatencyBounds { min: f64, max: f64 },
    #[error("link rate must be positive")]
    LinkRate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Drone body in the world (NED).
    pub pose: Pose,
    /// World-frame velocity (NED), m/s.
    pub velocity: Vec3,
    /// Clockwise, rad/s.
    pub yaw_rate: f64,
    pub gimbal_tilt: f64,
    pub airborne: bool,
    pub t: f64,
}

impl VehicleState {
    /// Landed, level, gimbal forward.
    pub fn on_ground(north: f64, east: f64, yaw: f64) -> Self {
        VehicleState {
            pose: Pose::new(
                Frame::World,
                Frame::DroneBody,
                Vec3::new(north, east, 0.0),
                Rotation::about_z(yaw),
            ),
            velocity: Vec3::zeros(),
            yaw_rate: 0.0,
            gimbal_tilt: 0.0,
            airborne: false,
            t: 0.0,
        }
    }

    pub fn altitude(&self) -> f64 {
        -self.pose.position.z
    }

    pub fn yaw(&self) -> f64 {
        self.pose.orientation.heading()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    /// First-order velocity response, s.
    pub velocity_time_constant: f64,
    /// m/s per unit pitch/roll/throttle command.
    pub max_speed: f64,
    /// rad/s per unit yaw command.
    pub yaw_rate_per_unit: f64,
    /// rad/s per unit gimbal command.
    pub gimbal_rate_per_unit: f64,
    /// Touchdown is declared at or below this altitude, m.
    pub touchdown_altitude: f64,
    /// Blind landing descent speed, m/s.
    pub commit_descent_speed: f64,
    /// Automated takeoff climb speed, m/s.
    pub takeoff_climb_speed: f64,
    /// Growth of the horizontal velocity error during the blind landing,
    /// m/s². Each flight drifts in its own random direction.
    pub blind_drift_rate: f64,
    /// Constant North/East velocity disturbance while airborne, m/s.
    pub disturbance: [f64; 2],
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            velocity_time_constant: 0.4,
            max_speed: 1.0,
            yaw_rate_per_unit: 1.0,
            gimbal_rate_per_unit: 1.0,
            touchdown_altitude: 0.05,
            commit_descent_speed: 0.3,
            takeoff_climb_speed: 0.5,
            blind_drift_rate: 0.1,
            disturbance: [0.0, 0.0],
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let fields = [
            ("velocity_time_constant", self.velocity_time_constant),
            ("max_speed", self.max_speed),
            ("yaw_rate_per_unit", self.yaw_rate_per_unit),
            ("gimbal_rate_per_unit", self.gimbal_rate_per_unit),
            ("touchdown_altitude", self.touchdown_altitude),
            ("commit_descent_speed", self.commit_descent_speed),
            ("takeoff_climb_speed", self.takeoff_climb_speed),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(VehicleError::NonPositive(name));
            }
        }
        if !(self.blind_drift_rate.is_finite() && self.blind_drift_rate >= 0.0) {
            return Err(VehicleError::Negative("blind_drift_rate"));
        }
        if !self.disturbance.iter().all(|d| d.is_finite()) {
            return Err(VehicleError::NonFinite("disturbance"));
        }
        Ok(())
    }
}

/// Maneuvers the flight controller flies on its own.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AutoManeuver {
    Takeoff {
        altitude: f64,
    },
    /// Blind landing at the commit speed; `drift` is the uncorrected
    /// North/East velocity, m/s.
    Land {
        drift: [f64; 2],
    },
}

fn integrate(
    s: &VehicleState,
    setpoint: Vec3,
    yaw_rate: f64,
    gimbal_rate: f64,
    dt: f64,
    p: &VehicleParams,
) -> VehicleState {
    let mut next = s.clone();
    let setpoint = if s.airborne {
        setpoint + Vec3::new(p.disturbance[0], p.disturbance[1], 0.0)
    } else {
        setpoint
    };
    let alpha = 1.0 - (-dt / p.velocity_time_constant).exp();
    next.velocity += (setpoint - s.velocity) * alpha;
    next.pose.position += next.velocity * dt;
    if next.pose.position.z > 0.0 {
        next.pose.position.z = 0.0;
        next.velocity.z = next.velocity.z.min(0.0);
    }
    next.yaw_rate = yaw_rate;
    if yaw_rate != 0.0 {
        next.pose.orientation = Rotation::about_z(s.yaw() + yaw_rate * dt);
    }
    next.gimbal_tilt = (s.gimbal_tilt + gimbal_rate * dt).clamp(GIMBAL_TILT_MIN, GIMBAL_TILT_MAX);
    next.t = s.t + dt;
    next
}

/// Advances the vehicle under VirtualStick velocity setpoints.
pub fn step_dynamics(
    s: &VehicleState,
    cmd: &ControlCommand,
    dt: f64,
    p: &VehicleParams,
) -> VehicleState {
    debug_assert!(dt > 0.0);
    let body = Vec3::new(cmd.pitch, cmd.roll, -cmd.throttle) * p.max_speed;
    let setpoint = Rotation::about_z(s.yaw()).rotate(&body);
    integrate(
        s,
        setpoint,
        cmd.yaw * p.yaw_rate_per_unit,
        cmd.gimbal_tilt * p.gimbal_rate_per_unit,
        dt,
        p,
    )
}

/// Advances the vehicle during an automated maneuver.
pub fn step_auto(
    s: &VehicleState,
    maneuver: AutoManeuver,
    dt: f64,
    p: &VehicleParams,
) -> VehicleState {
    let setpoint = match maneuver {
        AutoManeuver::Takeoff { altitude } => {
            let remaining = altitude - s.altitude();
            let climb =
                (0.05 + 2.0 * remaining).clamp(-p.takeoff_climb_speed, p.takeoff_climb_speed);
            Vec3::new(0.0, 0.0, -climb)
        }
        AutoManeuver::Land { drift } => Vec3::new(drift[0], drift[1], p.commit_descent_speed),
    };
    let mut next = integrate(s, setpoint, 0.0, 0.0, dt, p);
    if let AutoManeuver::Takeoff { .. } = maneuver {
        next.airborne = true;
    }
    next
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Touchdown {
    pub on_pad: bool,
    /// Horizontal distance from drone center to pad center, m.
    pub landing_radius: f64,
}

/// Declares touchdown once the vehicle is at or below `touchdown_altitude`.
/// The pad boundary is inclusive.
pub fn touchdown_check(
    s: &VehicleState,
    pad: &Pose,
    pad_extent: f64,
    touchdown_altitude: f64,
) -> Option<Touchdown> {
    if s.altitude() > touchdown_altitude {
        return None;
    }
    let d = s.pose.position - pad.position;
    let landing_radius = d.x.hypot(d.y);
    Some(Touchdown {
        on_pad: landing_radius <= pad_extent,
        landing_radius,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyConfig {
    /// s.
    pub min: f64,
    /// s.
    pub max: f64,
    /// Video link frame rate cap, Hz.
    pub link_rate: f64,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            min: 0.5,
            max: 2.0,
            link_rate: 7.0,
        }
    }
}

impl LatencyConfig {
    pub fn none(link_rate: f64) -> Self {
        LatencyConfig {
            min: 0.0,
            max: 0.0,
            link_rate,
        }
    }

    pub fn validate(&self) -> Result<(), VehicleError> {
        if !(self.min >= 0.0 && self.min <= self.max && self.max.is_finite()) {
            return Err(VehicleError::LatencyBounds {
                min: self.min,
                max: self.max,
            });
        }
        if !(self.link_rate.is_finite() && self.link_rate > 0.0) {
            return Err(VehicleError::LinkRate);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct InFlight {
    detection: Detection,
    release: f64,
}

/// Frames in transit from the camera to the controller.
///
/// Each frame is released at its capture time plus its own uniform random
/// delay. Deliveries are spaced by at least one frame interval. When a frame
/// is delivered, every frame captured before it is discarded, ready or not,
/// so the controller never sees detections out of capture order.
#[derive(Clone, Debug)]
pub struct LatencyPipeline {
    queue: VecDeque<InFlight>,
    min_delay: f64,
    max_delay: f64,
    frame_interval: f64,
    last_delivery: Option<f64>,
    dropped: usize,
}

/// Tolerance for comparing simulation times built from tick multiples.
const TIME_EPS: f64 = 1e-9;

impl LatencyPipeline {
    pub fn new(min_delay: f64, max_delay: f64, frame_interval: f64) -> Self {
        LatencyPipeline {
            queue: VecDeque::new(),
            min_delay,
            max_delay,
            frame_interval,
            last_delivery: None,
            dropped: 0,
        }
    }

    pub fn frame_interval(&self) -> f64 {
        self.frame_interval
    }

    /// Frames discarded because a newer frame was delivered first.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Queues a detection captured at `t`; returns its release time.
    ///
    /// One uniform draw is consumed per push, even for a degenerate delay
    /// interval.
    pub fn push<R: Rng + ?Sized>(&mut self, det: Detection, t: f64, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let delay = self.min_delay + u * (self.max_delay - self.min_delay);
        self.push_with_delay(det, t, delay)
    }

    /// Queues a detection with an explicit delay.
    pub fn push_with_delay(&mut self, det: Detection, t: f64, delay: f64) -> f64 {
        let release = t + delay;
        self.queue.push_back(InFlight {
            detection: det,
            release,
        });
        release
    }

    /// The newest ready detection, if the link may deliver at `t`.
    pub fn pop(&mut self, t: f64) -> Option<Detection> {
        if let Some(last) = self.last_delivery {
            if t - last < self.frame_interval - TIME_EPS {
                return None;
            }
        }
        // Queue is in capture order; take the last ready entry.
        let newest = self.queue.iter().rposition(|f| f.release <= t + TIME_EPS)?;
        self.dropped += newest;
        let det = self.queue.drain(..=newest).next_back().map(|f| f.detection);
        self.last_delivery = Some(t);
        det
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pixel, PositionTarget};
    use crate::marker_model::FiducialKind;
    use approx::assert_relative_eq;

    fn det(timestamp: f64) -> Detection {
        Detection {
            position_target: PositionTarget::default(),
            pixel: Pixel { u: 0.0, v: 0.0 },
            pad_yaw: 0.0,
            timestamp,
            marker: FiducialKind::AprilTag48h12,
            ambiguity_flip: false,
            incidence: 0.0,
        }
    }

    fn hovering() -> VehicleState {
        let mut s = VehicleState::on_ground(1.0, -2.0, 0.3);
        s.pose.position.z = -1.2;
        s.airborne = true;
        s
    }

    #[test]
    fn zero_command_is_equilibrium() {
        let p = VehicleParams::default();
        let s = hovering();
        let next = step_dynamics(&s, &ControlCommand::neutral(), 0.02, &p);
        assert_eq!(next.pose, s.pose);
        assert_eq!(next.velocity, s.velocity);
        assert_eq!(next.gimbal_tilt, s.gimbal_tilt);
        assert_relative_eq!(next.t, 0.02);
    }

    #[test]
    fn forward_speed_step_response() {
        let p = VehicleParams::default();
        let mut s = hovering();
        let cmd = ControlCommand {
            pitch: 0.2,
            ..ControlCommand::neutral()
        };
        for _ in 0..500 {
            s = step_dynamics(&s, &cmd, 0.02, &p);
        }
        let forward = Rotation::about_z(-s.yaw()).rotate(&s.velocity).x;
        assert_relative_eq!(forward, 0.2 * p.max_speed, max_relative = 0.01);
        // Closed form after one time constant.
        let mut s = hovering();
        let steps = (p.velocity_time_constant / 0.02).round() as usize;
        for _ in 0..steps {
            s = step_dynamics(&s, &cmd, 0.02, &p);
        }
        let forward = Rotation::about_z(-s.yaw()).rotate(&s.velocity).x;
        assert_relative_eq!(forward, 0.2 * (1.0 - (-1.0f64).exp()), epsilon = 1e-9);
    }

    #[test]
    fn gimbal_saturates_down() {
        let p = VehicleParams::default();
        let mut s = hovering();
        let cmd = ControlCommand {
            gimbal_tilt: -0.2,
            ..ControlCommand::neutral()
        };
        for _ in 0..3000 {
            s = step_dynamics(&s, &cmd, 0.02, &p);
        }
        assert_eq!(s.gimbal_tilt, GIMBAL_TILT_MIN);
    }

    #[test]
    fn altitude_floored_at_ground() {
        let p = VehicleParams::default();
        let mut s = VehicleState::on_ground(0.0, 0.0, 0.0);
        let cmd = ControlCommand {
            throttle: -0.2,
            ..ControlCommand::neutral()
        };
        for _ in 0..100 {
            s = step_dynamics(&s, &cmd, 0.02, &p);
        }
        assert_eq!(s.altitude(), 0.0);
    }

    #[test]
    fn auto_takeoff_reaches_altitude() {
        let p = VehicleParams::default();
        let mut s = VehicleState::on_ground(0.0, 0.0, 0.0);
        for _ in 0..1000 {
            s = step_auto(&s, AutoManeuver::Takeoff { altitude: 1.2 }, 0.02, &p);
        }
        assert!(s.airborne);
        assert!(
            s.altitude() >= 1.2 && s.altitude() < 1.3,
            "{}",
            s.altitude()
        );
    }

    #[test]
    fn touchdown_boundaries() {
        let pad = Pose::identity(Frame::World);
        let pad = Pose {
            child: Frame::Marker,
            ..pad
        };
        let mut s = VehicleState::on_ground(0.0, 0.0, 0.0);
        let t = touchdown_check(&s, &pad, 0.28, 0.05).unwrap();
        assert!(t.on_pad);
        assert_eq!(t.landing_radius, 0.0);
        s.pose.position.x = 0.28;
        assert!(touchdown_check(&s, &pad, 0.28, 0.05).unwrap().on_pad);
        s.pose.position.x = 0.29;
        assert!(!touchdown_check(&s, &pad, 0.28, 0.05).unwrap().on_pad);
        s.pose.position.z = -0.5;
        assert!(touchdown_check(&s, &pad, 0.28, 0.05).is_none());
    }

    #[test]
    fn pipeline_lower_latency_bound() {
        let mut p = LatencyPipeline::new(0.5, 2.0, 1.0 / 7.0);
        p.push_with_delay(det(0.0), 0.0, 0.5);
        assert!(p.pop(0.49).is_none());
        assert_eq!(p.pop(0.51).unwrap().timestamp, 0.0);
    }

    #[test]
    fn pipeline_zero_delay_passes_through() {
        let mut p = LatencyPipeline::new(0.0, 0.0, 1.0 / 7.0);
        let mut rng = rand::rng();
        p.push(det(3.0), 3.0, &mut rng);
        assert_eq!(p.pop(3.0).unwrap().timestamp, 3.0);
    }

    #[test]
    fn pipeline_preserves_capture_order() {
        // Enumerate delay pairs on a grid and poll on 50 Hz ticks.
        let grid: Vec<f64> = (0..=15).map(|i| 0.5 + 0.1 * i as f64).collect();
        for &d1 in &grid {
            for &d2 in &grid {
                let mut p = LatencyPipeline::new(0.5, 2.0, 1.0 / 7.0);
                p.push_with_delay(det(0.0), 0.0, d1);
                p.push_with_delay(det(0.2), 0.2, d2);
                let mut out = Vec::new();
                for tick in 0..200 {
                    if let Some(d) = p.pop(tick as f64 * 0.02) {
                        out.push(d.timestamp);
                    }
                }
                assert!(out.windows(2).all(|w| w[0] < w[1]), "{d1} {d2} {out:?}");
                assert_eq!(out.last(), Some(&0.2));
                if d2 + 0.2 - d1 >= 1.0 / 7.0 {
                    assert_eq!(out, vec![0.0, 0.2]);
                }
            }
        }
    }

    #[test]
    fn pipeline_newer_frame_overtakes_older() {
        let mut p = LatencyPipeline::new(0.5, 2.0, 1.0 / 7.0);
        p.push_with_delay(det(0.0), 0.0, 2.0);
        p.push_with_delay(det(0.2), 0.2, 0.5);
        assert_eq!(p.pop(0.7).unwrap().timestamp, 0.2);
        assert!(p.is_empty());
        assert_eq!(p.dropped(), 1);
        assert!(p.pop(2.5).is_none());
    }

    #[test]
    fn pipeline_spaces_deliveries() {
        let mut p = LatencyPipeline::new(0.0, 0.0, 0.25);
        p.push_with_delay(det(0.0), 0.0, 0.0);
        assert!(p.pop(0.0).is_some());
        p.push_with_delay(det(0.1), 0.1, 0.0);
        assert!(p.pop(0.1).is_none());
        assert!(p.pop(0.24).is_none());
        assert_eq!(p.pop(0.25).unwrap().timestamp, 0.1);
    }
}
