//! Synthetic fiducial detections.
//!
//! Detections are generated from ground truth and then degraded the way each
//! marker family degrades in flight: range gates, motion-blur and glare
//! dropouts, position noise, planar-mirror orientation flips and (for
//! WhyCode Multi) a view-dependent position bias.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    compose, euler_to_rotation, gimbal_camera_pose, invert, level_pad_target, project,
    rotation_to_euler, wrap_angle, CameraModel, Pixel, Pose, PositionTarget, Rotation, Vec3,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FiducialKind {
    #[serde(rename = "apriltag48h12")]
    AprilTag48h12,
    #[serde(rename = "apriltag24h10")]
    AprilTag24h10,
    #[serde(rename = "whycode-orig")]
    WhyCodeOrig,
    #[serde(rename = "whycode-ellipse")]
    WhyCodeEllipse,
    #[serde(rename = "whycode-multi")]
    WhyCodeMulti,
}

impl FiducialKind {
    pub const ALL: [FiducialKind; 5] = [
        FiducialKind::AprilTag48h12,
        FiducialKind::AprilTag24h10,
        FiducialKind::WhyCodeOrig,
        FiducialKind::WhyCodeEllipse,
        FiducialKind::WhyCodeMulti,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FiducialKind::AprilTag48h12 => "apriltag48h12",
            FiducialKind::AprilTag24h10 => "apriltag24h10",
            FiducialKind::WhyCodeOrig => "whycode-orig",
            FiducialKind::WhyCodeEllipse => "whycode-ellipse",
            FiducialKind::WhyCodeMulti => "whycode-multi",
        }
    }

    pub fn is_apriltag(&self) -> bool {
        matches!(
            self,
            FiducialKind::AprilTag48h12 | FiducialKind::AprilTag24h10
        )
    }
}

impl fmt::Display for FiducialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("unknown fiducial system '{0}' (expected one of: apriltag48h12, apriltag24h10, whycode-orig, whycode-ellipse, whycode-multi)")]
    UnknownName(String),
    #[error("profile {kind}: {reason}")]
    Invalid {
        kind: FiducialKind,
        reason: &'static str,
    },
}

impl FromStr for FiducialKind {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FiducialKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ProfileError::UnknownName(s.to_string()))
    }
}

/// Per-marker-system perception parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiducialProfile {
    pub kind: FiducialKind,
    /// Probability of an orientation flip at normal incidence.
    pub ambiguity_base: f64,
    /// Detector throughput, Hz.
    pub detection_rate: f64,
    /// Closer than this (m) the marker is lost.
    pub min_range: f64,
    pub max_range: f64,
    /// Dropout probability while the search sweep is moving the camera.
    pub acquisition_loss: f64,
    /// Dropout probability at all times (glare, shadows).
    pub baseline_loss: f64,
    /// Std. dev. of the marker position error in the camera frame, m.
    pub position_noise_sigma: f64,
    /// Meters of position bias per radian of incidence.
    pub view_bias_gain: f64,
}

impl FiducialProfile {
    pub fn builtin(kind: FiducialKind) -> Self {
        use FiducialKind::*;
        let (ambiguity_base, detection_rate) = match kind {
            WhyCodeEllipse => (0.05, 25.0),
            AprilTag48h12 => (0.08, 10.0),
            WhyCodeOrig => (0.15, 30.0),
            WhyCodeMulti => (0.25, 20.0),
            AprilTag24h10 => (0.35, 8.0),
        };
        let (min_range, acquisition_loss) = if kind.is_apriltag() {
            (0.1, 0.3)
        } else {
            (0.5, 0.05)
        };
        let position_noise_sigma = match kind {
            AprilTag48h12 => 0.01,
            _ => 0.02,
        };
        FiducialProfile {
            kind,
            ambiguity_base,
            detection_rate,
            min_range,
            max_range: 8.0,
            acquisition_loss,
            baseline_loss: 0.02,
            position_noise_sigma,
            view_bias_gain: if kind == WhyCodeMulti { 9.0 } else { 0.0 },
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let invalid = |reason| ProfileError::Invalid {
            kind: self.kind,
            reason,
        };
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.ambiguity_base) || !prob(self.acquisition_loss) || !prob(self.baseline_loss) {
            return Err(invalid("probabilities must lie in [0, 1]"));
        }
        if !(self.min_range > 0.0 && self.min_range < self.max_range && self.max_range.is_finite())
        {
            return Err(invalid("ranges must satisfy 0 < min_range < max_range"));
        }
        if !(self.detection_rate.is_finite() && self.detection_rate > 0.0) {
            return Err(invalid("detection rate must be positive"));
        }
        if !(self.position_noise_sigma.is_finite() && self.position_noise_sigma >= 0.0) {
            return Err(invalid("position noise sigma must be non-negative"));
        }
        if !self.view_bias_gain.is_finite() {
            return Err(invalid("view bias gain must be finite"));
        }
        Ok(())
    }
}

/// Switches for the stochastic and systematic error sources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionToggles {
    pub noise: bool,
    pub ambiguity: bool,
    pub loss: bool,
    pub bias: bool,
}

impl Default for PerceptionToggles {
    fn default() -> Self {
        PerceptionToggles {
            noise: true,
            ambiguity: true,
            loss: true,
            bias: true,
        }
    }
}

impl PerceptionToggles {
    pub fn ideal() -> Self {
        PerceptionToggles {
            noise: false,
            ambiguity: false,
            loss: false,
            bias: false,
        }
    }
}

/// What the perception stack hands to the controller.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub position_target: PositionTarget,
    pub pixel: Pixel,
    /// Pad yaw relative to the drone heading, clockwise positive.
    pub pad_yaw: f64,
    /// Capture time, s.
    pub timestamp: f64,
    pub marker: FiducialKind,
    /// Diagnostic: the orientation was mirrored by the ambiguity model.
    pub ambiguity_flip: bool,
    /// Diagnostic: incidence angle at capture.
    pub incidence: f64,
}

/// Angle between the reversed camera boresight and the pad's upward normal.
pub fn incidence_angle(camera_pose: &Pose, pad_pose: &Pose) -> f64 {
    let reversed_boresight = -camera_pose.orientation.rotate(&Vec3::x());
    let normal = -pad_pose.orientation.rotate(&Vec3::z());
    reversed_boresight.dot(&normal).clamp(-1.0, 1.0).acos()
}

pub fn ambiguity_probability(theta: f64, profile: &FiducialProfile) -> f64 {
    let theta = theta.clamp(0.0, FRAC_PI_2);
    let floor = 0.02 * profile.ambiguity_base;
    (profile.ambiguity_base - floor) * theta.cos().powi(2) + floor
}

/// Interval between delivered frames given the detector and link rates.
pub fn detection_schedule(profile: &FiducialProfile, link_rate: f64) -> f64 {
    1.0 / profile.detection_rate.min(link_rate)
}

/// Exact drone-from-pad displacement in the drone's level heading frame and
/// the pad yaw relative to the drone heading.
pub fn ground_truth_target(drone: &Pose, pad: &Pose) -> (PositionTarget, f64) {
    let heading = drone.orientation.heading();
    let d = Rotation::about_z(-heading).rotate(&(drone.position - pad.position));
    (
        PositionTarget {
            north: d.x,
            east: d.y,
            up: -d.z,
        },
        wrap_angle(pad.orientation.heading() - heading),
    )
}

/// Marker orientation reference for a marker squarely facing the camera:
/// marker into-pad axis along the boresight, marker forward toward image-up.
fn facing_reference() -> Rotation {
    Rotation::about_y(FRAC_PI_2)
}

/// Mirrors the marker's tilt about the optical axis by negating roll and
/// pitch of its orientation relative to the facing reference. `None` at
/// gimbal lock, where the Euler view is undefined.
pub fn flip_orientation(marker_in_camera: &Rotation) -> Option<Rotation> {
    let reference = facing_reference();
    let relative = reference.inverse() * *marker_in_camera;
    let e = rotation_to_euler(&relative).ok()?;
    Some(reference * euler_to_rotation(-e.roll, -e.pitch, e.yaw))
}

/// Ground-truth scene for one captured frame.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    pub drone: &'a Pose,
    pub gimbal_tilt: f64,
    pub pad: &'a Pose,
    /// The camera or airframe is panning for the search.
    pub sweeping: bool,
}

/// A marker system observed through a camera.
#[derive(Clone, Debug)]
pub struct MarkerSensor {
    pub profile: FiducialProfile,
    pub camera: CameraModel,
    pub toggles: PerceptionToggles,
}

impl MarkerSensor {
    pub fn new(profile: FiducialProfile, camera: CameraModel, toggles: PerceptionToggles) -> Self {
        MarkerSensor {
            profile,
            camera,
            toggles,
        }
    }

    /// Produces the detection for one frame, or `None` for no detection.
    ///
    /// Every call consumes the same number of random draws, so enabling or
    /// disabling an error source never shifts the stream for the others.
    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        view: &View<'_>,
        rng: &mut R,
        t: f64,
    ) -> Option<Detection> {
        let u_acquire: f64 = rng.random();
        let u_baseline: f64 = rng.random();
        let noise = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let u_flip: f64 = rng.random();

        let profile = &self.profile;
        let camera_pose = gimbal_camera_pose(view.drone, view.gimbal_tilt).ok()?;
        let pixel = project(&camera_pose, &view.pad.position, &self.camera)?;
        let mut marker = compose(&invert(&camera_pose), view.pad).ok()?;
        let range = marker.position.norm();
        if range < profile.min_range || range > profile.max_range {
            return None;
        }
        if self.toggles.loss {
            if view.sweeping && u_acquire < profile.acquisition_loss {
                return None;
            }
            if u_baseline < profile.baseline_loss {
                return None;
            }
        }
        if self.toggles.noise {
            marker.position += noise * profile.position_noise_sigma;
        }
        let theta = incidence_angle(&camera_pose, view.pad);
        let mut flipped = false;
        if self.toggles.ambiguity && u_flip < ambiguity_probability(theta, profile) {
            if let Some(r) = flip_orientation(&marker.orientation) {
                marker.orientation = r;
                flipped = true;
            }
        }
        let (mut position_target, pad_yaw) = level_pad_target(&marker);
        if self.toggles.bias && profile.view_bias_gain != 0.0 {
            let offset = view_bias(&camera_pose, view.drone, profile.view_bias_gain * theta);
            position_target.north -= offset.x;
            position_target.east -= offset.y;
        }
        Some(Detection {
            position_target,
            pixel,
            pad_yaw,
            timestamp: t,
            marker: profile.kind,
            ambiguity_flip: flipped,
            incidence: theta,
        })
    }
}

/// Horizontal displacement (drone heading frame) of the reported pad along
/// the camera's horizontal viewing direction, of the given magnitude.
fn view_bias(camera: &Pose, drone: &Pose, magnitude: f64) -> Vec3 {
    let mut look = camera.orientation.rotate(&Vec3::x());
    look.z = 0.0;
    let n = look.norm();
    if n < 1e-9 {
        return Vec3::zeros();
    }
    Rotation::about_z(-drone.orientation.heading()).rotate(&(look * (magnitude / n)))
}

/// Angle in degrees; convenience for profile tables and tests.
pub(crate) fn deg(d: f64) -> f64 {
    d * PI / 180.0
}
