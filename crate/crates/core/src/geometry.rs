//! Frames, rotations, pinhole projection and the level-pad transform.
//!
//! World poses are stored North-East-Down (x north, y east, z down) so every
//! frame in the crate is right-handed: the drone body is forward-right-down,
//! the camera is boresight-right-image-down and a marker is pad-forward,
//! pad-right, into-the-pad. Quantities reported to the controller and to logs
//! use North/East/Up, with `up = -down`.
//!
//! Yaw is clockwise-positive seen from above, pitch is nose-up positive and
//! Euler angles follow the ZYX (yaw, pitch, roll) convention.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Distance from `|pitch| = π/2` inside which Euler extraction is refused.
pub const GIMBAL_LOCK_TOLERANCE: f64 = 1e-6;

/// Mechanical gimbal tilt limits (radians). 0 is straight forward.
pub const GIMBAL_TILT_MIN: f64 = -85.0 * PI / 180.0;
pub const GIMBAL_TILT_MAX: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("euler extraction at gimbal lock (pitch {pitch} rad)")]
    GimbalLock { pitch: f64 },
    #[error("cannot compose a pose with child frame {left} with a pose expressed in {right}")]
    FrameMismatch { left: Frame, right: Frame },
    #[error("gimbal tilt {tilt} rad outside mechanical range [-85°, 0°]")]
    TiltOutOfRange { tilt: f64 },
    #[error("degenerate quaternion (norm {norm})")]
    DegenerateQuaternion { norm: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    World,
    DroneBody,
    Camera,
    Marker,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Frame::World => "world",
            Frame::DroneBody => "drone-body",
            Frame::Camera => "camera",
            Frame::Marker => "marker",
        };
        f.write_str(name)
    }
}

/// Unit quaternion rotation. Serialized as `[w, x, y, z]` with `w >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Normalizes `(w, x, y, z)`; rejects quaternions that cannot be normalized.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::DegenerateQuaternion { norm });
        }
        Ok(Rotation(UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q)
    }

    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rotation(UnitQuaternion::from_matrix(m))
    }

    pub fn about_z(angle: f64) -> Self {
        Rotation(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), angle))
    }

    pub fn about_y(angle: f64) -> Self {
        Rotation(UnitQuaternion::from_axis_angle(&Vector3::y_axis(), angle))
    }

    pub fn about_x(angle: f64) -> Self {
        Rotation(UnitQuaternion::from_axis_angle(&Vector3::x_axis(), angle))
    }

    pub fn unit_quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    /// Components `[w, x, y, z]` canonicalized to the `w >= 0` hemisphere.
    pub fn to_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.inverse())
    }

    /// Angle of the relative rotation between `self` and `other`.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.0.angle_to(&other.0)
    }

    /// ZYX yaw, well defined away from gimbal lock; used for level bodies.
    pub fn heading(&self) -> f64 {
        let m = self.matrix();
        m[(1, 0)].atan2(m[(0, 0)])
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_wxyz().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(deserializer)?;
        Rotation::from_wxyz(w, x, y, z).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// ZYX composition: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn euler_to_rotation(roll: f64, pitch: f64, yaw: f64) -> Rotation {
    let (sr, cr) = (roll * 0.5).sin_cos();
    let (sp, cp) = (pitch * 0.5).sin_cos();
    let (sy, cy) = (yaw * 0.5).sin_cos();
    let q = Quaternion::new(
        cr * cp * cy + sr * sp * sy,
        sr * cp * cy - cr * sp * sy,
        cr * sp * cy + sr * cp * sy,
        cr * cp * sy - sr * sp * cy,
    );
    Rotation(UnitQuaternion::from_quaternion(q))
}

pub fn rotation_to_euler(r: &Rotation) -> Result<EulerAngles, GeometryError> {
    let m = r.matrix();
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if (FRAC_PI_2 - pitch.abs()) <= GIMBAL_LOCK_TOLERANCE {
        return Err(GeometryError::GimbalLock { pitch });
    }
    // asin loses precision near ±π/2; recover pitch from the full column.
    let cp = m[(0, 0)].hypot(m[(1, 0)]);
    let pitch = (-m[(2, 0)]).atan2(cp);
    Ok(EulerAngles {
        roll: m[(2, 1)].atan2(m[(2, 2)]),
        pitch,
        yaw: m[(1, 0)].atan2(m[(0, 0)]),
    })
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Pose of frame `child` expressed in frame `frame`: maps child coordinates
/// to parent coordinates as `p_parent = orientation * p_child + position`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Rotation,
    pub frame: Frame,
    pub child: Frame,
}

impl Pose {
    pub fn new(frame: Frame, child: Frame, position: Vec3, orientation: Rotation) -> Self {
        Pose {
            position,
            orientation,
            frame,
            child,
        }
    }

    pub fn identity(frame: Frame) -> Self {
        Pose::new(frame, frame, Vec3::zeros(), Rotation::identity())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Result<Pose, GeometryError> {
    if a.child != b.frame {
        return Err(GeometryError::FrameMismatch {
            left: a.child,
            right: b.frame,
        });
    }
    Ok(Pose {
        position: a.orientation.rotate(&b.position) + a.position,
        orientation: a.orientation * b.orientation,
        frame: a.frame,
        child: b.child,
    })
}

pub fn invert(a: &Pose) -> Pose {
    let inv = a.orientation.inverse();
    Pose {
        position: -inv.rotate(&a.position),
        orientation: inv,
        frame: a.child,
        child: a.frame,
    }
}

pub fn transform_point(a: &Pose, p: &Vec3) -> Vec3 {
    a.orientation.rotate(p) + a.position
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    /// Horizontal half field of view, radians.
    pub h_half_fov: f64,
    /// Vertical half field of view, radians.
    pub v_half_fov: f64,
    /// Meters.
    pub max_range: f64,
}

impl CameraModel {
    pub fn new(h_half_fov: f64, v_half_fov: f64, max_range: f64) -> Result<Self, GeometryError> {
        let cam = CameraModel {
            h_half_fov,
            v_half_fov,
            max_range,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fov_ok = |a: f64| a.is_finite() && a > 0.0 && a < FRAC_PI_2;
        if !fov_ok(self.h_half_fov) || !fov_ok(self.v_half_fov) {
            return Err(GeometryError::InvalidCamera(
                "half-FOV must lie in (0, π/2)",
            ));
        }
        if !(self.max_range.is_finite() && self.max_range > 0.0) {
            return Err(GeometryError::InvalidCamera("max range must be positive"));
        }
        Ok(())
    }
}

impl Default for CameraModel {
    /// A wide 4:3 camera, 80° x 64° full field of view.
    fn default() -> Self {
        CameraModel {
            h_half_fov: 40f64.to_radians(),
            v_half_fov: 32f64.to_radians(),
            max_range: 10.0,
        }
    }
}

/// Normalized image coordinates: `u` right, `v` down, both in `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

const FOV_EDGE_TOLERANCE: f64 = 1e-9;

/// Projects a world point into the camera, or `None` when it is behind the
/// camera, outside the field of view, or beyond the camera's range.
pub fn project(camera_pose: &Pose, target: &Vec3, cam: &CameraModel) -> Option<Pixel> {
    debug_assert_eq!(camera_pose.child, Frame::Camera);
    let local = invert(camera_pose);
    let p = transform_point(&local, target);
    if p.x <= 0.0 || p.norm() > cam.max_range {
        return None;
    }
    let u = (p.y / p.x) / cam.h_half_fov.tan();
    let v = (p.z / p.x) / cam.v_half_fov.tan();
    let limit = 1.0 + FOV_EDGE_TOLERANCE;
    if u.abs() > limit || v.abs() > limit {
        return None;
    }
    Some(Pixel {
        u: u.clamp(-1.0, 1.0),
        v: v.clamp(-1.0, 1.0),
    })
}

/// Camera pose in the world for a pitch-only, roll-stabilized gimbal.
pub fn gimbal_camera_pose(drone_pose: &Pose, gimbal_tilt: f64) -> Result<Pose, GeometryError> {
    if !(GIMBAL_TILT_MIN - 1e-12..=GIMBAL_TILT_MAX + 1e-12).contains(&gimbal_tilt) {
        return Err(GeometryError::TiltOutOfRange { tilt: gimbal_tilt });
    }
    let yaw = drone_pose.orientation.heading();
    Ok(Pose::new(
        drone_pose.frame,
        Frame::Camera,
        drone_pose.position,
        Rotation::about_z(yaw) * Rotation::about_y(gimbal_tilt),
    ))
}

/// Drone displacement from the pad center in a level frame aligned with the
/// drone heading: `north` forward, `east` right, `up` above the pad.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionTarget {
    pub north: f64,
    pub east: f64,
    pub up: f64,
}

impl PositionTarget {
    pub fn planar_distance(&self) -> f64 {
        self.north.hypot(self.east)
    }

    pub fn to_vec(&self) -> Vec3 {
        Vec3::new(self.north, self.east, self.up)
    }
}

/// Levels a marker pose (marker in camera) under the assumption that the pad
/// is horizontal.
///
/// The marker's reported orientation defines the level frame: its normal is
/// taken as vertical and the camera's right axis (horizontal for a
/// roll-stabilized gimbal) fixes the drone heading inside it. Returns the
/// position target and the pad yaw relative to the drone heading, clockwise
/// positive, i.e. the yaw the drone must turn through to align with the pad.
pub fn level_pad_target(marker_in_camera: &Pose) -> (PositionTarget, f64) {
    let r_inv = marker_in_camera.orientation.inverse();
    let camera_in_marker = -r_inv.rotate(&marker_in_camera.position);
    let right = r_inv.rotate(&Vec3::y());
    let heading = right.y.atan2(right.x) - FRAC_PI_2;
    let d = Rotation::about_z(-heading).rotate(&camera_in_marker);
    (
        PositionTarget {
            north: d.x,
            east: d.y,
            up: -d.z,
        },
        wrap_angle(-heading),
    )
}
