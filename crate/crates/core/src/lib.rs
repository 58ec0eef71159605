//! Software-in-the-loop simulation of gimbal-tracked fiducial landings.
//!
//! A drone takes off facing away from a landing pad, sweeps a pitch-only
//! gimbal until a marker is locked, then approaches, aligns yaw and descends
//! on delayed, noisy and occasionally flipped marker detections.
//!
//! Internally the world frame is North-East-Down; reported positions are
//! North/East/Up.

pub mod config;
pub mod controller;
pub mod geometry;
pub mod harness;
pub mod marker_model;
pub mod vehicle_sim;

pub use config::{RunConfig, DEFAULT_BASE_SEED};
pub use controller::{ControlCommand, Controller, ControllerConfig, Phase};
pub use harness::{run_campaign, run_trial, CampaignResult, Execution, TrialConfig, TrialResult};
pub use marker_model::{FiducialKind, FiducialProfile};
