//! Run configuration loaded from TOML. Every field is optional and falls
//! back to the built-in defaults; the resolved values are echoed into each
//! trial summary.
//!
//! ```toml
//! [campaign]
//! base_seed = 7
//!
//! [controller]
//! deadzone_radius = 0.25
//!
//! [profiles.whycode-orig]
//! ambiguity_base = 0.2
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::geometry::CameraModel;
use crate::harness::{HarnessError, SimSettings, TrialConfig};
use crate::marker_model::{FiducialKind, FiducialProfile, PerceptionToggles};
use crate::vehicle_sim::{LatencyConfig, VehicleParams};

/// Base seed used when none is given.
pub const DEFAULT_BASE_SEED: u64 = 7;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] HarnessError),
}

/// Per-marker overrides of the built-in profile values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileOverride {
    pub ambiguity_base: Option<f64>,
    pub detection_rate: Option<f64>,
    pub min_range: Option<f64>,
    pub max_range: Option<f64>,
    pub acquisition_loss: Option<f64>,
    pub baseline_loss: Option<f64>,
    pub position_noise_sigma: Option<f64>,
    pub view_bias_gain: Option<f64>,
}

impl ProfileOverride {
    pub fn apply(&self, p: &mut FiducialProfile) {
        let set = |dst: &mut f64, src: Option<f64>| {
            if let Some(v) = src {
                *dst = v;
            }
        };
        set(&mut p.ambiguity_base, self.ambiguity_base);
        set(&mut p.detection_rate, self.detection_rate);
        set(&mut p.min_range, self.min_range);
        set(&mut p.max_range, self.max_range);
        set(&mut p.acquisition_loss, self.acquisition_loss);
        set(&mut p.baseline_loss, self.baseline_loss);
        set(&mut p.position_noise_sigma, self.position_noise_sigma);
        set(&mut p.view_bias_gain, self.view_bias_gain);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartSettings {
    /// Planar distance from the pad at takeoff, m.
    pub distance: f64,
    /// Heading relative to the bearing of the pad, rad; π faces away.
    pub facing: f64,
}

impl Default for StartSettings {
    fn default() -> Self {
        StartSettings {
            distance: 2.5,
            facing: std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSettings {
    pub base_seed: u64,
}

impl Default for CampaignSettings {
    fn default() -> Self {
        CampaignSettings {
            base_seed: DEFAULT_BASE_SEED,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub campaign: CampaignSettings,
    pub start: StartSettings,
    pub sim: SimSettings,
    pub controller: ControllerConfig,
    pub vehicle: VehicleParams,
    pub latency: LatencyConfig,
    pub camera: CameraModel,
    pub perception: PerceptionToggles,
    pub profiles: BTreeMap<FiducialKind, ProfileOverride>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Checks every marker system's resolved trial configuration.
    pub fn validate(&self) -> Result<(), HarnessError> {
        FiducialKind::ALL
            .iter()
            .try_for_each(|&k| self.trial_config(k, 0.0, 0).validate())
    }

    pub fn profile(&self, kind: FiducialKind) -> FiducialProfile {
        let mut p = FiducialProfile::builtin(kind);
        if let Some(o) = self.profiles.get(&kind) {
            o.apply(&mut p);
        }
        p
    }

    pub fn trial_config(&self, kind: FiducialKind, pad_yaw: f64, seed: u64) -> TrialConfig {
        TrialConfig {
            profile: self.profile(kind),
            pad_yaw,
            start_distance: self.start.distance,
            start_facing: self.start.facing,
            seed,
            controller: self.controller.clone(),
            vehicle: self.vehicle.clone(),
            latency: self.latency,
            camera: self.camera,
            perception: self.perception,
            sim: self.sim.clone(),
        }
    }
}
