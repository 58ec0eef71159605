//! On-disk outputs: per-tick logs, summaries and plot-ready tables.
//!
//! Layout of a trial directory:
//!
//! | file             | contents                                               |
//! |------------------|--------------------------------------------------------|
//! | `timeseries.csv` | one [`TickRecord`] per simulation tick                 |
//! | `summary.json`   | [`TrialSummary`], including the full config echo       |
//! | `tracking.csv`   | `t,u,v` of delivered detections                        |
//! | `trajectory.csv` | position target and pad yaw of delivered detections    |
//! | `commands.csv`   | five command channels per tick plus a flip marker      |
//!
//! A campaign directory holds `trial_00` .. `trial_19`, `radii.csv` and
//! `campaign_summary.json`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CampaignResult, RadiusSummary, Termination, TickRecord, TrialConfig, TrialResult};
use crate::controller::Phase;
use crate::marker_model::FiducialKind;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing input: {0}")]
    Missing(PathBuf),
    #[error("unknown figure '{0}' (expected radii, tracking, trajectory or commands)")]
    UnknownFigure(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ExportError + '_ {
    move |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> ExportError + '_ {
    move |source| ExportError::Json {
        path: path.to_path_buf(),
        source,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Flat row types with a fixed header, so empty tables still carry one.
pub trait Table: Serialize {
    const HEADER: &'static [&'static str];
}

impl Table for TickRecord {
    const HEADER: &'static [&'static str] = &[
        "t",
        "phase",
        "north",
        "east",
        "up",
        "yaw",
        "gimbal_tilt",
        "det_capture_t",
        "det_u",
        "det_v",
        "det_north",
        "det_east",
        "det_up",
        "det_pad_yaw",
        "det_flip",
        "pitch",
        "roll",
        "yaw_cmd",
        "throttle",
        "gimbal_cmd",
        "cmd_t",
        "cmd_source_t",
        "capture_flip",
    ];
}

fn write_csv<T: Table>(path: &Path, rows: &[T]) -> Result<(), ExportError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(T::HEADER).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, ExportError> {
    if !path.exists() {
        return Err(ExportError::Missing(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(csv_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(json_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExportError> {
    if !path.exists() {
        return Err(ExportError::Missing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub profile: FiducialKind,
    pub seed: u64,
    pub pad_yaw: f64,
    pub success: bool,
    pub landing_radius: Option<f64>,
    pub termination: Termination,
    pub duration: f64,
    pub ticks: usize,
    pub frames_captured: usize,
    pub detections_delivered: usize,
    pub detections_dropped: usize,
    pub flip_events: usize,
    pub config: TrialConfig,
}

impl TrialSummary {
    pub fn new(result: &TrialResult, config: &TrialConfig) -> Self {
        TrialSummary {
            profile: result.profile,
            seed: result.seed,
            pad_yaw: result.pad_yaw,
            success: result.success,
            landing_radius: result.landing_radius,
            termination: result.termination,
            duration: result.duration,
            ticks: result.series.len(),
            frames_captured: result.frames_captured,
            detections_delivered: result.detections_delivered,
            detections_dropped: result.detections_dropped,
            flip_events: result.flip_events.len(),
            config: config.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingRow {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

impl Table for TrackingRow {
    const HEADER: &'static [&'static str] = &["t", "u", "v"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub north: f64,
    pub east: f64,
    pub up: f64,
    pub pad_yaw: f64,
    pub flip: bool,
}

impl Table for TrajectoryRow {
    const HEADER: &'static [&'static str] = &["t", "north", "east", "up", "pad_yaw", "flip"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandRow {
    pub t: f64,
    pub phase: Phase,
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
    pub throttle: f64,
    pub gimbal_tilt: f64,
    /// A flipped detection was delivered (and acted on) this tick.
    pub flip: bool,
}

impl Table for CommandRow {
    const HEADER: &'static [&'static str] = &[
        "t",
        "phase",
        "pitch",
        "roll",
        "yaw",
        "throttle",
        "gimbal_tilt",
        "flip",
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub profile: FiducialKind,
    pub trial: usize,
    pub seed: u64,
    pub pad_yaw: f64,
    pub success: bool,
    pub termination: Termination,
    pub landing_radius: Option<f64>,
}

impl Table for RadiusRow {
    const HEADER: &'static [&'static str] = &[
        "profile",
        "trial",
        "seed",
        "pad_yaw",
        "success",
        "termination",
        "landing_radius",
    ];
}

pub fn tracking_rows(series: &[TickRecord]) -> Vec<TrackingRow> {
    series
        .iter()
        .filter_map(|r| {
            Some(TrackingRow {
                t: r.t,
                u: r.det_u?,
                v: r.det_v?,
            })
        })
        .collect()
}

pub fn trajectory_rows(series: &[TickRecord]) -> Vec<TrajectoryRow> {
    series
        .iter()
        .filter_map(|r| {
            Some(TrajectoryRow {
                t: r.t,
                north: r.det_north?,
                east: r.det_east?,
                up: r.det_up?,
                pad_yaw: r.det_pad_yaw?,
                flip: r.det_flip.unwrap_or(false),
            })
        })
        .collect()
}

pub fn command_rows(series: &[TickRecord]) -> Vec<CommandRow> {
    series
        .iter()
        .map(|r| CommandRow {
            t: r.t,
            phase: r.phase,
            pitch: r.pitch,
            roll: r.roll,
            yaw: r.yaw_cmd,
            throttle: r.throttle,
            gimbal_tilt: r.gimbal_cmd,
            flip: r.det_flip == Some(true),
        })
        .collect()
}

pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACKING_FILE: &str = "tracking.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const COMMANDS_FILE: &str = "commands.csv";
pub const RADII_FILE: &str = "radii.csv";
pub const CAMPAIGN_SUMMARY_FILE: &str = "campaign_summary.json";

/// Writes every per-trial file into `dir`.
pub fn write_trial(
    result: &TrialResult,
    config: &TrialConfig,
    dir: &Path,
) -> Result<(), ExportError> {
    ensure_dir(dir)?;
    write_csv(&dir.join(TIMESERIES_FILE), &result.series)?;
    write_json(&dir.join(SUMMARY_FILE), &TrialSummary::new(result, config))?;
    write_csv(&dir.join(TRACKING_FILE), &tracking_rows(&result.series))?;
    write_csv(&dir.join(TRAJECTORY_FILE), &trajectory_rows(&result.series))?;
    write_csv(&dir.join(COMMANDS_FILE), &command_rows(&result.series))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignTrialEntry {
    pub trial: usize,
    pub seed: u64,
    pub pad_yaw: f64,
    pub success: bool,
    pub termination: Termination,
    pub landing_radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub profile: FiducialKind,
    pub base_seed: u64,
    pub trials: usize,
    pub successes: usize,
    pub radius_summary: Option<RadiusSummary>,
    pub entries: Vec<CampaignTrialEntry>,
}

impl CampaignSummary {
    pub fn new(c: &CampaignResult) -> Self {
        CampaignSummary {
            profile: c.profile,
            base_seed: c.base_seed,
            trials: c.trials.len(),
            successes: c.successes,
            radius_summary: c.radius_summary.clone(),
            entries: c
                .trials
                .iter()
                .enumerate()
                .map(|(i, t)| CampaignTrialEntry {
                    trial: i,
                    seed: t.seed,
                    pad_yaw: t.pad_yaw,
                    success: t.success,
                    termination: t.termination,
                    landing_radius: t.landing_radius,
                })
                .collect(),
        }
    }
}

pub fn trial_dir_name(index: usize) -> String {
    format!("trial_{index:02}")
}

pub fn radius_rows(c: &CampaignResult) -> Vec<RadiusRow> {
    c.trials
        .iter()
        .enumerate()
        .map(|(i, t)| RadiusRow {
            profile: c.profile,
            trial: i,
            seed: t.seed,
            pad_yaw: t.pad_yaw,
            success: t.success,
            termination: t.termination,
            landing_radius: t.landing_radius,
        })
        .collect()
}

/// Writes a campaign: one directory per trial plus aggregate files.
/// `configs` are the per-trial configurations in landing order.
pub fn write_campaign(
    c: &CampaignResult,
    configs: &[TrialConfig],
    dir: &Path,
) -> Result<(), ExportError> {
    ensure_dir(dir)?;
    for (i, (trial, cfg)) in c.trials.iter().zip(configs).enumerate() {
        write_trial(trial, cfg, &dir.join(trial_dir_name(i)))?;
    }
    write_csv(&dir.join(RADII_FILE), &radius_rows(c))?;
    write_json(&dir.join(CAMPAIGN_SUMMARY_FILE), &CampaignSummary::new(c))
}

pub fn read_timeseries(path: &Path) -> Result<Vec<TickRecord>, ExportError> {
    read_csv(path)
}

pub fn read_summary(path: &Path) -> Result<TrialSummary, ExportError> {
    read_json(path)
}

pub fn read_campaign_summary(path: &Path) -> Result<CampaignSummary, ExportError> {
    read_json(path)
}

/// Recomputes the campaign aggregate from the trial summaries on disk.
pub fn recount_campaign(dir: &Path) -> Result<(usize, usize, Option<RadiusSummary>), ExportError> {
    let mut trials = 0;
    let mut successes = 0;
    let mut radii = Vec::new();
    for i in 0.. {
        let path = dir.join(trial_dir_name(i)).join(SUMMARY_FILE);
        if !path.exists() {
            break;
        }
        let s = read_summary(&path)?;
        trials += 1;
        successes += usize::from(s.success);
        radii.extend(s.landing_radius);
    }
    if trials == 0 {
        return Err(ExportError::Missing(
            dir.join(trial_dir_name(0)).join(SUMMARY_FILE),
        ));
    }
    Ok((trials, successes, RadiusSummary::from_samples(&radii)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Landing-radius distribution per marker system.
    Radii,
    /// Normalized pixel position of the pad over time.
    Tracking,
    /// Position target and pad yaw over time.
    Trajectory,
    /// Command channels with flip markers.
    Commands,
}

impl FromStr for Figure {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "radii" => Ok(Figure::Radii),
            "tracking" => Ok(Figure::Tracking),
            "trajectory" => Ok(Figure::Trajectory),
            "commands" => Ok(Figure::Commands),
            other => Err(ExportError::UnknownFigure(other.to_string())),
        }
    }
}

impl Figure {
    pub fn file_name(&self) -> &'static str {
        match self {
            Figure::Radii => RADII_FILE,
            Figure::Tracking => TRACKING_FILE,
            Figure::Trajectory => TRAJECTORY_FILE,
            Figure::Commands => COMMANDS_FILE,
        }
    }
}

/// Finds every `campaign_summary.json` below `root`, sorted by path.
fn find_campaign_summaries(root: &Path) -> Result<Vec<PathBuf>, ExportError> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let candidate = dir.join(CAMPAIGN_SUMMARY_FILE);
        if candidate.is_file() {
            found.push(candidate);
            continue;
        }
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Collects landing radii from every campaign below `root`, ordered by
/// marker system then trial index.
pub fn collect_radii(root: &Path) -> Result<Vec<RadiusRow>, ExportError> {
    if !root.is_dir() {
        return Err(ExportError::Missing(root.to_path_buf()));
    }
    let mut rows = Vec::new();
    for path in find_campaign_summaries(root)? {
        let s = read_campaign_summary(&path)?;
        rows.extend(s.entries.into_iter().map(|e| RadiusRow {
            profile: s.profile,
            trial: e.trial,
            seed: e.seed,
            pad_yaw: e.pad_yaw,
            success: e.success,
            termination: e.termination,
            landing_radius: e.landing_radius,
        }));
    }
    if rows.is_empty() {
        return Err(ExportError::Missing(root.join(CAMPAIGN_SUMMARY_FILE)));
    }
    rows.sort_by_key(|r| (r.profile, r.trial));
    Ok(rows)
}

/// Builds plot data for `figure` from existing outputs.
///
/// `input` is a directory holding campaigns for [`Figure::Radii`], or a trial
/// directory / `timeseries.csv` path for the per-trial figures. The table is
/// written to `output_dir` and its path returned.
pub fn plot_data(figure: Figure, input: &Path, output_dir: &Path) -> Result<PathBuf, ExportError> {
    let out = output_dir.join(figure.file_name());
    if figure == Figure::Radii {
        let rows = collect_radii(input)?;
        ensure_dir(output_dir)?;
        write_csv(&out, &rows)?;
        return Ok(out);
    }
    let series_path = if input.is_dir() {
        input.join(TIMESERIES_FILE)
    } else {
        input.to_path_buf()
    };
    let series = read_timeseries(&series_path)?;
    ensure_dir(output_dir)?;
    match figure {
        Figure::Tracking => write_csv(&out, &tracking_rows(&series))?,
        Figure::Trajectory => write_csv(&out, &trajectory_rows(&series))?,
        Figure::Commands => write_csv(&out, &command_rows(&series))?,
        Figure::Radii => unreachable!(),
    }
    Ok(out)
}
