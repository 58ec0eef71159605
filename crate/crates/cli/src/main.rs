//! Command-line front end for the landing simulator.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 the trial ran but did not
//! land on the pad.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gimbal_landing::harness::export::{self, Figure};
use gimbal_landing::harness::{campaign_configs, run_campaign, run_trial, Execution};
use gimbal_landing::vehicle_sim::LatencyConfig;
use gimbal_landing::{FiducialKind, RunConfig};

const OUT_ENV: &str = "GIMBAL_LANDING_OUT";

#[derive(Parser)]
#[command(
    name = "gimbal-landing",
    version,
    about = "Gimbal-tracking fiducial landing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly one landing attempt.
    Trial(TrialArgs),
    /// Run the 20-trial rotated-pad experiment.
    Campaign(CampaignArgs),
    /// Extract plot-ready tables from earlier outputs.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with parameter overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root directory.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
    /// Never flip the marker orientation.
    #[arg(long)]
    disable_ambiguity: bool,
    /// Deliver every detection on the tick it was captured.
    #[arg(long)]
    disable_latency: bool,
    /// Report exact marker positions.
    #[arg(long)]
    disable_noise: bool,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if self.disable_ambiguity {
            cfg.perception.ambiguity = false;
        }
        if self.disable_noise {
            cfg.perception.noise = false;
        }
        if self.disable_latency {
            cfg.latency = LatencyConfig::none(cfg.latency.link_rate);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrialArgs {
    /// apriltag48h12, apriltag24h10, whycode-orig, whycode-ellipse or whycode-multi.
    #[arg(long, value_parser = parse_profile)]
    profile: FiducialKind,
    /// Trial seed; defaults to the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Pad heading in degrees, counterclockwise seen from above.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pad_yaw: f64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
#[group(id = "which", required = true, args = ["profile", "all"])]
struct CampaignArgs {
    /// One marker system, by name.
    #[arg(long, value_parser = parse_profile)]
    profile: Option<FiducialKind>,
    /// Every built-in marker system.
    #[arg(long)]
    all: bool,
    /// Base seed; defaults to the configured one.
    #[arg(long)]
    seed: Option<u64>,
    /// Run trials one after another instead of in parallel.
    #[arg(long)]
    serial: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PlotArgs {
    /// radii, tracking, trajectory or commands.
    #[arg(long, value_parser = parse_figure)]
    figure: Figure,
    /// Campaign root for `radii`; trial directory or timeseries file otherwise.
    /// Defaults to the output root.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output root; the table lands in `<out>/plots`.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
}

fn parse_profile(s: &str) -> Result<FiducialKind, String> {
    s.parse()
        .map_err(|e: gimbal_landing::marker_model::ProfileError| e.to_string())
}

fn parse_figure(s: &str) -> Result<Figure, String> {
    s.parse().map_err(|_| {
        format!("unknown figure '{s}' (expected one of: radii, tracking, trajectory, commands)")
    })
}

fn trial(args: &TrialArgs) -> Result<ExitCode> {
    let run = args.common.run_config()?;
    let seed = args.seed.unwrap_or(run.campaign.base_seed);
    let cfg = run.trial_config(args.profile, args.pad_yaw.to_radians(), seed);
    let result = run_trial(&cfg)?;
    let dir = args.common.out.join(format!("{}-seed{seed}", args.profile));
    export::write_trial(&result, &cfg, &dir)?;
    let radius = result
        .landing_radius
        .map_or_else(|| "-".to_string(), |r| format!("{r:.3} m"));
    println!(
        "{}: {:?}, radius {radius}, {:.1} s -> {}",
        args.profile,
        result.termination,
        result.duration,
        dir.display()
    );
    Ok(if result.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn campaign(args: &CampaignArgs) -> Result<ExitCode> {
    let mut run = args.common.run_config()?;
    if let Some(seed) = args.seed {
        run.campaign.base_seed = seed;
    }
    let base_seed = run.campaign.base_seed;
    let kinds = match args.profile {
        Some(k) if !args.all => vec![k],
        _ => FiducialKind::ALL.to_vec(),
    };
    let execution = if args.serial {
        Execution::Serial
    } else {
        Execution::Parallel
    };

    println!(
        "{:<16} {:>9} {:>14}",
        "profile", "successes", "median radius"
    );
    for kind in kinds {
        let template = run.trial_config(kind, 0.0, 0);
        let result = run_campaign(&template, base_seed, execution)?;
        let dir = args.common.out.join(kind.name());
        export::write_campaign(&result, &campaign_configs(&template, base_seed), &dir)?;
        let median = result
            .radius_summary
            .as_ref()
            .map_or_else(|| "-".to_string(), |s| format!("{:.3}", s.median));
        println!(
            "{:<16} {:>6}/{:<2} {:>14}",
            kind.name(),
            result.successes,
            result.trials.len(),
            median
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn plotdata(args: &PlotArgs) -> Result<ExitCode> {
    let input = args.input.as_deref().unwrap_or(&args.out);
    let out_dir = args.out.join("plots");
    let path = export::plot_data(args.figure, input, &out_dir).with_context(|| {
        format!(
            "building {} plot data from {}",
            args.figure.file_name(),
            input.display()
        )
    })?;
    println!("{}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Trial(a) => trial(a),
        Command::Campaign(a) => campaign(a),
        Command::Plotdata(a) => plotdata(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
