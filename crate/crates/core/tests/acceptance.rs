//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does. Run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gimbal_landing::controller::{approach_command, descent_command, yaw_align_command};
use gimbal_landing::geometry::{
    compose, euler_to_rotation, invert, level_pad_target, rotation_to_euler, transform_point,
    wrap_angle, CameraModel, Frame, Pixel, Pose, PositionTarget, Rotation, Vec3, GIMBAL_TILT_MAX,
    GIMBAL_TILT_MIN,
};
use gimbal_landing::harness::export::write_campaign;
use gimbal_landing::harness::{campaign_configs, run_trial, CampaignResult, TrialResult};
use gimbal_landing::marker_model::{
    ambiguity_probability, Detection, MarkerSensor, PerceptionToggles, View,
};
use gimbal_landing::vehicle_sim::{step_dynamics, VehicleParams, VehicleState};
use gimbal_landing::{
    run_campaign, ControlCommand, Controller, ControllerConfig, Execution, FiducialKind,
    FiducialProfile, Phase, RunConfig, TrialConfig, DEFAULT_BASE_SEED,
};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TRIALS: usize = 20;
const MIN_SUCCESSES: usize = 18;
const CAMPAIGN_BUDGET: Duration = Duration::from_secs(120);
const MAX_MEDIAN_RADIUS: f64 = 0.28;
const GEOMETRY_CONFIGS: usize = 1000;
const INVERSE_TOL: f64 = 1e-6;
const ROUND_TRIP_TOL: f64 = 1e-9;
const FUZZ_STEPS: usize = 100_000;
const COMMAND_LIMIT: f64 = 0.2;
const TILT_MIN_DEG: f64 = -85.0;
const MIN_LATENCY: f64 = 0.5;
const MAX_DELIVERY_HZ: f64 = 7.0;
const TIME_EPS: f64 = 1e-9;
const FLIP_SAMPLES: usize = 10_000;
const FLIP_SIGMAS: f64 = 3.0;
const TRACKING_LIMIT: f64 = 0.1;

const SUCCESSFUL: [FiducialKind; 4] = [
    FiducialKind::AprilTag48h12,
    FiducialKind::AprilTag24h10,
    FiducialKind::WhyCodeOrig,
    FiducialKind::WhyCodeEllipse,
];

struct Report {
    failed: Vec<u8>,
}

impl Report {
    fn record(&mut self, id: u8, ok: bool, detail: String) {
        println!(
            "criterion {id}: {} {detail}",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            self.failed.push(id);
        }
    }
}

fn template(run: &RunConfig, kind: FiducialKind) -> TrialConfig {
    run.trial_config(kind, 0.0, 0)
}

fn campaigns(run: &RunConfig, execution: Execution) -> (Vec<CampaignResult>, Duration) {
    let start = Instant::now();
    let results = FiducialKind::ALL
        .iter()
        .map(|&k| run_campaign(&template(run, k), run.campaign.base_seed, execution).unwrap())
        .collect();
    (results, start.elapsed())
}

fn criterion_1(report: &mut Report, results: &[CampaignResult], elapsed: Duration) {
    let mut ok = elapsed <= CAMPAIGN_BUDGET;
    let mut detail = Vec::new();
    for c in results {
        assert_eq!(c.trials.len(), TRIALS);
        let good = if c.profile == FiducialKind::WhyCodeMulti {
            c.successes == 0
        } else {
            c.successes >= MIN_SUCCESSES
        };
        ok &= good;
        detail.push(format!("{} {}/{}", c.profile, c.successes, TRIALS));
    }
    report.record(
        1,
        ok,
        format!("{} in {:.1} s", detail.join(", "), elapsed.as_secs_f64()),
    );
}

fn criterion_2(report: &mut Report, results: &[CampaignResult]) {
    let medians: BTreeMap<FiducialKind, f64> = results
        .iter()
        .filter(|c| SUCCESSFUL.contains(&c.profile))
        .map(|c| {
            (
                c.profile,
                c.radius_summary
                    .as_ref()
                    .map_or(f64::INFINITY, |s| s.median),
            )
        })
        .collect();
    let best = medians[&FiducialKind::AprilTag48h12];
    let ok = medians.len() == SUCCESSFUL.len()
        && medians
            .values()
            .all(|&m| m >= best && m <= MAX_MEDIAN_RADIUS);
    let detail: Vec<String> = medians.iter().map(|(k, m)| format!("{k} {m:.3}")).collect();
    report.record(2, ok, format!("medians {}", detail.join(", ")));
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn criterion_3(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    let (mut inverse_err, mut round_trip_err) = (0.0f64, 0.0f64);
    for _ in 0..GEOMETRY_CONFIGS {
        // Forward model from plain matrices: drone, gimbal, level pad.
        let drone = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            -rng.random_range(0.1..3.0),
        );
        let heading = rng.random_range(-PI..PI);
        let tilt = rng.random_range(TILT_MIN_DEG.to_radians()..0.0);
        let pad = Vec3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            0.0,
        );
        let pad_heading = rng.random_range(-PI..PI);
        let cam = rz(heading) * ry(tilt);
        let marker = Pose::new(
            Frame::Camera,
            Frame::Marker,
            cam.transpose() * (pad - drone),
            Rotation::from_matrix(&(cam.transpose() * rz(pad_heading))),
        );
        let (target, yaw) = level_pad_target(&marker);
        let d = drone - pad;
        let (s, c) = heading.sin_cos();
        let want = Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, -d.z);
        inverse_err = inverse_err
            .max((target.to_vec() - want).norm())
            .max(wrap_angle(yaw - (pad_heading - heading)).abs());

        let mut unit = || rng.random_range(-1.0..1.0);
        let r = Rotation::from_wxyz(unit(), unit(), unit(), unit()).unwrap();
        let q = r.to_wxyz();
        round_trip_err = round_trip_err.max(
            Rotation::from_wxyz(q[0], q[1], q[2], q[3])
                .unwrap()
                .angle_to(&r),
        );
        let (roll, pitch, yaw) = (unit() * PI, unit() * (FRAC_PI_2 - 1e-3), unit() * PI);
        let e = rotation_to_euler(&euler_to_rotation(roll, pitch, yaw)).unwrap();
        round_trip_err = round_trip_err
            .max(wrap_angle(e.roll - roll).abs())
            .max((e.pitch - pitch).abs())
            .max(wrap_angle(e.yaw - yaw).abs());
        let pose = Pose::new(
            Frame::World,
            Frame::DroneBody,
            Vec3::new(unit(), unit(), unit()) * 10.0,
            r,
        );
        let p = Vec3::new(unit(), unit(), unit()) * 10.0;
        round_trip_err = round_trip_err
            .max((transform_point(&invert(&pose), &transform_point(&pose, &p)) - p).norm());
        let id = compose(&pose, &invert(&pose)).unwrap();
        round_trip_err = round_trip_err
            .max(id.position.norm())
            .max(id.orientation.angle_to(&Rotation::identity()));
    }
    report.record(
        3,
        inverse_err < INVERSE_TOL && round_trip_err < ROUND_TRIP_TOL,
        format!("{GEOMETRY_CONFIGS} configs, inverse error {inverse_err:.1e}, round trip error {round_trip_err:.1e}"),
    );
}

fn fuzz_detection(rng: &mut ChaCha8Rng, t: f64) -> Detection {
    let scale = if rng.random_bool(0.8) {
        1.0
    } else {
        10f64.powf(rng.random_range(0.0..5.0))
    };
    Detection {
        position_target: PositionTarget {
            north: rng.random_range(-1.0..1.0) * scale,
            east: rng.random_range(-1.0..1.0) * scale,
            up: rng.random_range(-0.2..1.5) * scale,
        },
        pixel: Pixel {
            u: rng.random_range(-1.0..1.0) * scale,
            v: rng.random_range(-1.0..1.0) * scale,
        },
        pad_yaw: rng.random_range(-PI..PI),
        timestamp: t,
        marker: FiducialKind::AprilTag48h12,
        ambiguity_flip: false,
        incidence: 0.0,
    }
}

fn criterion_4(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let params = VehicleParams::default();
    let (mut bad_cmd, mut bad_tilt, mut steps) = (0, 0, 0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    while steps < FUZZ_STEPS {
        let mut cfg = ControllerConfig::default();
        if rng.random_bool(0.5) {
            cfg.approach_gain = rng.random_range(0.0..50.0);
            cfg.tracking_gain_u = rng.random_range(-50.0..50.0);
            cfg.tracking_gain_v = rng.random_range(-50.0..50.0);
            cfg.yaw_align_gain = rng.random_range(-50.0..50.0);
        }
        let mut ctl = Controller::new(cfg, FiducialKind::ALL[rng.random_range(0..5)]);
        let mut state = VehicleState::on_ground(0.0, 0.0, 0.0);
        state.airborne = true;
        state.pose.position.z = -rng.random_range(0.2..2.0);
        let mut t = 0.0;
        // Every other run overrides the gimbal with long saturated pushes so
        // the tilt reaches both stops.
        let saturate = rng.random_bool(0.5);
        for i in 0..1000 {
            let dt = rng.random_range(0.001..0.1);
            t += dt;
            let det = rng.random_bool(0.6).then(|| fuzz_detection(&mut rng, t));
            let cmd: ControlCommand = ctl.step(det.as_ref(), -state.pose.position.z, t);
            let sym = |x: f64| (-COMMAND_LIMIT..=COMMAND_LIMIT).contains(&x);
            if !(sym(cmd.pitch) && sym(cmd.roll) && sym(cmd.yaw) && sym(cmd.gimbal_tilt))
                || !(-COMMAND_LIMIT..=0.0).contains(&cmd.throttle)
            {
                bad_cmd += 1;
            }
            let mut applied = cmd;
            if saturate {
                applied.gimbal_tilt = if (i / 250) % 2 == 0 {
                    -COMMAND_LIMIT
                } else {
                    COMMAND_LIMIT
                };
            }
            state = step_dynamics(&state, &applied, dt, &params);
            let tilt = state.gimbal_tilt.to_degrees();
            lo = lo.min(tilt);
            hi = hi.max(tilt);
            if !(TILT_MIN_DEG - 1e-9..=1e-9).contains(&tilt) {
                bad_tilt += 1;
            }
            steps += 1;
        }
    }
    assert!((GIMBAL_TILT_MIN.to_degrees() - TILT_MIN_DEG).abs() < 1e-9 && GIMBAL_TILT_MAX == 0.0);
    report.record(
        4,
        bad_cmd == 0 && bad_tilt == 0,
        format!(
            "{steps} steps, {bad_cmd} commands out of range, tilt seen in [{lo:.1}, {hi:.1}] deg"
        ),
    );
}

fn criterion_5(report: &mut Report, results: &[CampaignResult]) {
    let (mut min_latency, mut min_spacing, mut max_per_second) =
        (f64::INFINITY, f64::INFINITY, 0usize);
    let mut commands = 0;
    for r in results.iter().flat_map(|c| &c.trials) {
        for rec in &r.series {
            if let Some(src) = rec.cmd_source_t {
                min_latency = min_latency.min(rec.cmd_t - src);
                commands += 1;
            }
        }
        let times: Vec<f64> = r
            .series
            .iter()
            .filter(|x| x.det_capture_t.is_some())
            .map(|x| x.t)
            .collect();
        for w in times.windows(2) {
            min_spacing = min_spacing.min(w[1] - w[0]);
        }
        for (i, &t0) in times.iter().enumerate() {
            max_per_second =
                max_per_second.max(times[i..].iter().take_while(|&&t| t < t0 + 1.0).count());
        }
    }
    let ok = commands > 0
        && min_latency >= MIN_LATENCY - TIME_EPS
        && min_spacing >= 1.0 / MAX_DELIVERY_HZ - TIME_EPS
        && max_per_second as f64 <= MAX_DELIVERY_HZ;
    report.record(
        5,
        ok,
        format!(
            "{commands} detection-driven commands, min latency {min_latency:.3} s, min delivery spacing {min_spacing:.4} s, at most {max_per_second} per second"
        ),
    );
}

/// Camera aimed at the pad center from the south, at incidence `theta`.
fn aimed_sensor_samples(
    profile: FiducialProfile,
    theta: f64,
    altitude: f64,
    toggles: PerceptionToggles,
) -> Vec<Detection> {
    let depression = FRAC_PI_2 - theta;
    let drone = Pose::new(
        Frame::World,
        Frame::DroneBody,
        Vec3::new(-altitude / depression.tan(), 0.0, -altitude),
        Rotation::identity(),
    );
    let pad = Pose::new(
        Frame::World,
        Frame::Marker,
        Vec3::zeros(),
        Rotation::about_z(0.3),
    );
    let view = View {
        drone: &drone,
        gimbal_tilt: -depression,
        pad: &pad,
        sweeping: false,
    };
    let sensor = MarkerSensor::new(profile, CameraModel::default(), toggles);
    let mut rng = ChaCha8Rng::seed_from_u64(theta.to_bits());
    (0..FLIP_SAMPLES)
        .filter_map(|i| sensor.synthesize(&view, &mut rng, i as f64))
        .collect()
}

fn criterion_6(report: &mut Report, results: &[CampaignResult]) {
    let only_ambiguity = PerceptionToggles {
        ambiguity: true,
        ..PerceptionToggles::ideal()
    };
    let mut worst_sigma = 0.0f64;
    for kind in SUCCESSFUL {
        let profile = FiducialProfile::builtin(kind);
        for theta in [0.2, 0.8, 1.2] {
            let p = ambiguity_probability(theta, &profile);
            let dets = aimed_sensor_samples(profile.clone(), theta, 1.2, only_ambiguity);
            assert_eq!(dets.len(), FLIP_SAMPLES);
            let freq =
                dets.iter().filter(|d| d.ambiguity_flip).count() as f64 / FLIP_SAMPLES as f64;
            let sigma = (p * (1.0 - p) / FLIP_SAMPLES as f64).sqrt();
            worst_sigma = worst_sigma.max((freq - p).abs() / sigma);
        }
    }

    // Forced flips: outside the deadzone the planar command reverses; inside
    // it the planar output is zero.
    let cfg = ControllerConfig::default();
    let mut always = FiducialProfile::builtin(FiducialKind::AprilTag24h10);
    always.ambiguity_base = 1.0;
    let clean = &aimed_sensor_samples(always.clone(), 0.85, 1.2, PerceptionToggles::ideal())[0];
    let flipped = aimed_sensor_samples(always.clone(), 0.85, 1.2, only_ambiguity);
    let flipped = flipped.iter().find(|d| d.ambiguity_flip).unwrap();
    let (a, b) = (
        approach_command(clean, &cfg),
        approach_command(flipped, &cfg),
    );
    let jump = (a.pitch - b.pitch).hypot(a.roll - b.roll);
    let reversed = a.pitch * b.pitch + a.roll * b.roll < 0.0;
    let overhead = aimed_sensor_samples(always, 0.1f64.atan(), 1.0, only_ambiguity);
    let deadzone_ok = overhead.iter().filter(|d| d.ambiguity_flip).all(|d| {
        [
            approach_command(d, &cfg),
            yaw_align_command(d, &cfg),
            descent_command(d, &cfg),
        ]
        .iter()
        .all(|c| c.pitch == 0.0 && c.roll == 0.0)
    });

    // Campaign logs: every tracking command from a target inside the
    // deadzone has zero planar output, flipped or not.
    let mut inside = 0;
    let mut logged_ok = true;
    for rec in results
        .iter()
        .filter(|c| SUCCESSFUL.contains(&c.profile))
        .flat_map(|c| &c.trials)
        .flat_map(|r| &r.series)
    {
        let (Some(n), Some(e)) = (rec.det_north, rec.det_east) else {
            continue;
        };
        if matches!(
            rec.phase,
            Phase::Approach | Phase::YawAlign | Phase::Descent
        ) && n.hypot(e) < cfg.deadzone_radius
        {
            inside += 1;
            logged_ok &= rec.pitch == 0.0 && rec.roll == 0.0;
        }
    }

    report.record(
        6,
        worst_sigma <= FLIP_SIGMAS && jump > 0.1 && reversed && deadzone_ok && logged_ok && inside > 0,
        format!(
            "flip rate within {worst_sigma:.2} sigma, flip jump {jump:.3}, reversed {reversed}, deadzone zero {deadzone_ok}, {inside} logged deadzone commands zero {logged_ok}"
        ),
    );
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

fn criterion_7(report: &mut Report, run: &RunConfig, parallel: &[CampaignResult]) {
    let tmp = tempfile::tempdir().unwrap();
    let export = |results: &[CampaignResult], name: &str| {
        let root = tmp.path().join(name);
        for c in results {
            let configs = campaign_configs(&template(run, c.profile), run.campaign.base_seed);
            write_campaign(c, &configs, &root.join(c.profile.name())).unwrap();
        }
        snapshot(&root)
    };
    let reference = export(parallel, "parallel-1");
    let others = [
        export(&campaigns(run, Execution::Serial).0, "serial-1"),
        export(&campaigns(run, Execution::Parallel).0, "parallel-2"),
        export(&campaigns(run, Execution::Serial).0, "serial-2"),
    ];
    let identical = others.iter().all(|o| *o == reference);
    report.record(
        7,
        identical && !reference.is_empty(),
        format!(
            "{} files per export, serial and parallel over two runs identical {identical}",
            reference.len()
        ),
    );
}

fn approach_tracking(r: &TrialResult) -> (f64, f64, usize) {
    let recs: Vec<_> = r
        .series
        .iter()
        .filter(|x| x.phase == Phase::Approach && x.det_u.is_some())
        .collect();
    let n = recs.len();
    let mean = |f: &dyn Fn(&&gimbal_landing::harness::TickRecord) -> f64| {
        recs.iter().map(f).sum::<f64>() / n as f64
    };
    (
        mean(&|x| x.det_u.unwrap().abs()),
        mean(&|x| x.det_v.unwrap().abs()),
        n,
    )
}

fn criterion_8(report: &mut Report, run: &RunConfig) {
    let mut cfg = run.trial_config(FiducialKind::AprilTag48h12, 0.0, run.campaign.base_seed);
    cfg.perception.noise = false;
    cfg.perception.ambiguity = false;
    let r = run_trial(&cfg).unwrap();
    let (mu, mv, n) = approach_tracking(&r);
    report.record(
        8,
        n > 0 && mu < TRACKING_LIMIT && mv < TRACKING_LIMIT,
        format!(
            "48h12 seed {} pad yaw 0: mean |u| {mu:.3}, mean |v| {mv:.3} over {n} Approach frames",
            cfg.seed
        ),
    );

    // Informational: the same metric over the rotated-pad schedule.
    let mut tpl = template(run, FiducialKind::AprilTag48h12);
    tpl.perception.noise = false;
    tpl.perception.ambiguity = false;
    let configs = campaign_configs(&tpl, run.campaign.base_seed);
    let (mut pass, mut sum_u, mut sum_v) = (0, 0.0, 0.0);
    for c in &configs {
        let (u, v, _) = approach_tracking(&run_trial(c).unwrap());
        pass += usize::from(u < TRACKING_LIMIT && v < TRACKING_LIMIT);
        sum_u += u;
        sum_v += v;
    }
    let n = configs.len() as f64;
    println!(
        "criterion 8 (info): rotated-pad schedule {pass}/{} under the limit, mean |u| {:.3}, mean |v| {:.3}",
        configs.len(),
        sum_u / n,
        sum_v / n
    );
}

#[test]
fn acceptance() {
    let run = RunConfig::default();
    assert_eq!(run.campaign.base_seed, DEFAULT_BASE_SEED);
    let mut report = Report { failed: Vec::new() };

    let (results, elapsed) = campaigns(&run, Execution::Parallel);
    criterion_1(&mut report, &results, elapsed);
    criterion_2(&mut report, &results);
    criterion_3(&mut report);
    criterion_4(&mut report);
    criterion_5(&mut report, &results);
    criterion_6(&mut report, &results);
    criterion_7(&mut report, &run, &results);
    criterion_8(&mut report, &run);

    assert!(
        report.failed.is_empty(),
        "failed criteria: {:?}",
        report.failed
    );
}
