use std::path::Path;
use std::process::Command;

use gpsvio::cli;
use gpsvio::config::RunConfig;
use gpsvio::error::Error;
use gpsvio::evaluation::Alignment;
use gpsvio::io;

fn config(text: &str, out: &Path) -> RunConfig {
    RunConfig::parse(text)
        .unwrap()
        .with_overrides([("output.dir", out.to_str().unwrap())])
        .unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gpsvio"))
}

#[test]
fn zero_duration_gives_empty_streams_with_headers() {
    let dir = tempfile::tempdir().unwrap();
    let s = cli::cmd_simulate(&config("sim.duration=0", dir.path())).unwrap();
    assert_eq!((s.imu_samples, s.frames, s.gps_fixes), (0, 0, 0));
    for (file, header) in [(io::IMU_FILE, io::IMU_HEADER), (io::GPS_FILE, io::GPS_HEADER)] {
        let text = std::fs::read_to_string(dir.path().join(file)).unwrap();
        assert_eq!(text.trim_end(), header.join(","));
    }
    let stream = io::read_stream(dir.path()).unwrap();
    assert!(stream.imu.is_empty() && stream.gps.is_empty() && stream.frames.is_empty());
}

#[test]
fn simulate_row_counts_follow_rates() {
    let dir = tempfile::tempdir().unwrap();
    let s = cli::cmd_simulate(&config("sim.duration=60", dir.path())).unwrap();
    assert!((23_990..=24_010).contains(&s.imu_samples), "{}", s.imu_samples);
    assert!((595..=605).contains(&s.gps_fixes), "{}", s.gps_fixes);
    let manifest = std::fs::read_to_string(dir.path().join(cli::MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("sim.duration=60"));
    assert!(manifest.contains("# seed 1"));
}

#[test]
fn manifest_reproduces_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sim.preset=kaist\nsim.duration=3\nsim.seed=4", dir.path());
    cli::cmd_simulate(&cfg).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(cli::MANIFEST_FILE)).unwrap();
    let again = RunConfig::parse(&manifest).unwrap();
    assert_eq!(again.entries(), cfg.entries());
}

#[test]
fn run_writes_outputs_and_fuses_better_than_gps() {
    let root = tempfile::tempdir().unwrap();
    let sim_dir = root.path().join("sim");
    let run_dir = root.path().join("run");
    let text = "sim.preset=kaist\nsim.duration=40\nsim.seed=3\nfilter.psi_error_deg=-70";
    cli::cmd_simulate(&config(text, &sim_dir)).unwrap();
    let cfg = config(text, &run_dir);
    let run = cli::cmd_run(&cfg, &sim_dir).unwrap();
    let report = std::fs::read_to_string(run_dir.join(cli::REPORT_FILE)).unwrap();
    assert!(report.contains("status=ok"));
    assert!(report.contains(&format!("gps_accepted={}", run.output.stats.gps_accepted)));

    let fused = cli::cmd_eval(
        &run_dir.join(cli::TRAJ_FILE),
        &sim_dir.join(cli::GROUNDTRUTH_ENU_FILE),
        Alignment::None,
        Some((&run_dir.join(cli::CALIB_FILE), cfg.scenario.sensor.psi_true)),
    )
    .unwrap();
    let raw = cli::cmd_eval(
        &sim_dir.join(io::GPS_FILE),
        &sim_dir.join(cli::GROUNDTRUTH_ANTENNA_FILE),
        Alignment::None,
        None,
    )
    .unwrap();
    assert!(fused.has_attitude && !raw.has_attitude);
    assert!(raw.to_text().contains("ate_deg=NaN"));
    assert!(fused.ate.translation_rmse < raw.ate.translation_rmse);
    assert!(fused.final_yaw_error.unwrap().abs() < 3f64.to_radians());
}

#[test]
fn identical_files_evaluate_to_zero() {
    let dir = tempfile::tempdir().unwrap();
    cli::cmd_simulate(&config("sim.duration=5", dir.path())).unwrap();
    let gt = dir.path().join(cli::GROUNDTRUTH_ENU_FILE);
    let r = cli::cmd_eval(&gt, &gt, Alignment::Se3, None).unwrap();
    assert!(r.ate.translation_rmse < 1e-9);
    assert!(r.ate.rotation_rmse_deg < 1e-6);
}

#[test]
fn missing_input_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let err = cli::cmd_run(&config("", &dir.path().join("out")), &missing).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("nowhere"), "{err}");
}

#[test]
fn sweep_writes_summary_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        "sim.preset=kaist\nsim.duration=30\nsweep.errors_deg=20,-170",
        dir.path(),
    );
    let rows = cli::cmd_sweep(&cfg).unwrap();
    assert_eq!(rows.len(), 2);
    let summary = std::fs::read_to_string(dir.path().join(cli::SWEEP_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.starts_with("initial_error_deg,final_error_deg"));
    for deg in [20.0, -170.0] {
        assert!(dir.path().join(cli::sweep_trace_name(deg)).exists());
    }
}

#[test]
fn observability_hold_adds_and_removes_a_direction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("sim.duration=20\nsim.holds=8:4\nobservability.step=0.5", dir.path());
    let rows = cli::cmd_observability(&cfg, None).unwrap();
    let dims: Vec<usize> = rows.iter().map(|r| r.report.null_dim).collect();
    let mut runs = dims.clone();
    runs.dedup();
    assert_eq!(runs, vec![3, 4, 3], "{dims:?}");
    for r in &rows {
        assert!(r.report.translation_null);
        assert_eq!(r.report.psi_observable, r.report.null_dim == 3);
    }
}

#[test]
fn observability_of_states_file() {
    let dir = tempfile::tempdir().unwrap();
    let base = config("sim.duration=4\nobservability.step=1", dir.path());
    let points = cli::trajectory_points(&base).unwrap();
    let file = dir.path().join("states.csv");
    io::write_analysis_states(&file, &points).unwrap();
    let from_file = cli::cmd_observability(&base, Some(&file)).unwrap();
    let direct = cli::cmd_observability(&base, None).unwrap();
    assert_eq!(from_file, direct);

    io::write_analysis_states(&file, &[]).unwrap();
    assert!(cli::cmd_observability(&base, Some(&file)).unwrap().is_empty());
    let text = std::fs::read_to_string(dir.path().join(cli::OBSERVABILITY_FILE)).unwrap();
    assert_eq!(
        text,
        "t,rank,null_dim,translation_null,psi_observable,horizontal_speed\n"
    );
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin().args(["run", "/definitely/not/here"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here"));

    let out = bin().args(["simulate", "--set", "sim.bogus=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out_dir = format!("output.dir={}", dir.path().display());
    let out = bin()
        .args(["simulate", "--set", &out_dir, "--set", "sim.duration=1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join(io::IMU_FILE).exists());
}

#[test]
fn binary_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    let out_dir = dir.path().join("out");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"sim": {{"duration": 2, "seed": 9}}, "output": {{"dir": "{}"}}}}"#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["--config", cfg.to_str().unwrap(), "simulate"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(out_dir.join(cli::MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("sim.seed=9"));
}
