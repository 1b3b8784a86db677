//! Commands behind the `gpsvio` binary. Each writes its files into the
//! configured output directory and returns a summary for printing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{ConfigError, Error};
use crate::estimator::RunOutput;
use crate::evaluation::{ate, yaw_error_series, Alignment, AteResult};
use crate::experiment::{sweep, SweepRow};
use crate::io;
use crate::observability::{classify_directions_with, AnalysisState, AttitudeTreatment, DirectionReport};
use crate::sim::sample_groundtruth;
use crate::so3::{wrap_angle, Vec3};
use crate::state::ImuState;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.csv";
pub const GROUNDTRUTH_ENU_FILE: &str = "groundtruth_enu.csv";
pub const GROUNDTRUTH_ANTENNA_FILE: &str = "groundtruth_antenna.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TRAJ_FILE: &str = "traj.csv";
pub const CALIB_FILE: &str = "calib.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const SWEEP_FILE: &str = "sweep_summary.csv";
pub const OBSERVABILITY_FILE: &str = "observability.csv";

/// Offset from the sensor to the feature used when observability points are
/// drawn from a trajectory.
pub const ANALYSIS_FEATURE_OFFSET: [f64; 3] = [4.0, 3.0, 2.0];

/// Reads the configuration at `path` (defaults when `None`) and applies
/// `key=value` overrides on top.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, Error> {
    let base = match path {
        Some(p) => RunConfig::parse(&io::read_text(p)?)?,
        None => RunConfig::default(),
    };
    let pairs = overrides
        .iter()
        .map(|o| {
            o.split_once('=').ok_or_else(|| ConfigError::InvalidValue {
                key: o.clone(),
                reason: "expected key=value".into(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(base.with_overrides(pairs)?)
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf, Error> {
    io::create_dir(&cfg.output_dir)?;
    Ok(cfg.output_dir.clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub imu_samples: usize,
    pub frames: usize,
    pub gps_fixes: usize,
    pub observations: usize,
    pub dir: PathBuf,
}

/// Simulates the configured scenario and writes the sensor streams, the
/// initial VIO state, groundtruth, and a manifest echoing the configuration.
pub fn cmd_simulate(cfg: &RunConfig) -> Result<SimulateSummary, Error> {
    let dir = output_dir(cfg)?;
    let sc = &cfg.scenario;
    let sim = sc.simulate()?;
    io::write_stream(&dir, &sim.stream)?;
    let states: Vec<ImuState> = sim.groundtruth.iter().map(|g| g.imu_state()).collect();
    io::write_imu_states(&dir.join(io::INIT_FILE), &states[..states.len().min(1)])?;
    io::write_imu_states(&dir.join(GROUNDTRUTH_FILE), &states)?;
    io::write_trajectory(&dir.join(GROUNDTRUTH_ENU_FILE), &sc.groundtruth(&sim))?;
    io::write_trajectory(&dir.join(GROUNDTRUTH_ANTENNA_FILE), &sc.antenna_groundtruth(&sim))?;

    let summary = SimulateSummary {
        imu_samples: sim.stream.imu.len(),
        frames: sim.stream.frames.len(),
        gps_fixes: sim.stream.gps.len(),
        observations: sim.stream.frames.iter().map(|f| f.features.len()).sum(),
        dir: dir.clone(),
    };
    let mut manifest = String::from("# gpsvio simulate\n");
    writeln!(manifest, "# seed {}", sc.sensor.seed).ok();
    writeln!(manifest, "# psi_true_rad {}", sc.sensor.psi_true).ok();
    writeln!(
        manifest,
        "# imu_samples {} frames {} gps_fixes {} observations {}",
        summary.imu_samples, summary.frames, summary.gps_fixes, summary.observations
    )
    .ok();
    manifest.push_str(&cfg.to_text());
    io::write_text(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub output: RunOutput,
    pub dir: PathBuf,
}

/// Runs the filter on streams previously written to `input`. Divergence
/// still writes every output, then returns [`Error::Diverged`].
pub fn cmd_run(cfg: &RunConfig, input: &Path) -> Result<RunSummary, Error> {
    let stream = io::read_stream(input)?;
    let init_path = input.join(io::INIT_FILE);
    let init = io::read_imu_states(&init_path)?
        .into_iter()
        .next()
        .ok_or_else(|| crate::error::IoError::Parse {
            path: init_path.display().to_string(),
            row: 2,
            field: "t".into(),
            reason: "initial state missing".into(),
        })?;
    let dir = output_dir(cfg)?;
    let output = cfg.scenario.run_from_stream(&stream, &init)?;
    io::write_trajectory(&dir.join(TRAJ_FILE), &output.trajectory())?;
    io::write_calib(&dir.join(CALIB_FILE), &output.calib_trace())?;
    io::write_text(&dir.join(REPORT_FILE), &run_report(&output))?;
    match output.diverged_at {
        Some(t) => Err(Error::Diverged { t }),
        None => Ok(RunSummary { output, dir }),
    }
}

fn run_report(out: &RunOutput) -> String {
    let s = &out.stats;
    let mut r = String::new();
    let status = if out.diverged_at.is_some() { "diverged" } else { "ok" };
    writeln!(r, "status={status}").ok();
    if let Some(t) = out.diverged_at {
        writeln!(r, "diverged_at={t}").ok();
    }
    match out.initialized_at {
        Some(t) => writeln!(r, "initialized_at={t}").ok(),
        None => writeln!(r, "initialized_at=none").ok(),
    };
    for (k, v) in [
        ("frames", s.frames),
        ("records", out.records.len()),
        ("tracks_accepted", s.tracks_accepted),
        ("tracks_rejected", s.tracks_rejected),
        ("gps_accepted", s.gps_accepted),
        ("gps_accepted_widened", s.gps_widened),
        ("gps_rejected", s.gps_rejected),
        ("gps_dropped", s.gps_dropped),
        ("gps_deferred", s.gps_deferred),
    ] {
        writeln!(r, "{k}={v}").ok();
    }
    if let Some(last) = out.records.last() {
        writeln!(r, "final_psi={}", last.psi).ok();
        writeln!(r, "final_sigma_psi={}", last.var_psi.max(0.0).sqrt()).ok();
        writeln!(r, "final_p_ev={},{},{}", last.p_ev.x, last.p_ev.y, last.p_ev.z).ok();
    }
    r
}

/// Runs every configured initial yaw error on one simulation (in parallel)
/// and writes a calibration trace per run plus a summary table.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<Vec<SweepRow>, Error> {
    let dir = output_dir(cfg)?;
    let rows = sweep(&cfg.scenario, &cfg.sweep_errors, cfg.sweep_threshold)?;
    let mut summary = String::from("initial_error_deg,final_error_deg,final_sigma_deg,convergence_time_s,diverged\n");
    for row in &rows {
        let deg = row.initial_error.to_degrees();
        if let Some(out) = &row.output {
            io::write_calib(&dir.join(sweep_trace_name(deg)), &out.calib_trace())?;
        }
        writeln!(
            summary,
            "{},{},{},{},{}",
            deg,
            row.final_error.to_degrees(),
            row.final_sigma.to_degrees(),
            row.convergence_time.unwrap_or(f64::NAN),
            row.diverged
        )
        .ok();
    }
    io::write_text(&dir.join(SWEEP_FILE), &summary)?;
    Ok(rows)
}

/// File name of one sweep run's calibration trace.
pub fn sweep_trace_name(initial_error_deg: f64) -> String {
    format!(
        "calib_{}{:.0}.csv",
        if initial_error_deg < 0.0 { "m" } else { "p" },
        initial_error_deg.abs()
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityRow {
    pub t: f64,
    pub report: DirectionReport,
}

/// Rank and null-space classification at each analysis point: read from
/// `states` when given, otherwise sampled from the configured trajectory
/// every `observability.step` seconds.
pub fn cmd_observability(cfg: &RunConfig, states: Option<&Path>) -> Result<Vec<ObservabilityRow>, Error> {
    let points = match states {
        Some(path) => io::read_analysis_states(path)?,
        None => trajectory_points(cfg)?,
    };
    let cam = cfg.scenario.sensor.camera.extrinsics;
    let rows: Vec<ObservabilityRow> = points
        .iter()
        .map(|(t, s)| ObservabilityRow {
            t: *t,
            report: classify_directions_with(s, &cam, AttitudeTreatment::Anchored, cfg.observability_tolerance),
        })
        .collect();
    let dir = output_dir(cfg)?;
    let mut text = String::from("t,rank,null_dim,translation_null,psi_observable,horizontal_speed\n");
    for r in &rows {
        let d = &r.report;
        writeln!(
            text,
            "{},{},{},{},{},{}",
            r.t, d.rank, d.null_dim, d.translation_null, d.psi_observable, d.horizontal_speed
        )
        .ok();
    }
    io::write_text(&dir.join(OBSERVABILITY_FILE), &text)?;
    Ok(rows)
}

/// Groundtruth analysis points along the configured trajectory.
pub fn trajectory_points(cfg: &RunConfig) -> Result<Vec<(f64, AnalysisState)>, Error> {
    let sc = &cfg.scenario;
    let duration = sc.trajectory.duration();
    let n = (duration / cfg.observability_step + 1e-9).floor() as usize;
    (0..=n)
        .map(|k| {
            let t = k as f64 * cfg.observability_step;
            let kin = sample_groundtruth(&sc.trajectory, t)?;
            Ok((
                t,
                AnalysisState {
                    q_vi: kin.q_vi(),
                    v_vi: kin.v,
                    p_vi: kin.p,
                    p_f: kin.p + Vec3::from(ANALYSIS_FEATURE_OFFSET),
                    psi: sc.sensor.psi_true,
                    p_ev: sc.sensor.p_ev_true,
                },
            ))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ate: AteResult,
    /// False for position-only input (raw GPS); the degree figure is then
    /// undefined.
    pub has_attitude: bool,
    /// Wrapped final yaw error when a calibration trace and truth are given.
    pub final_yaw_error: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let deg = if self.has_attitude {
            self.ate.rotation_rmse_deg
        } else {
            f64::NAN
        };
        let mut s = format!(
            "ate_m={}\nate_deg={}\npairs={}\n",
            self.ate.translation_rmse, deg, self.ate.pairs
        );
        if let Some(e) = self.final_yaw_error {
            writeln!(s, "final_yaw_error_deg={}", e.to_degrees()).ok();
        }
        s
    }
}

/// ATE of `est` (trajectory or GPS file) against `gt`, plus the final yaw
/// error of an optional calibration trace against `psi_true`.
pub fn cmd_eval(est: &Path, gt: &Path, alignment: Alignment, calib: Option<(&Path, f64)>) -> Result<EvalReport, Error> {
    let (est_log, has_attitude) = io::read_positions(est)?;
    let gt_log = io::read_trajectory(gt)?;
    let ate = ate(&est_log, &gt_log, alignment)?;
    let final_yaw_error = match calib {
        Some((path, psi_true)) => {
            let trace = io::read_calib(path)?;
            yaw_error_series(&trace, psi_true)?.last().map(|e| wrap_angle(e.error))
        }
        None => None,
    };
    Ok(EvalReport {
        ate,
        has_attitude,
        final_yaw_error,
    })
}
