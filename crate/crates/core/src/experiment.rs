//! Preset scenarios and the batch experiments built on them: simulate, run
//! the filter, and score the result against groundtruth.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::Error;
use crate::estimator::{run_filter, FilterConfig, InitialSigma, RunOutput};
use crate::evaluation::{convergence_time, yaw_error_series, TrajectoryLog, TrajectoryRow};
use crate::gps::LeverArm;
use crate::sim::{generate_streams, MeasurementStream, SensorConfig, Simulation, TrajectoryModel};
use crate::so3::{wrap_angle, yaw_rotation, Vec3};
use crate::state::{rotate_local, ImuState};

/// Initial yaw errors of the standard sweep, degrees.
pub const SWEEP_ERRORS_DEG: [f64; 8] = [20.0, -20.0, 70.0, -70.0, 120.0, -120.0, 170.0, -170.0];

/// A trajectory, its sensors, and the filter that consumes them.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub trajectory: TrajectoryModel,
    pub sensor: SensorConfig,
    pub filter: FilterConfig,
}

impl Scenario {
    /// Handheld-style 3D sinusoid with 0.2 m isotropic GPS.
    pub fn euroc(duration: f64) -> Self {
        Self::new(TrajectoryModel::sinusoid(duration), SensorConfig::euroc_sim())
    }

    /// Planar vehicle loop with diag(1, 1, 4) m² GPS.
    pub fn kaist(duration: f64) -> Self {
        Self::new(TrajectoryModel::vehicle(duration), SensorConfig::kaist_sim())
    }

    /// Filter noise models and lever arm matched to the sensors.
    pub fn new(trajectory: TrajectoryModel, sensor: SensorConfig) -> Self {
        let filter = matched_filter(&sensor);
        Self {
            trajectory,
            sensor,
            filter,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sensor.seed = seed;
        self
    }

    /// Sets the initial yaw guess to the true value plus `error`.
    pub fn with_psi_error(mut self, error: f64) -> Self {
        self.filter.psi_init = wrap_angle(self.sensor.psi_true + error);
        self
    }

    pub fn simulate(&self) -> Result<Simulation, Error> {
        Ok(generate_streams(&self.trajectory, &self.sensor)?)
    }

    /// Runs the filter on `sim`, started from the true VIO-frame state.
    pub fn run(&self, sim: &Simulation) -> Result<RunOutput, Error> {
        self.run_from(sim, &true_initial_state(sim)?)
    }

    pub fn run_from(&self, sim: &Simulation, init: &ImuState) -> Result<RunOutput, Error> {
        self.run_from_stream(&sim.stream, init)
    }

    pub fn run_from_stream(&self, stream: &MeasurementStream, init: &ImuState) -> Result<RunOutput, Error> {
        run_filter(stream, init, &self.filter)
    }

    /// Body-frame groundtruth expressed in `E`.
    pub fn groundtruth(&self, sim: &Simulation) -> TrajectoryLog {
        let rows = sim
            .groundtruth
            .iter()
            .map(|g| {
                let (p, q) = g.in_enu(self.sensor.psi_true, &self.sensor.p_ev_true);
                TrajectoryRow::new(g.t, p, q)
            })
            .collect();
        TrajectoryLog::new(rows).expect("groundtruth is strictly increasing")
    }

    /// True antenna positions in `E`, stamped on the GPS clock.
    pub fn antenna_groundtruth(&self, sim: &Simulation) -> TrajectoryLog {
        let r = yaw_rotation(self.sensor.psi_true);
        let rows = sim
            .groundtruth
            .iter()
            .map(|g| {
                let w = g.q_vi.rotation().transpose();
                let p = self.sensor.p_ev_true + r * (g.p + w * self.sensor.p_g_in_i);
                let (_, q) = g.in_enu(self.sensor.psi_true, &self.sensor.p_ev_true);
                TrajectoryRow::new(g.t - self.sensor.t_g_true, p, q)
            })
            .collect();
        TrajectoryLog::new(rows).expect("groundtruth is strictly increasing")
    }
}

/// Filter configuration whose noise models match `sensor`. Noiseless
/// features keep the default pixel noise so the update stays well posed.
pub fn matched_filter(sensor: &SensorConfig) -> FilterConfig {
    let defaults = FilterConfig::default();
    FilterConfig {
        pixel_sigma: if sensor.pixel_sigma > 0.0 {
            sensor.pixel_sigma
        } else {
            defaults.pixel_sigma
        },
        imu_noise: sensor.imu_noise,
        camera: sensor.camera,
        lever: LeverArm::new(sensor.p_g_in_i),
        ..defaults
    }
}

fn true_initial_state(sim: &Simulation) -> Result<ImuState, Error> {
    sim.groundtruth
        .first()
        .map(|g| g.imu_state())
        .ok_or(Error::Diverged { t: 0.0 })
}

/// Initial estimate drawn around `truth` from the filter's own prior, so
/// Monte-Carlo errors match the assumed initial covariance.
pub fn perturbed_initial_state<R: Rng>(truth: &ImuState, sigma: &InitialSigma, rng: &mut R) -> ImuState {
    let mut draw = |s: f64| Vec3::from_fn(|_, _| s * rng.sample::<f64, _>(StandardNormal));
    let tilt = draw(sigma.tilt);
    let dtheta_v = Vec3::new(tilt.x, tilt.y, sigma.yaw * tilt.z / sigma.tilt.max(f64::MIN_POSITIVE));
    let mut est = truth.clone();
    est.q_vi = rotate_local(&truth.q_vi, &(truth.q_vi.rotation() * dtheta_v));
    est.p_vi += draw(sigma.position);
    est.v_vi += draw(sigma.velocity);
    est.b_g += draw(sigma.gyro_bias);
    est.b_a += draw(sigma.accel_bias);
    est
}

/// Raw GPS fixes as `(t, position)` pairs.
pub fn raw_gps(sim: &Simulation) -> Vec<(f64, Vec3)> {
    sim.stream.gps.iter().map(|m| (m.t, m.p_eg)).collect()
}

/// One run of a yaw sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub initial_error: f64,
    /// Wrapped final yaw error, radians.
    pub final_error: f64,
    pub final_sigma: f64,
    /// First time after which `|error|` stays below the threshold.
    pub convergence_time: Option<f64>,
    pub diverged: bool,
    pub output: Option<RunOutput>,
}

/// Runs `base` once per initial yaw error, in parallel, on a shared
/// simulation. A failed run is reported as diverged; the sweep continues.
pub fn sweep(base: &Scenario, errors: &[f64], threshold: f64) -> Result<Vec<SweepRow>, Error> {
    let sim = base.simulate()?;
    let psi_true = base.sensor.psi_true;
    Ok(errors
        .par_iter()
        .map(|&e| {
            let scenario = base.clone().with_psi_error(e);
            let out = scenario.run(&sim).ok().filter(|o| o.diverged_at.is_none());
            let series = out
                .as_ref()
                .and_then(|o| yaw_error_series(&o.calib_trace(), psi_true).ok());
            match (out, series) {
                (Some(out), Some(series)) if !series.is_empty() => {
                    let last = series.last().expect("nonempty");
                    SweepRow {
                        initial_error: e,
                        final_error: last.error,
                        final_sigma: last.sigma,
                        convergence_time: convergence_time(&series, threshold),
                        diverged: false,
                        output: Some(out),
                    }
                }
                _ => SweepRow {
                    initial_error: e,
                    final_error: f64::NAN,
                    final_sigma: f64::NAN,
                    convergence_time: None,
                    diverged: true,
                    output: None,
                },
            }
        })
        .collect())
}
