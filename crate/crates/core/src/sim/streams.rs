//! Synthetic IMU, feature and GPS streams sampled from a trajectory model.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::trajectory::{sample_groundtruth, Kinematics, TrajectoryModel};
use crate::error::SimError;
use crate::gps::GpsMeasurement;
use crate::propagation::{ImuSample, NoiseParams, GRAVITY};
use crate::so3::{yaw_rotation, Mat3, Quaternion, Vec3};
use crate::state::ImuState;
use crate::vision::CameraModel;

/// How landmarks are scattered around the trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandmarkField {
    pub count: usize,
    /// Horizontal margin added around the trajectory's bounding box.
    pub margin: f64,
    /// Vertical extent relative to the trajectory's height range.
    pub below: f64,
    pub above: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorConfig {
    pub imu_rate: f64,
    pub cam_rate: f64,
    pub gps_rate: f64,
    /// First GPS sample time (true IMU clock).
    pub gps_phase: f64,
    pub imu_noise: NoiseParams,
    pub pixel_sigma: f64,
    pub gps_cov: Mat3,
    pub camera: CameraModel,
    pub psi_true: f64,
    pub p_ev_true: Vec3,
    pub t_g_true: f64,
    /// Antenna position in the IMU frame.
    pub p_g_in_i: Vec3,
    pub landmarks: LandmarkField,
    pub seed: u64,
}

impl SensorConfig {
    /// 400 Hz IMU, 10 Hz camera and GPS, isotropic 0.2 m GPS noise.
    pub fn euroc_sim() -> Self {
        Self {
            imu_rate: 400.0,
            cam_rate: 10.0,
            gps_rate: 10.0,
            gps_phase: 0.05,
            imu_noise: NoiseParams::default(),
            pixel_sigma: 1.0,
            gps_cov: Mat3::identity() * 0.04,
            camera: CameraModel::default(),
            psi_true: 0.6,
            p_ev_true: Vec3::new(12.0, -7.0, 1.5),
            t_g_true: 0.0,
            p_g_in_i: Vec3::new(0.05, 0.0, 0.1),
            landmarks: LandmarkField {
                count: 300,
                margin: 10.0,
                below: 3.0,
                above: 5.0,
            },
            seed: 1,
        }
    }

    /// Same rates with `diag(1, 1, 4)` m² GPS noise and a denser, wider
    /// landmark field for vehicle routes.
    pub fn kaist_sim() -> Self {
        Self {
            gps_cov: Mat3::from_diagonal(&Vec3::new(1.0, 1.0, 4.0)),
            p_g_in_i: Vec3::new(0.3, 0.0, 1.2),
            landmarks: LandmarkField {
                count: 3000,
                margin: 25.0,
                below: 2.0,
                above: 10.0,
            },
            ..Self::euroc_sim()
        }
    }

    /// Every noise source switched off.
    pub fn noiseless(mut self) -> Self {
        self.imu_noise = NoiseParams::zero();
        self.pixel_sigma = 0.0;
        self.gps_cov = Mat3::zeros();
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, rate) in [
            ("imu_rate", self.imu_rate),
            ("cam_rate", self.cam_rate),
            ("gps_rate", self.gps_rate),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(SimError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.pixel_sigma < 0.0 || self.gps_phase < 0.0 {
            return Err(SimError::InvalidConfig("noise and phase must be non-negative".into()));
        }
        let n = self.imu_noise;
        if [n.gyro_noise, n.accel_noise, n.gyro_walk, n.accel_walk]
            .iter()
            .any(|v| *v < 0.0)
        {
            return Err(SimError::InvalidConfig(
                "IMU noise densities must be non-negative".into(),
            ));
        }
        let sym = (self.gps_cov - self.gps_cov.transpose()).abs().max();
        let min_eig = self.gps_cov.symmetric_eigen().eigenvalues.min();
        if sym > 1e-12 || min_eig < -1e-12 {
            return Err(SimError::InvalidConfig("GPS covariance must be symmetric PSD".into()));
        }
        Ok(())
    }
}

/// Features seen in one image.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraFrame {
    pub t: f64,
    /// Landmark id and normalized image coordinates.
    pub features: Vec<(u64, Vector2<f64>)>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MeasurementStream {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<CameraFrame>,
    pub gps: Vec<GpsMeasurement>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthSample {
    pub t: f64,
    pub q_vi: Quaternion,
    pub p: Vec3,
    pub v: Vec3,
    pub b_g: Vec3,
    pub b_a: Vec3,
}

impl GroundTruthSample {
    pub fn imu_state(&self) -> ImuState {
        ImuState {
            t: self.t,
            q_vi: self.q_vi,
            p_vi: self.p,
            v_vi: self.v,
            b_g: self.b_g,
            b_a: self.b_a,
        }
    }

    /// Body position and body-to-`E` rotation in the GPS frame.
    pub fn in_enu(&self, psi: f64, p_ev: &Vec3) -> (Vec3, Quaternion) {
        let r = yaw_rotation(psi);
        let w = r * self.q_vi.rotation().transpose();
        (p_ev + r * self.p, Quaternion::from_rotation(&w.transpose()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub stream: MeasurementStream,
    /// Groundtruth at every IMU sample.
    pub groundtruth: Vec<GroundTruthSample>,
    pub landmarks: Vec<Vec3>,
    /// Frames in which no landmark was visible.
    pub empty_frames: usize,
}

impl Simulation {
    /// Groundtruth sample closest to `t`.
    pub fn truth_at(&self, t: f64) -> &GroundTruthSample {
        let i = self.groundtruth.partition_point(|g| g.t < t);
        let candidates = [i.saturating_sub(1), i.min(self.groundtruth.len() - 1)];
        let best = candidates
            .into_iter()
            .min_by(|&a, &b| {
                (self.groundtruth[a].t - t)
                    .abs()
                    .total_cmp(&(self.groundtruth[b].t - t).abs())
            })
            .expect("non-empty candidates");
        &self.groundtruth[best]
    }
}

fn sample_times(rate: f64, phase: f64, duration: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let t = phase + k as f64 / rate;
        if t > duration + 1e-9 {
            break;
        }
        out.push(t.min(duration));
        k += 1;
    }
    out
}

fn gaussian3<R: Rng>(rng: &mut R) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn scatter_landmarks<R: Rng>(
    model: &TrajectoryModel,
    field: &LandmarkField,
    rng: &mut R,
) -> Result<Vec<Vec3>, SimError> {
    let duration = model.duration();
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    let steps = ((duration * 10.0).ceil() as usize).max(1);
    for k in 0..=steps {
        let p = sample_groundtruth(model, duration * k as f64 / steps as f64)?.p;
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    lo -= Vec3::new(field.margin, field.margin, field.below);
    hi += Vec3::new(field.margin, field.margin, field.above);
    Ok((0..field.count)
        .map(|_| {
            Vec3::new(
                rng.random_range(lo.x..=hi.x),
                rng.random_range(lo.y..=hi.y),
                rng.random_range(lo.z..=hi.z),
            )
        })
        .collect())
}

fn observe(k: &Kinematics, landmarks: &[Vec3], cam: &CameraModel) -> Vec<(u64, Vector2<f64>)> {
    let r_vc = cam.extrinsics.r_ic() * k.w.transpose();
    let limit = cam.half_fov.tan();
    landmarks
        .iter()
        .enumerate()
        .filter_map(|(id, lm)| {
            let pc = r_vc * (lm - k.p) + cam.extrinsics.p_i_in_c;
            if pc.z < cam.min_depth || pc.z > cam.max_depth {
                return None;
            }
            let uv = Vector2::new(pc.x / pc.z, pc.y / pc.z);
            (uv.x.abs() <= limit && uv.y.abs() <= limit).then_some((id as u64, uv))
        })
        .collect()
}

/// Deterministic given `cfg.seed`.
pub fn generate_streams(model: &TrajectoryModel, cfg: &SensorConfig) -> Result<Simulation, SimError> {
    cfg.validate()?;
    let duration = model.duration();
    if !(duration >= 0.0) {
        return Err(SimError::InvalidTrajectory("negative duration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let landmarks = scatter_landmarks(model, &cfg.landmarks, &mut rng)?;

    let noise = cfg.imu_noise;
    let dt = 1.0 / cfg.imu_rate;
    let mut b_g = Vec3::zeros();
    let mut b_a = Vec3::zeros();
    let imu_times = if duration > 0.0 {
        sample_times(cfg.imu_rate, 0.0, duration)
    } else {
        Vec::new()
    };
    let mut imu = Vec::with_capacity(imu_times.len());
    let mut groundtruth = Vec::with_capacity(imu_times.len());
    for (i, &t) in imu_times.iter().enumerate() {
        if i > 0 {
            b_g += gaussian3(&mut rng) * (noise.gyro_walk * dt.sqrt());
            b_a += gaussian3(&mut rng) * (noise.accel_walk * dt.sqrt());
        }
        let k = sample_groundtruth(model, t)?;
        let c = k.w.transpose();
        let omega = k.omega + b_g + gaussian3(&mut rng) * (noise.gyro_noise / dt.sqrt());
        let accel = c * (k.a - GRAVITY) + b_a + gaussian3(&mut rng) * (noise.accel_noise / dt.sqrt());
        imu.push(ImuSample { t, omega, accel });
        groundtruth.push(GroundTruthSample {
            t,
            q_vi: k.q_vi(),
            p: k.p,
            v: k.v,
            b_g,
            b_a,
        });
    }

    let pixel = cfg.pixel_sigma / cfg.camera.focal_px;
    let mut frames = Vec::new();
    let mut empty_frames = 0;
    if duration > 0.0 {
        for t in sample_times(cfg.cam_rate, 0.0, duration) {
            let k = sample_groundtruth(model, t)?;
            let mut features = observe(&k, &landmarks, &cfg.camera);
            for (_, uv) in &mut features {
                uv.x += pixel * rng.sample::<f64, _>(StandardNormal);
                uv.y += pixel * rng.sample::<f64, _>(StandardNormal);
            }
            if features.is_empty() {
                empty_frames += 1;
            }
            frames.push(CameraFrame { t, features });
        }
    }

    let chol = cholesky_psd(&cfg.gps_cov);
    let r_ev = yaw_rotation(cfg.psi_true);
    let mut gps = Vec::new();
    if duration > 0.0 {
        for tau in sample_times(cfg.gps_rate, cfg.gps_phase, duration) {
            let k = sample_groundtruth(model, tau)?;
            let truth = cfg.p_ev_true + r_ev * (k.p + k.w * cfg.p_g_in_i);
            gps.push(GpsMeasurement {
                t: tau - cfg.t_g_true,
                p_eg: truth + chol * gaussian3(&mut rng),
                cov: cfg.gps_cov,
            });
        }
    }

    Ok(Simulation {
        stream: MeasurementStream { imu, frames, gps },
        groundtruth,
        landmarks,
        empty_frames,
    })
}

/// Lower-triangular factor of a PSD matrix; semidefinite inputs fall back
/// to the eigen square root.
fn cholesky_psd(m: &Mat3) -> Mat3 {
    match m.cholesky() {
        Some(c) => c.l(),
        None => {
            let e = m.symmetric_eigen();
            let sqrt = e.eigenvalues.map(|v| v.max(0.0).sqrt());
            e.eigenvectors * Mat3::from_diagonal(&sqrt) * e.eigenvectors.transpose()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::trajectory::Hold;
    use approx::assert_relative_eq;

    #[test]
    fn noiseless_identity_gps_equals_groundtruth() {
        let mut cfg = SensorConfig::euroc_sim().noiseless();
        cfg.psi_true = 0.0;
        cfg.p_ev_true = Vec3::zeros();
        cfg.p_g_in_i = Vec3::zeros();
        let model = TrajectoryModel::sinusoid(5.0);
        let sim = generate_streams(&model, &cfg).unwrap();
        for g in &sim.stream.gps {
            let truth = sample_groundtruth(&model, g.t).unwrap();
            assert_relative_eq!(g.p_eg, truth.p, epsilon = 1e-12);
        }
    }

    #[test]
    fn gps_truth_satisfies_measurement_model() {
        let mut cfg = SensorConfig::euroc_sim().noiseless();
        cfg.t_g_true = 0.03;
        let model = TrajectoryModel::sinusoid(5.0);
        let sim = generate_streams(&model, &cfg).unwrap();
        for g in &sim.stream.gps {
            let k = sample_groundtruth(&model, g.t + cfg.t_g_true).unwrap();
            let expect = cfg.p_ev_true + yaw_rotation(cfg.psi_true) * (k.p + k.w * cfg.p_g_in_i);
            assert_relative_eq!(g.p_eg, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn rates_and_coverage() {
        let sim = generate_streams(&TrajectoryModel::sinusoid(60.0), &SensorConfig::euroc_sim()).unwrap();
        assert_eq!(sim.stream.imu.len(), 24001);
        assert_eq!(sim.stream.gps.len(), 600);
        assert_eq!(sim.stream.frames.len(), 601);
        assert!(sim
            .stream
            .imu
            .windows(2)
            .all(|w| w[1].t > w[0].t && w[1].t - w[0].t <= 2.0 / 400.0));
        assert!(sim.stream.gps.windows(2).all(|w| w[1].t > w[0].t));
        assert_eq!(sim.stream.imu.last().unwrap().t, 60.0);
        let mean_visible = sim.stream.frames.iter().map(|f| f.features.len()).sum::<usize>() as f64 / 601.0;
        assert!(mean_visible > 30.0, "only {mean_visible} features per frame");
    }

    #[test]
    fn anisotropic_gps_noise_statistics() {
        let mut cfg = SensorConfig::kaist_sim();
        cfg.gps_rate = 250.0;
        cfg.landmarks.count = 0;
        let model = TrajectoryModel::vehicle(50.0);
        let sim = generate_streams(&model, &cfg).unwrap();
        assert!(sim.stream.gps.len() >= 10_000);
        let r_ev = yaw_rotation(cfg.psi_true);
        let mut sq = Vec3::zeros();
        for g in &sim.stream.gps {
            let k = sample_groundtruth(&model, g.t).unwrap();
            let e = g.p_eg - (cfg.p_ev_true + r_ev * (k.p + k.w * cfg.p_g_in_i));
            sq += e.component_mul(&e);
        }
        let std = (sq / sim.stream.gps.len() as f64).map(f64::sqrt);
        for (got, want) in std.iter().zip([1.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 0.05 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let model = TrajectoryModel::sinusoid(3.0);
        let a = generate_streams(&model, &SensorConfig::euroc_sim()).unwrap();
        let b = generate_streams(&model, &SensorConfig::euroc_sim()).unwrap();
        assert_eq!(a, b);
        let mut cfg = SensorConfig::euroc_sim();
        cfg.seed = 2;
        assert_ne!(a, generate_streams(&model, &cfg).unwrap());
    }

    #[test]
    fn zero_duration_is_empty() {
        let sim = generate_streams(&TrajectoryModel::sinusoid(0.0), &SensorConfig::euroc_sim()).unwrap();
        assert!(sim.stream.imu.is_empty() && sim.stream.gps.is_empty() && sim.stream.frames.is_empty());
    }

    #[test]
    fn stationary_imu_reads_gravity() {
        let cfg = SensorConfig::euroc_sim().noiseless();
        let model = TrajectoryModel::with_holds(
            TrajectoryModel::sinusoid(30.0),
            vec![Hold {
                start: 10.0,
                duration: 5.0,
            }],
            1.0,
        )
        .unwrap();
        let sim = generate_streams(&model, &cfg).unwrap();
        let s = sim.stream.imu.iter().find(|s| (s.t - 12.0).abs() < 1e-9).unwrap();
        assert_relative_eq!(s.omega, Vec3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(s.accel.norm(), 9.81, epsilon = 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = SensorConfig::euroc_sim();
        cfg.imu_rate = 0.0;
        assert!(matches!(
            generate_streams(&TrajectoryModel::sinusoid(1.0), &cfg),
            Err(SimError::InvalidConfig(_))
        ));
    }
}
