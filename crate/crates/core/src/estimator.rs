//! End-to-end filter run over a measurement stream: IMU propagation, clone
//! management, MSCKF feature updates and buffered GPS updates with online
//! extrinsic calibration.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::evaluation::{CalibRow, CalibTrace, TrajectoryLog, TrajectoryRow};
use crate::gps::{
    antenna_in_v, gps_iterated_update, gps_jacobian, init_alignment, interpolate_pose, naive_alignment,
    suppress_frozen_columns, Alignment, AlignmentPair, GateVerdict, GpsGate, GpsMeasurement, LeverArm,
};
use crate::propagation::{propagate, ImuSample, NoiseParams};
use crate::sim::MeasurementStream;
use crate::so3::{d_yaw_rotation, yaw_rotation, Mat3, Quaternion, Vec3};
use crate::state::{CalibFlags, ExtrinsicCalib, FilterState, ImuState, StateEstimate, DEFAULT_MAX_CLONES, IMU_DIM};
use crate::vision::{msckf_update, CameraModel, FeatureObservation, FeatureTrack, TriangulationParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitMode {
    /// First GPS fix anchors `ᴱp_V` around the configured yaw guess.
    Naive,
    /// Yaw from a least-squares fit once the VIO path is long enough.
    LeastSquares { min_distance: f64 },
}

/// Initial 1σ of the VIO state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitialSigma {
    pub tilt: f64,
    pub yaw: f64,
    pub position: f64,
    pub velocity: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

impl Default for InitialSigma {
    fn default() -> Self {
        Self {
            tilt: 0.01,
            yaw: 0.01,
            position: 1e-3,
            velocity: 0.05,
            gyro_bias: 2e-3,
            accel_bias: 2e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub max_clones: usize,
    /// Assumed feature noise, pixels.
    pub pixel_sigma: f64,
    pub imu_noise: NoiseParams,
    pub camera: CameraModel,
    pub triangulation: TriangulationParams,
    pub lever: LeverArm,
    pub gate: GpsGate,
    pub flags: CalibFlags,
    pub init: InitMode,
    /// Initial yaw extrinsic guess.
    pub psi_init: f64,
    pub sigma_psi0: f64,
    pub t_g_init: f64,
    pub sigma_t_g0: f64,
    pub initial_sigma: InitialSigma,
    /// Added to every GPS covariance (keeps noiseless runs well posed).
    pub gps_noise_floor: f64,
    /// Position magnitude treated as divergence.
    pub divergence_limit: f64,
    /// Relinearizations per GPS update; 1 is the plain EKF.
    pub gps_iterations: usize,
    /// After a naive anchor, horizontal distance (in GPS sigmas) the receiver
    /// must travel before the first update.
    pub first_update_baseline: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_clones: DEFAULT_MAX_CLONES,
            pixel_sigma: 1.0,
            imu_noise: NoiseParams::default(),
            camera: CameraModel::default(),
            triangulation: TriangulationParams::default(),
            lever: LeverArm::default(),
            gate: GpsGate::default(),
            flags: CalibFlags {
                psi: true,
                p_ev: true,
                t_g: false,
            },
            init: InitMode::Naive,
            psi_init: 0.0,
            sigma_psi0: 4.0,
            t_g_init: 0.0,
            sigma_t_g0: 0.05,
            initial_sigma: InitialSigma::default(),
            gps_noise_floor: 1e-6,
            divergence_limit: 1e6,
            gps_iterations: 20,
            first_update_baseline: 10.0,
        }
    }
}

/// Filter output at one camera frame, after all updates.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub t: f64,
    /// IMU position in `E`.
    pub p_e: Vec3,
    /// JPL quaternion mapping `E` vectors into the body frame.
    pub q_e: Quaternion,
    pub cov_p_e: Mat3,
    pub p_v: Vec3,
    pub q_vi: Quaternion,
    pub psi: f64,
    pub var_psi: f64,
    pub p_ev: Vec3,
    pub t_g: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub frames: usize,
    pub tracks_accepted: usize,
    pub tracks_rejected: usize,
    pub gps_accepted: usize,
    pub gps_widened: usize,
    pub gps_rejected: usize,
    /// Fixes that fell behind the clone window before they could be used.
    pub gps_dropped: usize,
    /// Fixes skipped after a naive anchor while the baseline was too short.
    pub gps_deferred: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub records: Vec<FrameRecord>,
    pub stats: RunStats,
    pub initialized_at: Option<f64>,
    pub diverged_at: Option<f64>,
    pub final_state: FilterState,
}

impl RunOutput {
    pub fn trajectory(&self) -> TrajectoryLog {
        let rows = self
            .records
            .iter()
            .map(|r| TrajectoryRow {
                t: r.t,
                p: r.p_e,
                q: r.q_e,
                sigma: Some(r.cov_p_e.diagonal().map(|v| v.max(0.0).sqrt())),
            })
            .collect();
        TrajectoryLog::new(rows).expect("frames are strictly increasing")
    }

    pub fn calib_trace(&self) -> CalibTrace {
        let rows = self
            .records
            .iter()
            .map(|r| CalibRow {
                t: r.t,
                psi: r.psi,
                sigma_psi: r.var_psi.max(0.0).sqrt(),
                p_ev: r.p_ev,
                t_g: r.t_g,
            })
            .collect();
        CalibTrace::new(rows).expect("frames are strictly increasing")
    }
}

fn initial_estimate(init: &ImuState, cfg: &FilterConfig) -> StateEstimate {
    let calib = ExtrinsicCalib::new(cfg.psi_init, Vec3::zeros(), cfg.t_g_init, cfg.flags);
    let mut state = FilterState::new(init.clone(), calib);
    state.max_clones = cfg.max_clones;
    let dim = state.layout().dim();
    let s = cfg.initial_sigma;
    let mut diag = DVector::zeros(dim);
    let mut set = |r: std::ops::Range<usize>, sigma: f64| {
        for i in r {
            diag[i] = sigma * sigma;
        }
    };
    set(0..2, s.tilt);
    set(2..3, s.yaw);
    set(3..6, s.position);
    set(6..9, s.velocity);
    set(9..12, s.gyro_bias);
    set(12..15, s.accel_bias);
    set(15..16, cfg.sigma_psi0);
    if cfg.flags.t_g {
        set(19..20, cfg.sigma_t_g0);
    }
    // The attitude block is specified in the V frame; rotate into the local
    // error frame of q_VI.
    let mut p = DMatrix::from_diagonal(&diag);
    let r = init.q_vi.rotation();
    let att = r * p.fixed_view::<3, 3>(0, 0) * r.transpose();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(&att);
    StateEstimate::new(state, p).expect("covariance sized from layout")
}

/// `ᴱp_V` from one fix: `p_EV = z − R(ψ) a(x)`; its error is `−H_rest δx + n`.
fn anchor_p_ev(est: &mut StateEstimate, meas: &GpsMeasurement, lever: &LeverArm) -> Result<(), Error> {
    let t = meas.t + est.state.calib.t_g;
    let pose = interpolate_pose(&est.state, t).map_err(|_| Error::Diverged { t })?;
    let a = antenna_in_v(&pose, lever);
    let (_, p_ev) = naive_alignment(&meas.p_eg, &a, est.state.calib.psi);
    est.state.calib.p_ev = p_ev;

    let mut h = gps_jacobian(&est.state, lever, meas.t).map_err(|_| Error::Diverged { t })?;
    suppress_frozen_columns(&est.state, &mut h);
    for c in 16..19 {
        h.column_mut(c).fill(0.0);
    }
    let a_mat = -h;
    let p = &est.cov.mat;
    let cross = &a_mat * p;
    let mut block = &cross * a_mat.transpose();
    for i in 0..3 {
        for j in 0..3 {
            block[(i, j)] += meas.cov[(i, j)];
        }
    }
    let n = p.nrows();
    let mut new = p.clone();
    for j in 0..n {
        for i in 0..3 {
            new[(16 + i, j)] = cross[(i, j)];
            new[(j, 16 + i)] = cross[(i, j)];
        }
    }
    new.view_mut((16, 16), (3, 3)).copy_from(&block);
    est.cov.mat = new;
    est.cov.symmetrize();
    Ok(())
}

fn enu_record(est: &StateEstimate) -> FrameRecord {
    let st = &est.state;
    let r_ev = yaw_rotation(st.calib.psi);
    let p = st.imu.p_vi;
    let p_e = st.calib.p_ev + r_ev * p;
    let w_e = r_ev * st.imu.q_vi.rotation().transpose();
    // ∂p_E/∂[δp, δψ, δp_EV]
    let mut j = DMatrix::zeros(3, est.cov.dim());
    j.view_mut((0, 3), (3, 3)).copy_from(&r_ev);
    j.view_mut((0, 15), (3, 1))
        .copy_from(&(d_yaw_rotation(st.calib.psi) * p));
    j.view_mut((0, 16), (3, 3)).copy_from(&Mat3::identity());
    let c = &j * &est.cov.mat * j.transpose();
    FrameRecord {
        t: st.imu.t,
        p_e,
        q_e: Quaternion::from_rotation(&w_e.transpose()),
        cov_p_e: Mat3::from_iterator(c.iter().copied()),
        p_v: p,
        q_vi: st.imu.q_vi,
        psi: st.calib.psi,
        var_psi: est.cov.mat[(15, 15)],
        p_ev: st.calib.p_ev,
        t_g: st.calib.t_g,
    }
}

fn is_diverged(est: &StateEstimate, limit: f64) -> bool {
    let s = &est.state;
    let finite = s.imu.p_vi.iter().chain(s.imu.v_vi.iter()).all(|v| v.is_finite()) && s.calib.psi.is_finite();
    !finite
        || s.imu.p_vi.norm() > limit
        || s.calib.p_ev.norm() > limit
        || (0..IMU_DIM + 4).any(|i| !(est.cov.mat[(i, i)] >= -1e-9) || !est.cov.mat[(i, i)].is_finite())
}

/// IMU samples bracketing `[t0, t1]`.
fn imu_window(samples: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let lo = samples.partition_point(|s| s.t <= t0 + 1e-9).saturating_sub(1);
    let hi = (samples.partition_point(|s| s.t < t1 - 1e-9) + 1).min(samples.len());
    &samples[lo..hi.max(lo)]
}

struct Runner<'a> {
    cfg: &'a FilterConfig,
    est: StateEstimate,
    tracks: BTreeMap<u64, Vec<FeatureObservation>>,
    pending_gps: VecDeque<GpsMeasurement>,
    alignment_pairs: Vec<AlignmentPair>,
    gate: GpsGate,
    initialized_at: Option<f64>,
    /// Naive-mode anchor fix, kept until the first update has enough baseline.
    anchor: Option<Vec3>,
    stats: RunStats,
}

impl Runner<'_> {
    fn vision_step(&mut self, t: f64, features: &[(u64, nalgebra::Vector2<f64>)]) {
        let seen: std::collections::BTreeSet<u64> = features.iter().map(|(id, _)| *id).collect();
        let mut ready: Vec<u64> = self.tracks.keys().filter(|id| !seen.contains(id)).copied().collect();
        for (id, uv) in features {
            let obs = self.tracks.entry(*id).or_default();
            obs.push(FeatureObservation { t, uv: *uv });
            if obs.len() >= self.cfg.max_clones {
                ready.push(*id);
            }
        }
        let window_full = self.est.state.clones.len() >= self.cfg.max_clones;
        if window_full {
            let oldest = self.est.state.clones.front().map(|c| c.t).unwrap_or(f64::NAN);
            for (id, obs) in &self.tracks {
                if obs.first().is_some_and(|o| (o.t - oldest).abs() < 1e-9) {
                    ready.push(*id);
                }
            }
        }
        ready.sort_unstable();
        ready.dedup();
        let batch: Vec<FeatureTrack> = ready
            .iter()
            .filter_map(|id| {
                self.tracks
                    .remove(id)
                    .map(|observations| FeatureTrack { id: *id, observations })
            })
            .filter(|tr| tr.observations.len() >= 2)
            .collect();
        if batch.is_empty() {
            return;
        }
        let report = msckf_update(
            &mut self.est,
            &batch,
            &self.cfg.camera,
            self.cfg.pixel_sigma,
            &self.cfg.triangulation,
        );
        self.stats.tracks_accepted += report.accepted.len();
        self.stats.tracks_rejected += report.rejected.len();
    }

    fn with_floor(&self, mut m: GpsMeasurement) -> GpsMeasurement {
        m.cov += Mat3::identity() * self.cfg.gps_noise_floor;
        m
    }

    fn gps_step(&mut self) -> Result<(), Error> {
        let (start, end) = match (self.est.state.clones.front(), self.est.state.clones.back()) {
            (Some(a), Some(b)) => (a.t, b.t),
            _ => return Ok(()),
        };
        while let Some(m) = self.pending_gps.front().copied() {
            let t = m.t + self.est.state.calib.t_g;
            if t < start - 1e-9 {
                self.pending_gps.pop_front();
                self.stats.gps_dropped += 1;
                continue;
            }
            if t > end + 1e-9 {
                break;
            }
            self.pending_gps.pop_front();
            let m = self.with_floor(m);
            if self.initialized_at.is_none() {
                self.try_initialize(&m)?;
                continue;
            }
            if let Some(anchor) = self.anchor {
                let sigma = m.cov[(0, 0)].max(m.cov[(1, 1)]).sqrt();
                if (m.p_eg - anchor).xy().norm() < self.cfg.first_update_baseline * sigma {
                    self.stats.gps_deferred += 1;
                    continue;
                }
                self.anchor = None;
            }
            let v = gps_iterated_update(
                &mut self.est,
                &m,
                &self.cfg.lever,
                &mut self.gate,
                self.cfg.gps_iterations,
            );
            match v {
                Ok(GateVerdict::Accepted { .. }) => self.stats.gps_accepted += 1,
                Ok(GateVerdict::AcceptedWidened { .. }) => self.stats.gps_widened += 1,
                Ok(GateVerdict::Rejected { .. }) => self.stats.gps_rejected += 1,
                Err(_) => self.stats.gps_dropped += 1,
            }
        }
        Ok(())
    }

    fn try_initialize(&mut self, m: &GpsMeasurement) -> Result<(), Error> {
        match self.cfg.init {
            InitMode::Naive => {}
            InitMode::LeastSquares { min_distance } => {
                let t = m.t + self.est.state.calib.t_g;
                let pose = interpolate_pose(&self.est.state, t).map_err(|_| Error::Diverged { t })?;
                let vio = antenna_in_v(&pose, &self.cfg.lever);
                self.alignment_pairs.push(AlignmentPair {
                    gps: m.p_eg,
                    vio,
                    weight: 3.0 / m.cov.trace().max(1e-12),
                });
                match init_alignment(&self.alignment_pairs, min_distance) {
                    Alignment::Ready { psi, .. } => self.est.state.calib.psi = psi,
                    Alignment::NotReady(_) => return Ok(()),
                }
            }
        }
        anchor_p_ev(&mut self.est, m, &self.cfg.lever)?;
        if self.cfg.init == InitMode::Naive {
            self.anchor = Some(m.p_eg);
        }
        self.initialized_at = Some(self.est.state.imu.t);
        Ok(())
    }
}

/// Runs the filter from `init` (the VIO-frame state at the first frame time
/// or earlier) over the whole stream.
pub fn run_filter(stream: &MeasurementStream, init: &ImuState, cfg: &FilterConfig) -> Result<RunOutput, Error> {
    let mut runner = Runner {
        cfg,
        est: initial_estimate(init, cfg),
        tracks: BTreeMap::new(),
        pending_gps: VecDeque::new(),
        alignment_pairs: Vec::new(),
        gate: cfg.gate.clone(),
        initialized_at: None,
        anchor: None,
        stats: RunStats::default(),
    };
    let mut gps = stream.gps.clone();
    gps.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut gps_iter = gps.into_iter().peekable();
    let mut records = Vec::new();
    let mut diverged_at = None;

    for frame in stream.frames.iter().filter(|f| f.t >= init.t - 1e-9) {
        let t = frame.t;
        let samples = imu_window(&stream.imu, runner.est.state.imu.t, t);
        propagate(&mut runner.est, samples, t, &cfg.imu_noise)?;
        if runner.est.state.clones.back().is_some_and(|c| c.t >= t - 1e-9) {
            continue;
        }
        runner.est.augment_clone(t).map_err(Error::from)?;
        runner.stats.frames += 1;

        runner.vision_step(t, &frame.features);

        while let Some(m) = gps_iter.next_if(|m| m.t + runner.est.state.calib.t_g <= t + 1e-9) {
            runner.pending_gps.push_back(m);
        }
        runner.gps_step()?;

        if runner.est.state.clones.len() >= cfg.max_clones {
            let gone = runner.est.marginalize_oldest_clone().map_err(Error::from)?;
            for obs in runner.tracks.values_mut() {
                obs.retain(|o| (o.t - gone.t).abs() >= 1e-9);
            }
            runner.tracks.retain(|_, obs| !obs.is_empty());
        }

        if is_diverged(&runner.est, cfg.divergence_limit) {
            diverged_at = Some(t);
            break;
        }
        if runner.initialized_at.is_some() {
            records.push(enu_record(&runner.est));
        }
    }

    runner.stats.gps_dropped += runner.pending_gps.len();
    Ok(RunOutput {
        records,
        stats: runner.stats,
        initialized_at: runner.initialized_at,
        diverged_at,
        final_state: runner.est.state,
    })
}
