//! GPS position update with online estimation of the ENU/VIO extrinsics.
//!
//! Measurement model, evaluated at the IMU pose interpolated between the two
//! clones that bracket `t + t_G`:
//!
//! `z = ᴱp_V + R(ψ) (ᵛp_I + R_VIᵀ ᴵp_G)`
//!
//! with `R(ψ)` the yaw rotation from `V` to `E`.

use nalgebra::{DMatrix, DVector};

use crate::error::GpsError;
use crate::so3::{
    d_yaw_rotation, exp_so3, left_jacobian_inv, log_so3, right_jacobian, right_jacobian_inv, skew, wrap_angle,
    yaw_rotation, Mat3, Vec3,
};
use crate::state::{FilterState, StateEstimate};
use crate::stats::{chi2_95, chi2_quantile};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpsMeasurement {
    /// GPS clock time.
    pub t: f64,
    /// ENU antenna position.
    pub p_eg: Vec3,
    pub cov: Mat3,
}

/// Antenna position in the IMU frame, `ᴵp_G`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LeverArm {
    pub p_g_in_i: Vec3,
}

impl LeverArm {
    pub fn new(p_g_in_i: Vec3) -> Self {
        Self { p_g_in_i }
    }
}

/// IMU pose interpolated inside the clone window.
#[derive(Clone, Debug)]
pub struct InterpolatedPose {
    pub a: usize,
    pub b: usize,
    pub lambda: f64,
    pub span: f64,
    /// Body-to-`V` rotation at the interpolation time.
    pub w: Mat3,
    pub p: Vec3,
    /// `log(W_aᵀ W_b)`.
    pub phi: Vec3,
}

const WINDOW_EPS: f64 = 1e-9;

pub fn interpolate_pose(state: &FilterState, t: f64) -> Result<InterpolatedPose, GpsError> {
    let (start, end) = match (state.clones.front(), state.clones.back()) {
        (Some(f), Some(l)) => (f.t, l.t),
        _ => {
            return Err(GpsError::OutsideWindow {
                t,
                start: f64::NAN,
                end: f64::NAN,
            })
        }
    };
    if t < start - WINDOW_EPS || t > end + WINDOW_EPS {
        return Err(GpsError::OutsideWindow { t, start, end });
    }
    let n = state.clones.len();
    let b = (1..n).find(|&i| state.clones[i].t >= t).unwrap_or(0);
    if b == 0 {
        let c = &state.clones[0];
        return Ok(InterpolatedPose {
            a: 0,
            b: 0,
            lambda: 0.0,
            span: 0.0,
            w: c.q.rotation().transpose(),
            p: c.p,
            phi: Vec3::zeros(),
        });
    }
    let a = b - 1;
    let ca = &state.clones[a];
    let cb = &state.clones[b];
    let span = cb.t - ca.t;
    let lambda = ((t - ca.t) / span).clamp(0.0, 1.0);
    let wa = ca.q.rotation().transpose();
    let wb = cb.q.rotation().transpose();
    let phi = log_so3(&(wa.transpose() * wb));
    Ok(InterpolatedPose {
        a,
        b,
        lambda,
        span,
        w: wa * exp_so3(&(lambda * phi)),
        p: ca.p * (1.0 - lambda) + cb.p * lambda,
        phi,
    })
}

/// Antenna position in `V`.
pub fn antenna_in_v(pose: &InterpolatedPose, lever: &LeverArm) -> Vec3 {
    pose.p + pose.w * lever.p_g_in_i
}

pub fn predict_gps(state: &FilterState, lever: &LeverArm, t_meas: f64) -> Result<Vec3, GpsError> {
    let pose = interpolate_pose(state, t_meas + state.calib.t_g)?;
    Ok(state.calib.p_ev + yaw_rotation(state.calib.psi) * antenna_in_v(&pose, lever))
}

/// Measurement Jacobian over the full error state (3 × dim). Columns of
/// frozen extrinsics are included; see [`suppress_frozen_columns`].
pub fn gps_jacobian(state: &FilterState, lever: &LeverArm, t_meas: f64) -> Result<DMatrix<f64>, GpsError> {
    let layout = state.layout();
    let pose = interpolate_pose(state, t_meas + state.calib.t_g)?;
    let r_ev = yaw_rotation(state.calib.psi);
    let p_g = lever.p_g_in_i;
    let mut h = DMatrix::zeros(3, layout.dim());

    // Orientation error at the interpolated pose, then chained to the clones.
    let d_theta = -r_ev * pose.w * skew(&p_g);
    let (ja, jb) = if pose.a == pose.b {
        (Mat3::identity(), Mat3::zeros())
    } else {
        let lp = pose.lambda * pose.phi;
        let jr = right_jacobian(&lp);
        let ja = exp_so3(&lp).transpose() - pose.lambda * jr * left_jacobian_inv(&pose.phi);
        let jb = pose.lambda * jr * right_jacobian_inv(&pose.phi);
        (ja, jb)
    };
    let mut add = |col: usize, m: &Mat3| {
        let mut v = h.view_mut((0, col), (3, 3));
        v += m;
    };
    add(layout.clone_theta(pose.a), &(d_theta * ja));
    add(layout.clone_pos(pose.a), &(r_ev * (1.0 - pose.lambda)));
    if pose.a != pose.b {
        add(layout.clone_theta(pose.b), &(d_theta * jb));
        add(layout.clone_pos(pose.b), &(r_ev * pose.lambda));
    }

    let d_psi = d_yaw_rotation(state.calib.psi) * antenna_in_v(&pose, lever);
    h.view_mut((0, layout.psi_index()), (3, 1)).copy_from(&d_psi);
    h.view_mut((0, 16), (3, 3)).copy_from(&Mat3::identity());

    if layout.has_time_offset && pose.a != pose.b {
        let ca = &state.clones[pose.a];
        let cb = &state.clones[pose.b];
        let rate = (cb.p - ca.p + pose.w * pose.phi.cross(&p_g)) / pose.span;
        h.view_mut((0, 19), (3, 1)).copy_from(&(r_ev * rate));
    }
    Ok(h)
}

/// Zeroes the Jacobian columns of extrinsics whose estimation is off.
pub fn suppress_frozen_columns(state: &FilterState, h: &mut DMatrix<f64>) {
    for i in frozen_indices(state) {
        h.column_mut(i).fill(0.0);
    }
}

fn frozen_indices(state: &FilterState) -> Vec<usize> {
    let mut v = Vec::new();
    if !state.calib.flags.psi {
        v.push(15);
    }
    if !state.calib.flags.p_ev {
        v.extend(16..19);
    }
    v
}

/// Chi-square gate with a one-shot widening after repeated rejections.
#[derive(Clone, Debug, PartialEq)]
pub struct GpsGate {
    pub probability: f64,
    pub widened_probability: f64,
    /// Consecutive rejections before the widened gate is tried.
    pub patience: usize,
    pub consecutive_rejections: usize,
    pub accepted: usize,
    pub rejected: usize,
}

impl Default for GpsGate {
    fn default() -> Self {
        Self {
            probability: 0.95,
            widened_probability: 0.999,
            patience: 10,
            consecutive_rejections: 0,
            accepted: 0,
            rejected: 0,
        }
    }
}

impl GpsGate {
    fn threshold(&self, widened: bool) -> f64 {
        let p = if widened {
            self.widened_probability
        } else {
            self.probability
        };
        if (p - 0.95).abs() < 1e-12 {
            chi2_95(3)
        } else {
            chi2_quantile(3, p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GateVerdict {
    Accepted { nis: f64 },
    AcceptedWidened { nis: f64 },
    Rejected { nis: f64, threshold: f64 },
}

impl GateVerdict {
    pub fn is_accepted(&self) -> bool {
        !matches!(self, GateVerdict::Rejected { .. })
    }
}

/// EKF update with one GPS fix. Frozen extrinsics get neither Jacobian
/// columns nor gain rows.
pub fn gps_ekf_update(
    est: &mut StateEstimate,
    meas: &GpsMeasurement,
    lever: &LeverArm,
    gate: &mut GpsGate,
) -> Result<GateVerdict, GpsError> {
    let z_hat = predict_gps(&est.state, lever, meas.t)?;
    let mut h = gps_jacobian(&est.state, lever, meas.t)?;
    suppress_frozen_columns(&est.state, &mut h);
    let r = DVector::from_column_slice((meas.p_eg - z_hat).as_slice());
    let noise = DMatrix::from_column_slice(3, 3, meas.cov.as_slice());

    let ph = &est.cov.mat * h.transpose();
    let s = &h * &ph + &noise;
    let ch = s.clone().cholesky().ok_or(GpsError::SingularInnovation)?;
    let nis = r.dot(&ch.solve(&r));

    let widened = gate.consecutive_rejections >= gate.patience;
    let threshold = gate.threshold(widened);
    if nis > threshold {
        gate.rejected += 1;
        gate.consecutive_rejections = if widened { 0 } else { gate.consecutive_rejections + 1 };
        return Ok(GateVerdict::Rejected { nis, threshold });
    }
    gate.accepted += 1;
    gate.consecutive_rejections = 0;

    let mut k = ch.solve(&ph.transpose()).transpose();
    for i in frozen_indices(&est.state) {
        k.row_mut(i).fill(0.0);
    }
    // Joseph form, expanded: P − K H P − P Hᵀ Kᵀ + K S Kᵀ.
    let khp = &k * ph.transpose();
    let ksk = &k * &s * k.transpose();
    est.cov.mat = &est.cov.mat - &khp - khp.transpose() + ksk;
    est.cov.symmetrize();
    let dx = &k * &r;
    est.apply_correction(&dx).expect("correction sized from layout");
    Ok(if widened {
        GateVerdict::AcceptedWidened { nis }
    } else {
        GateVerdict::Accepted { nis }
    })
}

/// Iterated EKF update: relinearizes about the current iterate until the
/// correction settles, which keeps large yaw errors from being mistaken for
/// outliers. One iteration is the plain EKF update of [`gps_ekf_update`].
pub fn gps_iterated_update(
    est: &mut StateEstimate,
    meas: &GpsMeasurement,
    lever: &LeverArm,
    gate: &mut GpsGate,
    max_iterations: usize,
) -> Result<GateVerdict, GpsError> {
    if max_iterations <= 1 {
        return gps_ekf_update(est, meas, lever, gate);
    }
    let prior = est.state.clone();
    let frozen = frozen_indices(&prior);
    let noise = DMatrix::from_column_slice(3, 3, meas.cov.as_slice());
    let mut iterate = prior.clone();
    let mut last = None;
    for _ in 0..max_iterations {
        let z_hat = predict_gps(&iterate, lever, meas.t)?;
        let mut h = gps_jacobian(&iterate, lever, meas.t)?;
        suppress_frozen_columns(&iterate, &mut h);
        let offset = prior.difference(&iterate).expect("same layout");
        let r = DVector::from_column_slice((meas.p_eg - z_hat).as_slice()) - &h * &offset;
        let ph = &est.cov.mat * h.transpose();
        let s = &h * &ph + &noise;
        let ch = s.clone().cholesky().ok_or(GpsError::SingularInnovation)?;
        let mut k = ch.solve(&ph.transpose()).transpose();
        for &i in &frozen {
            k.row_mut(i).fill(0.0);
        }
        let dx = &k * &r;
        let mut next = prior.clone();
        next.apply_correction(&dx).expect("correction sized from layout");
        let step = next.difference(&iterate).expect("same layout").amax();
        let nis = r.dot(&ch.solve(&r));
        iterate = next;
        last = Some((nis, k, ph, s));
        if step < 1e-10 {
            break;
        }
    }
    let (nis, k, ph, s) = last.expect("at least one iteration");

    let widened = gate.consecutive_rejections >= gate.patience;
    let threshold = gate.threshold(widened);
    if nis > threshold {
        gate.rejected += 1;
        gate.consecutive_rejections = if widened { 0 } else { gate.consecutive_rejections + 1 };
        return Ok(GateVerdict::Rejected { nis, threshold });
    }
    gate.accepted += 1;
    gate.consecutive_rejections = 0;
    let khp = &k * ph.transpose();
    let ksk = &k * &s * k.transpose();
    est.cov.mat = &est.cov.mat - &khp - khp.transpose() + ksk;
    est.cov.symmetrize();
    est.state = iterate;
    Ok(if widened {
        GateVerdict::AcceptedWidened { nis }
    } else {
        GateVerdict::Accepted { nis }
    })
}

/// One matched GPS/VIO position pair for the initial alignment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentPair {
    pub gps: Vec3,
    pub vio: Vec3,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NotReady {
    NoData,
    InsufficientDistance,
    DegenerateSpan,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alignment {
    Ready { psi: f64, p_ev: Vec3 },
    NotReady(NotReady),
}

/// Weighted 4-DoF (yaw + translation) least-squares alignment of VIO
/// positions onto GPS positions. Requires at least `min_distance` meters of
/// VIO path.
pub fn init_alignment(pairs: &[AlignmentPair], min_distance: f64) -> Alignment {
    if pairs.is_empty() {
        return Alignment::NotReady(NotReady::NoData);
    }
    let path: f64 = pairs.windows(2).map(|w| (w[1].vio - w[0].vio).norm()).sum();
    if path < min_distance {
        return Alignment::NotReady(NotReady::InsufficientDistance);
    }
    let wsum: f64 = pairs.iter().map(|p| p.weight).sum();
    if wsum <= 0.0 {
        return Alignment::NotReady(NotReady::NoData);
    }
    let g_mean = pairs.iter().map(|p| p.gps * p.weight).sum::<Vec3>() / wsum;
    let v_mean = pairs.iter().map(|p| p.vio * p.weight).sum::<Vec3>() / wsum;
    let (mut sin_acc, mut cos_acc, mut spread) = (0.0, 0.0, 0.0);
    for p in pairs {
        let g = p.gps - g_mean;
        let v = p.vio - v_mean;
        sin_acc += p.weight * (v.x * g.y - v.y * g.x);
        cos_acc += p.weight * (v.x * g.x + v.y * g.y);
        spread += p.weight * (v.x * v.x + v.y * v.y);
    }
    if spread / wsum < 1e-6 || (sin_acc == 0.0 && cos_acc == 0.0) {
        return Alignment::NotReady(NotReady::DegenerateSpan);
    }
    let psi = wrap_angle(sin_acc.atan2(cos_acc));
    let p_ev = g_mean - yaw_rotation(psi) * v_mean;
    Alignment::Ready { psi, p_ev }
}

/// `ψ̂ = ψ_guess` and `ᴱp̂_V` chosen so that the first fix is matched
/// exactly by the current antenna estimate.
pub fn naive_alignment(first_gps: &Vec3, antenna_in_v: &Vec3, psi_guess: f64) -> (f64, Vec3) {
    let psi = wrap_angle(psi_guess);
    (psi, first_gps - yaw_rotation(psi) * antenna_in_v)
}

/// Pairs each GPS fix with the VIO position linearly interpolated at its
/// (offset-corrected) time. `vio` must be sorted by time.
pub fn match_positions(gps: &[GpsMeasurement], vio: &[(f64, Vec3)], t_g: f64) -> Vec<AlignmentPair> {
    let mut out = Vec::new();
    for m in gps {
        let t = m.t + t_g;
        let idx = vio.partition_point(|(tv, _)| *tv < t);
        let p = if idx < vio.len() && (vio[idx].0 - t).abs() < WINDOW_EPS {
            vio[idx].1
        } else if idx == 0 || idx >= vio.len() {
            continue;
        } else {
            let (t0, p0) = vio[idx - 1];
            let (t1, p1) = vio[idx];
            let s = (t - t0) / (t1 - t0);
            p0 + (p1 - p0) * s
        };
        let weight = 3.0 / m.cov.trace().max(1e-12);
        out.push(AlignmentPair {
            gps: m.p_eg,
            vio: p,
            weight,
        });
    }
    out
}
