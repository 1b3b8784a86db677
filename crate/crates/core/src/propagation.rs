//! IMU propagation of the mean (RK4) and of the error-state covariance.
//!
//! Kinematics in the gravity-aligned `V` frame:
//! `q̇ = ½ Ξ(q) ω`, `v̇ = g + Rᵀ a`, `ṗ = v`, with de-biased rates and specific
//! force. Between two consecutive samples the inputs are interpolated
//! linearly. Extrinsics and clones are constant under propagation.

use nalgebra::{DMatrix, SMatrix, Vector3};

use crate::error::PropagationError;
use crate::so3::{exp_so3, right_jacobian, skew, xi_matrix, Mat3, Quaternion, Vec3};
use crate::state::{ImuState, StateEstimate, IMU_DIM};

pub type ImuMatrix = SMatrix<f64, IMU_DIM, IMU_DIM>;

/// Gravity in `V` (z up), m/s².
pub const GRAVITY: Vec3 = Vector3::new(0.0, 0.0, -9.81);

const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Gyroscope, rad/s.
    pub omega: Vec3,
    /// Accelerometer specific force, m/s².
    pub accel: Vec3,
}

/// Continuous-time IMU noise densities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseParams {
    /// rad/s/√Hz
    pub gyro_noise: f64,
    /// m/s²/√Hz
    pub accel_noise: f64,
    /// rad/s²/√Hz
    pub gyro_walk: f64,
    /// m/s³/√Hz
    pub accel_walk: f64,
}

impl NoiseParams {
    pub const fn zero() -> Self {
        Self {
            gyro_noise: 0.0,
            accel_noise: 0.0,
            gyro_walk: 0.0,
            accel_walk: 0.0,
        }
    }
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            gyro_noise: 1.6968e-4,
            accel_noise: 2.0e-3,
            gyro_walk: 1.9393e-5,
            accel_walk: 3.0e-3,
        }
    }
}

/// One interval with inputs at both ends.
#[derive(Clone, Copy, Debug)]
struct Segment {
    dt: f64,
    omega0: Vec3,
    omega1: Vec3,
    accel0: Vec3,
    accel1: Vec3,
}

fn lerp(a: &Vec3, b: &Vec3, s: f64) -> Vec3 {
    a + (b - a) * s
}

fn check_monotonic(samples: &[ImuSample]) -> Result<(), PropagationError> {
    for w in samples.windows(2) {
        if w[1].t <= w[0].t {
            return Err(PropagationError::NonMonotonic { t: w[1].t });
        }
    }
    Ok(())
}

/// Splits `[t0, t_end]` into segments bounded by sample times.
fn segments(samples: &[ImuSample], t0: f64, t_end: f64) -> Result<Vec<Segment>, PropagationError> {
    check_monotonic(samples)?;
    if t_end < t0 - TIME_EPS {
        return Err(PropagationError::NonMonotonic { t: t_end });
    }
    if t_end - t0 <= TIME_EPS {
        return Ok(Vec::new());
    }
    let covered = match (samples.first(), samples.last()) {
        (Some(first), Some(last)) => first.t <= t0 + TIME_EPS && last.t >= t_end - TIME_EPS,
        _ => false,
    };
    if !covered {
        return Err(PropagationError::NotCovered { from: t0, to: t_end });
    }
    let at = |i: usize, t: f64| -> (Vec3, Vec3) {
        let a = &samples[i];
        match samples.get(i + 1) {
            Some(b) => {
                let s = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
                (lerp(&a.omega, &b.omega, s), lerp(&a.accel, &b.accel, s))
            }
            None => (a.omega, a.accel),
        }
    };
    let mut out = Vec::new();
    for i in 0..samples.len() {
        let start = samples[i].t.max(t0);
        let end = samples.get(i + 1).map_or(t_end, |s| s.t).min(t_end);
        if end - start <= TIME_EPS {
            continue;
        }
        let (omega0, accel0) = at(i, start);
        let (omega1, accel1) = at(i, end);
        out.push(Segment {
            dt: end - start,
            omega0,
            omega1,
            accel0,
            accel1,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy)]
struct Kinematic {
    q: nalgebra::Vector4<f64>,
    v: Vec3,
    p: Vec3,
}

fn derivative(x: &Kinematic, omega: &Vec3, accel: &Vec3) -> Kinematic {
    let q = Quaternion::from_vec4(&x.q);
    Kinematic {
        q: 0.5 * xi_matrix(&q) * omega,
        v: GRAVITY + q.rotation().transpose() * accel,
        p: x.v,
    }
}

fn axpy(x: &Kinematic, k: &Kinematic, h: f64) -> Kinematic {
    Kinematic {
        q: x.q + k.q * h,
        v: x.v + k.v * h,
        p: x.p + k.p * h,
    }
}

fn rk4_step(imu: &mut ImuState, seg: &Segment) {
    let w0 = seg.omega0 - imu.b_g;
    let w1 = seg.omega1 - imu.b_g;
    let a0 = seg.accel0 - imu.b_a;
    let a1 = seg.accel1 - imu.b_a;
    let wm = 0.5 * (w0 + w1);
    let am = 0.5 * (a0 + a1);
    let h = seg.dt;
    let x = Kinematic {
        q: imu.q_vi.as_vec4(),
        v: imu.v_vi,
        p: imu.p_vi,
    };
    let k1 = derivative(&x, &w0, &a0);
    let k2 = derivative(&axpy(&x, &k1, 0.5 * h), &wm, &am);
    let k3 = derivative(&axpy(&x, &k2, 0.5 * h), &wm, &am);
    let k4 = derivative(&axpy(&x, &k3, h), &w1, &a1);
    let q = x.q + (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q) * (h / 6.0);
    imu.v_vi = x.v + (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v) * (h / 6.0);
    imu.p_vi = x.p + (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p) * (h / 6.0);
    imu.q_vi = Quaternion::from_vec4(&q).normalize();
    imu.t += h;
}

/// Error-state transition of one segment, linearized at the state at the
/// start of the segment, using interval-mean inputs.
fn segment_transition(imu: &ImuState, seg: &Segment) -> ImuMatrix {
    let w = 0.5 * (seg.omega0 + seg.omega1) - imu.b_g;
    let a = 0.5 * (seg.accel0 + seg.accel1) - imu.b_a;
    let dt = seg.dt;
    let wr = imu.q_vi.rotation().transpose();
    let ska = skew(&a);

    // Three-point Gauss-Legendre on [0, dt].
    let c = (0.6f64).sqrt();
    let nodes = [0.5 * dt * (1.0 - c), 0.5 * dt, 0.5 * dt * (1.0 + c)];
    let weights = [5.0 / 18.0 * dt, 8.0 / 18.0 * dt, 5.0 / 18.0 * dt];
    let mut g1 = Mat3::zeros();
    let mut g2 = Mat3::zeros();
    let mut x1 = Mat3::zeros();
    let mut x2 = Mat3::zeros();
    for (s, wq) in nodes.iter().zip(weights) {
        let e = exp_so3(&(w * *s));
        let bias_term = e * ska * right_jacobian(&(w * *s)) * *s;
        g1 += e * wq;
        g2 += e * (wq * (dt - s));
        x1 += bias_term * wq;
        x2 += bias_term * (wq * (dt - s));
    }

    let mut phi = ImuMatrix::identity();
    let gamma0 = exp_so3(&(w * dt));
    phi.fixed_view_mut::<3, 3>(0, 0).copy_from(&gamma0.transpose());
    phi.fixed_view_mut::<3, 3>(0, 9)
        .copy_from(&(-right_jacobian(&(w * dt)) * dt));
    // position
    phi.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-wr * skew(&(g2 * a))));
    phi.fixed_view_mut::<3, 3>(3, 6).copy_from(&(Mat3::identity() * dt));
    phi.fixed_view_mut::<3, 3>(3, 9).copy_from(&(wr * x2));
    phi.fixed_view_mut::<3, 3>(3, 12).copy_from(&(-wr * g2));
    // velocity
    phi.fixed_view_mut::<3, 3>(6, 0).copy_from(&(-wr * skew(&(g1 * a))));
    phi.fixed_view_mut::<3, 3>(6, 9).copy_from(&(wr * x1));
    phi.fixed_view_mut::<3, 3>(6, 12).copy_from(&(-wr * g1));
    phi
}

fn segment_noise(noise: &NoiseParams, dt: f64) -> ImuMatrix {
    let mut q = ImuMatrix::zeros();
    let diag = [
        (0, noise.gyro_noise),
        (6, noise.accel_noise),
        (9, noise.gyro_walk),
        (12, noise.accel_walk),
    ];
    for (start, density) in diag {
        for k in 0..3 {
            q[(start + k, start + k)] = density * density * dt;
        }
    }
    q
}

/// Propagates only the IMU mean; returns the accumulated error-state
/// transition and discrete process noise over `[imu.t, t_end]`.
pub fn propagate_imu(
    imu: &mut ImuState,
    samples: &[ImuSample],
    t_end: f64,
    noise: &NoiseParams,
) -> Result<(ImuMatrix, ImuMatrix), PropagationError> {
    let segs = segments(samples, imu.t, t_end)?;
    let mut phi = ImuMatrix::identity();
    let mut q = ImuMatrix::zeros();
    for seg in &segs {
        let step = segment_transition(imu, seg);
        rk4_step(imu, seg);
        phi = step * phi;
        q = step * q * step.transpose() + segment_noise(noise, seg.dt);
    }
    imu.t = t_end.max(imu.t);
    Ok((phi, q))
}

/// Propagates the estimate's IMU state and covariance to `t_end`.
pub fn propagate(
    est: &mut StateEstimate,
    samples: &[ImuSample],
    t_end: f64,
    noise: &NoiseParams,
) -> Result<(), PropagationError> {
    let (phi, q) = propagate_imu(&mut est.state.imu, samples, t_end, noise)?;
    apply_transition(&mut est.cov.mat, &phi, &q);
    est.cov.symmetrize();
    Ok(())
}

/// `P_II ← Φ P_II Φᵀ + Q`, `P_I* ← Φ P_I*`; all other blocks untouched.
pub fn apply_transition(p: &mut DMatrix<f64>, phi: &ImuMatrix, q: &ImuMatrix) {
    let n = p.nrows();
    let pii: ImuMatrix = p.fixed_view::<IMU_DIM, IMU_DIM>(0, 0).into_owned();
    let new_ii = phi * pii * phi.transpose() + q;
    p.fixed_view_mut::<IMU_DIM, IMU_DIM>(0, 0).copy_from(&new_ii);
    if n > IMU_DIM {
        let rest = n - IMU_DIM;
        let pir = p.view((0, IMU_DIM), (IMU_DIM, rest)).into_owned();
        let phi_dyn = DMatrix::from_column_slice(IMU_DIM, IMU_DIM, phi.as_slice());
        let new_ir = phi_dyn * pir;
        p.view_mut((0, IMU_DIM), (IMU_DIM, rest)).copy_from(&new_ir);
        p.view_mut((IMU_DIM, 0), (rest, IMU_DIM)).copy_from(&new_ir.transpose());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::log_so3;
    use crate::state::{CalibFlags, ExtrinsicCalib, FilterState};
    use approx::assert_relative_eq;

    fn constant_samples(t0: f64, t1: f64, rate: f64, omega: Vec3, accel: Vec3) -> Vec<ImuSample> {
        let n = ((t1 - t0) * rate).round() as usize;
        (0..=n)
            .map(|k| ImuSample {
                t: t0 + k as f64 / rate,
                omega,
                accel,
            })
            .collect()
    }

    fn varying_samples(t1: f64, rate: f64) -> Vec<ImuSample> {
        let n = (t1 * rate).round() as usize;
        (0..=n)
            .map(|k| {
                let t = k as f64 / rate;
                ImuSample {
                    t,
                    omega: Vec3::new(0.3 * (1.3 * t).sin(), -0.2 + 0.1 * t, 0.5 * (0.7 * t).cos()),
                    accel: Vec3::new(0.5 * (2.0 * t).cos(), 0.3, 9.6 + 0.2 * (t).sin()),
                }
            })
            .collect()
    }

    #[test]
    fn hover_is_equilibrium() {
        let q = Quaternion::new(0.1, 0.05, -0.2, 0.97).normalize();
        let mut imu = ImuState::at_rest(0.0);
        imu.q_vi = q;
        imu.p_vi = Vec3::new(1.0, -2.0, 3.0);
        let accel = -(q.rotation() * GRAVITY);
        let samples = constant_samples(0.0, 1.0, 400.0, Vec3::zeros(), accel);
        let start = imu.clone();
        propagate_imu(&mut imu, &samples, 1.0, &NoiseParams::zero()).unwrap();
        assert!((imu.p_vi - start.p_vi).norm() < 1e-9);
        assert!(imu.v_vi.norm() < 1e-9);
        assert!((imu.q_vi.as_vec4() - start.q_vi.as_vec4()).norm() < 1e-12);
    }

    #[test]
    fn free_fall_is_ballistic() {
        let mut imu = ImuState::at_rest(0.0);
        imu.v_vi = Vec3::new(1.0, 0.0, 0.0);
        let samples = constant_samples(0.0, 0.5, 400.0, Vec3::zeros(), Vec3::zeros());
        propagate_imu(&mut imu, &samples, 0.5, &NoiseParams::zero()).unwrap();
        assert_relative_eq!(imu.v_vi, Vec3::new(1.0, 0.0, 0.0) + GRAVITY * 0.5, epsilon = 1e-12);
        assert_relative_eq!(imu.p_vi, Vec3::new(0.5, 0.0, 0.0) + GRAVITY * 0.125, epsilon = 1e-12);
    }

    #[test]
    fn non_monotonic_rejected() {
        let mut samples = constant_samples(0.0, 0.1, 100.0, Vec3::zeros(), Vec3::zeros());
        samples.swap(3, 4);
        let mut imu = ImuState::at_rest(0.0);
        assert!(matches!(
            propagate_imu(&mut imu, &samples, 0.1, &NoiseParams::zero()),
            Err(PropagationError::NonMonotonic { .. })
        ));
        let samples = constant_samples(0.05, 0.1, 100.0, Vec3::zeros(), Vec3::zeros());
        assert!(matches!(
            propagate_imu(&mut imu, &samples, 0.1, &NoiseParams::zero()),
            Err(PropagationError::NotCovered { .. })
        ));
    }

    /// Error between two IMU states in the filter's error convention.
    fn error_state(a: &ImuState, nominal: &ImuState) -> SMatrix<f64, IMU_DIM, 1> {
        let mut e = SMatrix::<f64, IMU_DIM, 1>::zeros();
        let r = a.q_vi.rotation() * nominal.q_vi.rotation().transpose();
        e.fixed_view_mut::<3, 1>(0, 0).copy_from(&(-log_so3(&r)));
        e.fixed_view_mut::<3, 1>(3, 0).copy_from(&(a.p_vi - nominal.p_vi));
        e.fixed_view_mut::<3, 1>(6, 0).copy_from(&(a.v_vi - nominal.v_vi));
        e.fixed_view_mut::<3, 1>(9, 0).copy_from(&(a.b_g - nominal.b_g));
        e.fixed_view_mut::<3, 1>(12, 0).copy_from(&(a.b_a - nominal.b_a));
        e
    }

    fn perturbed(imu: &ImuState, i: usize, h: f64) -> ImuState {
        let state = FilterState::new(
            imu.clone(),
            ExtrinsicCalib::new(0.0, Vec3::zeros(), 0.0, CalibFlags::default()),
        );
        let mut s = state;
        let mut d = nalgebra::DVector::zeros(s.layout().dim());
        d[i] = h;
        s.apply_correction(&d).unwrap();
        s.imu
    }

    #[test]
    fn transition_matches_finite_differences() {
        let samples = varying_samples(1.0, 400.0);
        let mut imu0 = ImuState::at_rest(0.0);
        imu0.q_vi = Quaternion::new(0.2, -0.1, 0.3, 0.9).normalize();
        imu0.v_vi = Vec3::new(0.5, -0.3, 0.2);
        imu0.b_g = Vec3::new(0.01, -0.02, 0.005);
        imu0.b_a = Vec3::new(0.05, 0.02, -0.03);
        let mut nominal = imu0.clone();
        let (phi, _) = propagate_imu(&mut nominal, &samples, 1.0, &NoiseParams::zero()).unwrap();
        let h = 1e-6;
        let mut fd = ImuMatrix::zeros();
        for i in 0..IMU_DIM {
            let mut plus = perturbed(&imu0, i, h);
            let mut minus = perturbed(&imu0, i, -h);
            propagate_imu(&mut plus, &samples, 1.0, &NoiseParams::zero()).unwrap();
            propagate_imu(&mut minus, &samples, 1.0, &NoiseParams::zero()).unwrap();
            let col = (error_state(&plus, &nominal) - error_state(&minus, &nominal)) / (2.0 * h);
            fd.set_column(i, &col);
        }
        let rel = (phi - fd).abs().max() / fd.abs().max();
        assert!(rel < 1e-5, "relative error {rel}");
    }

    #[test]
    fn extrinsic_and_clone_blocks_untouched() {
        let imu = ImuState::at_rest(0.0);
        let state = FilterState::new(imu, ExtrinsicCalib::new(0.5, Vec3::zeros(), 0.0, CalibFlags::default()));
        let n = state.layout().dim();
        let mut est = StateEstimate::new(state, DMatrix::identity(n, n) * 0.1).unwrap();
        est.augment_clone(0.0).unwrap();
        let before = est.cov.mat.clone();
        let samples = varying_samples(0.5, 400.0);
        propagate(&mut est, &samples, 0.5, &NoiseParams::default()).unwrap();
        let n = est.cov.dim();
        let ext = est.cov.block(15..n, 15..n);
        assert_eq!(ext, before.view((15, 15), (n - 15, n - 15)).into_owned());
        assert!(est.cov.min_eigenvalue() > -1e-9);
        assert_eq!(est.state.calib.psi, 0.5);
    }

    #[test]
    fn quaternion_norm_drift_is_tiny() {
        let samples = varying_samples(25.0, 400.0);
        let mut imu = ImuState::at_rest(0.0);
        propagate_imu(&mut imu, &samples, 25.0, &NoiseParams::zero()).unwrap();
        assert!((imu.q_vi.norm() - 1.0).abs() < 1e-9);
    }
}
