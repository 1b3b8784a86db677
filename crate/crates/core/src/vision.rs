//! MSCKF visual update: triangulate each feature track against the clone
//! window, project its residual onto the left nullspace of the feature
//! Jacobian, gate it, then apply one stacked EKF update.
//!
//! Measurements are normalized image coordinates of
//! `ᶜp_f = R_IC R_VI (ᵛp_f − ᵛp_I) + ᶜp_I`.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2x3, Vector2};

use crate::so3::{skew, Mat3, Quaternion, Vec3};
use crate::state::{FilterState, StateEstimate, CLONE_DIM};
use crate::stats::chi2_95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureObservation {
    /// Image time; must coincide with a clone.
    pub t: f64,
    /// Normalized image coordinates.
    pub uv: Vector2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    pub id: u64,
    pub observations: Vec<FeatureObservation>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    /// Rotation taking IMU-frame vectors into the camera frame.
    pub q_ic: Quaternion,
    /// Position of the IMU in the camera frame, `ᶜp_I`.
    pub p_i_in_c: Vec3,
}

impl CameraExtrinsics {
    pub fn r_ic(&self) -> Mat3 {
        self.q_ic.rotation()
    }

    /// Forward-looking camera: optical axis along IMU `x`, image `x` along
    /// IMU `−y`, image `y` along IMU `−z`.
    pub fn forward_looking(p_i_in_c: Vec3) -> Self {
        let r = Mat3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        Self {
            q_ic: Quaternion::from_rotation(&r),
            p_i_in_c,
        }
    }
}

/// Pinhole model used by the simulator and for mapping pixel noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub extrinsics: CameraExtrinsics,
    pub focal_px: f64,
    /// Half field of view, radians.
    pub half_fov: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            extrinsics: CameraExtrinsics::forward_looking(Vec3::new(0.02, -0.01, -0.05)),
            focal_px: 460.0,
            half_fov: std::f64::consts::FRAC_PI_4,
            min_depth: 0.5,
            max_depth: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangulationParams {
    pub min_baseline: f64,
    pub min_baseline_depth_ratio: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for TriangulationParams {
    fn default() -> Self {
        Self {
            min_baseline: 0.02,
            min_baseline_depth_ratio: 1e-3,
            max_iterations: 10,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrackRejection {
    TooFewObservations,
    SmallBaseline,
    Degenerate,
    Diverged,
    BehindCamera,
    ChiSquare,
}

impl fmt::Display for TrackRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TrackRejection::TooFewObservations => "too few observations",
            TrackRejection::SmallBaseline => "baseline below threshold",
            TrackRejection::Degenerate => "degenerate geometry",
            TrackRejection::Diverged => "triangulation diverged",
            TrackRejection::BehindCamera => "point behind camera",
            TrackRejection::ChiSquare => "chi-square gate",
        };
        f.write_str(s)
    }
}

/// Camera pose of one clone: `R_VC` (V → C) and the camera center in `V`.
struct CameraPose {
    clone: usize,
    r_vc: Mat3,
    center: Vec3,
    uv: Vector2<f64>,
}

fn camera_poses(track: &FeatureTrack, state: &FilterState, cam: &CameraExtrinsics) -> Vec<CameraPose> {
    let r_ic = cam.r_ic();
    track
        .observations
        .iter()
        .filter_map(|obs| {
            let i = state.clone_index_at(obs.t)?;
            let c = &state.clones[i];
            let r_vi = c.q.rotation();
            let r_vc = r_ic * r_vi;
            let center = c.p - r_vc.transpose() * cam.p_i_in_c;
            Some(CameraPose {
                clone: i,
                r_vc,
                center,
                uv: obs.uv,
            })
        })
        .collect()
}

fn projection_jacobian(pc: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(iz, 0.0, -pc.x * iz * iz, 0.0, iz, -pc.y * iz * iz)
}

fn project(pc: &Vec3) -> Vector2<f64> {
    Vector2::new(pc.x / pc.z, pc.y / pc.z)
}

/// Feature position in `V` from the track's observations in the clone window.
pub fn triangulate(
    track: &FeatureTrack,
    state: &FilterState,
    cam: &CameraExtrinsics,
    params: &TriangulationParams,
) -> Result<Vec3, TrackRejection> {
    let poses = camera_poses(track, state, cam);
    if poses.len() < 2 {
        return Err(TrackRejection::TooFewObservations);
    }
    let mut baseline: f64 = 0.0;
    for a in &poses {
        for b in &poses {
            baseline = baseline.max((a.center - b.center).norm());
        }
    }
    if baseline < params.min_baseline {
        return Err(TrackRejection::SmallBaseline);
    }

    // Linear: Σ (I − b bᵀ)(p − c) = 0 over unit bearings b.
    let mut a = Mat3::zeros();
    let mut rhs = Vec3::zeros();
    for pose in &poses {
        let b = (pose.r_vc.transpose() * Vec3::new(pose.uv.x, pose.uv.y, 1.0)).normalize();
        let m = Mat3::identity() - b * b.transpose();
        a += m;
        rhs += m * pose.center;
    }
    let eig = a.symmetric_eigen();
    let (min_eig, max_eig) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if min_eig <= 1e-12 * max_eig.max(1e-300) {
        return Err(TrackRejection::Degenerate);
    }
    let mut p = a.try_inverse().ok_or(TrackRejection::Degenerate)? * rhs;

    let depth = poses.iter().map(|c| (p - c.center).norm()).sum::<f64>() / poses.len() as f64;
    if !depth.is_finite() || baseline / depth < params.min_baseline_depth_ratio {
        return Err(TrackRejection::Degenerate);
    }

    // Gauss-Newton on the reprojection error.
    let cost = |p: &Vec3| -> f64 {
        poses
            .iter()
            .map(|c| {
                let pc = c.r_vc * (p - c.center);
                (project(&pc) - c.uv).norm_squared()
            })
            .sum()
    };
    let mut current = cost(&p);
    for _ in 0..params.max_iterations {
        let mut jtj = Mat3::zeros();
        let mut jtr = Vec3::zeros();
        for c in &poses {
            let pc = c.r_vc * (p - c.center);
            if pc.z <= 0.0 {
                return Err(TrackRejection::BehindCamera);
            }
            let j = projection_jacobian(&pc) * c.r_vc;
            let r = c.uv - project(&pc);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let step = jtj.try_inverse().ok_or(TrackRejection::Diverged)? * jtr;
        let candidate = p + step;
        let next = cost(&candidate);
        if !next.is_finite() || next > 10.0 * current + 1e-12 {
            return Err(TrackRejection::Diverged);
        }
        p = candidate;
        current = next;
        if step.norm() < params.step_tolerance {
            break;
        }
    }
    if !p.iter().all(|x| x.is_finite()) {
        return Err(TrackRejection::Diverged);
    }
    for c in &poses {
        if (c.r_vc * (p - c.center)).z < 0.1 {
            return Err(TrackRejection::BehindCamera);
        }
    }
    Ok(p)
}

/// Track residual and Jacobians after nullspace projection; the Jacobian
/// spans the whole clone block (`6 × num_clones` columns).
pub struct ProjectedTrack {
    pub h: DMatrix<f64>,
    pub r: DVector<f64>,
    /// Feature Jacobian after the same rotations; rows `3..` vanish.
    pub h_f: DMatrix<f64>,
}

/// Stacked residuals and Jacobians of one track at a given feature estimate.
pub fn track_jacobians(
    track: &FeatureTrack,
    state: &FilterState,
    cam: &CameraExtrinsics,
    p_f: &Vec3,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let poses = camera_poses(track, state, cam);
    let r_ic = cam.r_ic();
    let m = poses.len();
    let nc = state.clones.len();
    let mut hx = DMatrix::zeros(2 * m, CLONE_DIM * nc);
    let mut hf = DMatrix::zeros(2 * m, 3);
    let mut r = DVector::zeros(2 * m);
    for (k, pose) in poses.iter().enumerate() {
        let c = &state.clones[pose.clone];
        let r_vi = c.q.rotation();
        let pc = pose.r_vc * (p_f - pose.center);
        let jp = projection_jacobian(&pc);
        let d_theta = jp * r_ic * skew(&(r_vi * (p_f - c.p)));
        let d_pos = -jp * pose.r_vc;
        let d_feat = jp * pose.r_vc;
        let col = CLONE_DIM * pose.clone;
        hx.view_mut((2 * k, col), (2, 3)).copy_from(&d_theta);
        hx.view_mut((2 * k, col + 3), (2, 3)).copy_from(&d_pos);
        hf.view_mut((2 * k, 0), (2, 3)).copy_from(&d_feat);
        let res = pose.uv - project(&pc);
        r[2 * k] = res.x;
        r[2 * k + 1] = res.y;
    }
    (hx, hf, r)
}

/// Applies Givens rotations that zero `hf` below its first three rows, to
/// `hf`, `hx` and `r` together, and returns the projected system.
pub fn nullspace_project(mut hx: DMatrix<f64>, mut hf: DMatrix<f64>, mut r: DVector<f64>) -> ProjectedTrack {
    let rows = hf.nrows();
    let cols = hf.ncols();
    for col in 0..cols {
        for row in (col + 1..rows).rev() {
            let a = hf[(row - 1, col)];
            let b = hf[(row, col)];
            if b == 0.0 {
                continue;
            }
            let rho = a.hypot(b);
            let (c, s) = (a / rho, b / rho);
            let rotate = |m: &mut DMatrix<f64>| {
                for j in 0..m.ncols() {
                    let x = m[(row - 1, j)];
                    let y = m[(row, j)];
                    m[(row - 1, j)] = c * x + s * y;
                    m[(row, j)] = -s * x + c * y;
                }
            };
            rotate(&mut hf);
            rotate(&mut hx);
            let x = r[row - 1];
            let y = r[row];
            r[row - 1] = c * x + s * y;
            r[row] = -s * x + c * y;
        }
    }
    let keep = rows.saturating_sub(cols);
    ProjectedTrack {
        h: hx.rows(cols, keep).into_owned(),
        r: r.rows(cols, keep).into_owned(),
        h_f: hf,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisionUpdateReport {
    pub accepted: Vec<u64>,
    pub rejected: Vec<(u64, TrackRejection)>,
    /// Rows fed to the EKF after compression.
    pub rows: usize,
}

/// MSCKF update with all usable tracks; `pixel_sigma` in pixels.
pub fn msckf_update(
    est: &mut StateEstimate,
    tracks: &[FeatureTrack],
    cam: &CameraModel,
    pixel_sigma: f64,
    params: &TriangulationParams,
) -> VisionUpdateReport {
    let mut report = VisionUpdateReport::default();
    let sigma = pixel_sigma / cam.focal_px;
    let var = sigma * sigma;
    let layout = est.layout();
    let base = layout.clone_base();
    let nc = est.state.clones.len();
    let clone_cov = est.cov.block(base..base + CLONE_DIM * nc, base..base + CLONE_DIM * nc);

    let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
    for track in tracks {
        let p_f = match triangulate(track, &est.state, &cam.extrinsics, params) {
            Ok(p) => p,
            Err(e) => {
                report.rejected.push((track.id, e));
                continue;
            }
        };
        let (hx, hf, r) = track_jacobians(track, &est.state, &cam.extrinsics, &p_f);
        let proj = nullspace_project(hx, hf, r);
        let dof = proj.r.len();
        if dof == 0 {
            report.rejected.push((track.id, TrackRejection::TooFewObservations));
            continue;
        }
        let s = &proj.h * &clone_cov * proj.h.transpose() + DMatrix::identity(dof, dof) * var;
        let gamma = match s.cholesky() {
            Some(ch) => proj.r.dot(&ch.solve(&proj.r)),
            None => f64::INFINITY,
        };
        if gamma > chi2_95(dof) {
            report.rejected.push((track.id, TrackRejection::ChiSquare));
            continue;
        }
        report.accepted.push(track.id);
        blocks.push((proj.h, proj.r));
    }
    if blocks.is_empty() {
        return report;
    }

    let total: usize = blocks.iter().map(|(_, r)| r.len()).sum();
    let n = layout.dim();
    let mut h = DMatrix::zeros(total, n);
    let mut r = DVector::zeros(total);
    let mut row = 0;
    for (hb, rb) in &blocks {
        h.view_mut((row, base), (hb.nrows(), hb.ncols())).copy_from(hb);
        r.rows_mut(row, rb.len()).copy_from(rb);
        row += rb.len();
    }
    let (h, r) = if total > n { compress(h, r) } else { (h, r) };
    report.rows = r.len();
    ekf_update(est, &h, &r, &(DMatrix::identity(r.len(), r.len()) * var));
    report
}

/// Thin-QR compression of a tall system; the dropped residual part carries no
/// state information for isotropic noise.
pub fn compress(h: DMatrix<f64>, r: DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let qr = h.qr();
    let q = qr.q();
    let rr = qr.r();
    let r2 = q.transpose() * r;
    (rr, r2)
}

/// Standard EKF update `x ⊕ K r`, `P − K S Kᵀ`. Returns false when the
/// innovation covariance is not positive definite.
pub fn ekf_update(est: &mut StateEstimate, h: &DMatrix<f64>, r: &DVector<f64>, noise: &DMatrix<f64>) -> bool {
    let ph = &est.cov.mat * h.transpose();
    let s = h * &ph + noise;
    let Some(ch) = s.cholesky() else {
        return false;
    };
    // K = P Hᵀ S⁻¹
    let k = ch.solve(&ph.transpose()).transpose();
    let dx = &k * r;
    est.cov.mat -= &k * ph.transpose();
    est.cov.symmetrize();
    est.apply_correction(&dx).expect("correction sized from layout");
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use crate::state::{CalibFlags, ExtrinsicCalib, ImuState};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn cam() -> CameraModel {
        CameraModel::default()
    }

    /// Clone poses looking roughly along +x from a short arc.
    fn window(num: usize) -> StateEstimate {
        let imu = ImuState::at_rest(0.0);
        let mut state = FilterState::new(imu, ExtrinsicCalib::new(0.0, Vec3::zeros(), 0.0, CalibFlags::default()));
        state.max_clones = 20;
        let n = state.layout().dim();
        let mut est = StateEstimate::new(state, DMatrix::identity(n, n) * 1e-4).unwrap();
        for k in 0..num {
            let s = k as f64;
            est.state.imu.p_vi = Vec3::new(-2.0 + 0.1 * s, 0.2 * (0.5 * s).sin(), 0.05 * s);
            let w = exp_so3(&Vec3::new(0.02 * s, -0.01 * s, 0.05 * (0.3 * s).sin()));
            est.state.imu.q_vi = Quaternion::from_rotation(&w.transpose());
            est.augment_clone(0.1 * s).unwrap();
        }
        est
    }

    fn observe(est: &StateEstimate, p_f: &Vec3, id: u64) -> FeatureTrack {
        let c = cam().extrinsics;
        let observations = est
            .state
            .clones
            .iter()
            .map(|cl| {
                let pc = c.r_ic() * cl.q.rotation() * (p_f - cl.p) + c.p_i_in_c;
                FeatureObservation {
                    t: cl.t,
                    uv: Vector2::new(pc.x / pc.z, pc.y / pc.z),
                }
            })
            .collect();
        FeatureTrack { id, observations }
    }

    #[test]
    fn triangulates_noiseless_landmark() {
        let est = window(4);
        let landmark = Vec3::new(2.0, 1.0, 0.5);
        let track = observe(&est, &landmark, 1);
        let p = triangulate(&track, &est.state, &cam().extrinsics, &TriangulationParams::default()).unwrap();
        assert!((p - landmark).norm() < 1e-6, "{p}");
    }

    #[test]
    fn rejects_degenerate_tracks() {
        let est = window(4);
        let mut track = observe(&est, &Vec3::new(2.0, 1.0, 0.5), 1);
        track.observations.truncate(1);
        assert_eq!(
            triangulate(&track, &est.state, &cam().extrinsics, &TriangulationParams::default()),
            Err(TrackRejection::TooFewObservations)
        );
        // Very distant landmark: baseline/depth far below 1e-3.
        let far = observe(&est, &Vec3::new(1.0e5, 2.0e3, 5.0e2), 2);
        assert!(triangulate(&far, &est.state, &cam().extrinsics, &TriangulationParams::default()).is_err());
    }

    #[test]
    fn nullspace_projection_kills_feature_jacobian() {
        let est = window(5);
        let landmark = Vec3::new(3.0, -0.5, 0.8);
        let track = observe(&est, &landmark, 7);
        let (hx, hf, r) = track_jacobians(&track, &est.state, &cam().extrinsics, &landmark);
        let proj = nullspace_project(hx, hf, r);
        assert_eq!(proj.r.len(), 2 * 5 - 3);
        assert!(proj.h_f.rows(3, proj.h_f.nrows() - 3).abs().max() < 1e-10);
        assert!(proj.r.abs().max() < 1e-12);
    }

    #[test]
    fn zero_residual_is_fixed_point() {
        let mut est = window(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tracks: Vec<_> = (0..20)
            .map(|i| {
                let p = Vec3::new(
                    rng.random_range(3.0..8.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                );
                observe(&est, &p, i)
            })
            .collect();
        let before = est.state.clone();
        let report = msckf_update(&mut est, &tracks, &cam(), 1.0, &TriangulationParams::default());
        assert_eq!(report.accepted.len(), 20);
        for (a, b) in est.state.clones.iter().zip(&before.clones) {
            assert!((a.p - b.p).norm() < 1e-9);
            assert!((a.q.as_vec4() - b.q.as_vec4()).norm() < 1e-9);
        }
    }

    #[test]
    fn update_does_not_grow_clone_position_uncertainty() {
        let mut est = window(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 1.0 / 460.0).unwrap();
        let tracks: Vec<_> = (0..30)
            .map(|i| {
                let p = Vec3::new(
                    rng.random_range(3.0..8.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                );
                let mut t = observe(&est, &p, i);
                for o in &mut t.observations {
                    o.uv += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                t
            })
            .collect();
        let trace = |e: &StateEstimate| {
            let l = e.layout();
            (0..e.state.clones.len())
                .map(|i| {
                    (0..3)
                        .map(|k| e.cov.mat[(l.clone_pos(i) + k, l.clone_pos(i) + k)])
                        .sum::<f64>()
                })
                .sum::<f64>()
        };
        let before = trace(&est);
        msckf_update(&mut est, &tracks, &cam(), 1.0, &TriangulationParams::default());
        assert!(trace(&est) <= before + 1e-12);
        assert!(est.cov.min_eigenvalue() > -1e-9);
    }
}
