//! Trajectory and calibration metrics.

use nalgebra::{DMatrix, DVector};

use crate::error::EvalError;
use crate::so3::{rotation_angle_between, wrap_angle, yaw_rotation, Mat3, Quaternion, Vec3};
use crate::stats::chi2_quantile;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub p: Vec3,
    /// JPL quaternion mapping reference-frame vectors into the body frame.
    pub q: Quaternion,
    pub sigma: Option<Vec3>,
}

impl TrajectoryRow {
    pub fn new(t: f64, p: Vec3, q: Quaternion) -> Self {
        Self { t, p, q, sigma: None }
    }

    /// Body-to-reference rotation.
    pub fn attitude(&self) -> Mat3 {
        self.q.rotation().transpose()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    rows: Vec<TrajectoryRow>,
}

fn check_increasing<'a>(times: impl Iterator<Item = &'a f64>) -> Result<(), EvalError> {
    let mut last = f64::NEG_INFINITY;
    for &t in times {
        if !(t > last) {
            return Err(EvalError::NonIncreasing { t });
        }
        last = t;
    }
    Ok(())
}

impl TrajectoryLog {
    pub fn new(rows: Vec<TrajectoryRow>) -> Result<Self, EvalError> {
        check_increasing(rows.iter().map(|r| &r.t))?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Appends a row; fails unless `row.t` is newer than the last row.
    pub fn push(&mut self, row: TrajectoryRow) -> Result<(), EvalError> {
        if self.rows.last().is_some_and(|l| !(row.t > l.t)) {
            return Err(EvalError::NonIncreasing { t: row.t });
        }
        self.rows.push(row);
        Ok(())
    }

    fn rate(&self) -> Option<f64> {
        let (first, last) = (self.rows.first()?, self.rows.last()?);
        (self.rows.len() > 1).then(|| (self.rows.len() - 1) as f64 / (last.t - first.t))
    }

    /// Index of the row nearest to `t`.
    pub fn nearest(&self, t: f64) -> Option<usize> {
        if self.rows.is_empty() {
            return None;
        }
        let i = self.rows.partition_point(|r| r.t < t);
        let lo = i.saturating_sub(1);
        let hi = i.min(self.rows.len() - 1);
        Some(if (self.rows[lo].t - t).abs() <= (self.rows[hi].t - t).abs() {
            lo
        } else {
            hi
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CalibRow {
    pub t: f64,
    pub psi: f64,
    pub sigma_psi: f64,
    pub p_ev: Vec3,
    pub t_g: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CalibTrace {
    rows: Vec<CalibRow>,
}

impl CalibTrace {
    pub fn new(rows: Vec<CalibRow>) -> Result<Self, EvalError> {
        check_increasing(rows.iter().map(|r| &r.t))?;
        if let Some(r) = rows.iter().find(|r| !(r.sigma_psi >= 0.0)) {
            return Err(EvalError::NonIncreasing { t: r.t });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[CalibRow] {
        &self.rows
    }

    pub fn push(&mut self, row: CalibRow) -> Result<(), EvalError> {
        if self.rows.last().is_some_and(|l| !(row.t > l.t)) {
            return Err(EvalError::NonIncreasing { t: row.t });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn last(&self) -> Option<&CalibRow> {
        self.rows.last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    None,
    /// Yaw rotation plus translation.
    YawTranslation,
    /// Full rotation plus translation.
    Se3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AteResult {
    pub translation_rmse: f64,
    /// Geodesic rotation RMSE, degrees.
    pub rotation_rmse_deg: f64,
    pub pairs: usize,
    /// Applied as `p ↦ rotation · p + translation` to the estimate.
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Pairs of (estimate index, groundtruth index) by nearest timestamp.
pub fn associate(est: &TrajectoryLog, gt: &TrajectoryLog) -> Vec<(usize, usize)> {
    let rate = match (est.rate(), gt.rate()) {
        (Some(a), Some(b)) => a.min(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => f64::INFINITY,
    };
    let tol = if rate.is_finite() { 0.5 / rate } else { 1e-9 };
    est.rows()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| {
            let j = gt.nearest(r.t)?;
            ((gt.rows()[j].t - r.t).abs() <= tol).then_some((i, j))
        })
        .collect()
}

fn centroid(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn fit_alignment(est: &[Vec3], gt: &[Vec3], alignment: Alignment) -> (Mat3, Vec3) {
    let ce = centroid(est);
    let cg = centroid(gt);
    let rotation = match alignment {
        Alignment::None => return (Mat3::identity(), Vec3::zeros()),
        Alignment::YawTranslation => {
            let (mut s, mut c) = (0.0, 0.0);
            for (e, g) in est.iter().zip(gt) {
                let (e, g) = (e - ce, g - cg);
                s += e.x * g.y - e.y * g.x;
                c += e.x * g.x + e.y * g.y;
            }
            yaw_rotation(s.atan2(c))
        }
        Alignment::Se3 => {
            let mut h = Mat3::zeros();
            for (e, g) in est.iter().zip(gt) {
                h += (g - cg) * (e - ce).transpose();
            }
            let svd = h.svd(true, true);
            let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
            let d = (u * v_t).determinant().signum();
            u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * v_t
        }
    };
    (rotation, cg - rotation * ce)
}

pub fn ate(est: &TrajectoryLog, gt: &TrajectoryLog, alignment: Alignment) -> Result<AteResult, EvalError> {
    let pairs = associate(est, gt);
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation);
    }
    let e: Vec<Vec3> = pairs.iter().map(|&(i, _)| est.rows()[i].p).collect();
    let g: Vec<Vec3> = pairs.iter().map(|&(_, j)| gt.rows()[j].p).collect();
    let (rotation, translation) = fit_alignment(&e, &g, alignment);
    let n = pairs.len() as f64;
    let mut sq_t = 0.0;
    let mut sq_r = 0.0;
    for &(i, j) in &pairs {
        let (er, gr) = (&est.rows()[i], &gt.rows()[j]);
        sq_t += (rotation * er.p + translation - gr.p).norm_squared();
        sq_r += rotation_angle_between(&(rotation * er.attitude()), &gr.attitude()).powi(2);
    }
    Ok(AteResult {
        translation_rmse: (sq_t / n).sqrt(),
        rotation_rmse_deg: (sq_r / n).sqrt().to_degrees(),
        pairs: pairs.len(),
        rotation,
        translation,
    })
}

/// Position RMSE of raw GPS fixes against groundtruth antenna positions.
pub fn position_rmse(est: &[(f64, Vec3)], gt: &TrajectoryLog) -> Result<f64, EvalError> {
    let log = TrajectoryLog::new(
        est.iter()
            .map(|(t, p)| TrajectoryRow::new(*t, *p, Quaternion::identity()))
            .collect(),
    )?;
    let pairs = associate(&log, gt);
    if pairs.is_empty() {
        return Err(EvalError::EmptyAssociation);
    }
    let sq: f64 = pairs
        .iter()
        .map(|&(i, j)| (log.rows()[i].p - gt.rows()[j].p).norm_squared())
        .sum();
    Ok((sq / pairs.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YawError {
    pub t: f64,
    pub error: f64,
    pub sigma: f64,
}

pub fn yaw_error_series(trace: &CalibTrace, psi_true: f64) -> Result<Vec<YawError>, EvalError> {
    if trace.rows().is_empty() {
        return Err(EvalError::EmptyTrace);
    }
    Ok(trace
        .rows()
        .iter()
        .map(|r| YawError {
            t: r.t,
            error: wrap_angle(r.psi - psi_true),
            sigma: r.sigma_psi,
        })
        .collect())
}

/// First time after which `|error|` stays below `threshold`.
pub fn convergence_time(series: &[YawError], threshold: f64) -> Option<f64> {
    match series.iter().rposition(|e| e.error.abs() >= threshold) {
        None => series.first().map(|e| e.t),
        Some(i) => series.get(i + 1).map(|e| e.t),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeesSample {
    pub error: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeesReport {
    pub mean: f64,
    pub used: usize,
    /// Samples whose covariance could not be inverted.
    pub skipped: usize,
    pub dof: usize,
}

pub fn nees_value(error: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let chol = cov.clone().cholesky()?;
    let x = chol.solve(error);
    Some(error.dot(&x))
}

pub fn nees(samples: &[NeesSample]) -> NeesReport {
    let mut sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for s in samples {
        match nees_value(&s.error, &s.cov) {
            Some(v) if v.is_finite() => {
                sum += v;
                used += 1;
            }
            _ => skipped += 1,
        }
    }
    NeesReport {
        mean: if used > 0 { sum / used as f64 } else { f64::NAN },
        used,
        skipped,
        dof: samples.first().map_or(0, |s| s.error.len()),
    }
}

/// Two-sided band for the average of `runs` independent NEES values of
/// `dof` degrees of freedom.
pub fn nees_band(dof: usize, runs: usize, confidence: f64) -> (f64, f64) {
    let n = dof * runs;
    let tail = 0.5 * (1.0 - confidence);
    (
        chi2_quantile(n, tail) / runs as f64,
        chi2_quantile(n, 1.0 - tail) / runs as f64,
    )
}
