//! Filter state, error-state covariance and the sliding window of pose clones.
//!
//! Error-state layout: the IMU block (`δθ δp δv δb_g δb_a`, 15), then the
//! extrinsic block (`δψ`, `δp_EV`, and `δt_G` only while time-offset
//! estimation is on), then one 6-dim block (`δθ δp`) per clone, oldest first.
//!
//! Orientation errors are local: `q = δq ⊗ q̂` with `δq ≈ [½δθ, 1]`, so
//! `R = (I − [δθ]×) R̂`.

use std::collections::VecDeque;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::StateError;
use crate::so3::{quat_multiply, wrap_angle, Quaternion, Vec3};

pub const IMU_DIM: usize = 15;
pub const CLONE_DIM: usize = 6;
pub const DEFAULT_MAX_CLONES: usize = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct ImuState {
    /// IMU clock time of the estimate.
    pub t: f64,
    pub q_vi: Quaternion,
    pub p_vi: Vec3,
    pub v_vi: Vec3,
    pub b_g: Vec3,
    pub b_a: Vec3,
}

impl ImuState {
    pub fn at_rest(t: f64) -> Self {
        Self {
            t,
            q_vi: Quaternion::identity(),
            p_vi: Vec3::zeros(),
            v_vi: Vec3::zeros(),
            b_g: Vec3::zeros(),
            b_a: Vec3::zeros(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CloneState {
    pub t: f64,
    pub q: Quaternion,
    pub p: Vec3,
}

/// Which extrinsic parameters receive corrections.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CalibFlags {
    pub psi: bool,
    pub p_ev: bool,
    pub t_g: bool,
}

impl Default for CalibFlags {
    fn default() -> Self {
        Self {
            psi: true,
            p_ev: false,
            t_g: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtrinsicCalib {
    /// Yaw of `V` relative to `E`, wrapped to `(−π, π]`.
    pub psi: f64,
    pub p_ev: Vec3,
    /// GPS-to-IMU clock offset: a GPS stamp `t` refers to IMU time `t + t_g`.
    pub t_g: f64,
    pub flags: CalibFlags,
}

impl ExtrinsicCalib {
    pub fn new(psi: f64, p_ev: Vec3, t_g: f64, flags: CalibFlags) -> Self {
        Self {
            psi: wrap_angle(psi),
            p_ev,
            t_g,
            flags,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateBlock {
    Orientation,
    Position,
    Velocity,
    GyroBias,
    AccelBias,
    Psi,
    PEv,
    TimeOffset,
    /// Clone by position in the window, 0 = oldest.
    Clone(usize),
}

/// Maps state components to error-state index ranges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub num_clones: usize,
    pub has_time_offset: bool,
}

impl BlockLayout {
    pub fn extrinsic_dim(&self) -> usize {
        4 + usize::from(self.has_time_offset)
    }

    pub fn clone_base(&self) -> usize {
        IMU_DIM + self.extrinsic_dim()
    }

    pub fn dim(&self) -> usize {
        self.clone_base() + CLONE_DIM * self.num_clones
    }

    pub fn range(&self, block: StateBlock) -> Option<Range<usize>> {
        let r = match block {
            StateBlock::Orientation => 0..3,
            StateBlock::Position => 3..6,
            StateBlock::Velocity => 6..9,
            StateBlock::GyroBias => 9..12,
            StateBlock::AccelBias => 12..15,
            StateBlock::Psi => 15..16,
            StateBlock::PEv => 16..19,
            StateBlock::TimeOffset if self.has_time_offset => 19..20,
            StateBlock::TimeOffset => return None,
            StateBlock::Clone(i) if i < self.num_clones => {
                let s = self.clone_base() + CLONE_DIM * i;
                s..s + CLONE_DIM
            }
            StateBlock::Clone(_) => return None,
        };
        Some(r)
    }

    /// Every block present in this layout, in index order.
    pub fn blocks(&self) -> Vec<StateBlock> {
        let mut v = vec![
            StateBlock::Orientation,
            StateBlock::Position,
            StateBlock::Velocity,
            StateBlock::GyroBias,
            StateBlock::AccelBias,
            StateBlock::Psi,
            StateBlock::PEv,
        ];
        if self.has_time_offset {
            v.push(StateBlock::TimeOffset);
        }
        v.extend((0..self.num_clones).map(StateBlock::Clone));
        v
    }

    pub fn psi_index(&self) -> usize {
        15
    }

    pub fn clone_theta(&self, i: usize) -> usize {
        self.clone_base() + CLONE_DIM * i
    }

    pub fn clone_pos(&self, i: usize) -> usize {
        self.clone_theta(i) + 3
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub imu: ImuState,
    pub clones: VecDeque<CloneState>,
    pub calib: ExtrinsicCalib,
    pub max_clones: usize,
}

impl FilterState {
    pub fn new(imu: ImuState, calib: ExtrinsicCalib) -> Self {
        Self {
            imu,
            clones: VecDeque::new(),
            calib,
            max_clones: DEFAULT_MAX_CLONES,
        }
    }

    pub fn layout(&self) -> BlockLayout {
        BlockLayout {
            num_clones: self.clones.len(),
            has_time_offset: self.calib.flags.t_g,
        }
    }

    pub fn clone_index_at(&self, t: f64) -> Option<usize> {
        self.clones.iter().position(|c| (c.t - t).abs() < 1e-9)
    }

    /// Applies an additive/multiplicative error-state correction.
    pub fn apply_correction(&mut self, delta: &DVector<f64>) -> Result<(), StateError> {
        let layout = self.layout();
        if delta.len() != layout.dim() {
            return Err(StateError::DimensionMismatch {
                expected: layout.dim(),
                got: delta.len(),
            });
        }
        let v3 = |i: usize| Vec3::new(delta[i], delta[i + 1], delta[i + 2]);
        self.imu.q_vi = rotate_local(&self.imu.q_vi, &v3(0));
        self.imu.p_vi += v3(3);
        self.imu.v_vi += v3(6);
        self.imu.b_g += v3(9);
        self.imu.b_a += v3(12);
        self.calib.psi = wrap_angle(self.calib.psi + delta[15]);
        self.calib.p_ev += v3(16);
        if layout.has_time_offset {
            self.calib.t_g += delta[19];
        }
        for (i, c) in self.clones.iter_mut().enumerate() {
            let s = layout.clone_theta(i);
            c.q = rotate_local(&c.q, &v3(s));
            c.p += v3(s + 3);
        }
        Ok(())
    }

    /// Error-state vector `δ` with `other ⊕ δ = self`.
    pub fn difference(&self, other: &FilterState) -> Result<DVector<f64>, StateError> {
        let layout = other.layout();
        if self.layout() != layout {
            return Err(StateError::DimensionMismatch {
                expected: layout.dim(),
                got: self.layout().dim(),
            });
        }
        let mut d = DVector::zeros(layout.dim());
        let mut put = |i: usize, v: &Vec3| d.fixed_rows_mut::<3>(i).copy_from(v);
        put(0, &rotation_difference(&self.imu.q_vi, &other.imu.q_vi));
        put(3, &(self.imu.p_vi - other.imu.p_vi));
        put(6, &(self.imu.v_vi - other.imu.v_vi));
        put(9, &(self.imu.b_g - other.imu.b_g));
        put(12, &(self.imu.b_a - other.imu.b_a));
        put(16, &(self.calib.p_ev - other.calib.p_ev));
        for (i, (a, b)) in self.clones.iter().zip(&other.clones).enumerate() {
            let s = layout.clone_theta(i);
            put(s, &rotation_difference(&a.q, &b.q));
            put(s + 3, &(a.p - b.p));
        }
        d[15] = wrap_angle(self.calib.psi - other.calib.psi);
        if layout.has_time_offset {
            d[19] = self.calib.t_g - other.calib.t_g;
        }
        Ok(d)
    }
}

/// `δθ` with `rotate_local(b, δθ) = a`; exact inverse of the first-order
/// quaternion correction for rotations below π.
pub fn rotation_difference(a: &Quaternion, b: &Quaternion) -> Vec3 {
    let b_inv = Quaternion::new(-b.x, -b.y, -b.z, b.w);
    let d = quat_multiply(a, &b_inv);
    let s = if d.w < 0.0 { -2.0 } else { 2.0 };
    Vec3::new(d.x, d.y, d.z) * (s / d.w.abs().max(f64::MIN_POSITIVE))
}

/// `δq ⊗ q` with `δq = [½δθ, 1]`, normalized.
pub fn rotate_local(q: &Quaternion, dtheta: &Vec3) -> Quaternion {
    let dq = Quaternion::new(0.5 * dtheta.x, 0.5 * dtheta.y, 0.5 * dtheta.z, 1.0);
    quat_multiply(&dq, q).normalize()
}

/// Dense symmetric error-state covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceMatrix {
    pub mat: DMatrix<f64>,
}

impl CovarianceMatrix {
    pub fn new(mat: DMatrix<f64>) -> Self {
        let mut c = Self { mat };
        c.symmetrize();
        c
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn symmetrize(&mut self) {
        let t = self.mat.transpose();
        self.mat = 0.5 * (&self.mat + t);
    }

    pub fn block(&self, r: Range<usize>, c: Range<usize>) -> DMatrix<f64> {
        self.mat.view((r.start, c.start), (r.len(), c.len())).into_owned()
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.mat[(i, i)]
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.mat - self.mat.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        SymmetricEigen::new(self.mat.clone()).eigenvalues.min()
    }
}

/// A filter state paired with its covariance. The covariance dimension always
/// matches `state.layout().dim()`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateEstimate {
    pub state: FilterState,
    pub cov: CovarianceMatrix,
}

impl StateEstimate {
    pub fn new(state: FilterState, cov: DMatrix<f64>) -> Result<Self, StateError> {
        let expected = state.layout().dim();
        if cov.nrows() != expected || cov.ncols() != expected {
            return Err(StateError::DimensionMismatch {
                expected,
                got: cov.nrows(),
            });
        }
        Ok(Self {
            state,
            cov: CovarianceMatrix::new(cov),
        })
    }

    pub fn layout(&self) -> BlockLayout {
        self.state.layout()
    }

    /// Appends a clone of the current IMU pose taken at time `t`.
    pub fn augment_clone(&mut self, t: f64) -> Result<(), StateError> {
        if let Some(last) = self.state.clones.back() {
            if t <= last.t {
                return Err(StateError::NonIncreasingClone { t, latest: last.t });
            }
        }
        if self.state.clones.len() >= self.state.max_clones {
            return Err(StateError::WindowFull {
                max: self.state.max_clones,
            });
        }
        let n = self.cov.dim();
        // The new clone is [δθ; δp] of the IMU, rows 0..6 of the state.
        let mut p = DMatrix::zeros(n + CLONE_DIM, n + CLONE_DIM);
        p.view_mut((0, 0), (n, n)).copy_from(&self.cov.mat);
        let rows = self.cov.mat.rows(0, CLONE_DIM).into_owned();
        p.view_mut((n, 0), (CLONE_DIM, n)).copy_from(&rows);
        p.view_mut((0, n), (n, CLONE_DIM)).copy_from(&rows.transpose());
        p.view_mut((n, n), (CLONE_DIM, CLONE_DIM))
            .copy_from(&self.cov.mat.view((0, 0), (CLONE_DIM, CLONE_DIM)));
        self.cov.mat = p;
        self.state.clones.push_back(CloneState {
            t,
            q: self.state.imu.q_vi,
            p: self.state.imu.p_vi,
        });
        Ok(())
    }

    /// Drops the oldest clone and its rows/columns.
    pub fn marginalize_oldest_clone(&mut self) -> Result<CloneState, StateError> {
        if self.state.clones.is_empty() {
            return Err(StateError::NoClones);
        }
        let start = self.layout().clone_base();
        self.cov.mat = remove_block(&self.cov.mat, start, CLONE_DIM);
        Ok(self.state.clones.pop_front().expect("checked non-empty"))
    }

    pub fn apply_correction(&mut self, delta: &DVector<f64>) -> Result<(), StateError> {
        self.state.apply_correction(delta)
    }

    /// Turns time-offset estimation on or off, growing or shrinking the
    /// covariance. A newly added offset is uncorrelated with the rest.
    pub fn set_time_offset_estimation(&mut self, on: bool, variance: f64) {
        let had = self.state.calib.flags.t_g;
        if had == on {
            return;
        }
        let idx = IMU_DIM + 4;
        if on {
            let n = self.cov.dim();
            let mut p = DMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                let ii = if i >= idx { i + 1 } else { i };
                for j in 0..n {
                    let jj = if j >= idx { j + 1 } else { j };
                    p[(ii, jj)] = self.cov.mat[(i, j)];
                }
            }
            p[(idx, idx)] = variance;
            self.cov.mat = p;
        } else {
            self.cov.mat = remove_block(&self.cov.mat, idx, 1);
        }
        self.state.calib.flags.t_g = on;
    }
}

fn remove_block(m: &DMatrix<f64>, start: usize, len: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let keep: Vec<usize> = (0..n).filter(|&i| i < start || i >= start + len).collect();
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])])
}
