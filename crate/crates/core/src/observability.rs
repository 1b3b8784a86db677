//! Nonlinear observability of the reduced GPS-VIO system.
//!
//! The reduced state is `x = [q_VI, v, p, p_f, ψ, p_EV]` (17 coordinates).
//! Stacking the gradients of the zeroth- and first-order Lie derivatives of
//! the camera, quaternion-norm and GPS measurement functions gives a 22×17
//! matrix whose null space holds the locally unobservable directions.
//!
//! The quaternion columns of the stacked matrix also carry the yaw gauge of
//! the VIO frame and rotations about the velocity, which only show up in
//! higher-order derivatives. [`AttitudeTreatment::Anchored`] treats attitude
//! as known so that the remaining null space isolates the extrinsic
//! directions; [`AttitudeTreatment::Free`] reports the bare matrix.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, Matrix3x4, SMatrix, SVector};
use rand::Rng;

use crate::so3::{d_yaw_rotation, skew, xi_matrix, yaw_rotation, Mat3, Quaternion, Vec3};
use crate::vision::CameraExtrinsics;

pub const STATE_DIM: usize = 17;
pub const ROWS: usize = 22;
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type LieVector = SVector<f64, ROWS>;
pub type OMatrix = SMatrix<f64, ROWS, STATE_DIM>;

const FD_STEP: f64 = 1e-6;

pub const COLUMN_BLOCKS: [(&str, Range<usize>); 6] = [
    ("q", 0..4),
    ("v", 4..7),
    ("p", 7..10),
    ("p_f", 10..13),
    ("psi", 13..14),
    ("p_EV", 14..17),
];

pub const ROW_BLOCKS: [(&str, Range<usize>); 6] = [
    ("L0_h1", 0..3),
    ("L0_h2", 3..4),
    ("L0_h3", 4..7),
    ("L1_f0_h1", 7..10),
    ("L1_f1_h1", 10..19),
    ("L1_f0_h3", 19..22),
];

const Q: Range<usize> = 0..4;
const V: Range<usize> = 4..7;
const P: Range<usize> = 7..10;
const PF: Range<usize> = 10..13;
const PSI: usize = 13;
const PEV: Range<usize> = 14..17;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalysisState {
    pub q_vi: Quaternion,
    pub v_vi: Vec3,
    pub p_vi: Vec3,
    pub p_f: Vec3,
    pub psi: f64,
    pub p_ev: Vec3,
}

/// How horizontal velocity is drawn by [`AnalysisState::sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Excitation {
    /// Horizontal speed at least this large.
    Horizontal { min_speed: f64 },
    /// Zero horizontal velocity, arbitrary vertical velocity.
    VerticalOnly,
}

impl AnalysisState {
    pub fn to_vector(&self) -> StateVector {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<4>(0).copy_from(&self.q_vi.as_vec4());
        x.fixed_rows_mut::<3>(V.start).copy_from(&self.v_vi);
        x.fixed_rows_mut::<3>(P.start).copy_from(&self.p_vi);
        x.fixed_rows_mut::<3>(PF.start).copy_from(&self.p_f);
        x[PSI] = self.psi;
        x.fixed_rows_mut::<3>(PEV.start).copy_from(&self.p_ev);
        x
    }

    /// Inverse of [`AnalysisState::to_vector`]; the quaternion is taken as is.
    pub fn from_vector(x: &StateVector) -> Self {
        Self {
            q_vi: Quaternion::new(x[0], x[1], x[2], x[3]),
            v_vi: x.fixed_rows::<3>(V.start).into(),
            p_vi: x.fixed_rows::<3>(P.start).into(),
            p_f: x.fixed_rows::<3>(PF.start).into(),
            psi: x[PSI],
            p_ev: x.fixed_rows::<3>(PEV.start).into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }

    pub fn horizontal_speed(&self) -> f64 {
        self.v_vi.x.hypot(self.v_vi.y)
    }

    /// Random state with components in `[−10, 10]` and a uniform attitude.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, excitation: Excitation) -> Self {
        let uniform3 = |r: &mut R| {
            Vec3::new(
                r.random_range(-10.0..10.0),
                r.random_range(-10.0..10.0),
                r.random_range(-10.0..10.0),
            )
        };
        let q = loop {
            let c: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let q = Quaternion::new(c[0], c[1], c[2], c[3]);
            let n = q.norm();
            if n > 0.1 && n <= 1.0 {
                break q.normalize();
            }
        };
        let v = match excitation {
            Excitation::Horizontal { min_speed } => loop {
                let v = uniform3(rng);
                if v.x.hypot(v.y) >= min_speed {
                    break v;
                }
            },
            Excitation::VerticalOnly => Vec3::new(0.0, 0.0, rng.random_range(-10.0..10.0)),
        };
        Self {
            q_vi: q,
            v_vi: v,
            p_vi: uniform3(rng),
            p_f: uniform3(rng),
            psi: rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            p_ev: uniform3(rng),
        }
    }
}

/// Values of the six Lie derivatives at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct LieDerivatives {
    pub l0_h1: Vec3,
    pub l0_h2: f64,
    pub l0_h3: Vec3,
    pub l1_f0_h1: Vec3,
    /// Column `k` is the response to the `k`-th angular-rate input.
    pub l1_f1_h1: Mat3,
    pub l1_f0_h3: Vec3,
}

impl LieDerivatives {
    pub fn stacked(&self) -> LieVector {
        let mut out = LieVector::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.l0_h1);
        out[3] = self.l0_h2;
        out.fixed_rows_mut::<3>(4).copy_from(&self.l0_h3);
        out.fixed_rows_mut::<3>(7).copy_from(&self.l1_f0_h1);
        for k in 0..3 {
            out.fixed_rows_mut::<3>(10 + 3 * k).copy_from(&self.l1_f1_h1.column(k));
        }
        out.fixed_rows_mut::<3>(19).copy_from(&self.l1_f0_h3);
        out
    }
}

/// `∂R(q)/∂q_j` for the raw (not necessarily unit) quaternion components.
pub fn rotation_partials(q: &Quaternion) -> [Mat3; 4] {
    let v = q.vector();
    let w = q.w;
    let mut out = [Mat3::zeros(); 4];
    for (i, d) in out.iter_mut().take(3).enumerate() {
        let e = Vec3::ith(i, 1.0);
        *d = -2.0 * w * skew(&e) + 2.0 * (e * v.transpose() + v * e.transpose());
    }
    out[3] = 4.0 * w * Mat3::identity() - 2.0 * skew(&v);
    out
}

/// `∂(R(q) u)/∂q`, 3×4.
fn rotated_partial(q: &Quaternion, u: &Vec3) -> Matrix3x4<f64> {
    let parts = rotation_partials(q);
    let mut m = Matrix3x4::zeros();
    for (j, d) in parts.iter().enumerate() {
        m.set_column(j, &(d * u));
    }
    m
}

pub fn lie_derivatives(state: &AnalysisState, cam: &CameraExtrinsics) -> LieDerivatives {
    let q = &state.q_vi;
    let r = q.rotation();
    let r_ic = cam.r_ic();
    let rel = state.p_f - state.p_vi;
    let r_ev = yaw_rotation(state.psi);
    let x1 = r_ic * rotated_partial(q, &rel);
    LieDerivatives {
        l0_h1: cam.p_i_in_c + r_ic * r * rel,
        l0_h2: q.as_vec4().norm_squared() - 1.0,
        l0_h3: state.p_ev + r_ev * state.p_vi,
        l1_f0_h1: -r_ic * r * state.v_vi,
        l1_f1_h1: 0.5 * x1 * xi_matrix(q),
        l1_f0_h3: r_ev * state.v_vi,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientMode {
    /// Closed-form blocks; only the `X` blocks are differenced.
    Analytic,
    /// Every entry by central differences.
    FiniteDifference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityMatrix {
    pub mat: OMatrix,
}

impl ObservabilityMatrix {
    pub fn column_block(&self, name: &str) -> Option<Range<usize>> {
        COLUMN_BLOCKS.iter().find(|(n, _)| *n == name).map(|(_, r)| r.clone())
    }

    pub fn row_block(&self, name: &str) -> Option<Range<usize>> {
        ROW_BLOCKS.iter().find(|(n, _)| *n == name).map(|(_, r)| r.clone())
    }

    pub fn block(&self, row: &str, col: &str) -> Option<DMatrix<f64>> {
        let r = self.row_block(row)?;
        let c = self.column_block(col)?;
        Some(self.mat.view((r.start, c.start), (r.len(), c.len())).into_owned())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(ROWS, STATE_DIM, self.mat.iter().copied())
    }

    /// Largest singular value.
    pub fn norm(&self) -> f64 {
        self.mat.singular_values().max()
    }
}

fn central_difference(x: &StateVector, cam: &CameraExtrinsics, cols: Range<usize>, out: &mut OMatrix) {
    for j in cols {
        let mut hi = *x;
        let mut lo = *x;
        hi[j] += FD_STEP;
        lo[j] -= FD_STEP;
        let f_hi = lie_derivatives(&AnalysisState::from_vector(&hi), cam).stacked();
        let f_lo = lie_derivatives(&AnalysisState::from_vector(&lo), cam).stacked();
        out.set_column(j, &((f_hi - f_lo) / (2.0 * FD_STEP)));
    }
}

pub fn build_o(state: &AnalysisState, cam: &CameraExtrinsics, mode: GradientMode) -> ObservabilityMatrix {
    let x = state.to_vector();
    let mut o = OMatrix::zeros();
    match mode {
        GradientMode::FiniteDifference => central_difference(&x, cam, 0..STATE_DIM, &mut o),
        GradientMode::Analytic => {
            // The q columns of the camera rows (X1, X2, X3) and the
            // p / p_f columns of the f1 row (±X4) are differenced.
            let mut fd = OMatrix::zeros();
            central_difference(&x, cam, Q, &mut fd);
            central_difference(&x, cam, PF, &mut fd);

            let r_vc = cam.r_ic() * state.q_vi.rotation();
            let r_ev = yaw_rotation(state.psi);
            let h_psi = d_yaw_rotation(state.psi);

            o.view_mut((0, Q.start), (3, 4))
                .copy_from(&fd.view((0, Q.start), (3, 4)));
            o.view_mut((0, P.start), (3, 3)).copy_from(&(-r_vc));
            o.view_mut((0, PF.start), (3, 3)).copy_from(&r_vc);

            o.view_mut((3, Q.start), (1, 4))
                .copy_from(&(2.0 * state.q_vi.as_vec4().transpose()));

            o.view_mut((4, P.start), (3, 3)).copy_from(&r_ev);
            o.view_mut((4, PSI), (3, 1)).copy_from(&(h_psi * state.p_vi));
            o.view_mut((4, PEV.start), (3, 3)).copy_from(&Mat3::identity());

            o.view_mut((7, Q.start), (3, 4))
                .copy_from(&fd.view((7, Q.start), (3, 4)));
            o.view_mut((7, V.start), (3, 3)).copy_from(&(-r_vc));

            let x3 = fd.view((10, Q.start), (9, 4)).into_owned();
            let x4 = fd.view((10, PF.start), (9, 3)).into_owned();
            o.view_mut((10, Q.start), (9, 4)).copy_from(&x3);
            o.view_mut((10, P.start), (9, 3)).copy_from(&(-&x4));
            o.view_mut((10, PF.start), (9, 3)).copy_from(&x4);

            o.view_mut((19, V.start), (3, 3)).copy_from(&r_ev);
            o.view_mut((19, PSI), (3, 1)).copy_from(&(h_psi * state.v_vi));
        }
    }
    ObservabilityMatrix { mat: o }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankReport {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Orthonormal null-space basis, one column per direction.
    pub null_basis: DMatrix<f64>,
}

impl RankReport {
    pub fn null_dim(&self) -> usize {
        self.null_basis.ncols()
    }
}

/// Numerical rank with threshold `tol_rel · σ_max` and the trailing right
/// singular vectors as null basis.
pub fn rank_and_nullspace(o: &DMatrix<f64>, tol_rel: f64) -> RankReport {
    let n = o.ncols();
    // Pad short matrices so the SVD returns a full set of right vectors.
    let padded = if o.nrows() < n {
        let mut m = DMatrix::zeros(n, n);
        m.view_mut((0, 0), (o.nrows(), n)).copy_from(o);
        m
    } else {
        o.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let s_max = sv.first().copied().unwrap_or(0.0);
    let rank = if s_max > 0.0 {
        sv.iter().filter(|&&s| s > tol_rel * s_max).count()
    } else {
        0
    };
    let null: Vec<DVector<f64>> = order[rank..].iter().map(|&i| v_t.row(i).transpose()).collect();
    let null_basis = if null.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&null)
    };
    RankReport {
        rank,
        singular_values: sv,
        null_basis,
    }
}

/// Largest principal angle (radians) between the column spans of two
/// matrices with orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    if a.ncols() == 0 {
        return 0.0;
    }
    let s = (a.transpose() * b).singular_values();
    s.min().clamp(-1.0, 1.0).acos()
}

/// Orthonormal basis of the span of `m`'s columns.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let qr = m.clone().qr();
    qr.q().columns(0, m.ncols()).into_owned()
}

/// Translation directions `dᵢ`: shift `p` and `p_f` by `eᵢ` and compensate
/// with `p_EV`.
pub fn translation_directions(state: &AnalysisState) -> DMatrix<f64> {
    let r_ev = yaw_rotation(state.psi);
    let mut d = DMatrix::zeros(STATE_DIM, 3);
    for i in 0..3 {
        d[(P.start + i, i)] = 1.0;
        d[(PF.start + i, i)] = 1.0;
        for k in 0..3 {
            d[(PEV.start + k, i)] = -r_ev[(k, i)];
        }
    }
    d
}

/// Yaw-extrinsic direction `d_ψ`, normalized.
pub fn psi_direction(state: &AnalysisState) -> DVector<f64> {
    let mut d = DVector::zeros(STATE_DIM);
    d[PSI] = 1.0;
    let comp = -(d_yaw_rotation(state.psi) * state.p_vi);
    d.rows_mut(PEV.start, 3).copy_from(&comp);
    d.normalize()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttitudeTreatment {
    /// Attitude columns constrained as known.
    #[default]
    Anchored,
    /// The bare stacked matrix.
    Free,
}

/// Matrix used for the rank test under the chosen attitude treatment.
pub fn analysis_matrix(o: &ObservabilityMatrix, treatment: AttitudeTreatment) -> DMatrix<f64> {
    let base = o.to_dmatrix();
    match treatment {
        AttitudeTreatment::Free => base,
        AttitudeTreatment::Anchored => {
            let scale = o.norm().max(1.0);
            let mut m = DMatrix::zeros(ROWS + 4, STATE_DIM);
            m.view_mut((0, 0), (ROWS, STATE_DIM)).copy_from(&base);
            for j in 0..4 {
                m[(ROWS + j, Q.start + j)] = scale;
            }
            m
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionReport {
    pub rank: usize,
    pub null_dim: usize,
    /// `O dᵢ ≈ 0` for all three translation directions.
    pub translation_null: bool,
    /// No null vector has a ψ component.
    pub psi_observable: bool,
    /// `O d_ψ ≈ 0`.
    pub psi_direction_null: bool,
    pub max_psi_component: f64,
    pub horizontal_speed: f64,
}

pub const DIRECTION_TOLERANCE: f64 = 1e-9;
pub const PSI_COMPONENT_TOLERANCE: f64 = 1e-6;

pub fn classify_directions(state: &AnalysisState, cam: &CameraExtrinsics) -> DirectionReport {
    classify_directions_with(state, cam, AttitudeTreatment::Anchored, DEFAULT_RANK_TOLERANCE)
}

pub fn classify_directions_with(
    state: &AnalysisState,
    cam: &CameraExtrinsics,
    treatment: AttitudeTreatment,
    rank_tolerance: f64,
) -> DirectionReport {
    let o = build_o(state, cam, GradientMode::Analytic);
    let o_norm = o.norm();
    let om = o.to_dmatrix();
    let in_null = |d: &DVector<f64>| (&om * d).norm() <= DIRECTION_TOLERANCE * o_norm.max(1.0) * d.norm();

    let ds = translation_directions(state);
    let translation_null = (0..3).all(|i| in_null(&ds.column(i).into_owned()));
    let psi_direction_null = in_null(&psi_direction(state));

    let report = rank_and_nullspace(&analysis_matrix(&o, treatment), rank_tolerance);
    let max_psi_component = report.null_basis.row(PSI).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    DirectionReport {
        rank: report.rank,
        null_dim: report.null_dim(),
        translation_null,
        psi_observable: max_psi_component < PSI_COMPONENT_TOLERANCE,
        psi_direction_null,
        max_psi_component,
        horizontal_speed: state.horizontal_speed(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cam() -> CameraExtrinsics {
        CameraExtrinsics::forward_looking(Vec3::new(0.05, 0.02, -0.01))
    }

    fn state_with(v: Vec3) -> AnalysisState {
        AnalysisState {
            q_vi: Quaternion::new(0.1, -0.2, 0.3, 0.9).normalize(),
            v_vi: v,
            p_vi: Vec3::new(1.0, -2.0, 0.5),
            p_f: Vec3::new(4.0, 1.0, -1.0),
            psi: 0.7,
            p_ev: Vec3::new(3.0, -1.0, 2.0),
        }
    }

    #[test]
    fn trivial_lie_values() {
        let mut s = state_with(Vec3::zeros());
        let l = lie_derivatives(&s, &cam());
        assert_eq!(l.l1_f0_h1, Vec3::zeros());
        assert_eq!(l.l1_f0_h3, Vec3::zeros());
        assert!(l.l0_h2.abs() < 1e-15);
        s.psi = 0.0;
        s.p_ev = Vec3::zeros();
        let l = lie_derivatives(&s, &cam());
        assert_relative_eq!(l.l0_h3, s.p_vi, epsilon = 1e-15);
    }

    #[test]
    fn rotation_partials_match_differences() {
        let q = Quaternion::new(0.3, -0.1, 0.4, 0.8);
        let parts = rotation_partials(&q);
        for (j, d) in parts.iter().enumerate() {
            let mut c = q.as_vec4();
            c[j] += 1e-6;
            let hi = Quaternion::from_vec4(&c).rotation();
            c[j] -= 2e-6;
            let lo = Quaternion::from_vec4(&c).rotation();
            assert_relative_eq!((hi - lo) / 2e-6, *d, epsilon = 1e-8);
        }
    }

    #[test]
    fn known_blocks() {
        let s = state_with(Vec3::new(1.0, 1.0, 0.5));
        let o = build_o(&s, &cam(), GradientMode::Analytic);
        let pev = o.block("L0_h3", "p_EV").unwrap();
        assert_relative_eq!(pev, DMatrix::identity(3, 3), epsilon = 0.0);
        let psi = o.block("L0_h3", "psi").unwrap();
        let expected = d_yaw_rotation(s.psi) * s.p_vi;
        for i in 0..3 {
            assert_relative_eq!(psi[(i, 0)], expected[i], epsilon = 1e-15);
        }
    }

    #[test]
    fn analytic_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = AnalysisState::sample(&mut rng, Excitation::Horizontal { min_speed: 0.1 });
            let a = build_o(&s, &cam(), GradientMode::Analytic).mat;
            let f = build_o(&s, &cam(), GradientMode::FiniteDifference).mat;
            assert!((a - f).abs().max() < 1e-6);
        }
    }

    #[test]
    fn padded_identity_has_full_rank() {
        let mut m = DMatrix::zeros(22, 17);
        m.view_mut((0, 0), (17, 17)).fill_with_identity();
        let r = rank_and_nullspace(&m, DEFAULT_RANK_TOLERANCE);
        assert_eq!(r.rank, 17);
        assert_eq!(r.null_dim(), 0);
    }

    #[test]
    fn duplicated_column_in_null_space() {
        let mut m = DMatrix::from_fn(5, 4, |i, j| {
            ((i * 7 + j * 3) % 5) as f64 + if i == j { 1.0 } else { 0.0 }
        });
        let c = m.column(0).into_owned();
        m.set_column(3, &c);
        let r = rank_and_nullspace(&m, DEFAULT_RANK_TOLERANCE);
        let d = DVector::from_vec(vec![1.0, 0.0, 0.0, -1.0]) / 2f64.sqrt();
        let residual = &d - &r.null_basis * (r.null_basis.transpose() * &d);
        assert!(residual.norm() < 1e-9);
    }

    #[test]
    fn zero_matrix_has_rank_zero() {
        let r = rank_and_nullspace(&DMatrix::zeros(3, 3), DEFAULT_RANK_TOLERANCE);
        assert_eq!(r.rank, 0);
        assert_eq!(r.null_dim(), 3);
    }

    #[test]
    fn generic_state_classification() {
        let rep = classify_directions(&state_with(Vec3::new(1.0, 1.0, 0.5)), &cam());
        assert_eq!(rep.rank, 14);
        assert_eq!(rep.null_dim, 3);
        assert!(rep.translation_null);
        assert!(rep.psi_observable);
    }

    #[test]
    fn vertical_motion_classification() {
        let rep = classify_directions(&state_with(Vec3::new(0.0, 0.0, 0.7)), &cam());
        assert_eq!(rep.null_dim, 4);
        assert!(!rep.psi_observable);
        assert!(rep.psi_direction_null);
    }

    #[test]
    fn free_attitude_keeps_two_extra_directions() {
        let rep = classify_directions_with(
            &state_with(Vec3::new(1.0, 1.0, 0.5)),
            &cam(),
            AttitudeTreatment::Free,
            DEFAULT_RANK_TOLERANCE,
        );
        assert_eq!(rep.rank, 12);
        assert_eq!(rep.null_dim, 5);
        assert!(rep.translation_null);
    }

    #[test]
    fn translation_directions_at_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let s = AnalysisState::sample(&mut rng, Excitation::Horizontal { min_speed: 0.0 });
            let o = build_o(&s, &cam(), GradientMode::Analytic);
            let res = o.to_dmatrix() * translation_directions(&s);
            assert!(res.abs().max() < 1e-9 * o.norm());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn vertical_velocity_does_not_change_verdict(seed in any::<u64>(), vz in -10.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = AnalysisState::sample(&mut rng, Excitation::Horizontal { min_speed: 1e-3 });
            let mut t = s;
            t.v_vi.z = vz;
            let a = classify_directions(&s, &cam());
            let b = classify_directions(&t, &cam());
            prop_assert_eq!(a.null_dim, b.null_dim);
            prop_assert_eq!(a.psi_observable, b.psi_observable);
            prop_assert_eq!(a.translation_null, b.translation_null);
        }

        #[test]
        fn analytic_and_numeric_rank_agree(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = AnalysisState::sample(&mut rng, Excitation::Horizontal { min_speed: 1e-3 });
            for t in [AttitudeTreatment::Anchored, AttitudeTreatment::Free] {
                let a = analysis_matrix(&build_o(&s, &cam(), GradientMode::Analytic), t);
                let f = analysis_matrix(&build_o(&s, &cam(), GradientMode::FiniteDifference), t);
                prop_assert_eq!(
                    rank_and_nullspace(&a, DEFAULT_RANK_TOLERANCE).rank,
                    rank_and_nullspace(&f, DEFAULT_RANK_TOLERANCE).rank
                );
            }
        }
    }
}
