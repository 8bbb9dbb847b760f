//! Validated state and operator types.
//!
//! Every type checks its invariants on construction and is immutable
//! afterwards. Matrix storage is nalgebra's column-major layout; file formats
//! elsewhere in the workspace are index-explicit and do not depend on it.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{
    ensure_dim, ensure_square, hermitian_part, hermitian_residual, isometry_residual, min_eigenvalue,
    outer, thin_qr, trace_of_product,
};
use crate::scalar::{abs, c_real, real, to_f64, tolerance, CMatrix, CVector, Real};

/// Validation tolerances.
pub mod tol {
    /// Hermiticity, relative to the largest entry.
    pub const HERM: f64 = 1e-12;
    /// `|tr - 1|` for density matrices and low-rank factors.
    pub const TRACE: f64 = 1e-10;
    /// Smallest admissible eigenvalue of a density matrix is `-POS`.
    pub const POS: f64 = 1e-10;
    /// Relaxed positivity bound for matrices rebuilt from factors.
    pub const POS_RELAXED: f64 = 1e-9;
    /// Unit norm of pure states.
    pub const NORM: f64 = 1e-12;
    /// `||U'U - I||_F`.
    pub const ISO: f64 = 1e-10;
    /// Eigenvalues of sigma must exceed `POS_FLOOR * tr(sigma)`.
    pub const POS_FLOOR: f64 = 1e-13;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator<R: Real = f64> {
    entries: CMatrix<R>,
}

impl<R: Real> HermitianOperator<R> {
    pub fn new(entries: CMatrix<R>) -> Result<Self> {
        ensure_square(&entries)?;
        let residual = hermitian_residual(&entries);
        if residual > tolerance::<R>(tol::HERM) {
            return Err(Error::NotHermitian { residual: to_f64(residual) });
        }
        Ok(Self { entries: hermitian_part(&entries) })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: CMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.entries
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneralOperator<R: Real = f64> {
    entries: CMatrix<R>,
}

impl<R: Real> GeneralOperator<R> {
    pub fn new(entries: CMatrix<R>) -> Result<Self> {
        ensure_square(&entries)?;
        Ok(Self { entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { entries: CMatrix::zeros(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.entries
    }

    pub fn adjoint(&self) -> Self {
        Self { entries: self.entries.adjoint() }
    }
}

/// Hermitian, unit-trace, positive semidefinite `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<R: Real = f64> {
    entries: CMatrix<R>,
}

/// Checks the density-matrix invariants on a raw matrix.
pub fn check_density<R: Real>(m: &CMatrix<R>, tol_pos: f64) -> Result<()> {
    ensure_square(m)?;
    let residual = hermitian_residual(m);
    if residual > tolerance::<R>(tol::HERM) {
        return Err(Error::NotHermitian { residual: to_f64(residual) });
    }
    let tr = m.trace();
    if abs(tr - c_real(R::one())) > tolerance::<R>(tol::TRACE) {
        return Err(Error::InvalidTrace { trace: to_f64(tr.re) });
    }
    let lo = min_eigenvalue(m);
    if lo < -tolerance::<R>(tol_pos) {
        return Err(Error::NotPositive { min_eig: to_f64(lo) });
    }
    Ok(())
}

impl<R: Real> DensityMatrix<R> {
    pub fn new(entries: CMatrix<R>) -> Result<Self> {
        Self::with_positivity_tolerance(entries, tol::POS)
    }

    pub fn with_positivity_tolerance(entries: CMatrix<R>, tol_pos: f64) -> Result<Self> {
        check_density(&entries, tol_pos)?;
        Ok(Self { entries: hermitian_part(&entries) })
    }

    /// Wraps solver output without re-running the eigenvalue check.
    pub(crate) fn from_trusted(entries: CMatrix<R>) -> Self {
        Self { entries: hermitian_part(&entries) }
    }

    pub fn from_pure(psi: &PureState<R>) -> Self {
        Self { entries: outer(psi.amplitudes()) }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let w = c_real(R::one() / real::<R>(dim as f64));
        Self { entries: CMatrix::identity(dim, dim) * w }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.entries
    }

    pub fn into_matrix(self) -> CMatrix<R> {
        self.entries
    }

    /// Re-runs the invariant checks; used by tests and the acceptance suite.
    pub fn validate(&self, tol_pos: f64) -> Result<()> {
        check_density(&self.entries, tol_pos)
    }
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState<R: Real = f64> {
    amplitudes: CVector<R>,
}

impl<R: Real> PureState<R> {
    pub fn new(amplitudes: CVector<R>) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - R::one()).abs() > tolerance::<R>(tol::NORM) {
            return Err(Error::NotNormalized { norm: to_f64(norm) });
        }
        Ok(Self { amplitudes })
    }

    /// Normalises `v`; fails on the zero vector.
    pub fn normalized(v: CVector<R>) -> Result<Self> {
        let norm = v.norm();
        if norm == R::zero() || !norm.is_finite() {
            return Err(Error::NotNormalized { norm: to_f64(norm) });
        }
        Ok(Self { amplitudes: v / c_real(norm) })
    }

    pub(crate) fn from_trusted(amplitudes: CVector<R>) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, k: usize) -> Self {
        let mut v = CVector::zeros(dim);
        v[k] = c_real(R::one());
        Self { amplitudes: v }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &CVector<R> {
        &self.amplitudes
    }

    pub fn into_vector(self) -> CVector<R> {
        self.amplitudes
    }
}

/// `n x m` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Isometry<R: Real = f64> {
    columns: CMatrix<R>,
}

impl<R: Real> Isometry<R> {
    pub fn new(columns: CMatrix<R>) -> Result<Self> {
        let residual = isometry_residual(&columns);
        if residual > tolerance::<R>(tol::ISO) {
            return Err(Error::NotIsometric { residual: to_f64(residual) });
        }
        Ok(Self { columns })
    }

    pub fn n(&self) -> usize {
        self.columns.nrows()
    }

    pub fn m(&self) -> usize {
        self.columns.ncols()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.columns
    }
}

/// Strictly positive Hermitian `m x m` factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveFactor<R: Real = f64> {
    entries: CMatrix<R>,
}

impl<R: Real> PositiveFactor<R> {
    pub fn new(entries: CMatrix<R>) -> Result<Self> {
        ensure_square(&entries)?;
        let residual = hermitian_residual(&entries);
        if residual > tolerance::<R>(tol::HERM) {
            return Err(Error::NotHermitian { residual: to_f64(residual) });
        }
        let entries = hermitian_part(&entries);
        let lo = min_eigenvalue(&entries);
        let tr = entries.trace().re;
        if !(lo > real::<R>(tol::POS_FLOOR) * tr) {
            return Err(Error::SingularFactor { min_eig: to_f64(lo) });
        }
        Ok(Self { entries })
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &CMatrix<R> {
        &self.entries
    }

    pub fn min_eigenvalue(&self) -> R {
        min_eigenvalue(&self.entries)
    }
}

/// Raw `(U, sigma)` pair, e.g. mid-step inside an integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors<R: Real = f64> {
    pub u: CMatrix<R>,
    pub sigma: CMatrix<R>,
}

impl<R: Real> Factors<R> {
    pub fn reconstruct(&self) -> CMatrix<R> {
        &self.u * &self.sigma * self.u.adjoint()
    }
}

/// `rho_LR = U sigma U'` with `U` isometric and `tr(sigma) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankState<R: Real = f64> {
    u: Isometry<R>,
    sigma: PositiveFactor<R>,
}

impl<R: Real> LowRankState<R> {
    pub fn new(u: Isometry<R>, sigma: PositiveFactor<R>) -> Result<Self> {
        ensure_dim(u.m(), sigma.m())?;
        let tr = sigma.matrix().trace();
        if abs(tr - c_real(R::one())) > tolerance::<R>(tol::TRACE) {
            return Err(Error::InvalidTrace { trace: to_f64(tr.re) });
        }
        Ok(Self { u, sigma })
    }

    pub fn from_factors(f: Factors<R>) -> Result<Self> {
        Self::new(Isometry::new(f.u)?, PositiveFactor::new(f.sigma)?)
    }

    /// Rank-one state `|psi><psi|`.
    pub fn pure(psi: &PureState<R>) -> Self {
        let n = psi.dim();
        let u = CMatrix::from_column_slice(n, 1, psi.amplitudes().as_slice());
        let sigma = CMatrix::from_element(1, 1, c_real(R::one()));
        Self { u: Isometry { columns: u }, sigma: PositiveFactor { entries: sigma } }
    }

    pub fn n(&self) -> usize {
        self.u.n()
    }

    pub fn rank(&self) -> usize {
        self.u.m()
    }

    pub fn u(&self) -> &CMatrix<R> {
        self.u.matrix()
    }

    pub fn sigma(&self) -> &CMatrix<R> {
        self.sigma.matrix()
    }

    pub fn min_sigma_eigenvalue(&self) -> R {
        self.sigma.min_eigenvalue()
    }

    pub fn to_factors(&self) -> Factors<R> {
        Factors { u: self.u().clone(), sigma: self.sigma().clone() }
    }

    /// `U U'`.
    pub fn projector(&self) -> CMatrix<R> {
        self.u() * self.u().adjoint()
    }
}

pub fn density_from_lowrank<R: Real>(state: &LowRankState<R>) -> DensityMatrix<R> {
    DensityMatrix::from_trusted(state.u() * state.sigma() * state.u().adjoint())
}

/// Restores `U'U = I` after numerical drift while keeping `U sigma U'` fixed.
///
/// Uses `U = Q Rf`, so `U sigma U' = Q (Rf sigma Rf') Q'`.
pub fn reorthonormalize<R: Real>(f: &Factors<R>) -> Result<Factors<R>> {
    let (q, rf) = thin_qr(&f.u, real(1e-14))?;
    let sigma = hermitian_part(&(&rf * &f.sigma * rf.adjoint()));
    Ok(Factors { u: q, sigma })
}

pub fn frobenius_distance<R: Real>(a: &DensityMatrix<R>, b: &DensityMatrix<R>) -> Result<R> {
    matrix_distance(a.matrix(), b.matrix())
}

/// `sqrt(tr((a-b)'(a-b)))` on raw matrices.
pub fn matrix_distance<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> Result<R> {
    ensure_dim(a.nrows(), b.nrows())?;
    ensure_dim(a.ncols(), b.ncols())?;
    Ok((a - b).norm())
}

pub fn purity<R: Real>(rho: &DensityMatrix<R>) -> R {
    trace_of_product(rho.matrix(), rho.matrix()).re
}

/// `tr(a b)` for Hermitian arguments, real part.
pub fn trace_product_real<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> R {
    let t: Complex<R> = trace_of_product(a, b);
    t.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::cplx;
    use crate::testing::{random_density, random_lowrank, seeded_rng};
    use proptest::prelude::*;

    fn diag(values: &[f64]) -> CMatrix<f64> {
        CMatrix::from_diagonal(&CVector::from_iterator(values.len(), values.iter().map(|&v| cplx(v, 0.0))))
    }

    #[test]
    fn rank_one_reconstruction() {
        let psi = PureState::<f64>::basis(4, 0);
        let rho = density_from_lowrank(&LowRankState::pure(&psi));
        assert_eq!(rho.matrix(), &diag(&[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn maximally_mixed_reconstruction() {
        let n = 5;
        let u = Isometry::new(CMatrix::<f64>::identity(n, n)).unwrap();
        let s = PositiveFactor::new(CMatrix::identity(n, n) * cplx(1.0 / n as f64, 0.0)).unwrap();
        let rho = density_from_lowrank(&LowRankState::new(u, s).unwrap());
        assert!((rho.matrix() - DensityMatrix::<f64>::maximally_mixed(n).matrix()).norm() < 1e-15);
    }

    #[test]
    fn reconstruction_matches_triple_loop() {
        let mut rng = seeded_rng(11);
        let st = random_lowrank::<f64, _>(&mut rng, 6, 3);
        let rho = density_from_lowrank(&st);
        let (u, s) = (st.u(), st.sigma());
        for i in 0..6 {
            for j in 0..6 {
                let mut acc = cplx(0.0f64, 0.0);
                for a in 0..3 {
                    for b in 0..3 {
                        acc += u[(i, a)] * s[(a, b)] * u[(j, b)].conj();
                    }
                }
                assert!((rho.matrix()[(i, j)] - acc).norm() < 1e-14);
            }
        }
        assert!((rho.matrix().trace().re - s.trace().re).abs() < 1e-14);
        rho.validate(tol::POS_RELAXED).unwrap();
    }

    #[test]
    fn reorthonormalize_is_idempotent_on_isometries() {
        let mut rng = seeded_rng(3);
        let st = random_lowrank::<f64, _>(&mut rng, 6, 3);
        let out = reorthonormalize(&st.to_factors()).unwrap();
        assert!((&out.u - st.u()).norm() < 1e-14);
        assert!((&out.sigma - st.sigma()).norm() < 1e-14);
    }

    #[test]
    fn reorthonormalize_preserves_reconstruction() {
        let mut rng = seeded_rng(4);
        let st = random_lowrank::<f64, _>(&mut rng, 6, 3);
        let mut f = st.to_factors();
        let scaled = f.u.column(1) * cplx(1.001, 0.0);
        f.u.set_column(1, &scaled);
        let before = f.reconstruct();
        let out = reorthonormalize(&f).unwrap();
        assert!(isometry_residual(&out.u) < tol::ISO);
        assert!((out.reconstruct() - before).norm() < 1e-12);
    }

    #[test]
    fn reorthonormalize_rejects_repeated_columns() {
        let mut rng = seeded_rng(5);
        let st = random_lowrank::<f64, _>(&mut rng, 6, 2);
        let mut f = st.to_factors();
        let c0 = f.u.column(0).into_owned();
        f.u.set_column(1, &c0);
        assert!(matches!(reorthonormalize(&f), Err(Error::DegenerateFactor { .. })));
    }

    #[test]
    fn distance_cases() {
        let a = DensityMatrix::new(diag(&[1.0, 0.0])).unwrap();
        let b = DensityMatrix::new(diag(&[0.0, 1.0])).unwrap();
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert!((frobenius_distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let c = DensityMatrix::<f64>::maximally_mixed(3);
        assert!(matches!(frobenius_distance(&a, &c), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn distance_matches_entrywise_sum() {
        let mut rng = seeded_rng(8);
        let a = random_density::<f64, _>(&mut rng, 5, 5);
        let b = random_density::<f64, _>(&mut rng, 5, 3);
        let mut acc = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                acc += (a.matrix()[(i, j)] - b.matrix()[(i, j)]).norm_sqr();
            }
        }
        assert!((frobenius_distance(&a, &b).unwrap() - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn purity_cases() {
        let psi = PureState::<f64>::basis(3, 1);
        assert!((purity(&DensityMatrix::from_pure(&psi)) - 1.0).abs() < 1e-15);
        assert!((purity(&DensityMatrix::<f64>::maximally_mixed(4)) - 0.25).abs() < 1e-15);
        let rho = DensityMatrix::new(diag(&[0.5, 0.3, 0.2])).unwrap();
        assert!((purity(&rho) - 0.38).abs() < 1e-15);
    }

    #[test]
    fn density_validation_errors() {
        assert!(matches!(DensityMatrix::new(diag(&[0.6, 0.6])), Err(Error::InvalidTrace { .. })));
        assert!(matches!(DensityMatrix::new(diag(&[1.5, -0.5])), Err(Error::NotPositive { .. })));
        let mut m = diag(&[0.5, 0.5]);
        m[(0, 1)] = cplx(0.1, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn positive_factor_rejects_tiny_eigenvalue() {
        assert!(matches!(PositiveFactor::new(diag(&[1.0, 1e-15])), Err(Error::SingularFactor { .. })));
        assert!(PositiveFactor::new(diag(&[1.0, 1e-12])).is_ok());
    }

    #[test]
    fn generic_over_f32() {
        let psi = PureState::<f32>::normalized(CVector::from_vec(vec![cplx(1.0f32, 0.0), cplx(0.0, 1.0)])).unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        assert!((purity(&rho) - 1.0).abs() < 1e-6);
        rho.validate(tol::POS).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn triangle_inequality(seed in any::<u64>()) {
            let mut rng = seeded_rng(seed);
            let a = random_density::<f64, _>(&mut rng, 4, 4);
            let b = random_density::<f64, _>(&mut rng, 4, 2);
            let c = random_density::<f64, _>(&mut rng, 4, 1);
            let ab = frobenius_distance(&a, &b).unwrap();
            let bc = frobenius_distance(&b, &c).unwrap();
            let ac = frobenius_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!((ab - frobenius_distance(&b, &a).unwrap()).abs() < 1e-15);
        }

        #[test]
        fn lowrank_purity_is_sigma_purity(seed in any::<u64>(), m in 1usize..5) {
            let mut rng = seeded_rng(seed);
            let st = random_lowrank::<f64, _>(&mut rng, 6, m);
            let rho = density_from_lowrank(&st);
            let s2 = trace_product_real(st.sigma(), st.sigma());
            prop_assert!((purity(&rho) - s2).abs() < 1e-12);
            prop_assert!(rho.validate(tol::POS_RELAXED).is_ok());
        }
    }
}
