//! Seeded random instances: states, factors and Lindblad models.
//!
//! Used by the test suites and the CLI smoke configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{hermitian_part, thin_qr};
use crate::model::LindbladModel;
use crate::scalar::{c_real, cplx, real, CMatrix, CVector, Real};
use crate::state::{DensityMatrix, Factors, GeneralOperator, HermitianOperator, LowRankState, PureState};

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian<R: Real, G: Rng>(rng: &mut G) -> num_complex::Complex<R> {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    cplx(real(re), real(im))
}

pub fn random_matrix<R: Real, G: Rng>(rng: &mut G, rows: usize, cols: usize) -> CMatrix<R> {
    CMatrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

pub fn random_isometry<R: Real, G: Rng>(rng: &mut G, n: usize, m: usize) -> CMatrix<R> {
    loop {
        let g = random_matrix::<R, G>(rng, n, m);
        if let Ok((q, _)) = thin_qr(&g, real(1e-8)) {
            return q;
        }
    }
}

pub fn random_pure<R: Real, G: Rng>(rng: &mut G, n: usize) -> PureState<R> {
    let v = CVector::from_fn(n, |_, _| gaussian(rng));
    PureState::normalized(v).expect("nonzero gaussian vector")
}

/// Positive Hermitian `m x m` matrix with unit trace and eigenvalues bounded
/// away from zero.
pub fn random_sigma<R: Real, G: Rng>(rng: &mut G, m: usize) -> CMatrix<R> {
    let w = random_isometry::<R, G>(rng, m, m);
    let mut vals: Vec<f64> = (0..m).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = vals.iter().sum();
    vals.iter_mut().for_each(|v| *v /= total);
    let d = CMatrix::from_diagonal(&CVector::from_iterator(m, vals.iter().map(|&v| c_real(real(v)))));
    hermitian_part(&(&w * d * w.adjoint()))
}

pub fn random_lowrank<R: Real, G: Rng>(rng: &mut G, n: usize, m: usize) -> LowRankState<R> {
    let u = random_isometry(rng, n, m);
    let sigma = random_sigma(rng, m);
    LowRankState::from_factors(Factors { u, sigma }).expect("valid random factors")
}

/// Random density matrix of rank `rank`.
pub fn random_density<R: Real, G: Rng>(rng: &mut G, n: usize, rank: usize) -> DensityMatrix<R> {
    let st = random_lowrank::<R, G>(rng, n, rank);
    crate::state::density_from_lowrank(&st)
}

/// Random model with `||H||_F ~ h_scale` and `||L||_F ~ l_scale`.
pub fn random_model_scaled<R: Real, G: Rng>(rng: &mut G, n: usize, h_scale: f64, l_scale: f64) -> LindbladModel<R> {
    let a = random_matrix::<R, G>(rng, n, n);
    let h = hermitian_part(&a);
    let h = &h * c_real(real::<R>(h_scale) / h.norm());
    let l = random_matrix::<R, G>(rng, n, n);
    let l = &l * c_real(real::<R>(l_scale) / l.norm());
    LindbladModel::new(
        HermitianOperator::new(h).expect("hermitian part"),
        GeneralOperator::new(l).expect("square"),
    )
    .expect("consistent dims")
}

/// Random model with order-one Hamiltonian and dissipator.
pub fn random_model<R: Real, G: Rng>(rng: &mut G, n: usize) -> LindbladModel<R> {
    random_model_scaled(rng, n, 1.0, 1.0)
}
