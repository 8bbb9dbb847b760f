//! Control-variate estimator `rho_cv = rho_mc + lambda (rho_lr - rho_mclr)`.
//!
//! The coefficient minimising `E tr((rho_cv - rho)^2)` is
//! `lambda* = (E|<psi|psi_lr>|^2 - tr(rho rho_lr)) / (1 - tr(rho_lr^2))`,
//! evaluated with the Monte-Carlo plug-ins for `rho` and the expectation.

use crate::error::{Error, Result};
use crate::linalg::{ensure_dim, ensure_square};
use crate::scalar::{c_real, real, to_f64, CMatrix, Real};
use crate::state::{matrix_distance, trace_product_real, DensityMatrix};
use crate::trajectory::EnsembleResult;

/// Below this `1 - tr(rho_lr^2)` the optimal coefficient is undefined.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-12;
/// Below this the pipeline falls back to `lambda = 0` and flags the time.
pub const FLAG_DENOMINATOR: f64 = 1e-6;

pub fn cv_estimate<R: Real>(rho_mc: &CMatrix<R>, rho_lr: &CMatrix<R>, rho_mclr: &CMatrix<R>, lambda: R) -> Result<CMatrix<R>> {
    let n = ensure_square(rho_mc)?;
    ensure_dim(n, ensure_square(rho_lr)?)?;
    ensure_dim(n, ensure_square(rho_mclr)?)?;
    Ok(rho_mc + (rho_lr - rho_mclr) * c_real(lambda))
}

pub fn optimal_lambda<R: Real>(rho_est: &CMatrix<R>, rho_lr: &CMatrix<R>, overlap_sq_mean: R) -> Result<R> {
    let n = ensure_square(rho_est)?;
    ensure_dim(n, ensure_square(rho_lr)?)?;
    let denominator = R::one() - trace_product_real(rho_lr, rho_lr);
    if !(denominator > real::<R>(DEGENERATE_DENOMINATOR)) {
        return Err(Error::DegenerateDenominator { denominator: to_f64(denominator) });
    }
    Ok((overlap_sq_mean - trace_product_real(rho_est, rho_lr)) / denominator)
}

/// Frobenius distance `sqrt(tr((rho_est - rho_ref)^2))`.
pub fn empirical_error<R: Real>(rho_est: &CMatrix<R>, rho_ref: &DensityMatrix<R>) -> Result<R> {
    matrix_distance(rho_est, rho_ref.matrix())
}

#[derive(Debug, Clone)]
pub struct CvEstimate<R: Real = f64> {
    pub t_grid: Vec<R>,
    pub rho_cv: Vec<CMatrix<R>>,
    pub lambda: Vec<R>,
    /// Times where the coefficient fell back to zero.
    pub flagged: Vec<bool>,
    /// Distances to the reference; empty without one.
    pub err_cv: Vec<R>,
    pub err_mc: Vec<R>,
}

/// Applies the estimator at every output time of a paired ensemble, with
/// `lambda` from the plug-in rule `rho -> rho_mc`.
pub fn denoise<R: Real>(ensemble: &EnsembleResult<R>, reference: Option<&[DensityMatrix<R>]>) -> Result<CvEstimate<R>> {
    combine(ensemble, reference, |j, lr| {
        let denominator = R::one() - trace_product_real(lr, lr);
        if denominator < real(FLAG_DENOMINATOR) {
            Ok((R::zero(), true))
        } else {
            Ok((optimal_lambda(&ensemble.rho_mc[j], lr, ensemble.overlap_sq_mean[j])?, false))
        }
    })
}

/// Same estimator with coefficients fixed in advance, one per output time.
/// Coefficients taken from an independent pilot ensemble keep the estimate
/// exactly unbiased; the plug-in rule carries an O(1/M) bias.
pub fn denoise_with_lambda<R: Real>(
    ensemble: &EnsembleResult<R>,
    lambda: &[R],
    reference: Option<&[DensityMatrix<R>]>,
) -> Result<CvEstimate<R>> {
    ensure_dim(ensemble.t_grid.len(), lambda.len())?;
    combine(ensemble, reference, |j, _| Ok((lambda[j], false)))
}

fn combine<R: Real>(
    ensemble: &EnsembleResult<R>,
    reference: Option<&[DensityMatrix<R>]>,
    mut coefficient: impl FnMut(usize, &CMatrix<R>) -> Result<(R, bool)>,
) -> Result<CvEstimate<R>> {
    let k = ensemble.t_grid.len();
    if ensemble.rho_mclr.len() != k || ensemble.rho_lr.len() != k || ensemble.overlap_sq_mean.len() != k {
        return Err(Error::InvalidArgument("ensemble carries no paired low-rank data".into()));
    }
    if let Some(r) = reference {
        ensure_dim(k, r.len())?;
    }
    let mut out = CvEstimate {
        t_grid: ensemble.t_grid.clone(),
        rho_cv: Vec::with_capacity(k),
        lambda: Vec::with_capacity(k),
        flagged: Vec::with_capacity(k),
        err_cv: Vec::new(),
        err_mc: Vec::new(),
    };
    for j in 0..k {
        let (mc, lr, mclr) = (&ensemble.rho_mc[j], &ensemble.rho_lr[j], &ensemble.rho_mclr[j]);
        let (lambda, flagged) = coefficient(j, lr)?;
        let cv = cv_estimate(mc, lr, mclr, lambda)?;
        if let Some(r) = reference {
            out.err_cv.push(empirical_error(&cv, &r[j])?);
            out.err_mc.push(empirical_error(mc, &r[j])?);
        }
        out.rho_cv.push(cv);
        out.lambda.push(lambda);
        out.flagged.push(flagged);
    }
    Ok(out)
}

/// Replication-mean squared error of `rho_cv(lambda)` for each `lambda`,
/// from independent ensembles at one output time.
pub fn lambda_scan<R: Real>(
    samples: &[(CMatrix<R>, CMatrix<R>)],
    rho_lr: &CMatrix<R>,
    rho_ref: &CMatrix<R>,
    lambdas: &[R],
) -> Result<Vec<R>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no replications".into()));
    }
    let count = real::<R>(samples.len() as f64);
    lambdas
        .iter()
        .map(|&lambda| {
            let mut acc = R::zero();
            for (mc, mclr) in samples {
                let d = matrix_distance(&cv_estimate(mc, rho_lr, mclr, lambda)?, rho_ref)?;
                acc += d * d;
            }
            Ok(acc / count)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::outer;
    use crate::testing::{random_density, random_pure, seeded_rng};

    #[test]
    fn cv_estimate_cases() {
        let mut rng = seeded_rng(81);
        let mc = random_density::<f64, _>(&mut rng, 3, 3).into_matrix();
        let lr = random_density::<f64, _>(&mut rng, 3, 2).into_matrix();
        let mclr = random_density::<f64, _>(&mut rng, 3, 2).into_matrix();
        assert_eq!(cv_estimate(&mc, &lr, &mclr, 0.0).unwrap(), mc);
        assert!((cv_estimate(&mc, &lr, &lr, 0.7).unwrap() - &mc).norm() < 1e-16);
        let cv = cv_estimate(&mc, &lr, &mclr, 1.3).unwrap();
        assert!((cv.trace().re - 1.0).abs() < 1e-12);
        assert!((&cv - cv.adjoint()).norm() < 1e-12);
        assert_eq!(cv_estimate(&mc, &mc, &mc, 1.0).unwrap(), mc);
        let small = CMatrix::<f64>::identity(2, 2);
        assert!(matches!(cv_estimate(&mc, &small, &mclr, 1.0), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn optimal_lambda_limits() {
        let mut rng = seeded_rng(82);
        let rho = random_density::<f64, _>(&mut rng, 4, 4).into_matrix();
        let lr = random_density::<f64, _>(&mut rng, 4, 2).into_matrix();
        let independent = trace_product_real(&rho, &lr);
        assert!(optimal_lambda(&rho, &lr, independent).unwrap().abs() < 1e-15);
        assert!((optimal_lambda(&rho, &rho, 1.0).unwrap() - 1.0).abs() < 1e-14);
        let pure = outer(random_pure::<f64, _>(&mut rng, 4).amplitudes());
        assert!(matches!(optimal_lambda(&rho, &pure, 1.0), Err(Error::DegenerateDenominator { .. })));
    }

    #[test]
    fn lambda_is_phase_invariant() {
        let mut rng = seeded_rng(83);
        let rho = random_density::<f64, _>(&mut rng, 3, 3).into_matrix();
        let psi = random_pure::<f64, _>(&mut rng, 3);
        let phase = crate::scalar::cplx(0.6f64, 0.8);
        let a = outer(psi.amplitudes());
        let b = outer(&(psi.amplitudes() * phase));
        assert!((a - b).norm() < 1e-15);
        let lr = random_density::<f64, _>(&mut rng, 3, 2).into_matrix();
        let x = optimal_lambda(&rho, &lr, 0.4).unwrap();
        assert!(x.is_finite());
    }

    #[test]
    fn empirical_error_delegates() {
        let mut rng = seeded_rng(84);
        let a = random_density::<f64, _>(&mut rng, 3, 3);
        let b = random_density::<f64, _>(&mut rng, 3, 1);
        assert_eq!(empirical_error(a.matrix(), &a).unwrap(), 0.0);
        assert_eq!(empirical_error(a.matrix(), &b).unwrap(), crate::state::frobenius_distance(&a, &b).unwrap());
    }

    #[test]
    fn scan_is_quadratic() {
        let mut rng = seeded_rng(85);
        let rho = random_density::<f64, _>(&mut rng, 3, 3).into_matrix();
        let lr = random_density::<f64, _>(&mut rng, 3, 2).into_matrix();
        let samples: Vec<_> = (0..10)
            .map(|_| (random_density::<f64, _>(&mut rng, 3, 3).into_matrix(), random_density::<f64, _>(&mut rng, 3, 2).into_matrix()))
            .collect();
        let grid: Vec<f64> = (0..5).map(|k| k as f64 - 2.0).collect();
        let v = lambda_scan(&samples, &lr, &rho, &grid).unwrap();
        let second: Vec<f64> = v.windows(3).map(|w| w[0] - 2.0 * w[1] + w[2]).collect();
        assert!((second[0] - second[1]).abs() < 1e-12 && second[0] > 0.0);
    }

    #[test]
    fn fixed_lambda_matches_plug_in_when_equal() {
        let mut rng = seeded_rng(86);
        let draw = |rng: &mut _| random_density::<f64, _>(rng, 3, 3).into_matrix();
        let ensemble = EnsembleResult {
            t_grid: vec![0.0, 1.0],
            rho_mc: vec![draw(&mut rng), draw(&mut rng)],
            rho_mclr: vec![draw(&mut rng), draw(&mut rng)],
            rho_lr: vec![random_density::<f64, _>(&mut rng, 3, 2).into_matrix(), random_density::<f64, _>(&mut rng, 3, 2).into_matrix()],
            overlap_sq_mean: vec![0.6, 0.4],
            trajectories: 10,
        };
        let plug = denoise(&ensemble, None).unwrap();
        let fixed = denoise_with_lambda(&ensemble, &plug.lambda, None).unwrap();
        assert_eq!(plug.rho_cv, fixed.rho_cv);
        assert!(denoise_with_lambda(&ensemble, &[0.5], None).is_err());
    }
}
