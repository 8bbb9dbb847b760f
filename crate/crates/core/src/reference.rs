//! Full-rank integration of the Lindblad equation and the matrix-exponential
//! oracle used to validate it.

use crate::error::{Error, Result};
use crate::linalg::{ensure_dim, ensure_square, hermitian_part};
use crate::model::LindbladModel;
use crate::scalar::{c_i, c_real, real, to_f64, CMatrix, Real};
use crate::state::DensityMatrix;

/// Largest Hilbert-space dimension accepted by the superoperator oracle.
pub const ORACLE_DIM_CAP: usize = 16;

/// `-i[H, rho] - (L'L rho + rho L'L)/2 + L rho L'`, summed over channels.
///
/// `rho` may be any square matrix of the model's dimension.
pub fn lindblad_rhs<R: Real>(rho: &CMatrix<R>, model: &LindbladModel<R>) -> Result<CMatrix<R>> {
    ensure_square(rho)?;
    ensure_dim(model.n(), rho.nrows())?;
    let i = c_i::<R>();
    let rho_adj = rho.adjoint();
    // rho A = (A' rho')'.
    let mut out = model.heff_op().mul(rho) * (-i) + model.heff_op().mul(&rho_adj).adjoint() * i;
    for (l, _) in model.channel_ops() {
        let right = l.mul(&rho_adj).adjoint();
        out += l.mul(&right);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullOptions {
    /// Relative local error target, in `(0, 1e-4]`.
    pub rel_tol: f64,
    /// First trial step; chosen from the initial derivative when `None`.
    pub initial_step: Option<f64>,
}

impl Default for FullOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, initial_step: None }
    }
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// Fifth-order weights minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince integration, reporting the state at every grid time.
///
/// The state is re-Hermitised after every accepted step.
pub fn integrate_full<R: Real>(
    model: &LindbladModel<R>,
    rho0: &DensityMatrix<R>,
    t_grid: &[R],
    options: &FullOptions,
) -> Result<Vec<DensityMatrix<R>>> {
    ensure_dim(model.n(), rho0.dim())?;
    check_grid(t_grid)?;
    if !(options.rel_tol > 0.0 && options.rel_tol <= 1e-4) {
        return Err(Error::InvalidArgument(format!("rel_tol must lie in (0, 1e-4], got {}", options.rel_tol)));
    }
    let rtol = real::<R>(options.rel_tol);
    let mut y = rho0.matrix().clone();
    let mut t = t_grid[0];
    let mut out = Vec::with_capacity(t_grid.len());
    out.push(rho0.clone());

    let mut k1 = lindblad_rhs(&y, model)?;
    let mut h = match options.initial_step {
        Some(h0) => real::<R>(h0),
        None => {
            let d = k1.norm();
            if d > R::zero() {
                real::<R>(0.01) * rtol.powf(real(0.2)) / d * real(10.0)
            } else {
                real::<R>(0.1)
            }
        }
    };
    let mut k = Vec::with_capacity(7);

    for &target in &t_grid[1..] {
        while t < target {
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step < real::<R>(1e-13) * t.abs().max(R::one()) && !last {
                return Err(Error::StepSizeUnderflow { t: to_f64(t) });
            }

            k.clear();
            k.push(k1.clone());
            let mut y_new = y.clone();
            for s in 1..7 {
                let mut stage = y.clone();
                for (j, kj) in k.iter().enumerate() {
                    if A[s][j] != 0.0 {
                        stage += kj * c_real(step * real::<R>(A[s][j]));
                    }
                }
                k.push(lindblad_rhs(&stage, model)?);
                if s == 6 {
                    // The last stage is the fifth-order solution (FSAL).
                    y_new = stage;
                }
            }
            let mut err = CMatrix::<R>::zeros(y.nrows(), y.ncols());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err += kj * c_real(step * real::<R>(E[j]));
                }
            }
            let scale = rtol * y.norm().max(y_new.norm());
            let ratio = err.norm() / scale;

            if ratio <= R::one() && ratio.is_finite() {
                t = if last { target } else { t + step };
                y = hermitian_part(&y_new);
                k1 = if last || k[6].iter().any(|z| !z.re.is_finite()) {
                    lindblad_rhs(&y, model)?
                } else {
                    hermitian_part(&k[6])
                };
                let grow = if ratio == R::zero() {
                    real::<R>(5.0)
                } else {
                    (real::<R>(0.9) * ratio.powf(real(-0.2))).min(real(5.0))
                };
                if !last {
                    h = step * grow;
                } else {
                    h = h.max(step * grow.min(R::one()));
                }
            } else {
                let shrink = if ratio.is_finite() {
                    (real::<R>(0.9) * ratio.powf(real(-0.2))).max(real(0.2))
                } else {
                    real(0.2)
                };
                h = step * shrink;
                if h < real::<R>(1e-13) * t.abs().max(R::one()) {
                    return Err(Error::StepSizeUnderflow { t: to_f64(t) });
                }
            }
        }
        out.push(DensityMatrix::from_trusted(y.clone()));
    }
    Ok(out)
}

pub(crate) fn check_grid<R: Real>(t_grid: &[R]) -> Result<()> {
    match t_grid.first() {
        None => return Err(Error::InvalidArgument("empty time grid".into())),
        Some(t0) if *t0 != R::zero() => return Err(Error::InvalidArgument("time grid must start at 0".into())),
        _ => {}
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Column-stacking superoperator: `vec(A rho B) = (B^T ⊗ A) vec(rho)`.
pub fn liouvillian_matrix<R: Real>(model: &LindbladModel<R>) -> Result<CMatrix<R>> {
    liouvillian_matrix_capped(model, ORACLE_DIM_CAP)
}

pub fn liouvillian_matrix_capped<R: Real>(model: &LindbladModel<R>, cap: usize) -> Result<CMatrix<R>> {
    let n = model.n();
    if n > cap {
        return Err(Error::DimensionAboveCap { n, cap });
    }
    let id = CMatrix::<R>::identity(n, n);
    let heff = model.effective_hamiltonian();
    let i = c_i::<R>();
    // -i Heff rho + i rho Heff'
    let mut sup = id.kronecker(heff) * (-i) + heff.adjoint().transpose().kronecker(&id) * i;
    for l in model.channels() {
        let l = l.matrix();
        sup += l.conjugate().kronecker(l);
    }
    Ok(sup)
}

/// `vec(rho(t)) = exp(t L) vec(rho0)` by Padé scaling-and-squaring.
pub fn propagate_exact<R: Real>(model: &LindbladModel<R>, rho0: &DensityMatrix<R>, t: R) -> Result<DensityMatrix<R>> {
    ensure_dim(model.n(), rho0.dim())?;
    let sup = liouvillian_matrix(model)?;
    Ok(apply_propagator(&(sup * c_real(t)).exp(), rho0))
}

/// [`propagate_exact`] on every time of a grid, one exponential per interval.
pub fn propagate_exact_grid<R: Real>(
    model: &LindbladModel<R>,
    rho0: &DensityMatrix<R>,
    t_grid: &[R],
) -> Result<Vec<DensityMatrix<R>>> {
    ensure_dim(model.n(), rho0.dim())?;
    let sup = liouvillian_matrix(model)?;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut last_t = R::zero();
    let mut current = rho0.clone();
    for &t in t_grid {
        if t != last_t {
            current = apply_propagator(&(&sup * c_real(t - last_t)).exp(), &current);
            last_t = t;
        }
        out.push(current.clone());
    }
    Ok(out)
}

fn apply_propagator<R: Real>(prop: &CMatrix<R>, rho: &DensityMatrix<R>) -> DensityMatrix<R> {
    let n = rho.dim();
    let v = CMatrix::from_column_slice(n * n, 1, rho.matrix().as_slice());
    let w = prop * v;
    DensityMatrix::from_trusted(CMatrix::from_column_slice(n, n, w.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_jc_damped, excitation_number, excited_population, initial_state_jc, qubit_lowering, JaynesCummingsConfig};
    use crate::scalar::cplx;
    use crate::state::{frobenius_distance, purity, tol, GeneralOperator, HermitianOperator, PureState};
    use crate::testing::{random_density, random_matrix, random_model, seeded_rng};

    fn decay_model(kappa: f64) -> LindbladModel<f64> {
        let l = qubit_lowering::<f64>().matrix() * cplx(kappa.sqrt(), 0.0);
        LindbladModel::new(HermitianOperator::zeros(2), GeneralOperator::new(l).unwrap()).unwrap()
    }

    fn excited() -> DensityMatrix<f64> {
        DensityMatrix::from_pure(&PureState::basis(2, 1))
    }

    #[test]
    fn rhs_dark_state_and_decay() {
        let m = decay_model(1.0);
        let g = DensityMatrix::<f64>::from_pure(&PureState::basis(2, 0));
        assert_eq!(lindblad_rhs(g.matrix(), &m).unwrap().norm(), 0.0);
        let d = lindblad_rhs(excited().matrix(), &m).unwrap();
        let expected = CMatrix::from_row_slice(2, 2, &[cplx(1.0, 0.0), cplx(0.0, 0.0), cplx(0.0, 0.0), cplx(-1.0, 0.0)]);
        assert!((d - expected).norm() < 1e-15);
    }

    #[test]
    fn rhs_is_traceless_and_hermitian() {
        let mut rng = seeded_rng(21);
        let m = random_model::<f64, _>(&mut rng, 5);
        let rho = random_density::<f64, _>(&mut rng, 5, 3);
        let d = lindblad_rhs(rho.matrix(), &m).unwrap();
        assert!(d.trace().norm() < 1e-12);
        assert!((&d - d.adjoint()).norm() < 1e-12);
        let general = random_matrix::<f64, _>(&mut rng, 5, 5);
        assert!(lindblad_rhs(&general, &m).unwrap().trace().norm() < 1e-12 * general.norm());
    }

    #[test]
    fn rhs_matches_superoperator() {
        let mut rng = seeded_rng(22);
        for n in [3, 4] {
            let m = random_model::<f64, _>(&mut rng, n);
            let sup = liouvillian_matrix(&m).unwrap();
            let rho = random_matrix::<f64, _>(&mut rng, n, n);
            let direct = lindblad_rhs(&rho, &m).unwrap();
            let v = CMatrix::from_column_slice(n * n, 1, rho.as_slice());
            let via = CMatrix::from_column_slice(n, n, (&sup * v).as_slice());
            assert!((direct - via).norm() < 1e-12);
        }
    }

    #[test]
    fn liouvillian_trace_preservation() {
        let mut rng = seeded_rng(23);
        let m = random_model::<f64, _>(&mut rng, 4);
        let sup = liouvillian_matrix(&m).unwrap();
        let id = CMatrix::<f64>::identity(4, 4);
        let vec_id = CMatrix::from_column_slice(16, 1, id.as_slice());
        assert!((vec_id.adjoint() * &sup).norm() < 1e-12);
        let zero = LindbladModel::<f64>::new(HermitianOperator::zeros(3), GeneralOperator::zeros(3)).unwrap();
        assert_eq!(liouvillian_matrix(&zero).unwrap().norm(), 0.0);
        let big = LindbladModel::<f64>::new(HermitianOperator::zeros(17), GeneralOperator::zeros(17)).unwrap();
        assert!(matches!(liouvillian_matrix(&big), Err(Error::DimensionAboveCap { n: 17, cap: 16 })));
    }

    #[test]
    fn exact_propagation_cases() {
        let m = decay_model(1.0);
        let rho0 = excited();
        assert_eq!(propagate_exact(&m, &rho0, 0.0).unwrap(), rho0);
        let r = propagate_exact(&m, &rho0, 0.7).unwrap();
        assert!((r.matrix()[(1, 1)].re - (-0.7f64).exp()).abs() < 1e-12);
        let mut rng = seeded_rng(24);
        let m = random_model::<f64, _>(&mut rng, 3);
        let rho0 = random_density::<f64, _>(&mut rng, 3, 2);
        let a = propagate_exact(&m, &rho0, 0.9).unwrap();
        let b = propagate_exact(&m, &propagate_exact(&m, &rho0, 0.4).unwrap(), 0.5).unwrap();
        assert!(frobenius_distance(&a, &b).unwrap() < 1e-10);
        a.validate(tol::POS).unwrap();
    }

    #[test]
    fn exact_propagation_relaxes_to_ground() {
        let cfg = JaynesCummingsConfig { omega0: 1.0, kappa: 0.5, nbar: 1.0, nmax: 3 };
        let m = build_jc_damped::<f64>(&cfg);
        let rho0 = DensityMatrix::from_pure(&initial_state_jc(&cfg));
        let r = propagate_exact(&m, &rho0, 200.0).unwrap();
        let ground = DensityMatrix::from_pure(&PureState::basis(cfg.dim(), 0));
        assert!(frobenius_distance(&r, &ground).unwrap() < 1e-6);
    }

    #[test]
    fn full_integration_decay_law() {
        let m = decay_model(1.0);
        let grid: Vec<f64> = (0..=20).map(|k| 0.25 * k as f64).collect();
        let out = integrate_full(&m, &excited(), &grid, &FullOptions::default()).unwrap();
        for (rho, &t) in out.iter().zip(&grid) {
            assert!((rho.matrix()[(1, 1)].re - (-t).exp()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn full_integration_vacuum_rabi() {
        let cfg = JaynesCummingsConfig { omega0: 2.0, kappa: 0.0, nbar: 0.0, nmax: 3 };
        let m = build_jc_damped::<f64>(&cfg);
        let rho0 = DensityMatrix::from_pure(&initial_state_jc(&cfg));
        let period = 2.0 * std::f64::consts::PI / cfg.omega0;
        let grid: Vec<f64> = (0..=40).map(|k| period * k as f64 / 40.0).collect();
        let out = integrate_full(&m, &rho0, &grid, &FullOptions::default()).unwrap();
        for (rho, &t) in out.iter().zip(&grid) {
            let pe = excited_population(rho, &cfg).unwrap();
            assert!((pe - (cfg.omega0 * t / 2.0).cos().powi(2)).abs() < 1e-6);
        }
    }

    #[test]
    fn full_integration_matches_oracle() {
        let mut rng = seeded_rng(25);
        let m = random_model::<f64, _>(&mut rng, 4);
        let rho0 = random_density::<f64, _>(&mut rng, 4, 2);
        let grid = [0.0, 0.5, 1.0];
        let out = integrate_full(&m, &rho0, &grid, &FullOptions::default()).unwrap();
        let exact = propagate_exact_grid(&m, &rho0, &grid).unwrap();
        for (a, b) in out.iter().zip(&exact) {
            assert!(frobenius_distance(a, b).unwrap() < 1e-7);
            a.validate(1e-9).unwrap();
            assert!(purity(a) <= 1.0 + 1e-10);
        }
    }

    #[test]
    fn energy_conserved_without_damping() {
        let cfg = JaynesCummingsConfig { omega0: 1.0, kappa: 0.0, nbar: 2.0, nmax: 6 };
        let m = build_jc_damped::<f64>(&cfg);
        let rho0 = DensityMatrix::from_pure(&initial_state_jc(&cfg));
        let ne = excitation_number::<f64>(&cfg);
        let grid: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let out = integrate_full(&m, &rho0, &grid, &FullOptions::default()).unwrap();
        let e0 = (rho0.matrix() * &ne).trace().re;
        for rho in &out {
            assert!(((rho.matrix() * &ne).trace().re - e0).abs() < 1e-8);
        }
    }

    #[test]
    fn bad_grids_and_tolerances() {
        let m = decay_model(1.0);
        assert!(integrate_full(&m, &excited(), &[0.1, 0.2], &FullOptions::default()).is_err());
        assert!(integrate_full(&m, &excited(), &[0.0, 0.2, 0.1], &FullOptions::default()).is_err());
        let loose = FullOptions { rel_tol: 1e-2, ..FullOptions::default() };
        assert!(integrate_full(&m, &excited(), &[0.0, 1.0], &loose).is_err());
    }
}
