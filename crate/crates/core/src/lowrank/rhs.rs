//! Factor equations and the projection error.
//!
//! With `P = U U'`, `B = (I - P) L U` and `G = B sigma B'`:
//!
//! ```text
//! dU/dt     = -i H U + (I - P)(-L'L U / 2 + L U sigma U'L'U sigma^-1)
//! dsigma/dt = -(C sigma + sigma C)/2 + A sigma A' + tr(G)/m I,   A = U'LU, C = U'L'LU
//! L_perp    = G - tr(G)/m P
//! ```

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{eigh, ensure_dim, trace_of_product};
use crate::model::LindbladModel;
use crate::reference::lindblad_rhs;
use crate::scalar::{c_i, c_real, real, to_f64, CMatrix, Real};
use crate::state::{density_from_lowrank, tol, LowRankState};

/// `min eig(sigma) < REGULARIZE_BELOW tr(sigma)` triggers `sigma + mu I` inversion.
pub(crate) const REGULARIZE_BELOW: f64 = 1e-12;

pub(crate) struct SigmaInverse<R: Real> {
    pub inv: CMatrix<R>,
    pub regularized: bool,
}

pub(crate) fn sigma_inverse<R: Real>(sigma: &CMatrix<R>, regularize: bool) -> Result<SigmaInverse<R>> {
    let m = sigma.nrows();
    let (vals, vecs) = eigh(sigma);
    let tr = vals.iter().fold(R::zero(), |a, &v| a + v);
    let lo = vals[0];
    let floor = real::<R>(REGULARIZE_BELOW) * tr;
    let (shift, regularized) = if !regularize {
        if !(lo > real::<R>(tol::POS_FLOOR) * tr) {
            return Err(Error::SingularFactor { min_eig: to_f64(lo) });
        }
        (R::zero(), false)
    } else if !(lo >= floor) {
        (floor, true)
    } else {
        (R::zero(), false)
    };
    let mut scaled = vecs.clone();
    for j in 0..m {
        let d = vals[j] + shift;
        let d = if d > R::zero() { d } else { floor.max(R::default_epsilon()) };
        let inv_d = c_real(R::one() / d);
        for i in 0..m {
            scaled[(i, j)] *= inv_d;
        }
    }
    Ok(SigmaInverse { inv: scaled * vecs.adjoint(), regularized })
}

/// Building blocks shared by the factor derivative and the error estimator.
pub(crate) struct RhsParts<R: Real> {
    pub du: CMatrix<R>,
    pub dsigma: CMatrix<R>,
    /// `(I - P) L U`.
    pub b: CMatrix<R>,
    /// `tr(G) = tr(sigma B'B)`.
    pub tr_g: R,
    pub regularized: bool,
}

pub(crate) fn rhs_parts<R: Real>(
    u: &CMatrix<R>,
    sigma: &CMatrix<R>,
    model: &LindbladModel<R>,
    regularize: bool,
) -> Result<RhsParts<R>> {
    ensure_dim(model.n(), u.nrows())?;
    ensure_dim(u.ncols(), sigma.nrows())?;
    let m = u.ncols();
    let i = c_i::<R>();
    let half = c_real(real::<R>(0.5));

    let lu = model.l_op()?.mul(u);
    let hu = model.h_op().mul(u);
    let mu = model.ldag_l_op().mul(u);
    let ud = u.adjoint();
    let a = &ud * &lu;
    let c = &ud * &mu;
    let sinv = sigma_inverse(sigma, regularize)?;

    let w = &mu * (-half) + &lu * (sigma * a.adjoint() * &sinv.inv);
    // Stage values of U are only approximately isometric; projecting with the
    // Gram inverse keeps (I - P) exact, which matters when sigma^-1 is large.
    let uw = &ud * &w;
    let coeff = match (&ud * u).cholesky() {
        Some(ch) => ch.solve(&uw),
        None => uw,
    };
    let w_perp = &w - u * coeff;
    let du = hu * (-i) + w_perp;

    let b = &lu - u * &a;
    let tr_g = trace_of_product(sigma, &(b.adjoint() * &b)).re;
    let dsigma = (&c * sigma + sigma * &c) * (-half)
        + &a * sigma * a.adjoint()
        + CMatrix::identity(m, m) * c_real(tr_g / real::<R>(m as f64));
    Ok(RhsParts { du, dsigma, b, tr_g, regularized: sinv.regularized })
}

/// `(dU/dt, dsigma/dt)` for a valid state; fails on a near-singular sigma.
pub fn lowrank_rhs<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<(CMatrix<R>, CMatrix<R>)> {
    let parts = rhs_parts(state.u(), state.sigma(), model, false)?;
    Ok((parts.du, parts.dsigma))
}

/// `||L_perp||_F` and `||L_par||_F` from the factors, in `O(n m^2)` after the
/// derivative is known.
///
/// `L_par = X C X'` with `X = [U, dU]` and `C = [[dsigma, sigma], [sigma, 0]]`.
pub(crate) fn factored_norms<R: Real>(u: &CMatrix<R>, sigma: &CMatrix<R>, parts: &RhsParts<R>) -> (R, R) {
    let m = u.ncols();
    let s = parts.b.adjoint() * &parts.b;
    let ss = sigma * &s;
    let g2 = trace_of_product(&ss, &ss).re;
    let perp2 = g2 + parts.tr_g * parts.tr_g / real::<R>(m as f64);

    let n = u.nrows();
    let mut x = CMatrix::<R>::zeros(n, 2 * m);
    x.view_mut((0, 0), (n, m)).copy_from(u);
    x.view_mut((0, m), (n, m)).copy_from(&parts.du);
    let mut core = CMatrix::<R>::zeros(2 * m, 2 * m);
    core.view_mut((0, 0), (m, m)).copy_from(&parts.dsigma);
    core.view_mut((0, m), (m, m)).copy_from(sigma);
    core.view_mut((m, 0), (m, m)).copy_from(sigma);
    let y = core * (x.adjoint() * x);
    let par2 = trace_of_product(&y, &y).re;
    (perp2.max(R::zero()).sqrt(), par2.max(R::zero()).sqrt())
}

pub(crate) fn theta_from_norms<R: Real>(perp: R, par: R) -> R {
    if par > R::zero() {
        perp / par
    } else {
        R::zero()
    }
}

/// Dense `L_par(rho_LR)`.
pub fn projected_rhs<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<CMatrix<R>> {
    let rho = density_from_lowrank(state);
    let full = lindblad_rhs(rho.matrix(), model)?;
    let perp = perp_residual(state, model)?;
    Ok(full - perp.residual)
}

#[derive(Debug, Clone)]
pub struct PerpResidual<R: Real = f64> {
    /// `L_perp(rho_LR) = G - tr(G)/m P`.
    pub residual: CMatrix<R>,
    /// `G = (I - P) L rho_LR L' (I - P)`, positive semidefinite.
    pub g: CMatrix<R>,
}

/// Dense projection residual.
pub fn perp_residual<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<PerpResidual<R>> {
    let l = model.decoherence()?;
    ensure_dim(model.n(), state.n())?;
    let n = state.n();
    let p = state.projector();
    let q = CMatrix::<R>::identity(n, n) - &p;
    let rho = density_from_lowrank(state);
    let g = &q * l * rho.matrix() * l.adjoint() * &q;
    let tr_g: Complex<R> = g.trace();
    let residual = &g - &p * c_real(tr_g.re / real::<R>(state.rank() as f64));
    Ok(PerpResidual { residual, g })
}

/// `theta = ||L_perp|| / ||L_par||`; zero when the projected dynamics vanish.
pub fn angular_error<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<R> {
    let perp = perp_residual(state, model)?;
    let rho = density_from_lowrank(state);
    let par = lindblad_rhs(rho.matrix(), model)? - &perp.residual;
    Ok(theta_from_norms(perp.residual.norm(), par.norm()))
}
