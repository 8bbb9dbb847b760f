//! Rank changes.
//!
//! The best direction to add minimises the projection error once the
//! subspace is enlarged; it is the top eigenvector of
//! `G = (I - P) L rho L' (I - P)`. Since `range(G) ⊆ range((I - P) L U)`,
//! the search reduces to the `r x r` matrix `K = Phi' G Phi`, with `Phi` an
//! orthonormal basis of that range (`r <= m`).

use crate::error::{Error, Result};
use crate::linalg::{block_diag, eigh, orthonormal_range};
use crate::lowrank::rhs::perp_residual;
use crate::model::LindbladModel;
use crate::scalar::{abs, c_real, real, to_f64, CMatrix, CVector, Real};
use crate::state::{Isometry, LowRankState, PositiveFactor};

/// Column-norm threshold below which `(I - P) L U` is considered zero.
pub const DIRECTION_DROP_TOL: f64 = 1e-13;

/// Intermediate quantities of one rank-increase search.
#[derive(Debug, Clone)]
pub struct RankAdaptationWorkspace<R: Real = f64> {
    pub g: CMatrix<R>,
    pub phi: CMatrix<R>,
    pub k: CMatrix<R>,
    pub v: Option<CVector<R>>,
    pub theta: R,
    pub lambda_min_sigma: R,
}

struct Direction<R: Real> {
    phi: CMatrix<R>,
    k: CMatrix<R>,
    v: Option<CVector<R>>,
}

fn search<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<Direction<R>> {
    let u = state.u();
    let lu = model.l_op()?.mul(u);
    let b = &lu - u * (u.adjoint() * &lu);
    let phi = orthonormal_range(&b, u, real(DIRECTION_DROP_TOL));
    if phi.ncols() == 0 {
        return Ok(Direction { phi, k: CMatrix::zeros(0, 0), v: None });
    }
    let pb = phi.adjoint() * &b;
    let k = &pb * state.sigma() * pb.adjoint();
    let (_, vecs) = eigh(&k);
    let top = vecs.column(k.nrows() - 1).into_owned();
    let mut v = &phi * top;
    v -= u * (u.adjoint() * &v);
    let norm = v.norm();
    let v = v / c_real(norm);
    Ok(Direction { phi, k, v: Some(v) })
}

/// Unit vector orthogonal to `range(U)` maximising `V' G V`.
pub fn best_rank_increase_direction<R: Real>(state: &LowRankState<R>, model: &LindbladModel<R>) -> Result<CVector<R>> {
    search(state, model)?.v.ok_or(Error::NoDirection)
}

/// Full diagnostic snapshot, including the dense `G`.
pub fn rank_adaptation_workspace<R: Real>(
    state: &LowRankState<R>,
    model: &LindbladModel<R>,
) -> Result<RankAdaptationWorkspace<R>> {
    let dir = search(state, model)?;
    let g = perp_residual(state, model)?.g;
    let theta = crate::lowrank::rhs::angular_error(state, model)?;
    Ok(RankAdaptationWorkspace {
        g,
        phi: dir.phi,
        k: dir.k,
        v: dir.v,
        theta,
        lambda_min_sigma: state.min_sigma_eigenvalue(),
    })
}

/// Appends `v` to `U` with seed eigenvalue `delta tr(sigma)`, then rescales so
/// the trace is unchanged.
pub fn increase_rank<R: Real>(state: &LowRankState<R>, v: &CVector<R>, delta: f64) -> Result<LowRankState<R>> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidSeed { delta });
    }
    if v.len() != state.n() {
        return Err(Error::DimensionMismatch { expected: state.n(), found: v.len() });
    }
    let u = state.u();
    let overlaps = u.adjoint() * v;
    let overlap = overlaps.iter().fold(R::zero(), |a, z| a.max(abs(*z)));
    if overlap > real(1e-8) {
        return Err(Error::NotOrthogonal { overlap: to_f64(overlap) });
    }
    let norm = v.norm();
    if (norm - R::one()).abs() > real(1e-8) {
        return Err(Error::NotNormalized { norm: to_f64(norm) });
    }
    let mut w = v - u * overlaps;
    let wn = w.norm();
    w /= c_real(wn);

    let (n, m) = (state.n(), state.rank());
    let mut u_new = CMatrix::<R>::zeros(n, m + 1);
    u_new.view_mut((0, 0), (n, m)).copy_from(u);
    u_new.set_column(m, &w);

    let tr = state.sigma().trace().re;
    let delta = real::<R>(delta);
    let seed = CMatrix::from_element(1, 1, c_real(delta * tr));
    let sigma_new = block_diag(state.sigma(), &seed) * c_real(R::one() / (R::one() + delta));
    LowRankState::new(Isometry::new(u_new)?, PositiveFactor::new(sigma_new)?)
}

/// Drops the eigendirection of the smallest eigenvalue of sigma and restores
/// unit trace.
pub fn decrease_rank<R: Real>(state: &LowRankState<R>) -> Result<LowRankState<R>> {
    let m = state.rank();
    if m < 2 {
        return Err(Error::CannotDecrease);
    }
    let (vals, vecs) = eigh(state.sigma());
    let keep = vecs.columns(1, m - 1).into_owned();
    let u_new = state.u() * keep;
    let total = vals[1..].iter().fold(R::zero(), |a, &v| a + v);
    let sigma_new = CMatrix::from_diagonal(&CVector::from_iterator(m - 1, vals[1..].iter().map(|&v| c_real(v / total))));
    LowRankState::new(Isometry::new(u_new)?, PositiveFactor::new(sigma_new)?)
}

/// Raises the rank to `target` by repeated optimal increases. When no optimal
/// direction exists, the standard basis vector least covered by `U` is used.
pub fn grow_to_rank<R: Real>(
    state: &LowRankState<R>,
    model: &LindbladModel<R>,
    target: usize,
    delta: f64,
) -> Result<LowRankState<R>> {
    if target > state.n() {
        return Err(Error::InvalidArgument(format!("rank {target} exceeds dimension {}", state.n())));
    }
    let mut st = state.clone();
    while st.rank() < target {
        let v = match best_rank_increase_direction(&st, model) {
            Ok(v) => v,
            Err(Error::NoDirection) => least_covered_direction(&st),
            Err(e) => return Err(e),
        };
        st = increase_rank(&st, &v, delta)?;
    }
    Ok(st)
}

fn least_covered_direction<R: Real>(state: &LowRankState<R>) -> CVector<R> {
    let u = state.u();
    let n = state.n();
    let k = (0..n)
        .min_by(|&a, &b| {
            let ca = u.row(a).norm();
            let cb = u.row(b).norm();
            ca.partial_cmp(&cb).unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0);
    let mut e = CVector::<R>::zeros(n);
    e[k] = c_real(R::one());
    for _ in 0..2 {
        e -= u * (u.adjoint() * &e);
    }
    let norm = e.norm();
    e / c_real(norm)
}
