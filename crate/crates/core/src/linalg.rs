//! Small dense helpers on complex matrices.

use nalgebra::SymmetricEigen;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{abs, c_real, real, to_f64, CMatrix, CVector, Real};

pub fn hermitian_part<R: Real>(m: &CMatrix<R>) -> CMatrix<R> {
    let mut out = m + m.adjoint();
    out *= c_real(real::<R>(0.5));
    out
}

/// `||A - A'||_max / max(||A||_max, tiny)`.
pub fn hermitian_residual<R: Real>(m: &CMatrix<R>) -> R {
    let n = m.nrows();
    let mut worst = R::zero();
    let mut scale = R::zero();
    for j in 0..n {
        for i in 0..n {
            let a = m[(i, j)];
            let d = abs(a - m[(j, i)].conj());
            if d > worst {
                worst = d;
            }
            let s = abs(a);
            if s > scale {
                scale = s;
            }
        }
    }
    if scale == R::zero() {
        R::zero()
    } else {
        worst / scale
    }
}

pub fn ensure_square<R: Real>(m: &CMatrix<R>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare { rows: m.nrows(), cols: m.ncols() });
    }
    Ok(m.nrows())
}

pub fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> Complex<R> {
    let mut acc = Complex::new(R::zero(), R::zero());
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

pub fn outer<R: Real>(v: &CVector<R>) -> CMatrix<R> {
    v * v.adjoint()
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.
pub fn eigh<R: Real>(m: &CMatrix<R>) -> (Vec<R>, CMatrix<R>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::<R>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue<R: Real>(m: &CMatrix<R>) -> R {
    if m.nrows() == 0 {
        return R::zero();
    }
    eigh(m).0[0]
}

/// Thin QR by twice-iterated classical Gram–Schmidt.
///
/// Returns `(Q, Rfac)` with `U = Q Rfac`; fails when a column's residual
/// norm drops below `rel_drop` times its original norm.
pub fn thin_qr<R: Real>(u: &CMatrix<R>, rel_drop: R) -> Result<(CMatrix<R>, CMatrix<R>)> {
    let (n, m) = u.shape();
    let mut q = CMatrix::<R>::zeros(n, m);
    let mut rf = CMatrix::<R>::zeros(m, m);
    for j in 0..m {
        let original = u.column(j).norm();
        let mut v: CVector<R> = u.column(j).into_owned();
        for _pass in 0..2 {
            for k in 0..j {
                let qk = q.column(k);
                let c = qk.dotc(&v);
                rf[(k, j)] += c;
                v.axpy(-c, &qk, Complex::new(R::one(), R::zero()));
            }
        }
        let norm = v.norm();
        if !(norm > rel_drop * original) || norm == R::zero() {
            return Err(Error::DegenerateFactor { column: j, norm: to_f64(norm) });
        }
        rf[(j, j)] = Complex::new(norm, R::zero());
        q.set_column(j, &(v / Complex::new(norm, R::zero())));
    }
    Ok((q, rf))
}

/// Orthonormal basis of the range of `b`, orthogonalised against the columns
/// of `against` (assumed orthonormal). Columns whose residual norm falls below
/// `abs_drop` are discarded.
pub fn orthonormal_range<R: Real>(b: &CMatrix<R>, against: &CMatrix<R>, abs_drop: R) -> CMatrix<R> {
    let n = b.nrows();
    let mut basis: Vec<CVector<R>> = Vec::new();
    let one = Complex::new(R::one(), R::zero());
    for j in 0..b.ncols() {
        let mut v: CVector<R> = b.column(j).into_owned();
        for _pass in 0..2 {
            let c = against.adjoint() * &v;
            v -= against * c;
            for q in &basis {
                let c = q.dotc(&v);
                v.axpy(-c, q, one);
            }
        }
        let norm = v.norm();
        if norm >= abs_drop && norm > R::zero() {
            basis.push(v / Complex::new(norm, R::zero()));
        }
    }
    let mut out = CMatrix::<R>::zeros(n, basis.len());
    for (j, q) in basis.iter().enumerate() {
        out.set_column(j, q);
    }
    out
}

/// `||U'U - I||_F`.
pub fn isometry_residual<R: Real>(u: &CMatrix<R>) -> R {
    let m = u.ncols();
    let g = u.adjoint() * u - CMatrix::<R>::identity(m, m);
    g.norm()
}

pub fn block_diag<R: Real>(a: &CMatrix<R>, b: &CMatrix<R>) -> CMatrix<R> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = CMatrix::<R>::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// A fixed operator kept dense, plus a CSR copy when at most a quarter of the
/// entries are nonzero.
#[derive(Debug, Clone)]
pub struct Operator<R: Real = f64> {
    dense: CMatrix<R>,
    csr: Option<CsrMatrix<Complex<R>>>,
}

impl<R: Real> Operator<R> {
    pub fn new(dense: CMatrix<R>) -> Self {
        let nnz = dense.iter().filter(|z| **z != Complex::new(R::zero(), R::zero())).count();
        let csr = (4 * nnz <= dense.len()).then(|| CsrMatrix::from(&CooMatrix::from(&dense)));
        Operator { dense, csr }
    }

    pub fn dense(&self) -> &CMatrix<R> {
        &self.dense
    }

    pub fn mul(&self, x: &CMatrix<R>) -> CMatrix<R> {
        match &self.csr {
            Some(a) => a * x,
            None => &self.dense * x,
        }
    }

    pub fn mul_vec(&self, v: &CVector<R>) -> CVector<R> {
        match &self.csr {
            Some(a) => CVector::from_iterator(
                a.nrows(),
                a.row_iter()
                    .map(|row| row.col_indices().iter().zip(row.values()).fold(Complex::new(R::zero(), R::zero()), |acc, (&j, &x)| acc + x * v[j])),
            ),
            None => &self.dense * v,
        }
    }
}
