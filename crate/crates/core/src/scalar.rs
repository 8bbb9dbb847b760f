//! Scalar plumbing shared by every solver.
//!
//! All numerics are generic over a real field `R` (in practice `f64`, with
//! `f32` usable for smoke tests) and operate on dense matrices of
//! `Complex<R>`.

use nalgebra::{DMatrix, DVector, RealField};
use num_complex::Complex;

/// Real field the solvers are generic over.
pub trait Real: RealField + Copy + Send + Sync + 'static {}

impl<T> Real for T where T: RealField + Copy + Send + Sync + 'static {}

pub type CMatrix<R> = DMatrix<Complex<R>>;
pub type CVector<R> = DVector<Complex<R>>;

/// Converts an `f64` literal into the working field.
#[inline]
pub fn real<R: Real>(x: f64) -> R {
    nalgebra::convert(x)
}

/// Converts a value of the working field to `f64`.
#[inline]
pub fn to_f64<R: Real>(x: R) -> f64 {
    nalgebra::try_convert(x).unwrap_or(f64::NAN)
}

#[inline]
pub fn cplx<R: Real>(re: R, im: R) -> Complex<R> {
    Complex::new(re, im)
}

#[inline]
pub fn c_real<R: Real>(re: R) -> Complex<R> {
    Complex::new(re, R::zero())
}

#[inline]
pub fn c_i<R: Real>() -> Complex<R> {
    Complex::new(R::zero(), R::one())
}

/// A validation tolerance, widened when the working field cannot resolve it.
///
/// For `f64` every tolerance used in this crate is returned unchanged.
pub fn tolerance<R: Real>(base: f64) -> R {
    let eps = to_f64(R::default_epsilon());
    real(base.max(256.0 * eps))
}

/// Modulus of a complex number.
#[inline]
pub fn abs<R: Real>(z: Complex<R>) -> R {
    z.re.hypot(z.im)
}
