//! Lindblad master-equation solvers.
//!
//! * [`reference`]: adaptive full-rank integration and an exact superoperator
//!   oracle for small systems.
//! * [`lowrank`]: dynamical low-rank integration `rho ≈ U sigma U'` with
//!   on-the-fly rank adaptation driven by the projection error.
//! * [`trajectory`]: diffusive quantum trajectories, including trajectories
//!   confined to a moving low-rank subspace and driven by shared noise.
//! * [`denoise`]: control-variate combination of the two ensembles.
//!
//! Everything is generic over the real field; the `*64` aliases below fix it
//! to `f64`, which is what the solvers are tuned for.

pub mod denoise;
pub mod error;
pub mod linalg;
pub mod lowrank;
pub mod model;
pub mod reference;
pub mod scalar;
pub mod state;
pub mod testing;
pub mod trajectory;

pub use error::{Error, Result};
pub use model::{JaynesCummingsConfig, LindbladModel};
pub use scalar::{CMatrix, CVector, Real};
pub use state::{
    density_from_lowrank, frobenius_distance, purity, DensityMatrix, Factors, GeneralOperator, HermitianOperator,
    Isometry, LowRankState, PositiveFactor, PureState,
};

pub type C64 = num_complex::Complex<f64>;
pub type CMatrix64 = CMatrix<f64>;
pub type CVector64 = CVector<f64>;
pub type DensityMatrix64 = DensityMatrix<f64>;
pub type PureState64 = PureState<f64>;
pub type LowRankState64 = LowRankState<f64>;
pub type LindbladModel64 = LindbladModel<f64>;
pub type EnsembleResult64 = trajectory::EnsembleResult<f64>;
pub type CvEstimate64 = denoise::CvEstimate<f64>;
