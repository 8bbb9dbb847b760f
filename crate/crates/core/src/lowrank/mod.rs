//! Dynamical low-rank approximation `rho ≈ U sigma U'` with adaptive rank.
//!
//! [`rhs`] holds the factor ODEs, the tangent-space projected generator and
//! the projection residual; [`adapt`] the rank-increase direction and the
//! rank-changing maps; [`driver`] the fixed-step integrator that ties them
//! together.

pub mod adapt;
pub mod driver;
pub mod rhs;

pub use adapt::{
    best_rank_increase_direction, decrease_rank, grow_to_rank, increase_rank, rank_adaptation_workspace,
    RankAdaptationWorkspace,
};
pub use driver::{
    integrate_lowrank_adaptive, integrate_lowrank_path, AdaptiveConfig, LowRankIntegrator, LowRankRecord, LowRankRun, RankChange,
    RankEvent,
};
pub use rhs::{angular_error, lowrank_rhs, perp_residual, projected_rhs, PerpResidual};
