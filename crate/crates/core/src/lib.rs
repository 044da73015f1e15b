//! Numerical laboratory for Green functions on discrete metric measure spaces.
//!
//! The crate discretizes metric measure spaces (regular lattices, point clouds,
//! weighted graphs), computes heat kernels and Green functions of their
//! Laplacians, builds the Green quasi-metric `d_G = 1/G`, integrates Lagrangian
//! flows of Sobolev vector fields, and checks every quantitative estimate
//! relating these objects against closed-form Euclidean references.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`space`] | metric measure spaces, balls, volume growth, tail integrals `F`, `H` |
//! | [`heat`] | Laplacians, heat kernels (spectral and time stepping), Gaussian bounds |
//! | [`green`] | Green columns, quasi-metric, comparison and doubling constants |
//! | [`maximal`] | Hardy-Littlewood maximal operators and the scalar Green estimate |
//! | [`flow`] | vector field catalogue, RK4 flows, flow-regularity diagnostics |
//! | [`transport`] | exact discrete optimal transport and displacement interpolation |
//! | [`dimension`] | volume-density dimension estimates, covering estimator |

pub mod dimension;
pub mod flow;
pub mod green;
pub mod heat;
pub mod linalg;
pub mod maximal;
pub mod quadrature;
pub mod sampling;
pub mod space;
pub mod transport;

use thiserror::Error;

pub use space::MmSpace;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("memory budget exceeded: {points} points requested, budget {budget}")]
    MemoryBudget { points: u128, budget: u64 },

    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("non-parabolic assumption violated: {0}")]
    NonParabolic(String),

    #[error("tail stitching mismatch {mismatch:.4} above tolerance at radius {radius}")]
    StitchMismatch { radius: f64, mismatch: f64 },

    #[error("radius {radius} exceeds sampled range {sampled} and no tail model is declared")]
    RadiusOutOfRange { radius: f64, sampled: f64 },

    #[error("Green function undefined on parabolic/compact backend: {0}")]
    GreenUndefined(String),

    #[error("Gaussian bound violated: {0}")]
    GaussianBound(String),

    #[error("linear solver failure: {0}")]
    Solver(String),

    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),

    #[error("radius window too narrow: [{lo}, {hi}]")]
    WindowTooNarrow { lo: f64, hi: f64 },

    #[error("below Green dimension range: estimated dimension {0} < 3")]
    BelowGreenDimension(usize),

    #[error("rigid field violation: {0}")]
    RigidViolation(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Volume of the unit ball in `R^k`.
pub fn unit_ball_volume(k: usize) -> f64 {
    use std::f64::consts::PI;
    match k {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(k - 2) * 2.0 * PI / k as f64,
    }
}
