//! Random fixed-point equations `X_r =d sum_j A_{r,j} X_{l_r(j)} + b_r`:
//! model construction, sufficient-condition audits, pool-based solving,
//! density estimation and direct simulation of the underlying processes.

pub mod audit;
pub mod density;
pub mod equation;
pub mod error;
pub mod models;
pub mod process;
pub mod rng;
pub mod solver;
pub mod stats;

pub use equation::{
    min_gain, op_norm, spectral_summary, CoefficientDraw, CoefficientLaw, EquationSystem, Interval, SpectralSummary,
    SquareMatrix,
};
pub use error::{Error, Result};
pub use rng::SeedTree;
