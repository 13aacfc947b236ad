//! Tilted empirical risk minimization.
//!
//! Sample-level tilting lives in [`tilt`], nested group tilting in
//! [`hierarchy`], solvers in [`solver`], quantile bounds in
//! [`superquantile`], t-sweeps in [`analysis`] and synthetic data in [`data`].

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiments;
pub mod hierarchy;
pub mod losses;
pub mod model;
pub mod solver;
pub mod superquantile;
pub mod tilt;

pub use error::{Result, TermError};
pub use hierarchy::{tree_tilted_objective, tree_tilted_weights, HierWeights, TiltTree};
pub use losses::{LossEval, LossKind};
pub use model::{LossModel, PcaModel, SampleModel};
pub use solver::{
    batch_solve, stochastic_solve, Continuation, SolverConfig, SolverTrace, Termination,
};
pub use tilt::{
    cumulant, extreme_losses, tilt_weights, tilted_gradient, tilted_objective, GradientMatrix,
    LossExtremes, LossVector, Tilt, TiltWeights,
};
