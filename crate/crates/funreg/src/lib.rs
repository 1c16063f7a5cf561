//! Multi-task functional linear regression with penalized splines.
//!
//! The toolkit estimates slope curves for M related regression tasks from
//! functional covariates, with double regularization over the K x M spline
//! coefficient matrix: a composite quadratic penalty and an optional
//! fixed-rank manifold constraint. A graph Laplacian built from auxiliary
//! covariates specializes the penalty to spatially coupled tasks.
//!
//! Modules mirror the pipeline: [`basis`] and [`processes`] supply the
//! spline system and covariate law, [`simdiag`] installs the basis
//! transform that diagonalizes the prediction and roughness norms,
//! [`penalty`] and [`graph`] build regularizers, [`manifold`] provides
//! fixed-rank geometry, [`estimators`] fits the models, and
//! [`diagnostics`] / [`simgen`] support the simulation studies.

pub mod basis;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod linalg;
pub mod manifold;
pub mod penalty;
pub mod processes;
pub mod quad;
pub mod simdiag;
pub mod simgen;

pub use basis::{GramPair, KnotRule, SplineBasis};
pub use error::{FunRegError, Result};
pub use estimators::{FitResult, LossKind, TaskDataset};
pub use graph::{AuxiliarySample, KernelG, Laplacian, Manifold};
pub use manifold::{FixedRankPoint, TangentVector};
pub use penalty::PenaltySpec;
pub use processes::{CovKernel, GpSampler};
pub use simdiag::DiagonalizedSystem;
pub use simgen::{Scenario, ScenarioPreset};
