//! Estimation of intervention-specific mean outcomes under the longitudinal
//! front-door criterion.
//!
//! The crate is organised bottom-up:
//!
//! * [`data`] holds the observed-data container, data-generating processes,
//!   simulation, and exact enumeration oracles for small all-binary models.
//! * [`formula`] parses model specifications such as `(L1 + L2 + A0 + M0)^2`
//!   and expands them into design matrices.
//! * [`glm`] fits weighted least squares and weighted logistic regressions
//!   (with offsets), including the one-parameter fluctuation fits used by TMLE.
//! * [`nuisance`] fits propensities, mediator models, the outcome regression,
//!   the density-ratio weights and both sequential-regression recursions.
//! * [`inference`] assembles the efficient influence function and Wald intervals.
//! * [`estimators`] exposes IPW, sequential regression, one-step and TMLE
//!   estimators.
//! * [`simstudy`] runs Monte Carlo studies and writes CSV/SVG reports.

pub mod data;
pub mod diagnostics;
pub mod estimators;
pub mod formula;
pub mod glm;
pub mod inference;
pub mod numeric;
pub mod nuisance;
pub mod simstudy;

pub use data::{
    DataError, DiscreteDgp, ExactJoint, LongitudinalDataset, OracleError, RegimeSpec,
};
pub use diagnostics::Diagnostic;
pub use estimators::{
    EstimateError, EstimateResult, EstimatorId, Estimation,
};
pub use formula::{DesignMatrix, Formula, FormulaError};
pub use glm::{Family, FittedGlm, GlmError};
pub use inference::{EifBreakdown, EifInputs, WaldInterval};
pub use nuisance::{FittedNuisanceSet, HMode, NuisanceError, NuisanceSpec};
pub use simstudy::{MonteCarloConfig, ScenarioSpec, StudyError, StudyReport};
