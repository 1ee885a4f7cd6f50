//! Non-fatal events recorded while fitting and estimating.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    /// A GLM fit stopped before its score tolerance was met.
    NonConvergence { component: String, iterations: usize, max_score: f64 },
    /// Fitted probabilities reached 0 or 1 (complete or quasi-complete separation).
    Separation { component: String },
    /// Design columns dropped for rank deficiency.
    RankDeficient { component: String, dropped: Vec<String> },
    /// Weight truncation bound was active on some rows.
    Truncation { quantity: String, rows: usize, bound: f64 },
    /// A TMLE fluctuation step and its fitted coefficient.
    Fluctuation { step: String, epsilon: f64, converged: bool },
    /// No rows support the regime where support is required.
    Positivity { message: String },
    /// Influence-function variance is zero; the interval collapses to a point.
    DegenerateVariance,
    /// Iterative targeting stopped at its iteration cap.
    MaxIterations { iterations: usize, max_epsilon: f64 },
    Note { message: String },
}

impl Diagnostic {
    pub fn note(message: impl Into<String>) -> Self {
        Diagnostic::Note { message: message.into() }
    }

    /// Diagnostics that are worth surfacing as warnings.
    pub fn is_warning(&self) -> bool {
        !matches!(self, Diagnostic::Fluctuation { converged: true, .. } | Diagnostic::Note { .. })
    }
}
