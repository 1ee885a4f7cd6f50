//! Estimators of the intervention-specific mean `E{Y(a)}`.
//!
//! An [`Estimation`] fits the nuisance models once for a dataset, spec and
//! regime, and every estimator then reuses those fits.

mod mediator_tmle;
mod tmle;

use std::cell::OnceCell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, LongitudinalDataset, RegimeSpec};
use crate::diagnostics::Diagnostic;
use crate::glm::GlmError;
use crate::inference::{compute_eif, wald_interval, EifBreakdown, EifInputs, InferenceError};
use crate::numeric::pairwise_sum;
use crate::nuisance::{
    fit_nuisance_set, sequential_q, sequential_r, FittedNuisanceSet, HMode, NuisanceError, NuisanceSpec,
    NuisanceTables, QSequence, RSequence,
};

pub use mediator_tmle::MediatorTmleOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorId {
    Ipw1,
    Ipw2a,
    Ipw2b,
    Sr1,
    Sr2,
    #[serde(rename = "onestep")]
    OneStep,
    Tmle,
    TmleMed,
}

impl EstimatorId {
    pub const ALL: [EstimatorId; 8] = [
        EstimatorId::Ipw1,
        EstimatorId::Ipw2a,
        EstimatorId::Ipw2b,
        EstimatorId::Sr1,
        EstimatorId::Sr2,
        EstimatorId::OneStep,
        EstimatorId::Tmle,
        EstimatorId::TmleMed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorId::Ipw1 => "ipw1",
            EstimatorId::Ipw2a => "ipw2a",
            EstimatorId::Ipw2b => "ipw2b",
            EstimatorId::Sr1 => "sr1",
            EstimatorId::Sr2 => "sr2",
            EstimatorId::OneStep => "onestep",
            EstimatorId::Tmle => "tmle",
            EstimatorId::TmleMed => "tmle_med",
        }
    }

    /// Estimators that report an influence-function standard error.
    pub fn has_inference(self) -> bool {
        matches!(self, EstimatorId::OneStep | EstimatorId::Tmle | EstimatorId::TmleMed)
    }
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorId {
    type Err = EstimateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| EstimateError::UnknownEstimator(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("unknown estimator `{0}` (expected one of ipw1, ipw2a, ipw2b, sr1, sr2, onestep, tmle, tmle_med)")]
    UnknownEstimator(String),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("{estimator} needs {what}")]
    MissingComponent { estimator: EstimatorId, what: String },
    #[error("{step}: {source}")]
    Fluctuation { step: String, source: GlmError },
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Point estimate, optional Wald inference and diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimator: EstimatorId,
    pub psi: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub alpha: f64,
    pub regime: RegimeSpec,
    pub n: usize,
    pub diagnostics: Vec<Diagnostic>,
    /// Centered influence-function values per row.
    pub eif_values: Option<Vec<f64>>,
    /// Weighted mean of `eif_values`.
    pub eif_mean: Option<f64>,
}

#[derive(Serialize)]
struct ResultJson<'a> {
    estimator: EstimatorId,
    psi: f64,
    se: Option<f64>,
    ci: Option<[f64; 2]>,
    alpha: f64,
    regime: String,
    n: usize,
    diagnostics: &'a [Diagnostic],
}

impl EstimateResult {
    fn point(estimator: EstimatorId, psi: f64, ctx: &Estimation<'_>, diagnostics: Vec<Diagnostic>) -> Self {
        Self {
            estimator,
            psi,
            se: None,
            ci: None,
            alpha: ctx.alpha,
            regime: ctx.set.regime().clone(),
            n: ctx.data.n_rows(),
            diagnostics,
            eif_values: None,
            eif_mean: None,
        }
    }

    /// `{estimator, psi, se, ci, alpha, regime, n, diagnostics}` as pretty JSON.
    pub fn to_json(&self) -> String {
        let j = ResultJson {
            estimator: self.estimator,
            psi: self.psi,
            se: self.se,
            ci: self.ci.map(|(lo, hi)| [lo, hi]),
            alpha: self.alpha,
            regime: self.regime.to_string(),
            n: self.n,
            diagnostics: &self.diagnostics,
        };
        serde_json::to_string_pretty(&j).expect("result serialises")
    }

    /// `psi=... se=... ci=[...,...]`.
    pub fn summary_line(&self) -> String {
        let se = self.se.map_or("NA".to_string(), |v| format!("{v:.6}"));
        let ci = self
            .ci
            .map_or("NA".to_string(), |(lo, hi)| format!("[{lo:.6},{hi:.6}]"));
        format!("{} psi={:.6} se={se} ci={ci}", self.estimator, self.psi)
    }

    /// Whether the interval covers `truth`. `None` without an interval.
    pub fn covers(&self, truth: f64) -> Option<bool> {
        self.ci.map(|(lo, hi)| lo <= truth && truth <= hi)
    }
}

fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let num: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
    pairwise_sum(&num) / pairwise_sum(w)
}

/// Shared nuisance fits for one `(data, spec, regime)` triple.
pub struct Estimation<'a> {
    data: &'a LongitudinalDataset,
    set: FittedNuisanceSet,
    tables: NuisanceTables,
    alpha: f64,
    mediator_options: MediatorTmleOptions,
    w: OnceCell<(Vec<Vec<f64>>, Vec<Diagnostic>)>,
    q: OnceCell<Result<QSequence, NuisanceError>>,
    r: OnceCell<Result<RSequence, NuisanceError>>,
}

impl<'a> Estimation<'a> {
    pub fn new(
        data: &'a LongitudinalDataset,
        spec: &NuisanceSpec,
        regime: &RegimeSpec,
        alpha: f64,
    ) -> Result<Self, EstimateError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(EstimateError::InvalidAlpha(alpha));
        }
        let set = fit_nuisance_set(data, spec, regime)?;
        let tables = set.tables(data)?;
        Ok(Self {
            data,
            set,
            tables,
            alpha,
            mediator_options: MediatorTmleOptions::default(),
            w: OnceCell::new(),
            q: OnceCell::new(),
            r: OnceCell::new(),
        })
    }

    pub fn with_mediator_options(mut self, options: MediatorTmleOptions) -> Self {
        self.mediator_options = options;
        self
    }

    pub fn set(&self) -> &FittedNuisanceSet {
        &self.set
    }

    pub fn tables(&self) -> &NuisanceTables {
        &self.tables
    }

    pub fn data(&self) -> &LongitudinalDataset {
        self.data
    }

    fn base_diagnostics(&self) -> Vec<Diagnostic> {
        let mut d = self.set.diagnostics().to_vec();
        d.extend(self.tables.diagnostics.iter().cloned());
        d
    }

    fn w_all(&self) -> &(Vec<Vec<f64>>, Vec<Diagnostic>) {
        self.w.get_or_init(|| {
            let mut d = Vec::new();
            let w = self.tables.w_all(self.data, &mut d);
            (w, d)
        })
    }

    pub fn q_sequence(&self) -> Result<&QSequence, EstimateError> {
        self.q
            .get_or_init(|| sequential_q(&self.set, &self.tables, self.data))
            .as_ref()
            .map_err(|e| e.clone().into())
    }

    pub fn r_sequence(&self) -> Result<&RSequence, EstimateError> {
        self.r
            .get_or_init(|| sequential_r(&self.set, &self.tables, self.data))
            .as_ref()
            .map_err(|e| e.clone().into())
    }

    fn mean(&self, x: &[f64]) -> f64 {
        weighted_mean(x, &self.data.weights())
    }

    pub fn run(&self, id: EstimatorId) -> Result<EstimateResult, EstimateError> {
        match id {
            EstimatorId::Ipw1 => self.ipw1(),
            EstimatorId::Ipw2a => self.ipw2(HMode::Direct),
            EstimatorId::Ipw2b => self.ipw2(HMode::Gamma),
            EstimatorId::Sr1 => self.sr1(),
            EstimatorId::Sr2 => self.sr2(),
            EstimatorId::OneStep => self.onestep(),
            EstimatorId::Tmle => tmle::run(self),
            EstimatorId::TmleMed => mediator_tmle::run(self, self.mediator_options),
        }
    }

    pub fn run_many(&self, ids: &[EstimatorId]) -> Vec<(EstimatorId, Result<EstimateResult, EstimateError>)> {
        ids.iter().map(|&id| (id, self.run(id))).collect()
    }

    /// Mean of `W_T` times the regime-integrated outcome regression.
    fn ipw1(&self) -> Result<EstimateResult, EstimateError> {
        let horizon = self.set.horizon();
        let mut diagnostics = self.base_diagnostics();
        let (w, wd) = self.w_all();
        diagnostics.extend(wd.iter().cloned());
        let w_t = &w[horizon];
        if w_t.iter().all(|&v| v == 0.0) {
            diagnostics.push(Diagnostic::Positivity {
                message: format!("no rows follow regime {}", self.set.regime()),
            });
            return Ok(EstimateResult::point(EstimatorId::Ipw1, 0.0, self, diagnostics));
        }
        let vals: Vec<f64> = (0..self.data.n_rows())
            .map(|i| if w_t[i] == 0.0 { 0.0 } else { w_t[i] * self.tables.q_terminal(i) })
            .collect();
        Ok(EstimateResult::point(EstimatorId::Ipw1, self.mean(&vals), self, diagnostics))
    }

    /// Mean of `H_T` times the outcome regression at the observed history.
    fn ipw2(&self, mode: HMode) -> Result<EstimateResult, EstimateError> {
        let id = match mode {
            HMode::Direct => EstimatorId::Ipw2a,
            HMode::Gamma => EstimatorId::Ipw2b,
        };
        let available = match mode {
            HMode::Direct => self.set.g.is_some(),
            HMode::Gamma => self.set.gamma1.is_some() && self.set.gamma2.is_some(),
        };
        if !available {
            let what = match mode {
                HMode::Direct => "g formulas",
                HMode::Gamma => "gamma1 and gamma2 formulas",
            };
            return Err(EstimateError::MissingComponent { estimator: id, what: what.into() });
        }
        let mut diagnostics = self.set.diagnostics().to_vec();
        let h = if mode == self.set.spec().h_mode {
            diagnostics.extend(self.tables.diagnostics.iter().cloned());
            self.tables.h.clone()
        } else {
            self.set.h_truncated(self.data, mode, &mut diagnostics)?
        };
        let q = self.tables.q_y_observed(self.data);
        let h_t = &h[self.set.horizon()];
        let vals: Vec<f64> = h_t.iter().zip(&q).map(|(a, b)| a * b).collect();
        Ok(EstimateResult::point(id, self.mean(&vals), self, diagnostics))
    }

    fn sr1(&self) -> Result<EstimateResult, EstimateError> {
        let q = self.q_sequence()?;
        let mut diagnostics = self.base_diagnostics();
        diagnostics.extend(q.diagnostics.iter().cloned());
        Ok(EstimateResult::point(EstimatorId::Sr1, self.mean(&q.q[0]), self, diagnostics))
    }

    fn sr2(&self) -> Result<EstimateResult, EstimateError> {
        let r = self.r_sequence()?;
        let mut diagnostics = self.base_diagnostics();
        diagnostics.extend(r.diagnostics.iter().cloned());
        Ok(EstimateResult::point(EstimatorId::Sr2, self.mean(&r.r_a[0][0]), self, diagnostics))
    }

    /// Influence-function inputs at the initial fits.
    pub fn eif_inputs(&self) -> Result<EifInputs, EstimateError> {
        let q = self.q_sequence()?;
        let r = self.r_sequence()?;
        let (w, _) = self.w_all();
        Ok(EifInputs::from_fits(self.data, &self.tables, w.clone(), q, r))
    }

    fn onestep(&self) -> Result<EstimateResult, EstimateError> {
        let q = self.q_sequence()?;
        let r = self.r_sequence()?;
        let mut diagnostics = self.base_diagnostics();
        diagnostics.extend(self.w_all().1.iter().cloned());
        diagnostics.extend(q.diagnostics.iter().cloned());
        diagnostics.extend(r.diagnostics.iter().cloned());
        let inputs = self.eif_inputs()?;
        let mut eif = compute_eif(&inputs, 0.0)?;
        let psi = eif.one_step();
        eif.recenter(psi);
        self.with_inference(EstimatorId::OneStep, psi, eif, diagnostics)
    }

    /// Attach SE, Wald interval and EIF values to a point estimate.
    pub(crate) fn with_inference(
        &self,
        id: EstimatorId,
        psi: f64,
        eif: EifBreakdown,
        mut diagnostics: Vec<Diagnostic>,
    ) -> Result<EstimateResult, EstimateError> {
        let weights = self.data.explicit_weights();
        let ci = wald_interval(&eif.total, weights, psi, self.alpha)?;
        if ci.degenerate {
            diagnostics.push(Diagnostic::DegenerateVariance);
        }
        assert!(ci.lo <= psi && psi <= ci.hi, "Wald interval is centered");
        let eif_mean = eif.mean();
        Ok(EstimateResult {
            estimator: id,
            psi,
            se: Some(ci.se),
            ci: Some((ci.lo, ci.hi)),
            alpha: self.alpha,
            regime: self.set.regime().clone(),
            n: self.data.n_rows(),
            diagnostics,
            eif_values: Some(eif.total),
            eif_mean: Some(eif_mean),
        })
    }
}

/// Fit the nuisance models and run one estimator.
pub fn estimate(
    id: EstimatorId,
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
    alpha: f64,
) -> Result<EstimateResult, EstimateError> {
    Estimation::new(data, spec, regime, alpha)?.run(id)
}

pub fn estimate_ipw1(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
) -> Result<EstimateResult, EstimateError> {
    estimate(EstimatorId::Ipw1, data, spec, regime, 0.05)
}

pub fn estimate_ipw2(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
    mode: HMode,
) -> Result<EstimateResult, EstimateError> {
    let id = match mode {
        HMode::Direct => EstimatorId::Ipw2a,
        HMode::Gamma => EstimatorId::Ipw2b,
    };
    estimate(id, data, spec, regime, 0.05)
}

pub fn estimate_sr1(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
) -> Result<EstimateResult, EstimateError> {
    estimate(EstimatorId::Sr1, data, spec, regime, 0.05)
}

pub fn estimate_sr2(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
) -> Result<EstimateResult, EstimateError> {
    estimate(EstimatorId::Sr2, data, spec, regime, 0.05)
}

pub fn estimate_onestep(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
    alpha: f64,
) -> Result<EstimateResult, EstimateError> {
    estimate(EstimatorId::OneStep, data, spec, regime, alpha)
}

pub fn estimate_tmle(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
    alpha: f64,
) -> Result<EstimateResult, EstimateError> {
    estimate(EstimatorId::Tmle, data, spec, regime, alpha)
}

pub fn estimate_tmle_mediator(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
    alpha: f64,
    max_iters: usize,
    tol: f64,
) -> Result<EstimateResult, EstimateError> {
    Estimation::new(data, spec, regime, alpha)?
        .with_mediator_options(MediatorTmleOptions { max_iters, tol })
        .run(EstimatorId::TmleMed)
}

#[cfg(test)]
mod tests;
