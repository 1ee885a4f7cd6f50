//! Nuisance models: propensities `pi_t`, mediator models `g_t`, treatment
//! classifiers `gamma1/gamma2`, the outcome regression `Q_Y`, the weight
//! processes `H_t` and `W_t`, and the two sequential-regression recursions.
//!
//! Treatment histories are bit masks with bit `k` holding `a_k`. Per-row
//! tables indexed by a history mask hold the model evaluated with the
//! treatment columns overridden by that history.

mod sequential;
mod spec;

pub use sequential::{
    sequential_q, sequential_q_with, sequential_r, sequential_r_with, QSequence, RSequence, SeqDesign,
    SeqKind, PSEUDO_CLAMP,
};
pub(crate) use sequential::{assemble_r_a, family_of, kappa_step};
pub use spec::{HMode, NuisanceSpec, SeqFamily, SeqFit};

use thiserror::Error;

use crate::data::{DataError, LongitudinalDataset, RegimeSpec};
use crate::diagnostics::Diagnostic;
use crate::formula::{BoundFormula, ColumnBindings, DesignMatrix, FormulaError};
use crate::glm::{fit_logistic, predict, FittedGlm, GlmError};

/// Largest horizon accepted by the enumerating recursions.
pub const MAX_HORIZON: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NuisanceError {
    #[error("invalid nuisance spec: {0}")]
    Spec(String),
    #[error("nuisance spec JSON line {line}: {message}")]
    Json { line: usize, message: String },
    #[error("spec horizon {spec} does not match data horizon {data}")]
    HorizonMismatch { spec: usize, data: usize },
    #[error("{component}: {source}")]
    Formula { component: String, source: FormulaError },
    #[error("{component}: {source}")]
    Glm { component: String, source: GlmError },
    #[error("mediator M{0} is not a single binary column; use h_mode gamma")]
    NonBinaryMediator(usize),
    #[error("{component}: no rows follow the regime, cannot fit")]
    EmptyStratum { component: String },
    #[error("horizon {0} exceeds the supported maximum of {MAX_HORIZON} for sequential regressions")]
    HorizonTooLarge(usize),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// One fitted logistic component with its bound formula.
#[derive(Debug, Clone)]
pub struct Component {
    pub name: String,
    formula: BoundFormula,
    pub fit: FittedGlm,
}

impl Component {
    fn fit(
        name: String,
        formula: BoundFormula,
        data: &LongitudinalDataset,
        y: &[f64],
        w: &[f64],
        diagnostics: &mut Vec<Diagnostic>,
    ) -> Result<Self, NuisanceError> {
        let x = formula.design(data, &[]);
        let fit = fit_logistic(&x, y, w, None)
            .map_err(|source| NuisanceError::Glm { component: name.clone(), source })?;
        record_fit(&name, &fit, diagnostics);
        Ok(Self { name, formula, fit })
    }

    pub fn design(&self, data: &LongitudinalDataset, overrides: &[(usize, f64)]) -> DesignMatrix {
        self.formula.design(data, overrides)
    }

    /// `P(target = 1 | ...)` per row, with columns overridden.
    pub fn prob1(&self, data: &LongitudinalDataset, overrides: &[(usize, f64)]) -> Vec<f64> {
        predict(&self.fit, &self.design(data, overrides), None).expect("aligned design")
    }

    pub fn uses_column(&self, col: usize) -> bool {
        self.formula.uses_column(col)
    }
}

pub(crate) fn record_fit(name: &str, fit: &FittedGlm, diagnostics: &mut Vec<Diagnostic>) {
    if !fit.converged {
        diagnostics.push(Diagnostic::NonConvergence {
            component: name.to_string(),
            iterations: fit.iterations,
            max_score: fit.max_score,
        });
    }
    if fit.separated {
        diagnostics.push(Diagnostic::Separation { component: name.to_string() });
    }
    if fit.is_rank_deficient() {
        diagnostics.push(Diagnostic::RankDeficient {
            component: name.to_string(),
            dropped: fit.dropped.iter().map(|&j| fit.labels[j].clone()).collect(),
        });
    }
}

/// Treatment-column overrides for `A_0..A_{len-1}` taken from `mask`.
pub(crate) fn overrides(treatment_cols: &[usize], mask: u32, len: usize) -> Vec<(usize, f64)> {
    (0..len)
        .map(|k| (treatment_cols[k], ((mask >> k) & 1) as f64))
        .collect()
}

/// All fitted nuisance models for one dataset and one regime.
#[derive(Debug, Clone)]
pub struct FittedNuisanceSet {
    regime: RegimeSpec,
    horizon: usize,
    spec: NuisanceSpec,
    treatment_cols: Vec<usize>,
    mediator_cols: Vec<usize>,
    pub pi: Vec<Component>,
    pub g: Option<Vec<Component>>,
    pub gamma1: Option<Vec<Vec<Component>>>,
    pub gamma2: Option<Vec<Vec<Component>>>,
    pub qy: Component,
    qm: Vec<BoundFormula>,
    r: Vec<BoundFormula>,
    diagnostics: Vec<Diagnostic>,
}

/// Fit every component named in `spec` on `data`.
pub fn fit_nuisance_set(
    data: &LongitudinalDataset,
    spec: &NuisanceSpec,
    regime: &RegimeSpec,
) -> Result<FittedNuisanceSet, NuisanceError> {
    let horizon = data.horizon();
    regime.check_horizon(horizon)?;
    let parsed = spec.parse(horizon)?;
    let bindings = ColumnBindings::for_dataset(data);
    let bind = |component: String, f: &crate::formula::Formula| {
        f.bind(&bindings)
            .map_err(|source| NuisanceError::Formula { component, source })
    };
    let w = data.weights();
    let mut diagnostics = Vec::new();
    let treatment_cols: Vec<usize> = (0..=horizon).map(|t| data.treatment_index(t)).collect();

    let mut pi = Vec::with_capacity(horizon + 1);
    for (t, f) in parsed.pi.iter().enumerate() {
        let name = format!("pi[{t}]");
        let b = bind(name.clone(), f)?;
        pi.push(Component::fit(name, b, data, data.treatment(t), &w, &mut diagnostics)?);
    }

    let needs_binary_m = parsed.g.is_some();
    let mut mediator_cols = Vec::new();
    if needs_binary_m || spec.h_mode == HMode::Direct {
        for t in 0..=horizon {
            if data.binary_mediator(t).is_none() {
                return Err(NuisanceError::NonBinaryMediator(t));
            }
            mediator_cols.push(data.mediator_indices(t)[0]);
        }
    }
    let g = match &parsed.g {
        Some(list) => {
            let mut out = Vec::with_capacity(list.len());
            for (t, f) in list.iter().enumerate() {
                let name = format!("g[{t}]");
                let b = bind(name.clone(), f)?;
                let y = data.binary_mediator(t).expect("checked above");
                out.push(Component::fit(name, b, data, y, &w, &mut diagnostics)?);
            }
            Some(out)
        }
        None => None,
    };

    let fit_gamma = |label: &str,
                     list: &Option<Vec<Vec<crate::formula::Formula>>>,
                     diagnostics: &mut Vec<Diagnostic>|
     -> Result<Option<Vec<Vec<Component>>>, NuisanceError> {
        let Some(list) = list else { return Ok(None) };
        let mut out = Vec::with_capacity(list.len());
        for (t, row) in list.iter().enumerate() {
            let mut fits = Vec::with_capacity(row.len());
            for (j, f) in row.iter().enumerate() {
                let name = format!("{label}[{t}][{j}]");
                let b = bind(name.clone(), f)?;
                fits.push(Component::fit(name, b, data, data.treatment(j), &w, diagnostics)?);
            }
            out.push(fits);
        }
        Ok(Some(out))
    };
    let gamma1 = fit_gamma("gamma1", &parsed.gamma1, &mut diagnostics)?;
    let gamma2 = fit_gamma("gamma2", &parsed.gamma2, &mut diagnostics)?;

    let y = data.outcome();
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(NuisanceError::Glm {
            component: "qy".into(),
            source: GlmError::OutcomeOutOfRange(i),
        });
    }
    let qy_b = bind("qy".into(), &parsed.qy)?;
    let qy = Component::fit("qy".into(), qy_b, data, y, &w, &mut diagnostics)?;

    let qm = parsed
        .qm
        .iter()
        .enumerate()
        .map(|(t, f)| bind(format!("qm[{t}]"), f))
        .collect::<Result<Vec<_>, _>>()?;
    let r = parsed
        .r
        .iter()
        .enumerate()
        .map(|(t, f)| bind(format!("r[{t}]"), f))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(FittedNuisanceSet {
        regime: regime.clone(),
        horizon,
        spec: spec.clone(),
        treatment_cols,
        mediator_cols,
        pi,
        g,
        gamma1,
        gamma2,
        qy,
        qm,
        r,
        diagnostics,
    })
}

impl FittedNuisanceSet {
    pub fn regime(&self) -> &RegimeSpec {
        &self.regime
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn spec(&self) -> &NuisanceSpec {
        &self.spec
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn treatment_cols(&self) -> &[usize] {
        &self.treatment_cols
    }

    /// Mediator column indices (binary single-column layout only).
    pub fn mediator_cols(&self) -> &[usize] {
        &self.mediator_cols
    }

    pub(crate) fn seq_formula(&self, kind: SeqKind, t: usize) -> &BoundFormula {
        match kind {
            SeqKind::Q => &self.qm[t],
            SeqKind::R => &self.r[t],
        }
    }

    /// `pi_t(1 | L, M_{<t}, a'_{<t})` for every history `a'_{<t}`:
    /// `out[mask][row]`.
    pub fn pi_table(&self, data: &LongitudinalDataset, t: usize) -> Vec<Vec<f64>> {
        (0..(1u32 << t))
            .map(|mask| self.pi[t].prob1(data, &overrides(&self.treatment_cols, mask, t)))
            .collect()
    }

    /// `Q_Y(L, a', M)` for every full history `a'`: `out[mask][row]`.
    pub fn qy_table(&self, data: &LongitudinalDataset) -> Vec<Vec<f64>> {
        let n = self.horizon + 1;
        (0..(1u32 << n))
            .map(|mask| self.qy.prob1(data, &overrides(&self.treatment_cols, mask, n)))
            .collect()
    }

    /// Untruncated `H_0..H_T` in the configured `h_mode`.
    pub fn h_raw(&self, data: &LongitudinalDataset) -> Result<Vec<Vec<f64>>, NuisanceError> {
        match self.spec.h_mode {
            HMode::Direct => self.h_direct(data),
            HMode::Gamma => self.h_gamma(data),
        }
    }

    /// `H_t = prod_{k<=t} g_k(M_k | L, a_k, M_{<k}) / g_k(M_k | L, A_k, M_{<k})`.
    pub fn h_direct(&self, data: &LongitudinalDataset) -> Result<Vec<Vec<f64>>, NuisanceError> {
        let g = self
            .g
            .as_ref()
            .ok_or_else(|| NuisanceError::Spec("direct H requires g formulas".into()))?;
        let n_rows = data.n_rows();
        let rmask = self.regime.mask();
        let mut h = vec![1.0; n_rows];
        let mut out = Vec::with_capacity(self.horizon + 1);
        for (t, comp) in g.iter().enumerate() {
            let m = data.binary_mediator(t).ok_or(NuisanceError::NonBinaryMediator(t))?;
            let num1 = comp.prob1(data, &overrides(&self.treatment_cols, rmask, t + 1));
            let den1 = comp.prob1(data, &[]);
            for i in 0..n_rows {
                let (num, den) = if m[i] == 1.0 {
                    (num1[i], den1[i])
                } else {
                    (1.0 - num1[i], 1.0 - den1[i])
                };
                assert!(den > 0.0, "clamped mediator probability is positive");
                h[i] *= num / den;
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    /// `H_t` from the treatment-classifier rewrite of the mediator ratio.
    pub fn h_gamma(&self, data: &LongitudinalDataset) -> Result<Vec<Vec<f64>>, NuisanceError> {
        let (Some(g1), Some(g2)) = (&self.gamma1, &self.gamma2) else {
            return Err(NuisanceError::Spec("gamma H requires gamma1 and gamma2".into()));
        };
        let n_rows = data.n_rows();
        let rmask = self.regime.mask();
        let mut h = vec![1.0; n_rows];
        let mut out = Vec::with_capacity(self.horizon + 1);
        for t in 0..=self.horizon {
            for j in 0..=t {
                let aj = data.treatment(j);
                let a_reg = self.regime.get(j) as f64;
                let reg = overrides(&self.treatment_cols, rmask, j);
                let g1_reg = g1[t][j].prob1(data, &reg);
                let g2_reg = g2[t][j].prob1(data, &reg);
                let g1_obs = g1[t][j].prob1(data, &[]);
                let g2_obs = g2[t][j].prob1(data, &[]);
                let at = |p: f64, a: f64| if a == 1.0 { p } else { 1.0 - p };
                for i in 0..n_rows {
                    let ratio = (at(g1_reg[i], a_reg) / at(g2_reg[i], a_reg))
                        * (at(g2_obs[i], aj[i]) / at(g1_obs[i], aj[i]));
                    h[i] *= ratio;
                }
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    /// `H_0..H_T` in the given mode with the configured truncation applied.
    pub fn h_truncated(
        &self,
        data: &LongitudinalDataset,
        mode: HMode,
        diagnostics: &mut Vec<Diagnostic>,
    ) -> Result<Vec<Vec<f64>>, NuisanceError> {
        let mut h = match mode {
            HMode::Direct => self.h_direct(data)?,
            HMode::Gamma => self.h_gamma(data)?,
        };
        if let Some(b) = self.spec.truncate {
            truncate_h(&mut h, b, diagnostics);
        }
        Ok(h)
    }

    /// Evaluate all per-row tables needed by the estimators.
    pub fn tables(&self, data: &LongitudinalDataset) -> Result<NuisanceTables, NuisanceError> {
        let mut diagnostics = Vec::new();
        let h = self.h_truncated(data, self.spec.h_mode, &mut diagnostics)?;
        Ok(NuisanceTables {
            horizon: self.horizon,
            regime: self.regime.clone(),
            pi1: (0..=self.horizon).map(|t| self.pi_table(data, t)).collect(),
            q_y: self.qy_table(data),
            h,
            truncate: self.spec.truncate,
            diagnostics,
        })
    }

    /// `H_t` for `t >= -1` (all ones at `t = -1`).
    pub fn compute_h(&self, data: &LongitudinalDataset, t: isize) -> Result<Vec<f64>, NuisanceError> {
        Ok(self.tables(data)?.h_at(t))
    }

    pub fn compute_w(&self, data: &LongitudinalDataset, t: usize) -> Result<Vec<f64>, NuisanceError> {
        Ok(self.tables(data)?.w(data, t).0)
    }
}

/// Per-row evaluations of the fitted models.
#[derive(Debug, Clone)]
pub struct NuisanceTables {
    pub horizon: usize,
    pub regime: RegimeSpec,
    /// `pi1[t][mask][row] = pi_t(1 | L, M_{<t}, a'_{<t} = mask)`.
    pub pi1: Vec<Vec<Vec<f64>>>,
    /// `q_y[mask][row] = Q_Y(L, a' = mask, M)`.
    pub q_y: Vec<Vec<f64>>,
    /// `h[t][row] = H_t`.
    pub h: Vec<Vec<f64>>,
    pub truncate: Option<f64>,
    pub diagnostics: Vec<Diagnostic>,
}

impl NuisanceTables {
    #[inline]
    pub fn pi(&self, t: usize, a: u32, mask: u32, row: usize) -> f64 {
        let p = self.pi1[t][mask as usize][row];
        if a == 1 {
            p
        } else {
            1.0 - p
        }
    }

    pub fn h_at(&self, t: isize) -> Vec<f64> {
        if t < 0 {
            vec![1.0; self.h[0].len()]
        } else {
            self.h[t as usize].clone()
        }
    }

    /// `W_t` per row and the number of rows where truncation was active.
    pub fn w(&self, data: &LongitudinalDataset, t: usize) -> (Vec<f64>, usize) {
        let rmask = self.regime.mask();
        let mut truncated = 0;
        let w = (0..data.n_rows())
            .map(|i| {
                if data.history_mask_upto(i, t) != self.regime.mask_upto(t) {
                    return 0.0;
                }
                let mut den = 1.0;
                for k in 0..=t {
                    den *= self.pi(k, (rmask >> k) & 1, rmask & low(k), i);
                }
                let v = 1.0 / den;
                match self.truncate {
                    Some(b) if v > b => {
                        truncated += 1;
                        b
                    }
                    _ => v,
                }
            })
            .collect();
        (w, truncated)
    }

    /// All `W_t` with truncation diagnostics appended to `diagnostics`.
    pub fn w_all(&self, data: &LongitudinalDataset, diagnostics: &mut Vec<Diagnostic>) -> Vec<Vec<f64>> {
        (0..=self.horizon)
            .map(|t| {
                let (w, rows) = self.w(data, t);
                if rows > 0 {
                    diagnostics.push(Diagnostic::Truncation {
                        quantity: format!("W[{t}]"),
                        rows,
                        bound: self.truncate.unwrap_or(f64::INFINITY),
                    });
                }
                w
            })
            .collect()
    }

    /// `Q_Y` at the observed treatment history.
    pub fn q_y_observed(&self, data: &LongitudinalDataset) -> Vec<f64> {
        (0..data.n_rows())
            .map(|i| self.q_y[data.history_mask(i) as usize][i])
            .collect()
    }

    /// `pi_t(1 | observed past)`.
    pub fn pi1_observed(&self, data: &LongitudinalDataset, t: usize) -> Vec<f64> {
        (0..data.n_rows())
            .map(|i| self.pi1[t][(data.history_mask(i) & low(t)) as usize][i])
            .collect()
    }

    /// `Q_{M_{T+1}} = sum_{a'} Q_Y(L, a', M) prod_t pi_t(a'_t | L, M_{<t}, a'_{<t})`.
    pub fn q_terminal(&self, row: usize) -> f64 {
        let n = self.horizon + 1;
        let mut s = 0.0;
        for mask in 0..(1u32 << n) {
            let mut p = 1.0;
            for t in 0..n {
                p *= self.pi(t, (mask >> t) & 1, mask & low(t), row);
            }
            s += self.q_y[mask as usize][row] * p;
        }
        s
    }
}

/// Clamp every `H_t` to `[1/b, b]`, recording binding rows.
pub(crate) fn truncate_h(h: &mut [Vec<f64>], b: f64, diagnostics: &mut Vec<Diagnostic>) {
    for (t, ht) in h.iter_mut().enumerate() {
        let mut rows = 0;
        for v in ht.iter_mut() {
            let c = v.clamp(1.0 / b, b);
            if c != *v {
                rows += 1;
                *v = c;
            }
        }
        if rows > 0 {
            diagnostics.push(Diagnostic::Truncation { quantity: format!("H[{t}]"), rows, bound: b });
        }
    }
}

#[inline]
pub(crate) fn low(k: usize) -> u32 {
    (1u32 << k) - 1
}
