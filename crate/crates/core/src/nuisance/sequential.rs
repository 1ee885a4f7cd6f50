use super::{low, overrides, record_fit, FittedNuisanceSet, NuisanceError, NuisanceTables, SeqFamily, SeqFit, MAX_HORIZON};
use crate::data::LongitudinalDataset;
use crate::diagnostics::Diagnostic;
use crate::formula::DesignMatrix;
use crate::glm::{fit_logistic, fit_ols, predict, Family, FittedGlm};

/// Pseudo-outcome clamp for logistic sequential fits.
pub const PSEUDO_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeqKind {
    /// Regressions of the `Q_{M_t}` recursion.
    Q,
    /// Regressions of the `kappa_t` / `R` recursion.
    R,
}

/// Design, fitting weights and regime-evaluation design for one step of a
/// sequential recursion.
#[derive(Debug, Clone)]
pub struct SeqDesign {
    pub name: String,
    x: DesignMatrix,
    x_regime: Option<DesignMatrix>,
    w: Vec<f64>,
}

impl SeqDesign {
    pub fn new(
        set: &FittedNuisanceSet,
        data: &LongitudinalDataset,
        kind: SeqKind,
        t: usize,
    ) -> Result<Self, NuisanceError> {
        let name = match kind {
            SeqKind::Q => format!("qm[{t}]"),
            SeqKind::R => format!("r[{t}]"),
        };
        let f = set.seq_formula(kind, t);
        let regime = set.regime();
        let mut w = data.weights();
        if set.spec().seq_fit == SeqFit::Stratified {
            let target = regime.mask_upto(t);
            for (i, wi) in w.iter_mut().enumerate() {
                if data.history_mask_upto(i, t) != target {
                    *wi = 0.0;
                }
            }
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(NuisanceError::EmptyStratum { component: name });
        }
        let x = f.design(data, &[]);
        let ov = overrides(set.treatment_cols(), regime.mask(), t + 1);
        let x_regime = ov
            .iter()
            .any(|(c, _)| f.uses_column(*c))
            .then(|| f.design(data, &ov));
        Ok(Self { name, x, x_regime, w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Fit `target` and predict at the regime. Logistic targets are clamped
    /// to `[1e-6, 1 - 1e-6]`.
    pub fn fit(&self, target: &[f64], family: Family) -> Result<(Vec<f64>, FittedGlm), NuisanceError> {
        let glm_err = |source| NuisanceError::Glm { component: self.name.clone(), source };
        let fit = match family {
            Family::Gaussian => fit_ols(&self.x, target, &self.w).map_err(glm_err)?,
            Family::Binomial => {
                let y: Vec<f64> = target
                    .iter()
                    .map(|v| v.clamp(PSEUDO_CLAMP, 1.0 - PSEUDO_CLAMP))
                    .collect();
                fit_logistic(&self.x, &y, &self.w, None).map_err(glm_err)?
            }
        };
        let pred = predict(&fit, self.x_regime.as_ref().unwrap_or(&self.x), None).map_err(glm_err)?;
        Ok((pred, fit))
    }
}

pub(crate) fn family_of(f: SeqFamily) -> Family {
    match f {
        SeqFamily::Linear => Family::Gaussian,
        SeqFamily::Logistic => Family::Binomial,
    }
}

/// `Q_{M_{T+1}}, ..., Q_{M_0}` per row: `q[t][row]` for `t = 0..=T+1`.
#[derive(Debug, Clone)]
pub struct QSequence {
    pub q: Vec<Vec<f64>>,
    pub fits: Vec<FittedGlm>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn sequential_q(
    set: &FittedNuisanceSet,
    tables: &NuisanceTables,
    data: &LongitudinalDataset,
) -> Result<QSequence, NuisanceError> {
    sequential_q_with(set, tables, data, family_of(set.spec().seq_family))
}

pub fn sequential_q_with(
    set: &FittedNuisanceSet,
    tables: &NuisanceTables,
    data: &LongitudinalDataset,
    family: Family,
) -> Result<QSequence, NuisanceError> {
    let n = set.horizon() + 1;
    let terminal: Vec<f64> = (0..data.n_rows()).map(|i| tables.q_terminal(i)).collect();
    let mut q = vec![Vec::new(); n + 1];
    q[n] = terminal;
    let mut fits = vec![None; n];
    let mut diagnostics = Vec::new();
    for t in (0..n).rev() {
        let design = SeqDesign::new(set, data, SeqKind::Q, t)?;
        let (pred, fit) = design.fit(&q[t + 1], family)?;
        record_fit(&design.name, &fit, &mut diagnostics);
        q[t] = pred;
        fits[t] = Some(fit);
    }
    Ok(QSequence { q, fits: fits.into_iter().map(Option::unwrap).collect(), diagnostics })
}

/// The `R` recursion: `kappa[t][mask][row]` for every `a'_0..a'_t` and
/// `r_a[t][mask][row]` for every `a'_0..a'_{t-1}`, `t = 0..=T+1`.
#[derive(Debug, Clone)]
pub struct RSequence {
    pub kappa: Vec<Vec<Vec<f64>>>,
    pub r_a: Vec<Vec<Vec<f64>>>,
    /// Number of regressions fitted at each `t`.
    pub regressions: Vec<usize>,
    pub diagnostics: Vec<Diagnostic>,
}

impl RSequence {
    /// `R_{M_t} = kappa_t` at the observed `A_0..A_t`.
    pub fn r_m_observed(&self, data: &LongitudinalDataset, t: usize) -> Vec<f64> {
        (0..data.n_rows())
            .map(|i| self.kappa[t][data.history_mask_upto(i, t) as usize][i])
            .collect()
    }

    /// `R_{A_t}` at the observed `A_0..A_{t-1}`.
    pub fn r_a_observed(&self, data: &LongitudinalDataset, t: usize) -> Vec<f64> {
        (0..data.n_rows())
            .map(|i| self.r_a[t][(data.history_mask(i) & low(t)) as usize][i])
            .collect()
    }

    /// `kappa_t(A_{<t}, 1) - kappa_t(A_{<t}, 0)` at the observed past.
    pub fn kappa_diff_observed(&self, data: &LongitudinalDataset, t: usize) -> Vec<f64> {
        (0..data.n_rows())
            .map(|i| {
                let past = (data.history_mask(i) & low(t)) as usize;
                self.kappa[t][past | (1 << t)][i] - self.kappa[t][past][i]
            })
            .collect()
    }
}

/// One kappa step: regress each `R_{A_{t+1}}(a'_t)` table on the step-`t`
/// design and predict at the regime.
pub(crate) fn kappa_step(
    design: &SeqDesign,
    r_next: &[Vec<f64>],
    family: Family,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<Vec<Vec<f64>>, NuisanceError> {
    let mut out = Vec::with_capacity(r_next.len());
    for (mask, target) in r_next.iter().enumerate() {
        let (pred, fit) = design.fit(target, family)?;
        record_fit(&format!("{}(a'={mask:b})", design.name), &fit, diagnostics);
        out.push(pred);
    }
    Ok(out)
}

/// `R_{A_t}(a'_{<t}) = sum_a kappa_t(a'_{<t}, a) pi_t(a | a'_{<t})`.
pub(crate) fn assemble_r_a(kappa_t: &[Vec<f64>], pi1_t: &[Vec<f64>], t: usize) -> Vec<Vec<f64>> {
    (0..(1usize << t))
        .map(|mask| {
            let k0 = &kappa_t[mask];
            let k1 = &kappa_t[mask | (1 << t)];
            let p1 = &pi1_t[mask];
            (0..p1.len())
                .map(|i| k1[i] * p1[i] + k0[i] * (1.0 - p1[i]))
                .collect()
        })
        .collect()
}

pub fn sequential_r(
    set: &FittedNuisanceSet,
    tables: &NuisanceTables,
    data: &LongitudinalDataset,
) -> Result<RSequence, NuisanceError> {
    sequential_r_with(set, tables, data, family_of(set.spec().seq_family))
}

pub fn sequential_r_with(
    set: &FittedNuisanceSet,
    tables: &NuisanceTables,
    data: &LongitudinalDataset,
    family: Family,
) -> Result<RSequence, NuisanceError> {
    let horizon = set.horizon();
    if horizon > MAX_HORIZON {
        return Err(NuisanceError::HorizonTooLarge(horizon));
    }
    let n = horizon + 1;
    let mut kappa = vec![Vec::new(); n];
    let mut r_a = vec![Vec::new(); n + 1];
    r_a[n] = tables.q_y.clone();
    let mut regressions = vec![0; n];
    let mut diagnostics = Vec::new();
    for t in (0..n).rev() {
        let design = SeqDesign::new(set, data, SeqKind::R, t)?;
        let k = kappa_step(&design, &r_a[t + 1], family, &mut diagnostics)?;
        regressions[t] = k.len();
        r_a[t] = assemble_r_a(&k, &tables.pi1[t], t);
        kappa[t] = k;
    }
    Ok(RSequence { kappa, r_a, regressions, diagnostics })
}
