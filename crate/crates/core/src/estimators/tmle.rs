//! Single-pass targeting of the outcome regression, the propensities and
//! the `Q_{M_t}` sequence.

use super::{weighted_mean, EstimateError, EstimateResult, Estimation, EstimatorId};
use crate::diagnostics::Diagnostic;
use crate::glm::{fit_fluctuation, Family};
use crate::inference::{compute_eif, EifInputs};
use crate::numeric::{clamp_prob, expit, logit};
use crate::nuisance::{
    assemble_r_a, family_of, kappa_step, low, record_fit, SeqDesign, SeqFamily, SeqKind,
};

/// Fit a fluctuation and record it. Returns `epsilon`.
pub(crate) fn fluctuate(
    step: String,
    y: &[f64],
    offset: &[f64],
    w: &[f64],
    clever: Option<&[f64]>,
    diagnostics: &mut Vec<Diagnostic>,
) -> Result<f64, EstimateError> {
    if w.iter().all(|&v| v == 0.0) {
        diagnostics.push(Diagnostic::Positivity {
            message: format!("{step}: all fluctuation weights are zero, step skipped"),
        });
        return Ok(0.0);
    }
    let fit = fit_fluctuation(y, offset, w, clever)
        .map_err(|source| EstimateError::Fluctuation { step: step.clone(), source })?;
    diagnostics.push(Diagnostic::Fluctuation {
        step,
        epsilon: fit.epsilon,
        converged: fit.converged,
    });
    Ok(fit.epsilon)
}

#[inline]
pub(crate) fn shift(p: f64, delta: f64) -> f64 {
    clamp_prob(expit(logit(p) + delta))
}

pub(super) fn run(ctx: &Estimation<'_>) -> Result<EstimateResult, EstimateError> {
    let data = ctx.data;
    let set = &ctx.set;
    let horizon = set.horizon();
    let nt = horizon + 1;
    let n = data.n_rows();
    let weights = data.weights();
    let mut diagnostics = ctx.base_diagnostics();
    let mut tables = ctx.tables.clone();
    let obs: Vec<u32> = (0..n).map(|i| data.history_mask(i)).collect();
    let prior = |h: &[f64]| -> Vec<f64> { h.iter().zip(&weights).map(|(a, b)| a * b).collect() };

    // Outcome regression.
    let q_obs = tables.q_y_observed(data);
    let offset: Vec<f64> = q_obs.iter().map(|&p| logit(p)).collect();
    let eps_y = fluctuate(
        "Q_Y".into(),
        data.outcome(),
        &offset,
        &prior(&tables.h[horizon]),
        None,
        &mut diagnostics,
    )?;
    for table in tables.q_y.iter_mut() {
        for p in table.iter_mut() {
            *p = shift(*p, eps_y);
        }
    }

    // Kappa regressions and propensity targeting, t = T..0.
    let r_family = family_of(set.spec().seq_family);
    let mut kappa = vec![Vec::new(); nt];
    let mut r_a = vec![Vec::new(); nt + 1];
    r_a[nt] = tables.q_y.clone();
    for t in (0..nt).rev() {
        let design = SeqDesign::new(set, data, SeqKind::R, t)?;
        let k = kappa_step(&design, &r_a[t + 1], r_family, &mut diagnostics)?;
        let diff = |mask: usize, i: usize| k[mask | (1 << t)][i] - k[mask][i];
        let past: Vec<usize> = obs.iter().map(|&m| (m & low(t)) as usize).collect();
        let clever: Vec<f64> = (0..n).map(|i| diff(past[i], i)).collect();
        let offset: Vec<f64> = (0..n).map(|i| logit(tables.pi1[t][past[i]][i])).collect();
        let h_prev = if t == 0 { vec![1.0; n] } else { tables.h[t - 1].clone() };
        let eps = fluctuate(
            format!("pi[{t}]"),
            data.treatment(t),
            &offset,
            &prior(&h_prev),
            Some(&clever),
            &mut diagnostics,
        )?;
        for (mask, table) in tables.pi1[t].iter_mut().enumerate() {
            for (i, p) in table.iter_mut().enumerate() {
                *p = shift(*p, eps * diff(mask, i));
            }
        }
        r_a[t] = assemble_r_a(&k, &tables.pi1[t], t);
        kappa[t] = k;
    }

    // Targeted Q sequence.
    if set.spec().seq_family == SeqFamily::Linear {
        diagnostics.push(Diagnostic::note(
            "sequential Q regressions refit as logistic for targeting",
        ));
    }
    let w_star = tables.w_all(data, &mut diagnostics);
    let mut q = vec![Vec::new(); nt + 1];
    q[nt] = (0..n).map(|i| tables.q_terminal(i)).collect();
    for t in (0..nt).rev() {
        let design = SeqDesign::new(set, data, SeqKind::Q, t)?;
        let (pred, fit) = design.fit(&q[t + 1], Family::Binomial)?;
        record_fit(&design.name, &fit, &mut diagnostics);
        let offset: Vec<f64> = pred.iter().map(|&p| logit(p)).collect();
        let eps = fluctuate(
            format!("Q_M[{t}]"),
            &q[t + 1],
            &offset,
            &prior(&w_star[t]),
            None,
            &mut diagnostics,
        )?;
        q[t] = pred.iter().map(|&p| shift(p, eps)).collect();
    }
    let psi = weighted_mean(&q[0], &weights);

    let past = |t: usize, i: usize| (obs[i] & low(t)) as usize;
    let inputs = EifInputs {
        horizon,
        weights: weights.clone(),
        y: data.outcome().to_vec(),
        q_y: tables.q_y_observed(data),
        h: tables.h.clone(),
        w: w_star,
        q_m: q,
        r_m: (0..nt)
            .map(|t| (0..n).map(|i| kappa[t][(obs[i] & low(t + 1)) as usize][i]).collect())
            .collect(),
        r_a: (0..nt).map(|t| (0..n).map(|i| r_a[t][past(t, i)][i]).collect()).collect(),
        kappa_diff: (0..nt)
            .map(|t| {
                (0..n)
                    .map(|i| kappa[t][past(t, i) | (1 << t)][i] - kappa[t][past(t, i)][i])
                    .collect()
            })
            .collect(),
        pi1: (0..nt).map(|t| tables.pi1_observed(data, t)).collect(),
        a: (0..nt).map(|t| data.treatment(t).to_vec()).collect(),
    };
    let eif = compute_eif(&inputs, psi)?;
    ctx.with_inference(EstimatorId::Tmle, psi, eif, diagnostics)
}
