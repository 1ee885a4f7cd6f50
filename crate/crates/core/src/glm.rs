//! Weighted least squares and weighted logistic regression.
//!
//! Both families are solved through a Householder QR with column pivoting on
//! the square-root-weighted design. Columns whose pivoted diagonal falls below
//! `RANK_TOL` relative to the leading one are dropped and given coefficient 0.

use thiserror::Error;

use crate::formula::DesignMatrix;
use crate::numeric::{clamp_prob, expit, softplus};

/// Relative pivot tolerance for rank detection.
pub const RANK_TOL: f64 = 1e-10;

/// A positive-weight fitted probability this close to 0 or 1 flags separation.
pub const SEPARATION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GlmError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("all weights are zero")]
    ZeroWeights,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("negative weight at row {0}")]
    NegativeWeight(usize),
    #[error("binomial outcome at row {0} outside [0, 1]")]
    OutcomeOutOfRange(usize),
    #[error("design labels {found:?} do not match fitted labels {expected:?}")]
    LabelMismatch { expected: Vec<String>, found: Vec<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Binomial,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    /// Converged when `max |score| <= score_tol * max(1, sum w)`.
    pub score_tol: f64,
    pub max_iter: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        Self { score_tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedGlm {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub labels: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub max_score: f64,
    pub rank: usize,
    /// Design columns set to zero because of rank deficiency.
    pub dropped: Vec<usize>,
    /// Weighted log-likelihood after each accepted step (binomial only).
    pub loglik_trace: Vec<f64>,
    /// Some positive-weight fitted probability is numerically 0 or 1.
    pub separated: bool,
}

impl FittedGlm {
    pub fn is_rank_deficient(&self) -> bool {
        !self.dropped.is_empty()
    }

    pub fn linear_predictor(&self, x: &DesignMatrix, offset: Option<&[f64]>) -> Result<Vec<f64>, GlmError> {
        if x.labels() != self.labels.as_slice() {
            return Err(GlmError::LabelMismatch {
                expected: self.labels.clone(),
                found: x.labels().to_vec(),
            });
        }
        let mut eta = x.mul_vec(&self.coefficients);
        if let Some(off) = offset {
            check_len(off.len(), x.n_rows(), "offset")?;
            eta.iter_mut().zip(off).for_each(|(e, o)| *e += o);
        }
        Ok(eta)
    }
}

/// Predictions on the response scale; binomial predictions are clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn predict(m: &FittedGlm, x: &DesignMatrix, offset: Option<&[f64]>) -> Result<Vec<f64>, GlmError> {
    let mut eta = m.linear_predictor(x, offset)?;
    if m.family == Family::Binomial {
        eta.iter_mut().for_each(|e| *e = clamp_prob(expit(*e)));
    }
    Ok(eta)
}

fn check_len(found: usize, expected: usize, what: &str) -> Result<(), GlmError> {
    if found != expected {
        return Err(GlmError::DimensionMismatch(format!(
            "{what} has length {found}, design has {expected} rows"
        )));
    }
    Ok(())
}

fn check_inputs(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<f64, GlmError> {
    check_len(y.len(), x.n_rows(), "outcome")?;
    check_len(w.len(), x.n_rows(), "weights")?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("outcome"));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(GlmError::NegativeWeight(i));
    }
    let sw: f64 = w.iter().sum();
    if sw <= 0.0 {
        return Err(GlmError::ZeroWeights);
    }
    for j in 0..x.n_cols() {
        if x.column(j).iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("design entry"));
        }
    }
    Ok(sw)
}

/// Result of a weighted least-squares solve on a subset of columns.
struct Wls {
    /// Coefficients aligned with the requested columns; zero where dropped.
    coef: Vec<f64>,
    kept: Vec<bool>,
}

/// Solve `min sum (s_i z_i - s_i x_i^T b)^2` over the columns `cols` of `x`.
fn wls(x: &DesignMatrix, cols: &[usize], s: &[f64], z: &[f64], tol: f64) -> Wls {
    let n = x.n_rows();
    let p = cols.len();
    let mut a: Vec<Vec<f64>> = cols
        .iter()
        .map(|&j| x.column(j).iter().zip(s).map(|(v, si)| v * si).collect())
        .collect();
    let mut b: Vec<f64> = z.iter().zip(s).map(|(v, si)| v * si).collect();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut r00 = 0.0;
    let mut rank = p;
    for k in 0..p.min(n) {
        let (mut best, mut best_norm) = (k, -1.0);
        for (j, col) in a.iter().enumerate().skip(k) {
            let nrm: f64 = col[k..].iter().map(|v| v * v).sum();
            if nrm > best_norm {
                best = j;
                best_norm = nrm;
            }
        }
        a.swap(k, best);
        perm.swap(k, best);
        let alpha = best_norm.sqrt();
        if k == 0 {
            r00 = alpha;
        }
        if alpha == 0.0 || alpha <= tol * r00 {
            rank = k;
            break;
        }
        let (head, tail) = a.split_at_mut(k + 1);
        let col = &mut head[k];
        let x0 = col[k];
        let beta = if x0 >= 0.0 { -alpha } else { alpha };
        let v0 = x0 - beta;
        for v in &mut col[k + 1..] {
            *v /= v0;
        }
        let tau = (beta - x0) / beta;
        col[k] = beta;
        let apply = |target: &mut [f64]| {
            let mut dot = target[k];
            for (t, v) in target[k + 1..].iter().zip(&col[k + 1..]) {
                dot += t * v;
            }
            let f = dot * tau;
            target[k] -= f;
            for (t, v) in target[k + 1..].iter_mut().zip(&col[k + 1..]) {
                *t -= f * v;
            }
        };
        for other in tail.iter_mut() {
            apply(other);
        }
        apply(&mut b);
    }
    if rank > n {
        rank = n;
    }
    let mut sol = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut acc = b[i];
        for j in (i + 1)..rank {
            acc -= a[j][i] * sol[j];
        }
        sol[i] = acc / a[i][i];
    }
    let mut coef = vec![0.0; p];
    let mut kept = vec![false; p];
    for (i, &v) in sol.iter().enumerate() {
        coef[perm[i]] = v;
        kept[perm[i]] = true;
    }
    Wls { coef, kept }
}

/// Weighted least squares.
pub fn fit_ols(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Result<FittedGlm, GlmError> {
    check_inputs(x, y, w)?;
    let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let cols: Vec<usize> = (0..x.n_cols()).collect();
    let sol = wls(x, &cols, &s, y, RANK_TOL);
    let fitted = x.mul_vec(&sol.coef);
    let resid: Vec<f64> = y
        .iter()
        .zip(&fitted)
        .zip(w)
        .map(|((yi, fi), wi)| wi * (yi - fi))
        .collect();
    let score = x.tmul_vec(&resid);
    let dropped: Vec<usize> = (0..x.n_cols()).filter(|&j| !sol.kept[j]).collect();
    Ok(FittedGlm {
        family: Family::Gaussian,
        coefficients: sol.coef,
        labels: x.labels().to_vec(),
        converged: true,
        iterations: 1,
        max_score: max_abs(&score),
        rank: x.n_cols() - dropped.len(),
        dropped,
        loglik_trace: Vec::new(),
        separated: false,
    })
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Weighted binomial log-likelihood `sum w (y eta - log(1 + e^eta))`.
pub fn binomial_loglik(x: &DesignMatrix, y: &[f64], w: &[f64], offset: Option<&[f64]>, beta: &[f64]) -> f64 {
    let mut eta = x.mul_vec(beta);
    if let Some(o) = offset {
        eta.iter_mut().zip(o).for_each(|(e, oi)| *e += oi);
    }
    loglik_eta(&eta, y, w)
}

fn loglik_eta(eta: &[f64], y: &[f64], w: &[f64]) -> f64 {
    eta.iter()
        .zip(y)
        .zip(w)
        .filter(|(_, &wi)| wi > 0.0)
        .map(|((&e, &yi), &wi)| wi * (yi * e - softplus(e)))
        .sum()
}

/// Gradient of [`binomial_loglik`] in `beta`: `X^T W (y - expit(eta))`.
pub fn binomial_score(x: &DesignMatrix, y: &[f64], w: &[f64], offset: Option<&[f64]>, beta: &[f64]) -> Vec<f64> {
    let mut eta = x.mul_vec(beta);
    if let Some(o) = offset {
        eta.iter_mut().zip(o).for_each(|(e, oi)| *e += oi);
    }
    let r: Vec<f64> = eta
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| wi * (yi - expit(e)))
        .collect();
    x.tmul_vec(&r)
}

pub fn fit_logistic(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
) -> Result<FittedGlm, GlmError> {
    fit_logistic_with(x, y, w, offset, IrlsOptions::default())
}

/// IRLS for the weighted binomial likelihood with an optional offset.
/// Outcomes may be fractional.
pub fn fit_logistic_with(
    x: &DesignMatrix,
    y: &[f64],
    w: &[f64],
    offset: Option<&[f64]>,
    opts: IrlsOptions,
) -> Result<FittedGlm, GlmError> {
    let sum_w = check_inputs(x, y, w)?;
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(GlmError::OutcomeOutOfRange(i));
    }
    let n = x.n_rows();
    let zero = vec![0.0; n];
    let off: &[f64] = match offset {
        Some(o) => {
            check_len(o.len(), n, "offset")?;
            if o.iter().any(|v| !v.is_finite()) {
                return Err(GlmError::NonFinite("offset"));
            }
            o
        }
        None => &zero,
    };

    let all: Vec<usize> = (0..x.n_cols()).collect();
    let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    let structural = wls(x, &all, &s, &zero, RANK_TOL);
    let cols: Vec<usize> = all.iter().copied().filter(|&j| structural.kept[j]).collect();
    let dropped: Vec<usize> = all.iter().copied().filter(|&j| !structural.kept[j]).collect();

    let tol = opts.score_tol * sum_w.max(1.0);
    let mut beta = vec![0.0; x.n_cols()];
    let mut eta = off.to_vec();
    let mut ll = loglik_eta(&eta, y, w);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_score;
    let mut sw = vec![0.0; n];
    let mut z = vec![0.0; n];
    let score = |eta: &[f64]| {
        let resid: Vec<f64> = (0..n).map(|i| w[i] * (y[i] - expit(eta[i]))).collect();
        max_abs(&x.tmul_vec(&resid))
    };
    loop {
        max_score = score(&eta);
        if max_score <= tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        for i in 0..n {
            let mu = clamp_prob(expit(eta[i]));
            let v = mu * (1.0 - mu);
            sw[i] = (w[i] * v).sqrt();
            z[i] = eta[i] - off[i] + (y[i] - mu) / v;
        }
        let sol = wls(x, &cols, &sw, &z, 0.0);
        let mut dir = vec![0.0; x.n_cols()];
        for (k, &j) in cols.iter().enumerate() {
            dir[j] = sol.coef[k] - beta[j];
        }
        let xd = x.mul_vec(&dir);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = eta.iter().zip(&xd).map(|(e, d)| e + step * d).collect();
            let ll_new = loglik_eta(&cand, y, w);
            if ll_new.is_finite() && ll_new > ll {
                accepted = true;
                beta.iter_mut().zip(&dir).for_each(|(b, d)| *b += step * d);
                eta = cand;
                ll = ll_new;
                if trace.last().is_some_and(|&last| ll > last) {
                    trace.push(ll);
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Likelihood is flat to rounding; fall back to the full step if it lowers the score.
            let cand: Vec<f64> = eta.iter().zip(&xd).map(|(e, d)| e + d).collect();
            if cand.iter().all(|v| v.is_finite()) && score(&cand) < max_score {
                beta.iter_mut().zip(&dir).for_each(|(b, d)| *b += d);
                ll = loglik_eta(&cand, y, w);
                eta = cand;
                if trace.last().is_some_and(|&last| ll > last) {
                    trace.push(ll);
                }
                continue;
            }
            max_score = score(&eta);
            converged = max_score <= tol;
            break;
        }
    }
    // One extra full Newton step once converged, kept only if it shrinks the score.
    if converged && max_score > 0.0 {
        for i in 0..n {
            let mu = clamp_prob(expit(eta[i]));
            let v = mu * (1.0 - mu);
            sw[i] = (w[i] * v).sqrt();
            z[i] = eta[i] - off[i] + (y[i] - mu) / v;
        }
        let sol = wls(x, &cols, &sw, &z, 0.0);
        let mut cand_beta = beta.clone();
        for (k, &j) in cols.iter().enumerate() {
            cand_beta[j] = sol.coef[k];
        }
        let dir: Vec<f64> = cand_beta.iter().zip(&beta).map(|(a, b)| a - b).collect();
        let cand: Vec<f64> = eta.iter().zip(x.mul_vec(&dir)).map(|(e, d)| e + d).collect();
        let s_new = score(&cand);
        if s_new < max_score && cand.iter().all(|v| v.is_finite()) {
            let ll_new = loglik_eta(&cand, y, w);
            beta = cand_beta;
            eta = cand;
            max_score = s_new;
            if trace.last().is_some_and(|&last| ll_new > last) {
                trace.push(ll_new);
            }
        }
    }
    let separated = (0..n).any(|i| {
        let mu = expit(eta[i]);
        w[i] > 0.0 && mu.min(1.0 - mu) < SEPARATION_EPS
    });
    Ok(FittedGlm {
        family: Family::Binomial,
        coefficients: beta,
        labels: x.labels().to_vec(),
        converged,
        iterations,
        max_score,
        rank: cols.len(),
        dropped,
        loglik_trace: trace,
        separated,
    })
}

/// One-parameter fluctuation fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluctuation {
    pub epsilon: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Weighted score at `epsilon`.
    pub score: f64,
}

/// Maximise `sum w [y log mu + (1 - y) log(1 - mu)]` with
/// `mu = expit(offset + epsilon * h)`, where `h` is `clever` or 1.
pub fn fit_fluctuation(
    y: &[f64],
    offset: &[f64],
    w: &[f64],
    clever: Option<&[f64]>,
) -> Result<Fluctuation, GlmError> {
    let n = y.len();
    check_len(offset.len(), n, "offset")?;
    check_len(w.len(), n, "weights")?;
    if let Some(h) = clever {
        check_len(h.len(), n, "clever covariate")?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::NonFinite("clever covariate"));
        }
    }
    if offset.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite("offset"));
    }
    if let Some(i) = w.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(GlmError::NegativeWeight(i));
    }
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(GlmError::OutcomeOutOfRange(i));
    }
    let h = |i: usize| clever.map_or(1.0, |c| c[i]);
    let info_scale: f64 = (0..n).map(|i| w[i] * h(i) * h(i)).sum();
    if info_scale == 0.0 {
        return Ok(Fluctuation { epsilon: 0.0, converged: true, iterations: 0, score: 0.0 });
    }
    let scale: f64 = (0..n).map(|i| w[i] * h(i).abs()).sum::<f64>().max(1.0);
    let tol = 1e-12 * scale;
    let ll = |eps: f64| -> f64 {
        (0..n)
            .filter(|&i| w[i] > 0.0)
            .map(|i| {
                let e = offset[i] + eps * h(i);
                w[i] * (y[i] * e - softplus(e))
            })
            .sum()
    };
    let score_info = |eps: f64| -> (f64, f64) {
        let mut s = 0.0;
        let mut info = 0.0;
        for i in 0..n {
            if w[i] == 0.0 {
                continue;
            }
            let hi = h(i);
            let mu = expit(offset[i] + eps * hi);
            s += w[i] * hi * (y[i] - mu);
            info += w[i] * hi * hi * mu * (1.0 - mu);
        }
        (s, info)
    };
    let mut eps = 0.0;
    let mut cur = ll(eps);
    let mut iterations = 0;
    loop {
        let (s, info) = score_info(eps);
        if s.abs() <= tol {
            return Ok(Fluctuation { epsilon: eps, converged: true, iterations, score: s });
        }
        if iterations >= 100 || info <= 0.0 {
            return Ok(Fluctuation { epsilon: eps, converged: false, iterations, score: s });
        }
        iterations += 1;
        let d = s / info;
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = eps + step * d;
            let val = ll(cand);
            if val.is_finite() && val >= cur {
                moved = cand != eps;
                eps = cand;
                cur = val;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            let (s, _) = score_info(eps);
            return Ok(Fluctuation { epsilon: eps, converged: s.abs() <= tol, iterations, score: s });
        }
    }
}
