//! Efficient influence function assembly and Wald intervals.
//!
//! For regime `a` the uncentered influence function of a row is
//!
//! ```text
//! D_Y + sum_t D_{M_t} + sum_t D_{A_t} + Q_{M_0}
//! D_Y     = H_T (Y - Q_Y)
//! D_{M_t} = W_t (Q_{M_{t+1}} - Q_{M_t})
//! D_{A_t} = H_{t-1} (R_{M_t} - R_{A_t})
//! ```
//!
//! accumulated left to right in exactly that order.

use thiserror::Error;

use crate::data::LongitudinalDataset;
use crate::nuisance::{NuisanceTables, QSequence, RSequence};

/// Row-wise tolerance for the two forms of `D_{A_t}` (relative to
/// `max(1, |value|)`).
pub const COROLLARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("influence-function input {0} is missing or misaligned")]
    MissingCache(String),
    #[error("at least two rows are needed for a variance estimate")]
    TooFewRows,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("D_A[{t}] forms disagree at row {row} by {diff:e}")]
    CorollaryMismatch { t: usize, row: usize, diff: f64 },
}

/// Per-row nuisance evaluations entering the influence function.
#[derive(Debug, Clone, PartialEq)]
pub struct EifInputs {
    pub horizon: usize,
    pub weights: Vec<f64>,
    pub y: Vec<f64>,
    /// `Q_Y` at the observed history.
    pub q_y: Vec<f64>,
    /// `H_t`, `t = 0..=T`.
    pub h: Vec<Vec<f64>>,
    /// `W_t`, `t = 0..=T`.
    pub w: Vec<Vec<f64>>,
    /// `Q_{M_t}`, `t = 0..=T+1`.
    pub q_m: Vec<Vec<f64>>,
    /// `R_{M_t}` at the observed history.
    pub r_m: Vec<Vec<f64>>,
    /// `R_{A_t}` at the observed history.
    pub r_a: Vec<Vec<f64>>,
    /// `kappa_t(A_{<t}, 1) - kappa_t(A_{<t}, 0)`.
    pub kappa_diff: Vec<Vec<f64>>,
    /// `pi_t(1 | observed past)`, consistent with the one used in `r_a`.
    pub pi1: Vec<Vec<f64>>,
    /// Observed `A_t`.
    pub a: Vec<Vec<f64>>,
}

impl EifInputs {
    pub fn zeros(horizon: usize, n_rows: usize) -> Self {
        let per_t = |k: usize| vec![vec![0.0; n_rows]; k];
        Self {
            horizon,
            weights: vec![1.0; n_rows],
            y: vec![0.0; n_rows],
            q_y: vec![0.0; n_rows],
            h: per_t(horizon + 1),
            w: per_t(horizon + 1),
            q_m: per_t(horizon + 2),
            r_m: per_t(horizon + 1),
            r_a: per_t(horizon + 1),
            kappa_diff: per_t(horizon + 1),
            pi1: per_t(horizon + 1),
            a: per_t(horizon + 1),
        }
    }

    /// Collect inputs from fitted tables and both recursions.
    pub fn from_fits(
        data: &LongitudinalDataset,
        tables: &NuisanceTables,
        w: Vec<Vec<f64>>,
        q: &QSequence,
        r: &RSequence,
    ) -> Self {
        let n = tables.horizon + 1;
        Self {
            horizon: tables.horizon,
            weights: data.weights(),
            y: data.outcome().to_vec(),
            q_y: tables.q_y_observed(data),
            h: tables.h.clone(),
            w,
            q_m: q.q.clone(),
            r_m: (0..n).map(|t| r.r_m_observed(data, t)).collect(),
            r_a: (0..n).map(|t| r.r_a_observed(data, t)).collect(),
            kappa_diff: (0..n).map(|t| r.kappa_diff_observed(data, t)).collect(),
            pi1: (0..n).map(|t| tables.pi1_observed(data, t)).collect(),
            a: (0..n).map(|t| data.treatment(t).to_vec()).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    fn check(&self) -> Result<(), InferenceError> {
        let n = self.n_rows();
        let nt = self.horizon + 1;
        let rows_ok = |name: &str, v: &[f64]| {
            if v.len() == n {
                Ok(())
            } else {
                Err(InferenceError::MissingCache(name.to_string()))
            }
        };
        rows_ok("weights", &self.weights)?;
        rows_ok("q_y", &self.q_y)?;
        for (name, v, k) in [
            ("h", &self.h, nt),
            ("w", &self.w, nt),
            ("q_m", &self.q_m, nt + 1),
            ("r_m", &self.r_m, nt),
            ("r_a", &self.r_a, nt),
            ("kappa_diff", &self.kappa_diff, nt),
            ("pi1", &self.pi1, nt),
            ("a", &self.a, nt),
        ] {
            if v.len() != k {
                return Err(InferenceError::MissingCache(name.to_string()));
            }
            for col in v {
                rows_ok(name, col)?;
            }
        }
        Ok(())
    }
}

/// Influence-function components per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EifBreakdown {
    pub d_y: Vec<f64>,
    pub d_m: Vec<Vec<f64>>,
    pub d_a: Vec<Vec<f64>>,
    /// `H_{t-1} (kappa_t(1) - kappa_t(0)) (A_t - pi_t(1))`.
    pub d_a_corollary: Vec<Vec<f64>>,
    pub plug_in: Vec<f64>,
    pub psi_reference: f64,
    /// Centered total per row.
    pub total: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EifBreakdown {
    /// `D_Y + sum D_M + sum D_A + Q_{M_0}` for one row, in the documented order.
    pub fn uncentered_row(&self, i: usize) -> f64 {
        let mut s = self.d_y[i];
        for d in &self.d_m {
            s += d[i];
        }
        for d in &self.d_a {
            s += d[i];
        }
        s + self.plug_in[i]
    }

    /// Recompute the centered total at a new reference value.
    pub fn recenter(&mut self, psi_reference: f64) {
        self.psi_reference = psi_reference;
        self.total = (0..self.d_y.len()).map(|i| self.uncentered_row(i) - psi_reference).collect();
    }

    /// Weighted mean of the uncentered influence function (the one-step value).
    pub fn one_step(&self) -> f64 {
        let u: Vec<f64> = (0..self.d_y.len()).map(|i| self.uncentered_row(i)).collect();
        weighted_mean(&u, &self.weights)
    }

    pub fn plug_in_mean(&self) -> f64 {
        weighted_mean(&self.plug_in, &self.weights)
    }

    /// Weighted mean of the centered total.
    pub fn mean(&self) -> f64 {
        weighted_mean(&self.total, &self.weights)
    }
}

fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let num: Vec<f64> = x.iter().zip(w).map(|(a, b)| a * b).collect();
    crate::numeric::pairwise_sum(&num) / crate::numeric::pairwise_sum(w)
}

/// Assemble the influence function at `psi_reference`, checking that both
/// forms of `D_{A_t}` agree.
pub fn compute_eif(inputs: &EifInputs, psi_reference: f64) -> Result<EifBreakdown, InferenceError> {
    inputs.check()?;
    let n = inputs.n_rows();
    let nt = inputs.horizon + 1;
    let ones = vec![1.0; n];
    let d_y: Vec<f64> = (0..n)
        .map(|i| inputs.h[nt - 1][i] * (inputs.y[i] - inputs.q_y[i]))
        .collect();
    let d_m: Vec<Vec<f64>> = (0..nt)
        .map(|t| {
            (0..n)
                .map(|i| inputs.w[t][i] * (inputs.q_m[t + 1][i] - inputs.q_m[t][i]))
                .collect()
        })
        .collect();
    let mut d_a = Vec::with_capacity(nt);
    let mut d_a_corollary = Vec::with_capacity(nt);
    for t in 0..nt {
        let h_prev = if t == 0 { &ones } else { &inputs.h[t - 1] };
        let direct: Vec<f64> = (0..n)
            .map(|i| h_prev[i] * (inputs.r_m[t][i] - inputs.r_a[t][i]))
            .collect();
        let corollary: Vec<f64> = (0..n)
            .map(|i| h_prev[i] * inputs.kappa_diff[t][i] * (inputs.a[t][i] - inputs.pi1[t][i]))
            .collect();
        for i in 0..n {
            let diff = (direct[i] - corollary[i]).abs();
            if diff > COROLLARY_TOL * direct[i].abs().max(1.0) {
                return Err(InferenceError::CorollaryMismatch { t, row: i, diff });
            }
        }
        d_a.push(direct);
        d_a_corollary.push(corollary);
    }
    let mut out = EifBreakdown {
        d_y,
        d_m,
        d_a,
        d_a_corollary,
        plug_in: inputs.q_m[0].clone(),
        psi_reference,
        total: Vec::new(),
        weights: inputs.weights.clone(),
    };
    out.recenter(psi_reference);
    Ok(out)
}

/// Wald interval `psi +/- z sigma / sqrt(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaldInterval {
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub z: f64,
    /// True when the variance is zero and the interval is a point.
    pub degenerate: bool,
}

/// `sigma^2` is the sample variance of `eif` (divisor `n - 1`); with row
/// weights it is the weighted variance scaled by `n / (n - 1)`.
pub fn wald_interval(
    eif: &[f64],
    weights: Option<&[f64]>,
    psi_hat: f64,
    alpha: f64,
) -> Result<WaldInterval, InferenceError> {
    let n = eif.len();
    if n < 2 {
        return Err(InferenceError::TooFewRows);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::InvalidAlpha(alpha));
    }
    let ones;
    let w = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(InferenceError::MissingCache("weights".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; n];
            &ones
        }
    };
    let mean = weighted_mean(eif, w);
    let mut support = eif.iter().zip(w).filter(|(_, wi)| **wi > 0.0).map(|(x, _)| *x);
    let first = support.next();
    let constant = support.all(|x| Some(x) == first);
    let sq: Vec<f64> = eif.iter().zip(w).map(|(x, wi)| wi * (x - mean) * (x - mean)).collect();
    let nf = n as f64;
    let var = if constant {
        0.0
    } else {
        crate::numeric::pairwise_sum(&sq) / crate::numeric::pairwise_sum(w) * nf / (nf - 1.0)
    };
    let se = (var / nf).sqrt();
    let z = normal_quantile(1.0 - alpha / 2.0);
    Ok(WaldInterval { se, lo: psi_hat - z * se, hi: psi_hat + z * se, z, degenerate: se == 0.0 })
}

/// Standard normal quantile by Acklam's rational approximation
/// (relative error below 1.2e-9).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    const P_LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}
