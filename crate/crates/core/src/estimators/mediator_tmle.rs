//! Iterative targeting that fluctuates the binary mediator models instead of
//! the `Q_{M_t}` regressions.
//!
//! Every function of the mediator history is held as a table over mediator
//! masks (bit `k` holds `m_k`) per row, so the sums over `m_t` are exact.

use super::tmle::{fluctuate, shift};
use super::{weighted_mean, EstimateError, EstimateResult, Estimation, EstimatorId};
use crate::data::LongitudinalDataset;
use crate::diagnostics::Diagnostic;
use crate::inference::{compute_eif, EifInputs};
use crate::numeric::logit;
use crate::nuisance::{low, FittedNuisanceSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediatorTmleOptions {
    pub max_iters: usize,
    /// Stop once every `|epsilon|` of an iteration is below this.
    pub tol: f64,
}

impl Default for MediatorTmleOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-8 }
    }
}

/// Per-row table indexed `[treatment mask][mediator mask][row]`.
type Table = Vec<Vec<Vec<f64>>>;
type RowEval<'a> = &'a dyn Fn(&[(usize, f64)]) -> Vec<f64>;

struct State {
    horizon: usize,
    regime: u32,
    /// `Q_Y(1 | L, a', m)`.
    qy: Table,
    /// `pi_t(1 | L, a'_{<t}, m_{<t})`.
    pi1: Vec<Table>,
    /// `g_t(1 | L, a'_{<=t}, m_{<t})`.
    g1: Vec<Table>,
}

fn overrides(set: &FittedNuisanceSet, a: u32, a_len: usize, m: u32, m_len: usize) -> Vec<(usize, f64)> {
    let a_cols = set.treatment_cols();
    let m_cols = set.mediator_cols();
    (0..a_len)
        .map(|k| (a_cols[k], ((a >> k) & 1) as f64))
        .chain((0..m_len).map(|k| (m_cols[k], ((m >> k) & 1) as f64)))
        .collect()
}

#[inline]
fn at(p1: f64, bit: u32) -> f64 {
    if bit == 1 {
        p1
    } else {
        1.0 - p1
    }
}

impl State {
    fn initial(set: &FittedNuisanceSet, data: &LongitudinalDataset) -> Self {
        let horizon = set.horizon();
        let nt = horizon + 1;
        let g = set.g.as_ref().expect("checked by caller");
        let table = |a_len: usize, m_len: usize, f: RowEval| -> Table {
            (0..(1u32 << a_len))
                .map(|a| (0..(1u32 << m_len)).map(|m| f(&overrides(set, a, a_len, m, m_len))).collect())
                .collect()
        };
        Self {
            horizon,
            regime: set.regime().mask(),
            qy: table(nt, nt, &|ov| set.qy.prob1(data, ov)),
            pi1: (0..nt).map(|t| table(t, t, &|ov| set.pi[t].prob1(data, ov))).collect(),
            g1: (0..nt).map(|t| table(t + 1, t, &|ov| g[t].prob1(data, ov))).collect(),
        }
    }

    fn n_rows(&self) -> usize {
        self.qy[0][0].len()
    }

    fn pi(&self, t: usize, bit: u32, a: u32, m: u32, i: usize) -> f64 {
        at(self.pi1[t][a as usize][m as usize][i], bit)
    }

    /// `g_t(bit | L, a_{<=t}, m_{<t})`.
    fn g(&self, t: usize, bit: u32, a: u32, m: u32, i: usize) -> f64 {
        at(self.g1[t][a as usize][m as usize][i], bit)
    }

    /// `Q_{M_{T+1}}[m]`: the regime-free sum over treatment histories.
    fn q_terminal(&self) -> Vec<Vec<f64>> {
        let nt = self.horizon + 1;
        (0..(1u32 << nt))
            .map(|m| {
                (0..self.n_rows())
                    .map(|i| {
                        let mut s = 0.0;
                        for a in 0..(1u32 << nt) {
                            let mut p = 1.0;
                            for t in 0..nt {
                                p *= self.pi(t, (a >> t) & 1, a & low(t), m & low(t), i);
                            }
                            s += self.qy[a as usize][m as usize][i] * p;
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }

    /// `Q_{M_t}[m_{<t}] = sum_b Q_{M_{t+1}}[m_{<t}, b] g_t(b | regime, m_{<t})`.
    fn q_step(&self, t: usize, next: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let ra = self.regime & low(t + 1);
        (0..(1u32 << t))
            .map(|m| {
                (0..self.n_rows())
                    .map(|i| {
                        let p1 = self.g(t, 1, ra, m, i);
                        next[(m | (1 << t)) as usize][i] * p1 + next[m as usize][i] * (1.0 - p1)
                    })
                    .collect()
            })
            .collect()
    }

    /// `R_{M_t}[a'_{<=t}][m_{<t}] = sum_b R_{A_{t+1}}[a'][m_{<t}, b] g_t(b | regime, m_{<t})`.
    fn r_m(&self, t: usize, r_next: &Table) -> Table {
        let ra = self.regime & low(t + 1);
        (0..(1u32 << (t + 1)))
            .map(|a| {
                (0..(1u32 << t))
                    .map(|m| {
                        (0..self.n_rows())
                            .map(|i| {
                                let p1 = self.g(t, 1, ra, m, i);
                                let r = &r_next[a as usize];
                                r[(m | (1 << t)) as usize][i] * p1 + r[m as usize][i] * (1.0 - p1)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// `R_{A_t}[a'_{<t}][m_{<t}] = sum_b pi_t(b | a', m) R_{M_t}[a', b][m]`.
    fn r_a(&self, t: usize, r_m: &Table) -> Table {
        (0..(1u32 << t))
            .map(|a| {
                (0..(1u32 << t))
                    .map(|m| {
                        (0..self.n_rows())
                            .map(|i| {
                                let p1 = self.pi(t, 1, a, m, i);
                                r_m[(a | (1 << t)) as usize][m as usize][i] * p1
                                    + r_m[a as usize][m as usize][i] * (1.0 - p1)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// Observed `H_0..H_T` with the optional `[1/b, b]` clamp.
    fn h(&self, obs_a: &[u32], obs_m: &[u32], truncate: Option<f64>) -> Vec<Vec<f64>> {
        let n = self.n_rows();
        let mut acc = vec![1.0; n];
        let mut out = Vec::with_capacity(self.horizon + 1);
        for t in 0..=self.horizon {
            for i in 0..n {
                let mt = (obs_m[i] >> t) & 1;
                let mp = obs_m[i] & low(t);
                let num = self.g(t, mt, self.regime & low(t + 1), mp, i);
                let den = self.g(t, mt, obs_a[i] & low(t + 1), mp, i);
                acc[i] *= num / den;
            }
            out.push(match truncate {
                Some(b) => acc.iter().map(|v| v.clamp(1.0 / b, b)).collect(),
                None => acc.clone(),
            });
        }
        out
    }

    /// Observed `W_t` with the optional cap `b`.
    fn w(&self, t: usize, obs_a: &[u32], obs_m: &[u32], truncate: Option<f64>) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| {
                if obs_a[i] & low(t + 1) != self.regime & low(t + 1) {
                    return 0.0;
                }
                let mut den = 1.0;
                for k in 0..=t {
                    den *= self.pi(k, (self.regime >> k) & 1, self.regime & low(k), obs_m[i] & low(k), i);
                }
                let v = 1.0 / den;
                truncate.map_or(v, |b| v.min(b))
            })
            .collect()
    }
}

/// Observed-history lookup into a table.
fn pick(table: &Table, a: &[u32], a_bits: usize, m: &[u32], m_bits: usize) -> Vec<f64> {
    (0..a.len())
        .map(|i| table[(a[i] & low(a_bits)) as usize][(m[i] & low(m_bits)) as usize][i])
        .collect()
}

pub(super) fn run(ctx: &Estimation<'_>, options: MediatorTmleOptions) -> Result<EstimateResult, EstimateError> {
    let data = ctx.data;
    let set = &ctx.set;
    if set.g.is_none() || set.mediator_cols().len() != set.horizon() + 1 {
        return Err(EstimateError::MissingComponent {
            estimator: EstimatorId::TmleMed,
            what: "g formulas over single binary mediators".into(),
        });
    }
    let horizon = set.horizon();
    let nt = horizon + 1;
    let n = data.n_rows();
    let truncate = set.spec().truncate;
    let weights = data.weights();
    let prior = |h: &[f64]| -> Vec<f64> { h.iter().zip(&weights).map(|(a, b)| a * b).collect() };
    let obs_a: Vec<u32> = (0..n).map(|i| data.history_mask(i)).collect();
    let obs_m: Vec<u32> = (0..n)
        .map(|i| {
            set.mediator_cols()
                .iter()
                .enumerate()
                .map(|(t, &c)| ((data.column(c)[i] == 1.0) as u32) << t)
                .sum()
        })
        .collect();
    let mut diagnostics = set.diagnostics().to_vec();
    let mut s = State::initial(set, data);
    let mut converged = false;
    let mut last_max = f64::NAN;
    let mut iterations = 0;
    let mut last_steps = Vec::new();

    for _ in 0..options.max_iters {
        iterations += 1;
        let mut max_eps: f64 = 0.0;
        let mut steps = Vec::new();
        let h = s.h(&obs_a, &obs_m, truncate);

        let offset: Vec<f64> = pick(&s.qy, &obs_a, nt, &obs_m, nt).iter().map(|&p| logit(p)).collect();
        let eps = fluctuate("Q_Y".into(), data.outcome(), &offset, &prior(&h[horizon]), None, &mut steps)?;
        max_eps = max_eps.max(eps.abs());
        for by_m in s.qy.iter_mut() {
            for row in by_m.iter_mut() {
                row.iter_mut().for_each(|p| *p = shift(*p, eps));
            }
        }

        let mut r_next = s.qy.clone();
        for t in (0..nt).rev() {
            let r_m = s.r_m(t, &r_next);
            let diff = |a: usize, m: usize, i: usize| r_m[a | (1 << t)][m][i] - r_m[a][m][i];
            let clever: Vec<f64> = (0..n)
                .map(|i| diff((obs_a[i] & low(t)) as usize, (obs_m[i] & low(t)) as usize, i))
                .collect();
            let offset: Vec<f64> = pick(&s.pi1[t], &obs_a, t, &obs_m, t).iter().map(|&p| logit(p)).collect();
            let h_prev = if t == 0 { vec![1.0; n] } else { h[t - 1].clone() };
            let eps = fluctuate(
                format!("pi[{t}]"),
                data.treatment(t),
                &offset,
                &prior(&h_prev),
                Some(&clever),
                &mut steps,
            )?;
            max_eps = max_eps.max(eps.abs());
            for (a, by_m) in s.pi1[t].iter_mut().enumerate() {
                for (m, row) in by_m.iter_mut().enumerate() {
                    for (i, p) in row.iter_mut().enumerate() {
                        *p = shift(*p, eps * diff(a, m, i));
                    }
                }
            }
            r_next = s.r_a(t, &r_m);
        }

        let mut q_next = s.q_terminal();
        for t in (0..nt).rev() {
            let delta: Vec<Vec<f64>> = (0..(1usize << t))
                .map(|m| (0..n).map(|i| q_next[m | (1 << t)][i] - q_next[m][i]).collect())
                .collect();
            let clever: Vec<f64> = (0..n).map(|i| delta[(obs_m[i] & low(t)) as usize][i]).collect();
            let offset: Vec<f64> = pick(&s.g1[t], &obs_a, t + 1, &obs_m, t).iter().map(|&p| logit(p)).collect();
            let w_t = s.w(t, &obs_a, &obs_m, truncate);
            let m_t = data.column(set.mediator_cols()[t]);
            let eps = fluctuate(format!("g[{t}]"), m_t, &offset, &prior(&w_t), Some(&clever), &mut steps)?;
            max_eps = max_eps.max(eps.abs());
            for by_m in s.g1[t].iter_mut() {
                for (m, row) in by_m.iter_mut().enumerate() {
                    for (i, p) in row.iter_mut().enumerate() {
                        *p = shift(*p, eps * delta[m][i]);
                    }
                }
            }
            q_next = s.q_step(t, &q_next);
        }

        last_max = max_eps;
        last_steps = steps;
        if max_eps < options.tol {
            converged = true;
            break;
        }
    }
    diagnostics.extend(last_steps);
    if !converged {
        diagnostics.push(Diagnostic::MaxIterations { iterations, max_epsilon: last_max });
    }

    // Influence function and estimate from the final state.
    let h = s.h(&obs_a, &obs_m, truncate);
    let w: Vec<Vec<f64>> = (0..nt).map(|t| s.w(t, &obs_a, &obs_m, truncate)).collect();
    let mut q = vec![Vec::new(); nt + 1];
    let mut q_tab = s.q_terminal();
    q[nt] = pick(&vec![q_tab.clone()], &obs_a, 0, &obs_m, nt);
    for t in (0..nt).rev() {
        q_tab = s.q_step(t, &q_tab);
        q[t] = pick(&vec![q_tab.clone()], &obs_a, 0, &obs_m, t);
    }
    let mut r_m_obs = vec![Vec::new(); nt];
    let mut r_a_obs = vec![Vec::new(); nt];
    let mut kappa_diff = vec![Vec::new(); nt];
    let mut r_next = s.qy.clone();
    for t in (0..nt).rev() {
        let r_m = s.r_m(t, &r_next);
        let r_a = s.r_a(t, &r_m);
        r_m_obs[t] = pick(&r_m, &obs_a, t + 1, &obs_m, t);
        r_a_obs[t] = pick(&r_a, &obs_a, t, &obs_m, t);
        kappa_diff[t] = (0..n)
            .map(|i| {
                let a = (obs_a[i] & low(t)) as usize;
                let m = (obs_m[i] & low(t)) as usize;
                r_m[a | (1 << t)][m][i] - r_m[a][m][i]
            })
            .collect();
        r_next = r_a;
    }
    let psi = weighted_mean(&q[0], &weights);
    let inputs = EifInputs {
        horizon,
        weights: weights.clone(),
        y: data.outcome().to_vec(),
        q_y: pick(&s.qy, &obs_a, nt, &obs_m, nt),
        h,
        w,
        q_m: q,
        r_m: r_m_obs,
        r_a: r_a_obs,
        kappa_diff,
        pi1: (0..nt).map(|t| pick(&s.pi1[t], &obs_a, t, &obs_m, t)).collect(),
        a: (0..nt).map(|t| data.treatment(t).to_vec()).collect(),
    };
    let eif = compute_eif(&inputs, psi)?;
    ctx.with_inference(EstimatorId::TmleMed, psi, eif, diagnostics)
}
