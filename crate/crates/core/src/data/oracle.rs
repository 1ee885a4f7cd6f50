//! Exact enumeration of small all-binary structural models.
//!
//! The observed law is stored as a dense probability table over bit-coded
//! configurations. Bit layout of an observed configuration, for `d` baseline
//! covariates and horizon `T`: bits `0..d` hold `L0_1..L0_d`, bit `d + 2t`
//! holds `A_t`, bit `d + 2t + 1` holds `M_t` and bit `d + 2T + 2` holds `Y`.

use super::dataset::ColumnRole;
use super::dgp::{Distribution, VarRole};
use super::{DiscreteDgp, LongitudinalDataset, OracleError, RegimeSpec};
use crate::inference::EifInputs;
use crate::numeric::expit;

/// Default limit on the number of enumerated joint configurations.
pub const DEFAULT_STATE_CAP: usize = 1 << 22;

/// Exact joint law of an all-binary model together with its observed-data
/// margin (latent variables summed out).
#[derive(Debug, Clone)]
pub struct ExactJoint {
    variable_names: Vec<String>,
    joint: Vec<f64>,
    observed_names: Vec<String>,
    observed: Vec<f64>,
    n_baseline: usize,
    horizon: usize,
}

pub fn enumerate_joint(dgp: &DiscreteDgp) -> Result<ExactJoint, OracleError> {
    enumerate_joint_with_cap(dgp, DEFAULT_STATE_CAP)
}

pub fn enumerate_joint_with_cap(dgp: &DiscreteDgp, cap: usize) -> Result<ExactJoint, OracleError> {
    check_binary(dgp)?;
    let eqs = dgp.equations();
    let k = eqs.len();
    if k >= 63 || (1usize << k) > cap {
        return Err(OracleError::TooLarge { variables: k, cap });
    }
    let horizon = dgp.horizon();
    let mut n_baseline = 0;
    for eq in &eqs {
        match eq.role {
            VarRole::Observed(ColumnRole::Baseline(_)) => n_baseline += 1,
            VarRole::Observed(ColumnRole::Mediator(_, j)) if j > 0 => {
                return Err(OracleError::MultiComponentMediator)
            }
            _ => {}
        }
    }
    let observed_idx = dgp.observed_indices().to_vec();
    let observed_names = dgp.observed_names();

    let size = 1usize << k;
    let mut joint = vec![0.0; size];
    let mut observed = vec![0.0; 1usize << observed_idx.len()];
    let mut values = vec![0.0; k];
    for (config, slot) in joint.iter_mut().enumerate() {
        let mut p = 1.0;
        for (i, eq) in eqs.iter().enumerate() {
            let x = (config >> i) & 1;
            values[i] = x as f64;
            let p1 = expit(eq.linear_predictor(&values));
            p *= if x == 1 { p1 } else { 1.0 - p1 };
        }
        *slot = p;
        let obs = observed_idx
            .iter()
            .enumerate()
            .fold(0usize, |acc, (b, &i)| acc | (((config >> i) & 1) << b));
        observed[obs] += p;
    }
    Ok(ExactJoint {
        variable_names: dgp.variables().iter().map(|v| v.name.clone()).collect(),
        joint,
        observed_names,
        observed,
        n_baseline,
        horizon,
    })
}

fn check_binary(dgp: &DiscreteDgp) -> Result<(), OracleError> {
    match dgp.variables().iter().find(|v| v.dist != Distribution::Bernoulli) {
        Some(v) => Err(OracleError::NonBinary(v.name.clone())),
        None => Ok(()),
    }
}

impl ExactJoint {
    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    /// Probability of every joint configuration; bit `i` is variable `i`.
    pub fn joint_probabilities(&self) -> &[f64] {
        &self.joint
    }

    pub fn observed_names(&self) -> &[String] {
        &self.observed_names
    }

    /// Observed-law probabilities in the documented bit layout.
    pub fn observed_probabilities(&self) -> &[f64] {
        &self.observed
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_baseline(&self) -> usize {
        self.n_baseline
    }

    pub fn n_configurations(&self) -> usize {
        self.joint.len()
    }

    fn bit_a(&self, t: usize) -> usize {
        self.n_baseline + 2 * t
    }

    fn bit_m(&self, t: usize) -> usize {
        self.n_baseline + 2 * t + 1
    }

    fn bit_y(&self) -> usize {
        self.n_baseline + 2 * self.horizon + 2
    }

    fn observed_bit(&self, name: &str) -> Option<usize> {
        self.observed_names.iter().position(|n| n == name)
    }

    /// Observed-law probability that the bits selected by `mask` equal `value`.
    pub fn prob(&self, mask: usize, value: usize) -> f64 {
        let mut total = 0.0;
        for (c, &p) in self.observed.iter().enumerate() {
            if c & mask == value {
                total += p;
            }
        }
        total
    }

    /// `P(target = value | given)` under the observed law, by variable name.
    pub fn conditional(
        &self,
        target: &str,
        value: u8,
        given: &[(&str, u8)],
    ) -> Result<f64, OracleError> {
        let tb = self
            .observed_bit(target)
            .ok_or_else(|| OracleError::UnknownVariable(target.to_string()))?;
        let mut mask = 0;
        let mut val = 0;
        for (name, v) in given {
            let b = self
                .observed_bit(name)
                .ok_or_else(|| OracleError::UnknownVariable(name.to_string()))?;
            mask |= 1 << b;
            val |= (*v as usize & 1) << b;
        }
        self.cond(tb, value, mask, val)
    }

    fn cond(&self, bit: usize, value: u8, mask: usize, val: usize) -> Result<f64, OracleError> {
        let den = self.prob(mask, val);
        if den <= 0.0 {
            return Err(OracleError::Positivity(format!(
                "conditioning event (mask {mask:#b}, value {val:#b}) has probability zero"
            )));
        }
        let num = self.prob(mask | (1 << bit), val | ((value as usize & 1) << bit));
        Ok(num / den)
    }

    /// Event fixing `L = l`, `A_0..A_{na-1}` from `amask` and `M_0..M_{nm-1}`
    /// from `mmask`.
    fn event(&self, l: usize, amask: u32, na: usize, mmask: u32, nm: usize) -> (usize, usize) {
        let mut mask = (1usize << self.n_baseline) - 1;
        let mut val = l;
        for t in 0..na {
            mask |= 1 << self.bit_a(t);
            val |= (((amask >> t) & 1) as usize) << self.bit_a(t);
        }
        for t in 0..nm {
            mask |= 1 << self.bit_m(t);
            val |= (((mmask >> t) & 1) as usize) << self.bit_m(t);
        }
        (mask, val)
    }

    /// `pi_t(a | l, mbar_{t-1}, abar_{t-1})`.
    pub fn pi(&self, t: usize, a: u8, l: usize, amask: u32, mmask: u32) -> Result<f64, OracleError> {
        let (mask, val) = self.event(l, amask, t, mmask, t);
        self.cond(self.bit_a(t), a, mask, val)
    }

    /// `g_t(m | l, abar_t, mbar_{t-1})`.
    pub fn g(&self, t: usize, m: u8, l: usize, amask: u32, mmask: u32) -> Result<f64, OracleError> {
        let (mask, val) = self.event(l, amask, t + 1, mmask, t);
        self.cond(self.bit_m(t), m, mask, val)
    }

    /// `Q_Y(l, abar_T, mbar_T) = P(Y = 1 | ...)`.
    pub fn q_y(&self, l: usize, amask: u32, mmask: u32) -> Result<f64, OracleError> {
        let n = self.horizon + 1;
        let (mask, val) = self.event(l, amask, n, mmask, n);
        self.cond(self.bit_y(), 1, mask, val)
    }

    /// Baseline marginal `P(L = l)`.
    pub fn p_l(&self, l: usize) -> f64 {
        self.prob((1 << self.n_baseline) - 1, l)
    }

    /// The observed law as a dataset: one row per positive-probability
    /// configuration, weighted by its probability.
    pub fn population_dataset(&self) -> LongitudinalDataset {
        let rows: Vec<usize> = (0..self.observed.len())
            .filter(|&c| self.observed[c] > 0.0)
            .collect();
        let named = self
            .observed_names
            .iter()
            .enumerate()
            .map(|(b, name)| {
                let col = rows.iter().map(|&c| ((c >> b) & 1) as f64).collect();
                (name.clone(), col)
            })
            .collect();
        let weights = rows.iter().map(|&c| self.observed[c]).collect();
        LongitudinalDataset::from_columns(named, Some(weights))
            .expect("enumerated layout is canonical")
    }

    fn check_regime(&self, regime: &RegimeSpec) -> Result<(), OracleError> {
        if regime.horizon() != self.horizon {
            return Err(OracleError::RegimeLength {
                expected: self.horizon + 1,
                found: regime.len(),
            });
        }
        Ok(())
    }

    /// Row configuration of the population dataset in this joint's layout.
    fn row_config(&self, data: &LongitudinalDataset, row: usize) -> (usize, u32, u32, f64) {
        let mut l = 0;
        for (j, &c) in data.baseline_indices().iter().enumerate() {
            l |= (data.column(c)[row] as usize) << j;
        }
        let mut mmask = 0;
        for t in 0..=self.horizon {
            mmask |= (data.column(data.mediator_indices(t)[0])[row] as u32) << t;
        }
        (l, data.history_mask(row), mmask, data.outcome()[row])
    }
}

/// Brute-force front-door functional from the observed law:
/// `sum_l p(l) sum_m prod_t g_t(m_t | l, a_t, m_{t-1}) sum_a' Q_Y(l, a', m) prod_t pi_t(a'_t | ...)`.
pub fn exact_f_functional(joint: &ExactJoint, regime: &RegimeSpec) -> Result<f64, OracleError> {
    joint.check_regime(regime)?;
    let n = joint.horizon + 1;
    let rmask = regime.mask();
    let mut total = 0.0;
    for l in 0..(1usize << joint.n_baseline) {
        let pl = joint.p_l(l);
        if pl == 0.0 {
            continue;
        }
        for mmask in 0..(1u32 << n) {
            let mut gprod = 1.0;
            for t in 0..n {
                let m = ((mmask >> t) & 1) as u8;
                gprod *= joint.g(t, m, l, rmask, mmask)?;
            }
            let mut inner = 0.0;
            for amask in 0..(1u32 << n) {
                let mut pprod = 1.0;
                for t in 0..n {
                    let a = ((amask >> t) & 1) as u8;
                    pprod *= joint.pi(t, a, l, amask, mmask)?;
                }
                inner += joint.q_y(l, amask, mmask)? * pprod;
            }
            total += pl * gprod * inner;
        }
    }
    Ok(total)
}

/// Back-door g-computation over `(L0, M)` that treats treatment as
/// unconfounded: `sum_l p(l) sum_m prod_t g_t(m_t | ...) Q_Y(l, a, m)`.
pub fn exact_g_computation(joint: &ExactJoint, regime: &RegimeSpec) -> Result<f64, OracleError> {
    joint.check_regime(regime)?;
    let n = joint.horizon + 1;
    let rmask = regime.mask();
    let mut total = 0.0;
    for l in 0..(1usize << joint.n_baseline) {
        let pl = joint.p_l(l);
        if pl == 0.0 {
            continue;
        }
        for mmask in 0..(1u32 << n) {
            let mut gprod = 1.0;
            for t in 0..n {
                gprod *= joint.g(t, ((mmask >> t) & 1) as u8, l, rmask, mmask)?;
            }
            total += pl * gprod * joint.q_y(l, rmask, mmask)?;
        }
    }
    Ok(total)
}

/// `E[Y(regime)]` by enumerating the structural model with treatments clamped.
pub fn exact_counterfactual_mean(dgp: &DiscreteDgp, regime: &RegimeSpec) -> Result<f64, OracleError> {
    check_binary(dgp)?;
    if regime.horizon() != dgp.horizon() {
        return Err(OracleError::RegimeLength {
            expected: dgp.horizon() + 1,
            found: regime.len(),
        });
    }
    let eqs = dgp.equations();
    let k = eqs.len();
    let mut fixed: Vec<Option<f64>> = vec![None; k];
    let mut y = None;
    for (i, eq) in eqs.iter().enumerate() {
        match eq.role {
            VarRole::Observed(ColumnRole::Treatment(t)) => fixed[i] = Some(regime.get(t) as f64),
            VarRole::Observed(ColumnRole::Outcome) => y = Some(i),
            _ => {}
        }
    }
    let y = y.expect("validated outcome");
    let free: Vec<usize> = (0..k).filter(|&i| fixed[i].is_none() && i != y).collect();
    if free.len() >= 63 || (1usize << free.len()) > DEFAULT_STATE_CAP {
        return Err(OracleError::TooLarge { variables: k, cap: DEFAULT_STATE_CAP });
    }
    let mut values = vec![0.0; k];
    let mut total = 0.0;
    for config in 0..(1usize << free.len()) {
        for (b, &i) in free.iter().enumerate() {
            values[i] = ((config >> b) & 1) as f64;
        }
        let mut p = 1.0;
        for (i, eq) in eqs.iter().enumerate() {
            if let Some(v) = fixed[i] {
                values[i] = v;
                continue;
            }
            if i == y {
                continue;
            }
            let p1 = expit(eq.linear_predictor(&values));
            p *= if values[i] == 1.0 { p1 } else { 1.0 - p1 };
        }
        total += p * expit(eqs[y].linear_predictor(&values));
    }
    Ok(total)
}

/// Recursions of the front-door functional evaluated with exact conditionals.
struct ExactRecursion<'a> {
    joint: &'a ExactJoint,
    rmask: u32,
    n: usize,
}

impl ExactRecursion<'_> {
    /// `Q_{M_t}(l, mbar_{t-1})`, `t = 0..=T+1`.
    fn q_m(&self, t: usize, l: usize, mmask: u32) -> Result<f64, OracleError> {
        if t == self.n {
            let mut s = 0.0;
            for amask in 0..(1u32 << self.n) {
                let mut pprod = 1.0;
                for k in 0..self.n {
                    pprod *= self.joint.pi(k, ((amask >> k) & 1) as u8, l, amask, mmask)?;
                }
                s += self.joint.q_y(l, amask, mmask)? * pprod;
            }
            return Ok(s);
        }
        let mut s = 0.0;
        for m in 0..2u32 {
            let g = self.joint.g(t, m as u8, l, self.rmask, mmask)?;
            s += g * self.q_m(t + 1, l, mmask | (m << t))?;
        }
        Ok(s)
    }

    /// `kappa_t(l, a'_t, mbar_{t-1})`.
    fn kappa(&self, t: usize, l: usize, amask: u32, mmask: u32) -> Result<f64, OracleError> {
        let mut s = 0.0;
        for m in 0..2u32 {
            let g = self.joint.g(t, m as u8, l, self.rmask, mmask)?;
            s += g * self.r_a(t + 1, l, amask, mmask | (m << t))?;
        }
        Ok(s)
    }

    /// `R_{A_t}(l, a'_{t-1}, mbar_{t-1})`, `t = 0..=T+1`.
    fn r_a(&self, t: usize, l: usize, amask: u32, mmask: u32) -> Result<f64, OracleError> {
        if t == self.n {
            return self.joint.q_y(l, amask, mmask);
        }
        let mut s = 0.0;
        for a in 0..2u32 {
            let p = self.joint.pi(t, a as u8, l, amask, mmask)?;
            s += p * self.kappa(t, l, amask | (a << t), mmask)?;
        }
        Ok(s)
    }
}

/// Exact nuisance evaluations on the population dataset of `joint`, packaged
/// for influence-function assembly.
pub fn exact_eif_inputs(
    joint: &ExactJoint,
    regime: &RegimeSpec,
) -> Result<(LongitudinalDataset, EifInputs), OracleError> {
    joint.check_regime(regime)?;
    let data = joint.population_dataset();
    let n_rows = data.n_rows();
    let n = joint.horizon + 1;
    let rec = ExactRecursion { joint, rmask: regime.mask(), n };
    let mut inputs = EifInputs::zeros(joint.horizon, n_rows);
    inputs.y = data.outcome().to_vec();
    inputs.weights = data.weights();
    for row in 0..n_rows {
        let (l, amask, mmask, _) = joint.row_config(&data, row);
        inputs.q_y[row] = joint.q_y(l, amask, mmask)?;
        let mut h = 1.0;
        let mut w_den = 1.0;
        let mut matched = true;
        for t in 0..n {
            let past = low(t);
            let m_t = ((mmask >> t) & 1) as u8;
            let a_t = (amask >> t) & 1;
            let hist_m = mmask & past;
            let hist_a = amask & past;

            let p1 = joint.pi(t, 1, l, hist_a, hist_m)?;
            inputs.pi1[t][row] = p1;
            inputs.a[t][row] = a_t as f64;

            let k1 = rec.kappa(t, l, hist_a | (1 << t), hist_m)?;
            let k0 = rec.kappa(t, l, hist_a, hist_m)?;
            inputs.kappa_diff[t][row] = k1 - k0;
            inputs.r_m[t][row] = if a_t == 1 { k1 } else { k0 };
            inputs.r_a[t][row] = rec.r_a(t, l, hist_a, hist_m)?;

            let g_reg = joint.g(t, m_t, l, regime.mask(), hist_m)?;
            let g_obs = joint.g(t, m_t, l, amask, hist_m)?;
            h *= g_reg / g_obs;
            inputs.h[t][row] = h;

            matched &= a_t as u8 == regime.get(t);
            w_den *= joint.pi(t, regime.get(t), l, regime.mask(), hist_m)?;
            inputs.w[t][row] = if matched { 1.0 / w_den } else { 0.0 };

            inputs.q_m[t][row] = rec.q_m(t, l, hist_m)?;
        }
        inputs.q_m[n][row] = rec.q_m(n, l, mmask)?;
    }
    Ok((data, inputs))
}

fn low(k: usize) -> u32 {
    (1u32 << k) - 1
}
