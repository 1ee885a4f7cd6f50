use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::ColumnRole;
use super::{DataError, LongitudinalDataset, RegimeSpec};
use crate::numeric::{expit, PROB_CLAMP};

/// Conditional distribution family of a structural equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    /// `P(X = 1 | parents) = expit(eta)`.
    #[default]
    Bernoulli,
    /// `X = eta + sd * N(0, 1)`.
    Normal,
}

fn default_sd() -> f64 {
    1.0
}

fn is_default_sd(sd: &f64) -> bool {
    *sd == 1.0
}

fn is_bernoulli(d: &Distribution) -> bool {
    *d == Distribution::Bernoulli
}

/// One structural equation. Coefficient keys name a parent (`"L0_1"`) or a
/// product of parents (`"L0_1*L0_2"`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpVariable {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<String>,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub coefficients: BTreeMap<String, f64>,
    #[serde(default)]
    pub latent: bool,
    #[serde(default, skip_serializing_if = "is_bernoulli")]
    pub dist: Distribution,
    #[serde(default = "default_sd", skip_serializing_if = "is_default_sd")]
    pub sd: f64,
}

impl DgpVariable {
    fn bernoulli(name: &str, intercept: f64, coefs: &[(&str, f64)]) -> Self {
        let mut parents: Vec<String> = Vec::new();
        for (key, _) in coefs {
            for p in key.split('*') {
                if !parents.iter().any(|q| q == p) {
                    parents.push(p.to_string());
                }
            }
        }
        Self {
            name: name.to_string(),
            parents,
            intercept,
            coefficients: coefs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            latent: false,
            dist: Distribution::Bernoulli,
            sd: 1.0,
        }
    }

    fn latent(mut self) -> Self {
        self.latent = true;
        self
    }
}

/// Structural role of a DGP variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    Latent,
    Observed(ColumnRole),
}

#[derive(Debug, Clone)]
pub(crate) struct Equation {
    pub role: VarRole,
    pub intercept: f64,
    /// `(coefficient, parent variable indices)`; the product of the parents.
    pub terms: Vec<(f64, Vec<usize>)>,
    pub dist: Distribution,
    pub sd: f64,
}

impl Equation {
    #[inline]
    pub fn linear_predictor(&self, values: &[f64]) -> f64 {
        let mut eta = self.intercept;
        for (c, ps) in &self.terms {
            let mut prod = *c;
            for &p in ps {
                prod *= values[p];
            }
            eta += prod;
        }
        eta
    }
}

/// A validated structural model over `U, L0, A_t, M_t, Y` in topological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DgpFile", into = "DgpFile")]
pub struct DiscreteDgp {
    variables: Vec<DgpVariable>,
    #[serde(skip)]
    compiled: Compiled,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Compiled {
    horizon: usize,
    observed: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DgpFile {
    variables: Vec<DgpVariable>,
}

impl TryFrom<DgpFile> for DiscreteDgp {
    type Error = DataError;
    fn try_from(f: DgpFile) -> Result<Self, DataError> {
        DiscreteDgp::new(f.variables)
    }
}

impl From<DiscreteDgp> for DgpFile {
    fn from(d: DiscreteDgp) -> Self {
        DgpFile { variables: d.variables }
    }
}

impl DiscreteDgp {
    pub fn new(variables: Vec<DgpVariable>) -> Result<Self, DataError> {
        let equations = compile(&variables)?;
        let horizon = equations
            .iter()
            .filter_map(|e| match e.role {
                VarRole::Observed(ColumnRole::Treatment(t)) => Some(t),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut observed: Vec<usize> = (0..variables.len())
            .filter(|&i| matches!(equations[i].role, VarRole::Observed(_)))
            .collect();
        observed.sort_by_key(|&i| match equations[i].role {
            VarRole::Observed(r) => column_order(r),
            VarRole::Latent => unreachable!(),
        });
        Ok(Self { variables, compiled: Compiled { horizon, observed } })
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        serde_json::from_str(text).map_err(|e| DataError::Json {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dgp serialises")
    }

    /// `builtin:paper`, `builtin:toy-v1`, or a path to a DGP JSON file.
    pub fn resolve(source: &str) -> Result<Self, DataError> {
        match source {
            "builtin:paper" => Ok(Self::paper()),
            "builtin:toy-v1" => Ok(Self::toy_v1()),
            other if other.starts_with("builtin:") => {
                Err(DataError::UnknownBuiltin(other.to_string()))
            }
            path => {
                let text = std::fs::read_to_string(Path::new(path))
                    .map_err(|e| DataError::Io(format!("{path}: {e}")))?;
                Self::from_json(&text)
            }
        }
    }

    /// Two-period simulation model with a Gaussian and a binary baseline
    /// covariate and a latent binary confounder `U`.
    pub fn paper() -> Self {
        let mut l1 = DgpVariable::bernoulli("L0_1", 0.0, &[]);
        l1.dist = Distribution::Normal;
        let vars = vec![
            DgpVariable::bernoulli("U", 0.0, &[]).latent(),
            l1,
            DgpVariable::bernoulli("L0_2", 1.0, &[("L0_1", 2.0)]),
            DgpVariable::bernoulli(
                "A0",
                -2.0,
                &[("L0_1", -2.0), ("L0_2", 1.0), ("L0_1*L0_2", 4.0), ("U", 2.0)],
            ),
            DgpVariable::bernoulli(
                "M0",
                -1.0,
                &[("A0", -1.0), ("L0_1", -2.0), ("L0_2", 2.0), ("L0_1*L0_2", 3.0)],
            ),
            DgpVariable::bernoulli(
                "A1",
                -2.0,
                &[
                    ("A0", 2.0),
                    ("M0", -1.0),
                    ("A0*M0", -1.0),
                    ("L0_1", -2.0),
                    ("L0_2", 1.0),
                    ("L0_1*L0_2", 4.0),
                    ("U", 2.0),
                ],
            ),
            DgpVariable::bernoulli(
                "M1",
                -1.0,
                &[
                    ("A1", -1.0),
                    ("M0", 1.0),
                    ("A0", -0.5),
                    ("L0_1", -2.0),
                    ("L0_2", 2.0),
                    ("L0_1*L0_2", 3.0),
                ],
            ),
            DgpVariable::bernoulli(
                "Y",
                1.0,
                &[
                    ("M1", 2.0),
                    ("M0", 1.0),
                    ("L0_1", 2.0),
                    ("L0_2", -2.0),
                    ("L0_1*L0_2", -4.0),
                    ("U", -1.0),
                ],
            ),
        ];
        Self::new(vars).expect("builtin paper dgp is valid")
    }

    /// Small all-binary fixture with `T = 1`: `U, L0_1, L0_2, A0, M0, A1, M1, Y`.
    pub fn toy_v1() -> Self {
        let vars = vec![
            DgpVariable::bernoulli("U", -0.3, &[]).latent(),
            DgpVariable::bernoulli("L0_1", 0.2, &[]),
            DgpVariable::bernoulli("L0_2", -0.4, &[("L0_1", 0.8)]),
            DgpVariable::bernoulli("A0", -0.5, &[("L0_1", 0.7), ("L0_2", -0.6), ("U", 1.2)]),
            DgpVariable::bernoulli("M0", -0.3, &[("A0", 1.1), ("L0_1", 0.5), ("L0_2", -0.4)]),
            DgpVariable::bernoulli(
                "A1",
                -0.2,
                &[("A0", 0.9), ("M0", -0.7), ("L0_1", 0.3), ("U", 1.0)],
            ),
            DgpVariable::bernoulli(
                "M1",
                -0.6,
                &[("A1", 1.3), ("M0", 0.8), ("A0", 0.4), ("L0_2", 0.5)],
            ),
            DgpVariable::bernoulli(
                "Y",
                -0.4,
                &[
                    ("M1", 1.2),
                    ("M0", 0.6),
                    ("M0*M1", 0.4),
                    ("L0_1", 0.5),
                    ("L0_2", -0.3),
                    ("U", -1.1),
                ],
            ),
        ];
        Self::new(vars).expect("builtin toy dgp is valid")
    }

    pub fn variables(&self) -> &[DgpVariable] {
        &self.variables
    }

    pub fn horizon(&self) -> usize {
        self.compiled.horizon
    }

    /// Canonical names of the observed variables, in dataset column order.
    pub fn observed_names(&self) -> Vec<String> {
        self.compiled
            .observed
            .iter()
            .map(|&i| self.variables[i].name.clone())
            .collect()
    }

    /// Indices (into `variables`) of observed variables in column order.
    pub(crate) fn observed_indices(&self) -> &[usize] {
        &self.compiled.observed
    }

    pub(crate) fn equations(&self) -> Vec<Equation> {
        compile(&self.variables).expect("validated at construction")
    }

    pub fn is_all_binary(&self) -> bool {
        self.variables.iter().all(|v| v.dist == Distribution::Bernoulli)
    }

    /// Copy with the named variable's coefficients replaced.
    pub fn with_variable(&self, var: DgpVariable) -> Result<Self, DataError> {
        let mut vars = self.variables.clone();
        match vars.iter_mut().find(|v| v.name == var.name) {
            Some(slot) => *slot = var,
            None => return Err(DataError::Dgp(format!("no variable named {}", var.name))),
        }
        Self::new(vars)
    }

    /// Draw `n` observed rows. `U` is drawn and discarded.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<LongitudinalDataset, DataError> {
        if n == 0 {
            return Err(DataError::InvalidSampleSize);
        }
        let eqs = self.equations();
        let observed = self.observed_indices();
        let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); observed.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; eqs.len()];
        for _ in 0..n {
            draw_row(&eqs, None, &mut rng, &mut values);
            for (col, &i) in cols.iter_mut().zip(observed) {
                col.push(values[i]);
            }
        }
        let named = self.observed_names().into_iter().zip(cols).collect();
        LongitudinalDataset::from_columns(named, None)
    }

    /// Monte Carlo estimate of `E[Y(regime)]` from `n` intervened draws.
    pub fn simulate_ground_truth(
        &self,
        n: usize,
        seed: u64,
        regime: &RegimeSpec,
    ) -> Result<f64, DataError> {
        if n == 0 {
            return Err(DataError::InvalidSampleSize);
        }
        regime.check_horizon(self.horizon())?;
        let eqs = self.equations();
        let y = eqs
            .iter()
            .position(|e| e.role == VarRole::Observed(ColumnRole::Outcome))
            .expect("validated outcome");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; eqs.len()];
        let mut chunk = Vec::with_capacity(4096);
        let mut partials = Vec::new();
        for _ in 0..n {
            draw_row(&eqs, Some(regime), &mut rng, &mut values);
            chunk.push(values[y]);
            if chunk.len() == 4096 {
                partials.push(chunk.iter().sum::<f64>());
                chunk.clear();
            }
        }
        partials.push(chunk.iter().sum::<f64>());
        Ok(crate::numeric::pairwise_sum(&partials) / n as f64)
    }
}

/// Simulate from the built-in two-period model, or from `dgp` when given.
pub fn simulate_paper_dgp(
    n: usize,
    seed: u64,
    dgp: Option<&DiscreteDgp>,
) -> Result<LongitudinalDataset, DataError> {
    match dgp {
        Some(d) => d.simulate(n, seed),
        None => DiscreteDgp::paper().simulate(n, seed),
    }
}

pub fn simulate_ground_truth(
    n: usize,
    seed: u64,
    regime: &RegimeSpec,
    dgp: &DiscreteDgp,
) -> Result<f64, DataError> {
    dgp.simulate_ground_truth(n, seed, regime)
}

fn draw_row(eqs: &[Equation], regime: Option<&RegimeSpec>, rng: &mut ChaCha8Rng, values: &mut [f64]) {
    for (i, eq) in eqs.iter().enumerate() {
        if let (Some(r), VarRole::Observed(ColumnRole::Treatment(t))) = (regime, eq.role) {
            values[i] = r.get(t) as f64;
            continue;
        }
        let eta = eq.linear_predictor(values);
        values[i] = match eq.dist {
            Distribution::Bernoulli => {
                let p = expit(eta).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            Distribution::Normal => {
                let z: f64 = rng.sample(StandardNormal);
                eta + eq.sd * z
            }
        };
    }
}

fn column_order(r: ColumnRole) -> (usize, usize) {
    match r {
        ColumnRole::Baseline(j) => (0, j),
        ColumnRole::Treatment(t) => (1 + 2 * t, 0),
        ColumnRole::Mediator(t, j) => (2 + 2 * t, j),
        ColumnRole::Outcome => (usize::MAX, 0),
    }
}

fn compile(variables: &[DgpVariable]) -> Result<Vec<Equation>, DataError> {
    let err = |m: String| Err(DataError::Dgp(m));
    let mut roles: Vec<VarRole> = Vec::with_capacity(variables.len());
    let mut eqs = Vec::with_capacity(variables.len());
    for (i, v) in variables.iter().enumerate() {
        if variables[..i].iter().any(|w| w.name == v.name) {
            return err(format!("duplicate variable {}", v.name));
        }
        let role = if v.latent {
            VarRole::Latent
        } else {
            match ColumnRole::parse(&v.name) {
                Some(r) => VarRole::Observed(r),
                None => return err(format!("variable {} has no canonical role", v.name)),
            }
        };
        if !(v.sd.is_finite() && v.sd > 0.0) || !v.intercept.is_finite() {
            return err(format!("variable {} has invalid intercept or sd", v.name));
        }
        let mut parent_idx = Vec::with_capacity(v.parents.len());
        for p in &v.parents {
            match variables[..i].iter().position(|w| &w.name == p) {
                Some(j) => parent_idx.push(j),
                None => {
                    return err(format!(
                        "parent {p} of {} is not declared before it",
                        v.name
                    ))
                }
            }
        }
        for &j in &parent_idx {
            if !parent_allowed(roles[j], role) {
                return err(format!(
                    "{} may not be a parent of {} (front-door structure)",
                    variables[j].name, v.name
                ));
            }
        }
        let mut terms = Vec::with_capacity(v.coefficients.len());
        for (key, &c) in &v.coefficients {
            if !c.is_finite() {
                return err(format!("coefficient {key} of {} is not finite", v.name));
            }
            let mut idx = Vec::new();
            for factor in key.split('*').map(str::trim) {
                let pos = v.parents.iter().position(|p| p == factor);
                match pos {
                    Some(k) => idx.push(parent_idx[k]),
                    None => {
                        return err(format!(
                            "coefficient {key} of {} uses undeclared parent {factor}",
                            v.name
                        ))
                    }
                }
            }
            terms.push((c, idx));
        }
        roles.push(role);
        eqs.push(Equation {
            role,
            intercept: v.intercept,
            terms,
            dist: v.dist,
            sd: v.sd,
        });
    }

    let horizon = roles
        .iter()
        .filter_map(|r| match r {
            VarRole::Observed(ColumnRole::Treatment(t)) => Some(*t),
            _ => None,
        })
        .max();
    let Some(horizon) = horizon else {
        return err("no treatment variable A0".into());
    };
    for t in 0..=horizon {
        if !roles.contains(&VarRole::Observed(ColumnRole::Treatment(t))) {
            return err(format!("missing treatment A{t}"));
        }
        if !roles
            .iter()
            .any(|r| matches!(r, VarRole::Observed(ColumnRole::Mediator(s, _)) if *s == t))
        {
            return err(format!("missing mediator M{t}"));
        }
    }
    for (r, v) in roles.iter().zip(variables) {
        if let VarRole::Observed(ColumnRole::Mediator(t, _)) = r {
            if *t > horizon {
                return err(format!("mediator {} beyond horizon {horizon}", v.name));
            }
        }
    }
    let n_outcomes = roles
        .iter()
        .filter(|r| **r == VarRole::Observed(ColumnRole::Outcome))
        .count();
    if n_outcomes != 1 {
        return err(format!("expected exactly one outcome Y, found {n_outcomes}"));
    }
    for (r, v) in roles.iter().zip(variables) {
        let needs_binary = matches!(
            r,
            VarRole::Observed(ColumnRole::Treatment(_)) | VarRole::Latent
        );
        if needs_binary && v.dist != Distribution::Bernoulli {
            return err(format!("{} must be Bernoulli", v.name));
        }
    }
    Ok(eqs)
}

/// Parent sets allowed by the front-door structure.
fn parent_allowed(parent: VarRole, child: VarRole) -> bool {
    use ColumnRole::*;
    match (parent, child) {
        (VarRole::Latent, VarRole::Latent) => true,
        (VarRole::Latent, VarRole::Observed(Treatment(_))) => true,
        (VarRole::Latent, VarRole::Observed(Outcome)) => true,
        (VarRole::Latent, _) => false,
        (VarRole::Observed(Baseline(_)), _) => true,
        (VarRole::Observed(_), VarRole::Latent) => false,
        (VarRole::Observed(p), VarRole::Observed(c)) => match (p, c) {
            (_, Baseline(_)) => false,
            (Treatment(s), Treatment(t)) => s < t,
            (Mediator(s, _), Treatment(t)) => s < t,
            (Treatment(s), Mediator(t, _)) => s <= t,
            (Mediator(s, i), Mediator(t, j)) => s < t || (s == t && i < j),
            (Mediator(_, _), Outcome) => true,
            (Treatment(_), Outcome) => false,
            (Outcome, _) => false,
            (Baseline(_), _) => true,
        },
    }
}
