use serde::{Deserialize, Serialize};

use super::NuisanceError;
use crate::formula::{parse_formula, Formula};

/// How the mediator density ratio `H_t` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HMode {
    /// Ratio of fitted mediator models `g_t` (binary mediators).
    #[default]
    Direct,
    /// Product of treatment-classifier ratios `gamma1 / gamma2`.
    Gamma,
}

/// Which rows a sequential regression is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeqFit {
    /// Rows whose observed treatment history matches the regime up to `t`.
    #[default]
    Stratified,
    /// All rows; predictions substitute regime values for treatments.
    Pooled,
}

/// Link used for the sequential regressions of the plain estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SeqFamily {
    #[default]
    Linear,
    Logistic,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Model formulas for every nuisance component of one analysis.
///
/// Index conventions: `pi[t]`, `g[t]`, `qm[t]` and `r[t]` for `t = 0..=T`;
/// `gamma1[t][j]` and `gamma2[t][j]` for `j = 0..=t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub pi: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<Vec<Vec<String>>>,
    pub qy: String,
    pub qm: Vec<String>,
    pub r: Vec<String>,
    #[serde(default)]
    pub h_mode: HMode,
    #[serde(default)]
    pub truncate: Option<f64>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub seq_fit: SeqFit,
    #[serde(default, skip_serializing_if = "is_default")]
    pub seq_family: SeqFamily,
}

/// Formulas after parsing, same layout as [`NuisanceSpec`].
#[derive(Debug, Clone)]
pub(crate) struct ParsedSpec {
    pub pi: Vec<Formula>,
    pub g: Option<Vec<Formula>>,
    pub gamma1: Option<Vec<Vec<Formula>>>,
    pub gamma2: Option<Vec<Vec<Formula>>>,
    pub qy: Formula,
    pub qm: Vec<Formula>,
    pub r: Vec<Formula>,
}

impl NuisanceSpec {
    pub fn from_json(text: &str) -> Result<Self, NuisanceError> {
        serde_json::from_str(text).map_err(|e| NuisanceError::Json {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serialises")
    }

    /// Last time index implied by the propensity list.
    pub fn horizon(&self) -> Result<usize, NuisanceError> {
        self.pi
            .len()
            .checked_sub(1)
            .ok_or_else(|| NuisanceError::Spec("pi must list at least one formula".into()))
    }

    /// Saturated models over binary baseline covariates `L1..Ld`. Sequential
    /// regressions condition on `(L, M_0..M_{t-1})`, which is saturated within
    /// each regime stratum.
    pub fn saturated(horizon: usize, n_baseline: usize) -> Self {
        let l: Vec<String> = (1..=n_baseline).map(|j| format!("L{j}")).collect();
        let a = |k: usize| format!("A{k}");
        let m = |k: usize| format!("M{k}");
        let sat = |vars: Vec<String>| {
            let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
            Formula::saturated(&refs).to_string()
        };
        let with = |extra: Vec<String>| {
            let mut v = l.clone();
            v.extend(extra);
            v
        };
        let pi = (0..=horizon)
            .map(|t| sat(with((0..t).flat_map(|k| [a(k), m(k)]).collect())))
            .collect();
        let g = (0..=horizon)
            .map(|t| {
                let mut v: Vec<String> = (0..t).flat_map(|k| [a(k), m(k)]).collect();
                v.push(a(t));
                sat(with(v))
            })
            .collect();
        let gamma = |upto_m: usize, t: usize| -> Vec<String> {
            (0..=t)
                .map(|j| {
                    let mut v: Vec<String> = (0..j).map(a).collect();
                    v.extend((0..upto_m).map(m));
                    sat(with(v))
                })
                .collect()
        };
        let gamma1 = (0..=horizon).map(|t| gamma(t + 1, t)).collect();
        let gamma2 = (0..=horizon).map(|t| gamma(t, t)).collect();
        let qy = sat(with((0..=horizon).flat_map(|k| [a(k), m(k)]).collect()));
        let seq: Vec<String> = (0..=horizon).map(|t| sat(with((0..t).map(m).collect()))).collect();
        NuisanceSpec {
            pi,
            g: Some(g),
            gamma1: Some(gamma1),
            gamma2: Some(gamma2),
            qy,
            qm: seq.clone(),
            r: seq,
            h_mode: HMode::Direct,
            truncate: None,
            seq_fit: SeqFit::Stratified,
            seq_family: SeqFamily::Linear,
        }
    }

    pub(crate) fn parse(&self, horizon: usize) -> Result<ParsedSpec, NuisanceError> {
        let spec_h = self.horizon()?;
        if spec_h != horizon {
            return Err(NuisanceError::HorizonMismatch { spec: spec_h, data: horizon });
        }
        let n = horizon + 1;
        let need = |what: &str, len: usize| -> Result<(), NuisanceError> {
            if len != n {
                return Err(NuisanceError::Spec(format!(
                    "{what} lists {len} formulas, expected {n}"
                )));
            }
            Ok(())
        };
        need("qm", self.qm.len())?;
        need("r", self.r.len())?;
        let parse = |component: String, text: &str| {
            parse_formula(text).map_err(|source| NuisanceError::Formula { component, source })
        };
        let list = |name: &str, v: &[String]| -> Result<Vec<Formula>, NuisanceError> {
            v.iter()
                .enumerate()
                .map(|(t, s)| parse(format!("{name}[{t}]"), s))
                .collect()
        };
        let nested = |name: &str, v: &Option<Vec<Vec<String>>>| -> Result<Option<Vec<Vec<Formula>>>, NuisanceError> {
            let Some(v) = v else { return Ok(None) };
            need(name, v.len())?;
            let mut out = Vec::with_capacity(n);
            for (t, row) in v.iter().enumerate() {
                if row.len() != t + 1 {
                    return Err(NuisanceError::Spec(format!(
                        "{name}[{t}] lists {} formulas, expected {}",
                        row.len(),
                        t + 1
                    )));
                }
                out.push(
                    row.iter()
                        .enumerate()
                        .map(|(j, s)| parse(format!("{name}[{t}][{j}]"), s))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            Ok(Some(out))
        };
        let g = match &self.g {
            Some(g) => {
                need("g", g.len())?;
                Some(list("g", g)?)
            }
            None => None,
        };
        let gamma1 = nested("gamma1", &self.gamma1)?;
        let gamma2 = nested("gamma2", &self.gamma2)?;
        match self.h_mode {
            HMode::Direct if g.is_none() => {
                return Err(NuisanceError::Spec("h_mode direct requires g formulas".into()))
            }
            HMode::Gamma if gamma1.is_none() || gamma2.is_none() => {
                return Err(NuisanceError::Spec(
                    "h_mode gamma requires gamma1 and gamma2 formulas".into(),
                ))
            }
            _ => {}
        }
        if let Some(b) = self.truncate {
            if !(b.is_finite() && b >= 1.0) {
                return Err(NuisanceError::Spec(format!(
                    "truncate must be a finite number >= 1, got {b}"
                )));
            }
        }
        Ok(ParsedSpec {
            pi: list("pi", &self.pi)?,
            g,
            gamma1,
            gamma2,
            qy: parse("qy".into(), &self.qy)?,
            qm: list("qm", &self.qm)?,
            r: list("r", &self.r)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_defaults() {
        let text = r#"{ "pi": ["L2", "L2 + A0 + M0"], "g": ["L1", "L1 + A1"],
            "qy": "L1 + M0 + M1", "qm": ["L2", "L2 + M0"], "r": ["L2", "L2 + M0"],
            "h_mode": "direct", "truncate": null }"#;
        let spec = NuisanceSpec::from_json(text).unwrap();
        assert_eq!(spec.h_mode, HMode::Direct);
        assert_eq!(spec.seq_fit, SeqFit::Stratified);
        assert_eq!(spec.seq_family, SeqFamily::Linear);
        assert_eq!(NuisanceSpec::from_json(&spec.to_json()).unwrap(), spec);
        assert!(spec.parse(1).is_ok());
        assert!(matches!(
            spec.parse(2),
            Err(NuisanceError::HorizonMismatch { spec: 1, data: 2 })
        ));
    }

    #[test]
    fn gamma_mode_requires_gammas() {
        let mut spec = NuisanceSpec::saturated(1, 2);
        spec.h_mode = HMode::Gamma;
        assert!(spec.parse(1).is_ok());
        spec.gamma2 = None;
        assert!(matches!(spec.parse(1), Err(NuisanceError::Spec(_))));
    }

    #[test]
    fn formula_errors_name_the_component() {
        let mut spec = NuisanceSpec::saturated(1, 1);
        spec.qm[1] = "L1 +".into();
        match spec.parse(1) {
            Err(NuisanceError::Formula { component, .. }) => assert_eq!(component, "qm[1]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn saturated_gamma_layout() {
        let spec = NuisanceSpec::saturated(1, 1);
        let g1 = spec.gamma1.as_ref().unwrap();
        assert_eq!(g1.len(), 2);
        assert_eq!(g1[0].len(), 1);
        assert_eq!(g1[1].len(), 2);
        assert_eq!(g1[1][1], "L1 + A0 + M0 + M1 + L1*A0 + L1*M0 + L1*M1 + A0*M0 + A0*M1 + M0*M1 + L1*A0*M0 + L1*A0*M1 + L1*M0*M1 + A0*M0*M1 + L1*A0*M0*M1");
        assert_eq!(spec.gamma2.as_ref().unwrap()[0][0], "L1");
    }
}
