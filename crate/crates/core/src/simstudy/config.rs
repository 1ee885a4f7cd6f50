use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ScenarioSpec, StudyError};
use crate::data::RegimeSpec;
use crate::estimators::EstimatorId;

/// Sample size used for simulated ground truths.
pub const TRUTH_N: usize = 1_000_000;

/// True values keyed by regime label (`"11"`), or computed by simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Truth {
    #[default]
    Auto,
    Given(BTreeMap<String, f64>),
}

impl Serialize for Truth {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Truth::Auto => s.serialize_str("auto"),
            Truth::Given(map) => map.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Truth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Label(String),
            Values(BTreeMap<String, f64>),
        }
        match Raw::deserialize(d)? {
            Raw::Label(s) if s == "auto" => Ok(Truth::Auto),
            Raw::Label(s) => Err(serde::de::Error::custom(format!(
                "truth must be \"auto\" or a map of regime to value, got \"{s}\""
            ))),
            Raw::Values(map) => Ok(Truth::Given(map)),
        }
    }
}

/// A scenario given by built-in id or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Id(String),
    Custom(Box<ScenarioSpec>),
}

impl ScenarioRef {
    pub fn resolve(&self) -> Result<ScenarioSpec, StudyError> {
        match self {
            ScenarioRef::Id(id) => {
                ScenarioSpec::builtin(id).ok_or_else(|| StudyError::UnknownScenario(id.clone()))
            }
            ScenarioRef::Custom(s) => Ok(s.as_ref().clone()),
        }
    }
}

fn default_dgp() -> String {
    "builtin:paper".into()
}
fn default_scenarios() -> Vec<ScenarioRef> {
    ScenarioSpec::BUILTIN_IDS.iter().map(|s| ScenarioRef::Id(s.to_string())).collect()
}
fn default_n() -> Vec<usize> {
    vec![500, 1000, 2000, 3000, 4000, 5000]
}
fn default_reps() -> usize {
    1000
}
fn default_estimators() -> Vec<EstimatorId> {
    EstimatorId::ALL.to_vec()
}
fn default_regimes() -> Vec<Vec<u8>> {
    vec![vec![1, 1], vec![0, 0]]
}
fn default_alpha() -> f64 {
    0.05
}
fn default_truth_n() -> usize {
    TRUTH_N
}

/// Monte Carlo study settings, readable from the study JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_dgp")]
    pub dgp: String,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<ScenarioRef>,
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorId>,
    #[serde(default = "default_regimes")]
    pub regimes: Vec<Vec<u8>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub truth: Truth,
    /// Sample size for simulated truths.
    #[serde(default = "default_truth_n")]
    pub truth_n: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            dgp: default_dgp(),
            scenarios: default_scenarios(),
            n: default_n(),
            reps: default_reps(),
            estimators: default_estimators(),
            regimes: default_regimes(),
            seed: 0,
            alpha: default_alpha(),
            truth: Truth::Auto,
            truth_n: TRUTH_N,
        }
    }
}

impl MonteCarloConfig {
    pub fn from_json(text: &str) -> Result<Self, StudyError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| StudyError::Config {
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        let invalid = |m: String| Err(StudyError::InvalidConfig(m));
        if self.reps == 0 {
            return invalid("reps must be at least 1".into());
        }
        if self.n.is_empty() {
            return invalid("n must list at least one sample size".into());
        }
        if let Some(n) = self.n.iter().find(|&&n| n < 50) {
            return invalid(format!("sample sizes must be at least 50, got {n}"));
        }
        if self.scenarios.is_empty() || self.estimators.is_empty() || self.regimes.is_empty() {
            return invalid("scenarios, estimators and regimes must be non-empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.truth_n == 0 {
            return invalid("truth_n must be positive".into());
        }
        self.regime_specs()?;
        if let Truth::Given(map) = &self.truth {
            for r in self.regime_specs()? {
                if !map.contains_key(&r.label()) {
                    return invalid(format!("no truth given for regime {}", r.label()));
                }
            }
        }
        for s in &self.scenarios {
            s.resolve()?;
        }
        Ok(())
    }

    pub fn regime_specs(&self) -> Result<Vec<RegimeSpec>, StudyError> {
        self.regimes
            .iter()
            .map(|v| RegimeSpec::new(v.clone()).map_err(|e| StudyError::InvalidConfig(e.to_string())))
            .collect()
    }

    pub fn scenario_specs(&self) -> Result<Vec<ScenarioSpec>, StudyError> {
        self.scenarios.iter().map(ScenarioRef::resolve).collect()
    }
}
