use serde::{Deserialize, Serialize};

use crate::nuisance::NuisanceSpec;

/// A named nuisance specification for the Monte Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub spec: NuisanceSpec,
}

const PI_OK: [&str; 2] = ["(L1 + L2)^2", "(L1 + L2 + A0 + M0)^2"];
const PI_BAD: [&str; 2] = ["L2", "L2 + A0 + M0"];
const G_OK: [&str; 2] = ["L1 + L2 + L1*L2 + A0", "L1 + L2 + L1*L2 + A0 + A1 + M0"];
const G_BAD: [&str; 2] = ["L1 + L2 + A0", "L1 + L2 + A0 + A1 + M0"];
const SEQ_OK: [&str; 2] = ["(L1 + L2)^2", "(L1 + L2 + M0)^2"];
const SEQ_BAD: [&str; 2] = ["L2", "L2 + M0"];
const QY_OK: &str = "(L1 + L2 + M0 + M1)^2";
const QY_BAD: &str = "L1 + M0 + M1";

fn strings(v: [&str; 2]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Treatment classifiers for the `H` rewrite, `[t][j]` for `j <= t`.
fn gammas(rich: bool) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let term = |j: usize, m_upto: usize| {
        let mut v = vec!["L1".to_string(), "L2".to_string()];
        v.extend((0..j).map(|k| format!("A{k}")));
        v.extend((0..m_upto).map(|k| format!("M{k}")));
        let sum = v.join(" + ");
        if rich {
            format!("({sum})^2")
        } else {
            sum
        }
    };
    let build = |shift: usize| {
        (0..2)
            .map(|t| (0..=t).map(|j| term(j, t + shift)).collect())
            .collect()
    };
    (build(1), build(0))
}

fn scenario(
    id: &str,
    description: &str,
    pi: [&str; 2],
    g: [&str; 2],
    seq: [&str; 2],
    qy: &str,
) -> ScenarioSpec {
    let (gamma1, gamma2) = gammas(g == G_OK);
    ScenarioSpec {
        id: id.to_string(),
        description: description.to_string(),
        spec: NuisanceSpec {
            pi: strings(pi),
            g: Some(strings(g)),
            gamma1: Some(gamma1),
            gamma2: Some(gamma2),
            qy: qy.to_string(),
            qm: strings(seq),
            r: strings(seq),
            h_mode: Default::default(),
            truncate: None,
            seq_fit: Default::default(),
            seq_family: Default::default(),
        },
    }
}

impl ScenarioSpec {
    pub const BUILTIN_IDS: [&'static str; 5] = ["a", "b", "c", "d", "e"];

    /// Built-in specifications for the two-period study design.
    pub fn builtin(id: &str) -> Option<Self> {
        let s = match id {
            "a" => scenario("a", "all nuisance models approximately correct", PI_OK, G_OK, SEQ_OK, QY_OK),
            "b" => scenario("b", "Q_Y and sequential regressions misspecified", PI_OK, G_OK, SEQ_BAD, QY_BAD),
            "c" => scenario("c", "H and sequential regressions misspecified", PI_OK, G_BAD, SEQ_BAD, QY_OK),
            "d" => scenario("d", "pi and Q_Y misspecified", PI_BAD, G_OK, SEQ_OK, QY_BAD),
            "e" => scenario("e", "all nuisance models misspecified", PI_BAD, G_BAD, SEQ_BAD, QY_BAD),
            _ => return None,
        };
        Some(s)
    }

    pub fn builtins() -> Vec<Self> {
        Self::BUILTIN_IDS.iter().filter_map(|id| Self::builtin(id)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_carry_the_listed_formulas() {
        let a = ScenarioSpec::builtin("a").unwrap();
        assert_eq!(a.spec.pi, ["(L1 + L2)^2", "(L1 + L2 + A0 + M0)^2"]);
        assert_eq!(a.spec.g.as_ref().unwrap()[1], "L1 + L2 + L1*L2 + A0 + A1 + M0");
        assert_eq!(a.spec.qy, "(L1 + L2 + M0 + M1)^2");
        assert!(a.description.contains("approximately"));
        let e = ScenarioSpec::builtin("e").unwrap();
        assert_eq!(e.spec.pi, ["L2", "L2 + A0 + M0"]);
        assert_eq!(e.spec.qm, ["L2", "L2 + M0"]);
        assert_eq!(e.spec.r, e.spec.qm);
        assert_eq!(e.spec.qy, "L1 + M0 + M1");
        let c = ScenarioSpec::builtin("c").unwrap();
        assert_eq!(c.spec.qy, QY_OK);
        assert_eq!(c.spec.g.as_ref().unwrap()[0], "L1 + L2 + A0");
        assert!(ScenarioSpec::builtin("f").is_none());
        assert_eq!(ScenarioSpec::builtins().len(), 5);
    }

    #[test]
    fn gamma_layout_matches_time_indices() {
        let a = ScenarioSpec::builtin("a").unwrap();
        let g1 = a.spec.gamma1.unwrap();
        let g2 = a.spec.gamma2.unwrap();
        assert_eq!(g1[0], ["(L1 + L2 + M0)^2"]);
        assert_eq!(g2[0], ["(L1 + L2)^2"]);
        assert_eq!(g1[1], ["(L1 + L2 + M0 + M1)^2", "(L1 + L2 + A0 + M0 + M1)^2"]);
        assert_eq!(g2[1], ["(L1 + L2 + M0)^2", "(L1 + L2 + A0 + M0)^2"]);
        let c = ScenarioSpec::builtin("c").unwrap();
        assert_eq!(c.spec.gamma1.unwrap()[1][1], "L1 + L2 + A0 + M0 + M1");
    }

    #[test]
    fn every_formula_parses() {
        for s in ScenarioSpec::builtins() {
            s.spec.parse(1).unwrap();
        }
    }
}
