//! Shared fixtures for the benchmarks.

use frontdoor::{DiscreteDgp, LongitudinalDataset, NuisanceSpec, RegimeSpec, ScenarioSpec};

/// A draw of size `n` from the built-in two-period model.
pub fn paper_data(n: usize, seed: u64) -> LongitudinalDataset {
    DiscreteDgp::paper().simulate(n, seed).expect("built-in model simulates")
}

/// Nuisance formulas for a built-in scenario.
pub fn scenario_spec(id: &str) -> NuisanceSpec {
    ScenarioSpec::builtin(id).expect("built-in scenario").spec
}

pub fn always_treat() -> RegimeSpec {
    RegimeSpec::constant(1, 1)
}
