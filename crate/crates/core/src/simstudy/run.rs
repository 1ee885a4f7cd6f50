use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;

use super::{
    MetricRow, MonteCarloConfig, Replicate, ScenarioSpec, StudyError, StudyMetadata, StudyOutput,
    StudyReport, Truth, TruthRecord,
};
use crate::data::{DiscreteDgp, LongitudinalDataset, RegimeSpec};
use crate::estimators::{EstimateResult, Estimation, EstimatorId};
use crate::numeric::{derive_seed, pairwise_sum};
use crate::nuisance::{HMode, NuisanceSpec};

/// Seed stream reserved for simulated truths.
const TRUTH_STREAM: u64 = u64::MAX;

/// Seed of the dataset for sample size `n` and replication `rep`.
pub fn dataset_seed(base: u64, n: usize, rep: usize) -> u64 {
    derive_seed(derive_seed(base, n as u64), rep as u64)
}

/// Resolve the config's DGP and scenarios, then run the full study.
pub fn run_config(config: &MonteCarloConfig) -> Result<StudyOutput, StudyError> {
    config.validate()?;
    let dgp = DiscreteDgp::resolve(&config.dgp)?;
    run_study(config, &config.scenario_specs()?, &dgp)
}

pub fn run_study(
    config: &MonteCarloConfig,
    scenarios: &[ScenarioSpec],
    dgp: &DiscreteDgp,
) -> Result<StudyOutput, StudyError> {
    config.validate()?;
    let truths = resolve_truths(config, dgp)?;
    let replicates = run_replicates(config, scenarios, dgp, 0..config.reps)?;
    let report = aggregate(config, scenarios, &truths, &replicates)?;
    Ok(StudyOutput {
        report,
        replicates,
        metadata: StudyMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            scenarios: scenarios.to_vec(),
            truths,
        },
    })
}

/// Given truths, or simulated ones from `truth_n` intervened draws.
pub fn resolve_truths(config: &MonteCarloConfig, dgp: &DiscreteDgp) -> Result<Vec<TruthRecord>, StudyError> {
    let seed = derive_seed(config.seed, TRUTH_STREAM);
    config
        .regime_specs()?
        .iter()
        .map(|regime| {
            let label = regime.label();
            Ok(match &config.truth {
                Truth::Given(map) => TruthRecord {
                    value: *map.get(&label).ok_or_else(|| {
                        StudyError::InvalidConfig(format!("no truth given for regime {label}"))
                    })?,
                    regime: label,
                    source: "given".into(),
                    n: None,
                    seed: None,
                },
                Truth::Auto => TruthRecord {
                    value: dgp.simulate_ground_truth(config.truth_n, seed, regime)?,
                    regime: label,
                    source: "simulated".into(),
                    n: Some(config.truth_n),
                    seed: Some(seed),
                },
            })
        })
        .collect()
}

/// Drop gamma classifiers nobody will use.
fn trimmed(spec: &NuisanceSpec, estimators: &[EstimatorId]) -> NuisanceSpec {
    let mut spec = spec.clone();
    if spec.h_mode == HMode::Direct && !estimators.contains(&EstimatorId::Ipw2b) {
        spec.gamma1 = None;
        spec.gamma2 = None;
    }
    spec
}

fn replicate(scenario: &str, regime: &RegimeSpec, n: usize, rep: usize, id: EstimatorId) -> Replicate {
    Replicate {
        scenario: scenario.to_string(),
        estimator: id.as_str().to_string(),
        regime: regime.label(),
        n,
        rep,
        psi: None,
        se: None,
        lo: None,
        hi: None,
        warnings: 0,
        error: None,
    }
}

fn record(mut r: Replicate, result: Result<EstimateResult, String>) -> Replicate {
    match result {
        Ok(res) if res.psi.is_finite() => {
            r.psi = Some(res.psi);
            r.se = res.se;
            r.lo = res.ci.map(|c| c.0);
            r.hi = res.ci.map(|c| c.1);
            r.warnings = res.diagnostics.iter().filter(|d| d.is_warning()).count();
        }
        Ok(res) => r.error = Some(format!("non-finite estimate {}", res.psi)),
        Err(e) => r.error = Some(e),
    }
    r
}

fn run_unit(
    data: &LongitudinalDataset,
    specs: &[(String, NuisanceSpec)],
    regimes: &[RegimeSpec],
    config: &MonteCarloConfig,
    n: usize,
    rep: usize,
) -> Vec<Replicate> {
    let mut out = Vec::new();
    for (scenario, spec) in specs {
        for regime in regimes {
            match Estimation::new(data, spec, regime, config.alpha) {
                Ok(est) => {
                    for &id in &config.estimators {
                        let res = est.run(id).map_err(|e| e.to_string());
                        out.push(record(replicate(scenario, regime, n, rep, id), res));
                    }
                }
                Err(e) => {
                    for &id in &config.estimators {
                        let res = Err(format!("nuisance fit failed: {e}"));
                        out.push(record(replicate(scenario, regime, n, rep, id), res));
                    }
                }
            }
        }
    }
    out
}

/// Run replications `reps` for every sample size; units run in parallel and
/// come back in `(n, rep)` order.
pub fn run_replicates(
    config: &MonteCarloConfig,
    scenarios: &[ScenarioSpec],
    dgp: &DiscreteDgp,
    reps: Range<usize>,
) -> Result<Vec<Replicate>, StudyError> {
    let regimes = config.regime_specs()?;
    for r in &regimes {
        r.check_horizon(dgp.horizon())?;
    }
    let specs: Vec<(String, NuisanceSpec)> = scenarios
        .iter()
        .map(|s| (s.id.clone(), trimmed(&s.spec, &config.estimators)))
        .collect();
    let units: Vec<(usize, usize)> =
        config.n.iter().flat_map(|&n| reps.clone().map(move |rep| (n, rep))).collect();
    let chunks = units
        .par_iter()
        .map(|&(n, rep)| {
            let data = dgp.simulate(n, dataset_seed(config.seed, n, rep))?;
            Ok(run_unit(&data, &specs, &regimes, config, n, rep))
        })
        .collect::<Result<Vec<_>, StudyError>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Reduce replications to one row per (scenario, estimator, regime, n).
/// The result does not depend on the order of `replicates`.
pub fn aggregate(
    config: &MonteCarloConfig,
    scenarios: &[ScenarioSpec],
    truths: &[TruthRecord],
    replicates: &[Replicate],
) -> Result<StudyReport, StudyError> {
    let regimes = config.regime_specs()?;
    let mut cells: BTreeMap<(&str, &str, String, usize), Vec<&Replicate>> = BTreeMap::new();
    for r in replicates {
        cells
            .entry((r.scenario.as_str(), r.estimator.as_str(), r.regime.clone(), r.n))
            .or_default()
            .push(r);
    }
    let mut rows = Vec::new();
    for scenario in scenarios {
        for &id in &config.estimators {
            for regime in &regimes {
                let label = regime.label();
                let truth = truths
                    .iter()
                    .find(|t| t.regime == label)
                    .ok_or_else(|| StudyError::InvalidConfig(format!("no truth for regime {label}")))?
                    .value;
                for &n in &config.n {
                    let key = (scenario.id.as_str(), id.as_str(), label.clone(), n);
                    let mut cell: Vec<&Replicate> = cells.get(&key).cloned().unwrap_or_default();
                    cell.sort_by_key(|r| r.rep);
                    cell.dedup_by_key(|r| r.rep);
                    rows.push(metrics(&scenario.id, id, &label, n, truth, &cell));
                }
            }
        }
    }
    Ok(StudyReport { rows })
}

fn metrics(scenario: &str, id: EstimatorId, regime: &str, n: usize, truth: f64, cell: &[&Replicate]) -> MetricRow {
    let done: Vec<&Replicate> = cell.iter().copied().filter(|r| r.psi.is_some()).collect();
    let psi: Vec<f64> = done.iter().filter_map(|r| r.psi).collect();
    let k = psi.len();
    let root_n = (n as f64).sqrt();
    let mean_psi = (k > 0).then(|| mean(&psi));
    let scaled_sd = (k > 1).then(|| {
        let m = mean_psi.expect("k > 0");
        let sq: Vec<f64> = psi.iter().map(|p| (p - m) * (p - m)).collect();
        root_n * (pairwise_sum(&sq) / (k - 1) as f64).sqrt()
    });
    let with_ci: Vec<(f64, f64)> = done.iter().filter_map(|r| r.lo.zip(r.hi)).collect();
    let coverage = (id.has_inference() && !with_ci.is_empty()).then(|| {
        let hits: Vec<f64> =
            with_ci.iter().map(|&(lo, hi)| if lo <= truth && truth <= hi { 1.0 } else { 0.0 }).collect();
        mean(&hits)
    });
    let se: Vec<f64> = done.iter().filter_map(|r| r.se).collect();
    MetricRow {
        scenario: scenario.to_string(),
        estimator: id.as_str().to_string(),
        regime: regime.to_string(),
        n,
        reps: k,
        mean_psi,
        scaled_abs_bias: mean_psi.map(|m| root_n * (m - truth).abs()),
        scaled_sd,
        coverage,
        mean_se: (!se.is_empty()).then(|| mean(&se)),
        failures: cell.len() - k,
    }
}
