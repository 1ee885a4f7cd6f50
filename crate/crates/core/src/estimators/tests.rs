use super::*;
use crate::data::{enumerate_joint, exact_f_functional, DiscreteDgp, ExactJoint, LongitudinalDataset};
use crate::nuisance::HMode;

fn regimes() -> Vec<RegimeSpec> {
    ["00", "01", "10", "11"].iter().map(|s| RegimeSpec::parse(s).unwrap()).collect()
}

fn toy() -> (ExactJoint, LongitudinalDataset) {
    let joint = enumerate_joint(&DiscreteDgp::toy_v1()).unwrap();
    let data = joint.population_dataset();
    (joint, data)
}

fn saturated() -> NuisanceSpec {
    let mut spec = NuisanceSpec::saturated(1, 2);
    spec.h_mode = HMode::Gamma;
    spec
}

fn epsilons(r: &EstimateResult) -> Vec<(String, f64)> {
    r.diagnostics
        .iter()
        .filter_map(|d| match d {
            Diagnostic::Fluctuation { step, epsilon, .. } => Some((step.clone(), *epsilon)),
            _ => None,
        })
        .collect()
}

#[test]
fn every_estimator_reproduces_the_functional_on_the_population() {
    let (joint, data) = toy();
    for regime in regimes() {
        let truth = exact_f_functional(&joint, &regime).unwrap();
        let est = Estimation::new(&data, &saturated(), &regime, 0.05).unwrap();
        for (id, res) in est.run_many(&EstimatorId::ALL) {
            let res = res.unwrap();
            assert!((res.psi - truth).abs() < 1e-6, "{id} {regime}: {} vs {truth}", res.psi);
            assert_eq!(res.se.is_some(), id.has_inference());
        }
    }
}

#[test]
fn weighting_estimators_are_exact_to_tighter_tolerance() {
    let (joint, data) = toy();
    for regime in regimes() {
        let truth = exact_f_functional(&joint, &regime).unwrap();
        let est = Estimation::new(&data, &saturated(), &regime, 0.05).unwrap();
        for id in [EstimatorId::Ipw1, EstimatorId::Ipw2a, EstimatorId::Ipw2b, EstimatorId::Sr1, EstimatorId::Sr2] {
            assert!((est.run(id).unwrap().psi - truth).abs() < 1e-8, "{id} {regime}");
        }
        let a = est.run(EstimatorId::Ipw2a).unwrap().psi;
        let b = est.run(EstimatorId::Ipw2b).unwrap().psi;
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn one_step_is_plug_in_plus_mean_eif() {
    let data = DiscreteDgp::paper().simulate(800, 21).unwrap();
    let spec = NuisanceSpec::from_json(
        r#"{ "pi": ["L1 + L2", "L1 + L2 + A0 + M0"], "g": ["L1 + L2 + A0", "L1 + L2 + A0 + A1 + M0"],
             "qm": ["L1 + L2", "L1 + L2 + M0"], "r": ["L1 + L2", "L1 + L2 + M0"], "qy": "L1 + L2 + M0 + M1" }"#,
    )
    .unwrap();
    let regime = RegimeSpec::parse("11").unwrap();
    let est = Estimation::new(&data, &spec, &regime, 0.05).unwrap();
    let os = est.run(EstimatorId::OneStep).unwrap();
    let plug_in = est.run(EstimatorId::Sr1).unwrap().psi;
    let inputs = est.eif_inputs().unwrap();
    let breakdown = crate::inference::compute_eif(&inputs, plug_in).unwrap();
    assert!((os.psi - (plug_in + breakdown.mean())).abs() < 1e-12);
    assert!(os.eif_mean.unwrap().abs() < 1e-10);
    let (lo, hi) = os.ci.unwrap();
    assert!(lo <= os.psi && os.psi <= hi);
}

#[test]
fn targeting_is_a_no_op_at_the_truth() {
    let (_, data) = toy();
    let regime = RegimeSpec::parse("11").unwrap();
    let est = Estimation::new(&data, &saturated(), &regime, 0.05).unwrap();
    for id in [EstimatorId::Tmle, EstimatorId::TmleMed] {
        let res = est.run(id).unwrap();
        let eps = epsilons(&res);
        assert!(!eps.is_empty());
        for (step, e) in eps {
            assert!(e.abs() < 1e-6, "{id} {step}: {e}");
        }
    }
}

#[test]
fn outcome_fluctuation_solves_its_score() {
    let data = DiscreteDgp::paper().simulate(1000, 4).unwrap();
    let spec = NuisanceSpec::from_json(
        r#"{ "pi": ["L1", "L1 + A0 + M0"], "g": ["L1 + A0", "L1 + A0 + A1 + M0"],
             "qm": ["L2", "L2 + M0"], "r": ["L2", "L2 + M0"], "qy": "L1 + M0 + M1" }"#,
    )
    .unwrap();
    let regime = RegimeSpec::parse("11").unwrap();
    let est = Estimation::new(&data, &spec, &regime, 0.05).unwrap();
    let res = est.run(EstimatorId::Tmle).unwrap();
    let eps_y = epsilons(&res).into_iter().find(|(s, _)| s == "Q_Y").unwrap().1;
    let h = &est.tables().h[1];
    let q = est.tables().q_y_observed(&data);
    let score: f64 = (0..data.n_rows())
        .map(|i| h[i] * (data.outcome()[i] - tmle::shift(q[i], eps_y)))
        .sum();
    assert!(score.abs() / data.n_rows() as f64 <= 1e-6, "score {score}");
    let eif = res.eif_values.unwrap();
    let sd = (eif.iter().map(|v| v * v).sum::<f64>() / eif.len() as f64).sqrt();
    let bound = 1e-3_f64.max(0.01 * sd / (eif.len() as f64).sqrt());
    assert!(res.eif_mean.unwrap().abs() <= bound);
}

#[test]
fn mediator_targeting_converges_immediately_at_the_truth() {
    let (joint, data) = toy();
    let regime = RegimeSpec::parse("10").unwrap();
    let truth = exact_f_functional(&joint, &regime).unwrap();
    let res = Estimation::new(&data, &saturated(), &regime, 0.05)
        .unwrap()
        .with_mediator_options(MediatorTmleOptions { max_iters: 1, tol: 1e-6 })
        .run(EstimatorId::TmleMed)
        .unwrap();
    assert!((res.psi - truth).abs() < 1e-6);
    assert!(!res.diagnostics.iter().any(|d| matches!(d, Diagnostic::MaxIterations { .. })));
}

#[test]
fn zero_mediator_iterations_return_the_plug_in() {
    let data = DiscreteDgp::paper().simulate(600, 8).unwrap();
    let spec = NuisanceSpec::from_json(
        r#"{ "pi": ["L1 + L2", "L1 + L2 + A0 + M0"], "g": ["L1 + L2 + A0", "L1 + L2 + A0 + A1 + M0"],
             "qm": ["L1 + L2", "L1 + L2 + M0"], "r": ["L1 + L2", "L1 + L2 + M0"], "qy": "L1 + L2 + M0 + M1" }"#,
    )
    .unwrap();
    let regime = RegimeSpec::parse("11").unwrap();
    let res = estimate_tmle_mediator(&data, &spec, &regime, 0.05, 0, 1e-8).unwrap();
    assert!(res.diagnostics.iter().any(|d| matches!(d, Diagnostic::MaxIterations { iterations: 0, .. })));
    assert!((0.0..=1.0).contains(&res.psi));
    let converged = estimate_tmle_mediator(&data, &spec, &regime, 0.05, 100, 1e-8).unwrap();
    assert!(!converged.diagnostics.iter().any(|d| matches!(d, Diagnostic::MaxIterations { .. })));
    assert!((res.psi - converged.psi).abs() < 0.05);
}

#[test]
fn missing_support_gives_zero_with_positivity_diagnostic() {
    let data = DiscreteDgp::paper().simulate(300, 2).unwrap();
    let cols: Vec<(String, Vec<f64>)> = data
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let col = if name == "A0" { vec![0.0; data.n_rows()] } else { data.column(j).to_vec() };
            (name.clone(), col)
        })
        .collect();
    let data = LongitudinalDataset::from_columns(cols, None).unwrap();
    let spec = NuisanceSpec::from_json(
        r#"{ "pi": ["L1", "L1 + M0"], "g": ["L1 + A0", "L1 + A1 + M0"],
             "qm": ["L1", "L1 + M0"], "r": ["L1", "L1 + M0"], "qy": "L1 + M0 + M1" }"#,
    )
    .unwrap();
    let res = estimate_ipw1(&data, &spec, &RegimeSpec::parse("11").unwrap()).unwrap();
    assert_eq!(res.psi, 0.0);
    assert!(res.diagnostics.iter().any(|d| matches!(d, Diagnostic::Positivity { .. })));
}

#[test]
fn constant_outcome_model_gives_constant_estimates() {
    let (_, data) = toy();
    let mut spec = saturated();
    spec.qy = "1".into();
    let regime = RegimeSpec::parse("01").unwrap();
    let est = Estimation::new(&data, &spec, &regime, 0.05).unwrap();
    let c = est.tables().q_y[0][0];
    for id in [EstimatorId::Ipw2a, EstimatorId::Ipw2b, EstimatorId::Sr1, EstimatorId::Sr2] {
        assert!((est.run(id).unwrap().psi - c).abs() < 1e-8, "{id}");
    }
}

#[test]
fn ids_round_trip_and_bad_alpha_is_rejected() {
    for id in EstimatorId::ALL {
        assert_eq!(id.as_str().parse::<EstimatorId>().unwrap(), id);
    }
    assert!("ipw3".parse::<EstimatorId>().is_err());
    let (_, data) = toy();
    let regime = RegimeSpec::parse("11").unwrap();
    assert!(matches!(
        Estimation::new(&data, &saturated(), &regime, 1.5),
        Err(EstimateError::InvalidAlpha(_))
    ));
}

#[test]
fn result_json_has_the_documented_keys() {
    let (_, data) = toy();
    let regime = RegimeSpec::parse("11").unwrap();
    let res = estimate_onestep(&data, &saturated(), &regime, 0.1).unwrap();
    let v: serde_json::Value = serde_json::from_str(&res.to_json()).unwrap();
    for key in ["estimator", "psi", "se", "ci", "alpha", "diagnostics"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["estimator"], "onestep");
    let ipw = estimate_ipw1(&data, &saturated(), &regime).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ipw.to_json()).unwrap();
    assert!(v["se"].is_null() && v["ci"].is_null());
}
