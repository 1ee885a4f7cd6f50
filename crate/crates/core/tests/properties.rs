use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frontdoor::glm::{binomial_score, fit_logistic_with, IrlsOptions};
use frontdoor::inference::wald_interval;
use frontdoor::simstudy::{aggregate, resolve_truths, run_replicates, ScenarioRef, Truth};
use frontdoor::{
    DesignMatrix, DiscreteDgp, Estimation, EstimatorId, LongitudinalDataset, MonteCarloConfig, RegimeSpec,
    ScenarioSpec,
};

fn csv_bytes(data: &LongitudinalDataset) -> Vec<u8> {
    let mut buf = Vec::new();
    data.write_csv(&mut buf).expect("write csv");
    buf
}

fn small_config(seed: u64) -> MonteCarloConfig {
    MonteCarloConfig {
        dgp: "builtin:paper".into(),
        scenarios: vec![ScenarioRef::Id("a".into()), ScenarioRef::Id("e".into())],
        n: vec![150],
        reps: 4,
        estimators: vec![EstimatorId::Ipw1, EstimatorId::OneStep],
        regimes: vec![vec![1, 1]],
        seed,
        truth: Truth::Given([("11".to_string(), 0.45)].into()),
        ..MonteCarloConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regime_display_parses_back(values in proptest::collection::vec(0u8..2, 1..6)) {
        let regime = RegimeSpec::new(values.clone()).unwrap();
        prop_assert_eq!(RegimeSpec::parse(&regime.to_string()).unwrap(), regime.clone());
        prop_assert_eq!(RegimeSpec::parse(&regime.label()).unwrap(), regime);
    }

    #[test]
    fn irls_reaches_a_stationary_point(seed in any::<u64>(), n in 15usize..80, p in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = vec![vec![1.0; n]];
        for _ in 0..p {
            cols.push((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        }
        let x = DesignMatrix::from_columns(cols, (0..=p).map(|j| format!("x{j}")).collect());
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_bool(0.4))).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
        let fit = fit_logistic_with(&x, &y, &w, None, IrlsOptions::default()).unwrap();
        prop_assert!(fit.loglik_trace.windows(2).all(|t| t[1] >= t[0]));
        if !fit.separated {
            let score = binomial_score(&x, &y, &w, None, &fit.coefficients);
            prop_assert!(fit.converged);
            prop_assert!(score.iter().all(|s| s.abs() <= 1e-8), "score {:?}", score);
        }
    }

    #[test]
    fn wald_interval_is_centred_and_shrinks_with_alpha(
        eif in proptest::collection::vec(-5.0f64..5.0, 2..60),
        psi in -1.0f64..1.0,
    ) {
        let narrow = wald_interval(&eif, None, psi, 0.2).unwrap();
        let wide = wald_interval(&eif, None, psi, 0.01).unwrap();
        prop_assert!(wide.lo <= narrow.lo && narrow.lo <= psi && psi <= narrow.hi && narrow.hi <= wide.hi);
        prop_assert!(((psi - wide.lo) - (wide.hi - psi)).abs() <= 1e-12);
        prop_assert!(wide.se >= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn dataset_csv_round_trips(seed in any::<u64>(), n in 1usize..200) {
        let data = DiscreteDgp::paper().simulate(n, seed).unwrap();
        let bytes = csv_bytes(&data);
        let back = LongitudinalDataset::read_csv(bytes.as_slice()).unwrap();
        prop_assert_eq!(csv_bytes(&back), bytes);
        prop_assert_eq!(back.n_rows(), n);
    }

    #[test]
    fn estimates_do_not_depend_on_row_order(seed in any::<u64>()) {
        let data = DiscreteDgp::paper().simulate(300, seed).unwrap();
        let text = String::from_utf8(csv_bytes(&data)).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let header = lines.remove(0);
        lines.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let shuffled = format!("{header}\n{}\n", lines.join("\n"));
        let permuted = LongitudinalDataset::read_csv(shuffled.as_bytes()).unwrap();
        let spec = ScenarioSpec::builtin("a").unwrap().spec;
        let regime = RegimeSpec::parse("11").unwrap();
        let a = Estimation::new(&data, &spec, &regime, 0.05).unwrap();
        let b = Estimation::new(&permuted, &spec, &regime, 0.05).unwrap();
        for id in [EstimatorId::Ipw1, EstimatorId::Sr1, EstimatorId::OneStep, EstimatorId::Tmle] {
            let (x, y) = (a.run(id).unwrap().psi, b.run(id).unwrap().psi);
            prop_assert!((x - y).abs() <= 1e-8, "{}: {} vs {}", id, x, y);
        }
    }

    #[test]
    fn replicate_ranges_compose_and_aggregation_ignores_order(seed in any::<u64>()) {
        let cfg = small_config(seed);
        let scenarios = cfg.scenario_specs().unwrap();
        let dgp = DiscreteDgp::paper();
        let whole = run_replicates(&cfg, &scenarios, &dgp, 0..4).unwrap();
        let mut split = run_replicates(&cfg, &scenarios, &dgp, 0..2).unwrap();
        split.extend(run_replicates(&cfg, &scenarios, &dgp, 2..4).unwrap());
        let key = |r: &frontdoor::simstudy::Replicate| (r.scenario.clone(), r.estimator.clone(), r.rep);
        let mut sorted_whole = whole.clone();
        sorted_whole.sort_by_key(key);
        split.sort_by_key(key);
        prop_assert_eq!(&sorted_whole, &split);

        let truths = resolve_truths(&cfg, &dgp).unwrap();
        let report = aggregate(&cfg, &scenarios, &truths, &whole).unwrap();
        let mut shuffled = whole;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(aggregate(&cfg, &scenarios, &truths, &shuffled).unwrap(), report);
    }
}
