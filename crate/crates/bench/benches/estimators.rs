use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use frontdoor::glm::{fit_logistic_with, IrlsOptions};
use frontdoor::nuisance::fit_nuisance_set;
use frontdoor::{DesignMatrix, Estimation, EstimatorId};
use frontdoor_bench::{always_treat, paper_data, scenario_spec};

fn nuisance(c: &mut Criterion) {
    let spec = scenario_spec("a");
    let regime = always_treat();
    let mut group = c.benchmark_group("nuisance");
    for n in [500, 5000] {
        let data = paper_data(n, 3);
        group.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, data| {
            b.iter(|| fit_nuisance_set(black_box(data), &spec, &regime).unwrap())
        });
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let data = paper_data(2000, 4);
    let spec = scenario_spec("a");
    let regime = always_treat();
    let mut group = c.benchmark_group("estimator_n2000");
    for id in [EstimatorId::Ipw1, EstimatorId::Sr1, EstimatorId::OneStep, EstimatorId::Tmle, EstimatorId::TmleMed] {
        group.bench_function(id.to_string(), |b| {
            b.iter(|| Estimation::new(black_box(&data), &spec, &regime, 0.05).unwrap().run(id).unwrap())
        });
    }
    group.finish();
}

fn irls(c: &mut Criterion) {
    let data = paper_data(5000, 5);
    let names = ["L0_1", "L0_2", "A0", "M0"];
    let mut cols = vec![vec![1.0; data.n_rows()]];
    cols.extend(names.iter().map(|name| data.column_by_name(name).unwrap().to_vec()));
    let labels = std::iter::once("(Intercept)").chain(names).map(String::from).collect();
    let x = DesignMatrix::from_columns(cols, labels);
    let y = data.column_by_name("A1").unwrap().to_vec();
    let w = vec![1.0; y.len()];
    c.bench_function("irls_logistic_n5000_p5", |b| {
        b.iter(|| fit_logistic_with(black_box(&x), &y, &w, None, IrlsOptions::default()).unwrap())
    });
}

criterion_group!(benches, nuisance, estimators, irls);
criterion_main!(benches);
