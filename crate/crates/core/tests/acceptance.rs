//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frontdoor::data::{enumerate_joint, exact_counterfactual_mean, exact_eif_inputs, exact_f_functional};
use frontdoor::glm::{binomial_loglik, binomial_score, fit_logistic_with, IrlsOptions};
use frontdoor::inference::compute_eif;
use frontdoor::nuisance::fit_nuisance_set;
use frontdoor::simstudy::{plot_from_csv, run_config, ScenarioRef, Truth, METRICS_FILE};
use frontdoor::{
    DesignMatrix, DiscreteDgp, Estimation, EstimatorId, HMode, MonteCarloConfig, NuisanceSpec,
    RegimeSpec, StudyReport,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn regime(s: &str) -> RegimeSpec {
    RegimeSpec::parse(s).expect("valid regime")
}

fn all_regimes() -> Vec<RegimeSpec> {
    ["00", "01", "10", "11"].into_iter().map(regime).collect()
}

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_budget(elapsed: Duration, budget: Duration, detail: String) -> Check {
    ensure(elapsed <= budget, format!("{detail}; {:.1}s of {:.0}s budget", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

fn study(scenarios: &[&str], n: &[usize], reps: usize, estimators: &[EstimatorId]) -> MonteCarloConfig {
    MonteCarloConfig {
        dgp: "builtin:paper".into(),
        scenarios: scenarios.iter().map(|s| ScenarioRef::Id(s.to_string())).collect(),
        n: n.to_vec(),
        reps,
        estimators: estimators.to_vec(),
        regimes: vec![vec![1, 1]],
        seed: 2024,
        truth: Truth::Given([("11".to_string(), 0.45)].into()),
        ..MonteCarloConfig::default()
    }
}

fn identification_identity() -> Check {
    let start = Instant::now();
    let dgp = DiscreteDgp::toy_v1();
    let joint = enumerate_joint(&dgp).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for r in all_regimes() {
        let f = exact_f_functional(&joint, &r).map_err(|e| e.to_string())?;
        let cf = exact_counterfactual_mean(&dgp, &r).map_err(|e| e.to_string())?;
        worst = worst.max((f - cf).abs());
    }
    let detail = format!("max |F - E[Y(a)]| = {worst:.2e} over 4 regimes");
    if worst > 1e-10 {
        return Err(detail);
    }
    within_budget(start.elapsed(), Duration::from_secs(1), detail)
}

fn oracle_equivalence() -> Check {
    let start = Instant::now();
    let joint = enumerate_joint(&DiscreteDgp::toy_v1()).map_err(|e| e.to_string())?;
    let data = joint.population_dataset();
    let mut spec = NuisanceSpec::saturated(1, 2);
    spec.h_mode = HMode::Gamma;
    let mut worst: f64 = 0.0;
    let mut worst_id = String::new();
    for r in all_regimes() {
        let truth = exact_f_functional(&joint, &r).map_err(|e| e.to_string())?;
        let est = Estimation::new(&data, &spec, &r, 0.05).map_err(|e| e.to_string())?;
        for id in EstimatorId::ALL {
            let psi = est.run(id).map_err(|e| format!("{id}: {e}"))?.psi;
            if (psi - truth).abs() >= worst {
                worst = (psi - truth).abs();
                worst_id = format!("{id} at {r}");
            }
        }
    }
    let detail = format!("8 estimators x 4 regimes, max error {worst:.2e} ({worst_id})");
    if worst > 1e-6 {
        return Err(detail);
    }
    within_budget(start.elapsed(), Duration::from_secs(10), detail)
}

fn ground_truth() -> Check {
    let start = Instant::now();
    let dgp = DiscreteDgp::paper();
    let t11 = dgp.simulate_ground_truth(1_000_000, 7, &regime("11")).map_err(|e| e.to_string())?;
    let t00 = dgp.simulate_ground_truth(1_000_000, 7, &regime("00")).map_err(|e| e.to_string())?;
    let detail = format!("psi(1,1) = {t11:.4}, psi(0,0) = {t00:.4}");
    if (t11 - 0.45).abs() > 0.005 || (t00 - 0.57).abs() > 0.005 {
        return Err(detail);
    }
    within_budget(start.elapsed(), Duration::from_secs(60), detail)
}

fn eif_mean_zero() -> Check {
    let joint = enumerate_joint(&DiscreteDgp::toy_v1()).map_err(|e| e.to_string())?;
    let mut worst_mean: f64 = 0.0;
    let mut worst_form: f64 = 0.0;
    for r in all_regimes() {
        let psi = exact_f_functional(&joint, &r).map_err(|e| e.to_string())?;
        let (data, inputs) = exact_eif_inputs(&joint, &r).map_err(|e| e.to_string())?;
        let eif = compute_eif(&inputs, psi).map_err(|e| e.to_string())?;
        let w = data.weights();
        let mean: f64 = eif.total.iter().zip(&w).map(|(d, p)| d * p).sum();
        worst_mean = worst_mean.max(mean.abs());
        for (direct, corollary) in eif.d_a.iter().zip(&eif.d_a_corollary) {
            for (a, b) in direct.iter().zip(corollary) {
                worst_form = worst_form.max((a - b).abs());
            }
        }
    }
    ensure(
        worst_mean <= 1e-10 && worst_form <= 1e-10,
        format!("max |E[D*]| = {worst_mean:.2e}, max D*_A form gap = {worst_form:.2e}"),
    )
}

fn double_robustness() -> Check {
    let start = Instant::now();
    let ids = [EstimatorId::Ipw1, EstimatorId::Sr1, EstimatorId::OneStep, EstimatorId::Tmle];
    let out = run_config(&study(&["a", "b", "c", "d"], &[5000], 500, &ids)).map_err(|e| e.to_string())?;
    let bias = |s: &str, e: &str| {
        out.report
            .rows
            .iter()
            .find(|r| r.scenario == s && r.estimator == e)
            .and_then(|r| r.mean_psi)
            .map(|m| m - 0.45)
            .unwrap_or(f64::NAN)
    };
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for s in ["a", "b", "c", "d"] {
        for e in ["onestep", "tmle"] {
            let b = bias(s, e);
            worst = worst.max(b.abs());
            if b.is_nan() || b.abs() > 0.02 {
                failures.push(format!("{e} in ({s}) bias {b:.4}"));
            }
        }
    }
    let ipw_d = bias("d", "ipw1");
    let sr_b = bias("b", "sr1");
    if ipw_d.is_nan() || ipw_d.abs() < 0.03 {
        failures.push(format!("ipw1 in (d) bias only {ipw_d:.4}"));
    }
    if sr_b.is_nan() || sr_b.abs() < 0.03 {
        failures.push(format!("sr1 in (b) bias only {sr_b:.4}"));
    }
    let detail = format!(
        "max |bias| one-step/TMLE {worst:.4}; ipw1 (d) {ipw_d:.4}; sr1 (b) {sr_b:.4}"
    );
    if !failures.is_empty() {
        return Err(format!("{detail}; {}", failures.join("; ")));
    }
    within_budget(start.elapsed(), Duration::from_secs(30 * 60), detail)
}

fn coverage() -> Check {
    let start = Instant::now();
    let ids = [EstimatorId::OneStep, EstimatorId::Tmle];
    let a = run_config(&study(&["a"], &[2000], 500, &ids)).map_err(|e| e.to_string())?;
    let e = run_config(&study(&["e"], &[500, 5000], 500, &ids)).map_err(|e| e.to_string())?;
    let cov = |rows: &[frontdoor::simstudy::MetricRow], est: &str, n: usize| {
        rows.iter()
            .find(|r| r.estimator == est && r.n == n)
            .and_then(|r| r.coverage)
            .unwrap_or(f64::NAN)
    };
    let mut parts = Vec::new();
    let mut ok = true;
    for est in ["onestep", "tmle"] {
        let ca = cov(&a.report.rows, est, 2000);
        let small = cov(&e.report.rows, est, 500);
        let large = cov(&e.report.rows, est, 5000);
        ok &= (0.90..=0.98).contains(&ca) && large <= 0.6 && large < small;
        parts.push(format!("{est}: (a) {ca:.3}, (e) {small:.3} -> {large:.3}"));
    }
    let detail = parts.join("; ");
    if !ok {
        return Err(detail);
    }
    within_budget(start.elapsed(), Duration::from_secs(20 * 60), detail)
}

fn tmle_score() -> Check {
    let dgp = DiscreteDgp::paper();
    let spec = frontdoor::ScenarioSpec::builtin("a").expect("builtin").spec;
    let r = regime("11");
    let mut good = 0;
    let mut worst_ratio: f64 = 0.0;
    for rep in 0..100u64 {
        let data = dgp.simulate(1000, frontdoor::numeric::derive_seed(77, rep)).map_err(|e| e.to_string())?;
        let res = Estimation::new(&data, &spec, &r, 0.05)
            .and_then(|est| est.run(EstimatorId::Tmle))
            .map_err(|e| e.to_string())?;
        let eif = res.eif_values.as_ref().expect("tmle reports eif");
        let n = eif.len() as f64;
        let m = eif.iter().sum::<f64>() / n;
        let sd = (eif.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt();
        let bound = 1e-3_f64.max(0.01 * sd / n.sqrt());
        let mean = res.eif_mean.expect("tmle reports eif mean").abs();
        worst_ratio = worst_ratio.max(mean / bound);
        if mean <= bound {
            good += 1;
        }
    }
    ensure(good >= 95, format!("{good}/100 runs within bound; worst |mean|/bound = {worst_ratio:.3}"))
}

fn glm_engine() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut score_bad, mut mono_bad, mut grad_bad) = (0, 0, 0);
    let (mut worst_score, mut worst_grad): (f64, f64) = (0.0, 0.0);
    let problems = 250;
    for _ in 0..problems {
        let n = rng.gen_range(20..120);
        let p = rng.gen_range(1..5);
        let beta: Vec<f64> = (0..=p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut cols = vec![vec![1.0; n]];
        for _ in 0..p {
            cols.push((0..n).map(|_| rng.gen_range(-2.0..2.0)).collect());
        }
        let x = DesignMatrix::from_columns(cols, (0..=p).map(|j| format!("x{j}")).collect());
        let offset: Option<Vec<f64>> = rng.gen_bool(0.5).then(|| (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let eta: Vec<f64> = x.mul_vec(&beta);
        let y: Vec<f64> = eta
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let e = e + offset.as_ref().map_or(0.0, |o| o[i]);
                f64::from(rng.gen_bool(1.0 / (1.0 + (-e).exp())))
            })
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let off = offset.as_deref();
        let fit = fit_logistic_with(&x, &y, &w, off, IrlsOptions::default()).map_err(|e| e.to_string())?;
        if !fit.separated {
            let s = binomial_score(&x, &y, &w, off, &fit.coefficients);
            let m = s.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            worst_score = worst_score.max(m);
            if !(fit.converged && m <= 1e-8) {
                score_bad += 1;
            }
        }
        if fit.loglik_trace.windows(2).any(|t| t[1] < t[0]) {
            mono_bad += 1;
        }
        let at: Vec<f64> = (0..=p).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let analytic = binomial_score(&x, &y, &w, off, &at);
        let h = 1e-5;
        for j in 0..=p {
            let mut up = at.clone();
            let mut dn = at.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (binomial_loglik(&x, &y, &w, off, &up) - binomial_loglik(&x, &y, &w, off, &dn)) / (2.0 * h);
            let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(1.0);
            worst_grad = worst_grad.max(rel);
            if rel > 1e-6 {
                grad_bad += 1;
            }
        }
    }
    let detail = format!(
        "{problems} problems: score max {worst_score:.1e}, monotonicity violations {mono_bad}, gradient rel err max {worst_grad:.1e}"
    );
    if score_bad + mono_bad + grad_bad > 0 {
        return Err(format!("{detail}; score failures {score_bad}, gradient failures {grad_bad}"));
    }
    within_budget(start.elapsed(), Duration::from_secs(30), detail)
}

fn density_ratio_identity() -> Check {
    let joint = enumerate_joint(&DiscreteDgp::toy_v1()).map_err(|e| e.to_string())?;
    let data = joint.population_dataset();
    let mut spec = NuisanceSpec::saturated(1, 2);
    spec.h_mode = HMode::Gamma;
    let mut worst_h: f64 = 0.0;
    let mut worst_psi: f64 = 0.0;
    for r in all_regimes() {
        let set = fit_nuisance_set(&data, &spec, &r).map_err(|e| e.to_string())?;
        let direct = set.h_direct(&data).map_err(|e| e.to_string())?;
        let gamma = set.h_gamma(&data).map_err(|e| e.to_string())?;
        for (dt, gt) in direct.iter().zip(&gamma) {
            for (a, b) in dt.iter().zip(gt) {
                worst_h = worst_h.max((a - b).abs());
            }
        }
        let est = Estimation::new(&data, &spec, &r, 0.05).map_err(|e| e.to_string())?;
        let a = est.run(EstimatorId::Ipw2a).map_err(|e| e.to_string())?.psi;
        let b = est.run(EstimatorId::Ipw2b).map_err(|e| e.to_string())?.psi;
        worst_psi = worst_psi.max((a - b).abs());
    }
    ensure(
        worst_h <= 1e-8 && worst_psi <= 1e-8,
        format!("max |H_direct - H_gamma| = {worst_h:.2e}, |IPW2a - IPW2b| = {worst_psi:.2e}"),
    )
}

fn files_equal(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for name in names {
        let x = fs::read(a.join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = fs::read(b.join(name)).map_err(|e| format!("{name}: {e}"))?;
        if x != y {
            return Err(format!("{name} differs"));
        }
    }
    Ok(())
}

fn determinism() -> Check {
    let mut cfg = study(&["a", "e"], &[200, 400], 3, &[EstimatorId::Ipw1, EstimatorId::OneStep, EstimatorId::Tmle]);
    cfg.regimes = vec![vec![1, 1], vec![0, 0]];
    cfg.truth = Truth::Given([("11".to_string(), 0.45), ("00".to_string(), 0.57)].into());
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().expect("tempdir")).collect();
    let first = run_config(&cfg).map_err(|e| e.to_string())?;
    first.emit(dirs[0].path(), true).map_err(|e| e.to_string())?;
    run_config(&cfg).map_err(|e| e.to_string())?.emit(dirs[1].path(), true).map_err(|e| e.to_string())?;
    let all = ["metrics.csv", "replicates.csv", "metadata.json", "bias.svg", "sd.svg", "coverage.svg"];
    files_equal(dirs[0].path(), dirs[1].path(), &all)?;
    plot_from_csv(&dirs[0].path().join(METRICS_FILE), dirs[2].path()).map_err(|e| e.to_string())?;
    files_equal(dirs[0].path(), dirs[2].path(), &["bias.svg", "sd.svg", "coverage.svg"])?;
    let parsed = StudyReport::read_csv_path(&dirs[0].path().join(METRICS_FILE)).map_err(|e| e.to_string())?;
    if parsed != first.report {
        return Err("metrics.csv does not round-trip".into());
    }
    let dgp = DiscreteDgp::paper();
    let csv = |seed| {
        let mut buf = Vec::new();
        dgp.simulate(50, seed).expect("simulate").write_csv(&mut buf).expect("csv");
        buf
    };
    ensure(
        csv(3) == csv(3),
        format!("{} study files byte-identical across runs; charts regenerated from metrics.csv alone", all.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("identification identity", identification_identity),
        ("oracle equivalence", oracle_equivalence),
        ("ground-truth reproduction", ground_truth),
        ("EIF mean zero", eif_mean_zero),
        ("double robustness", double_robustness),
        ("coverage", coverage),
        ("TMLE score property", tmle_score),
        ("GLM engine", glm_engine),
        ("density-ratio identity", density_ratio_identity),
        ("determinism and formats", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = format!("{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| f == &id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
