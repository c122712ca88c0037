//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails (including by exceeding its time budget).

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lcta_core::classifier::{apply_stump, fit_stump, metrics, ConfusionMatrix};
use lcta_core::encoding::{decode_cell, encode_cell};
use lcta_core::irt::{
    estimate_joint, log_likelihood, log_likelihood_gradient, mean_session_abilities, prob_2pl,
    CalibrationConfig, ItemParameters,
};
use lcta_core::model::{ItemId, Outcome, Response, ResponseMatrix, StudentId};
use lcta_core::regression::{build_design, fit_ols, rank_factors, DesignMatrix, Factor};
use lcta_core::report::RiskRules;
use lcta_core::sim::{simulate, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::ln_gamma;

type Check = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn probability_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let it = ItemParameters {
            a: rng.random_range(0.1..4.0),
            b: rng.random_range(-4.0..4.0),
        };
        let d = rng.random_range(-6.0..6.0);
        ensure(prob_2pl(it.b, it) == 0.5, || {
            format!("P(b) != 0.5 at {it:?}")
        })?;
        worst = worst.max((prob_2pl(it.b + d, it) + prob_2pl(it.b - d, it) - 1.0).abs());
    }
    ensure(worst < 1e-12, || format!("symmetry error {worst:e}"))?;
    Ok(format!("1000 draws, worst symmetry error {worst:.1e}"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> ResponseMatrix {
    let cells = (0..n * m)
        .map(|_| match rng.random_range(0..3) {
            0 => Response::Correct,
            1 => Response::Incorrect,
            _ => Response::Absent,
        })
        .collect();
    ResponseMatrix::new(
        (0..n)
            .map(|i| StudentId::new(format!("s{i}")).unwrap())
            .collect(),
        (0..m)
            .map(|j| ItemId::new(format!("q{j}")).unwrap())
            .collect(),
        cells,
    )
    .unwrap()
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (n, m) = (rng.random_range(2..9), rng.random_range(2..7));
        let mat = random_matrix(&mut rng, n, m);
        let thetas: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
        let items: Vec<ItemParameters> = (0..m)
            .map(|_| ItemParameters {
                a: rng.random_range(0.3..2.5),
                b: rng.random_range(-2.5..2.5),
            })
            .collect();
        let g = log_likelihood_gradient(&mat, &thetas, &items).map_err(|e| e.to_string())?;
        let ll = |t: &[f64], it: &[ItemParameters]| log_likelihood(&mat, t, it).unwrap();
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for i in 0..n {
            let (mut up, mut dn) = (thetas.clone(), thetas.clone());
            up[i] += h;
            dn[i] -= h;
            analytic.push(g.theta[i]);
            numeric.push((ll(&up, &items) - ll(&dn, &items)) / (2.0 * h));
        }
        for j in 0..m {
            let (mut up, mut dn) = (items.clone(), items.clone());
            up[j].a += h;
            dn[j].a -= h;
            analytic.push(g.a[j]);
            numeric.push((ll(&thetas, &up) - ll(&thetas, &dn)) / (2.0 * h));
            let (mut up, mut dn) = (items.clone(), items.clone());
            up[j].b += h;
            dn[j].b -= h;
            analytic.push(g.b[j]);
            numeric.push((ll(&thetas, &up) - ll(&thetas, &dn)) / (2.0 * h));
        }
        let diff = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm);
    }
    ensure(worst < 1e-6, || format!("relative error {worst:e}"))?;
    Ok(format!("100 points, worst relative error {worst:.1e}"))
}

fn recovery() -> Check {
    let mut cfg = SimConfig {
        n_students: 1000,
        n_sessions: 1,
        items_per_session: 20,
        card_dropout: 0.0,
        card_miss: 0.0,
        seed: 2024,
        ..SimConfig::default()
    };
    cfg.absence.base_rate = 0.0;
    let (ds, truth) = simulate(&cfg).map_err(|e| e.to_string())?;
    let m = ds.full_matrix().map_err(|e| e.to_string())?;
    let cal = estimate_joint(&m, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
    let b_hat: Vec<f64> = cal.items.iter().map(|p| p.b).collect();
    let b_true: Vec<f64> = truth.items.iter().map(|p| p.b).collect();
    let t_hat: Vec<f64> = cal.abilities.iter().map(|a| a.theta).collect();
    let (rb, rt) = (pearson(&b_hat, &b_true), pearson(&t_hat, &truth.thetas()));
    let d = &cal.diagnostics;
    let mut trace = vec![d.initial_log_likelihood];
    trace.extend(&d.log_likelihood_trace);
    let monotone = trace.windows(2).all(|w| w[1] >= w[0]);
    let detail = format!(
        "r_b = {rb:.4}, r_theta = {rt:.4}, {} sweeps, monotone = {monotone}",
        d.sweeps
    );
    ensure(rb >= 0.95 && rt >= 0.9 && monotone, || detail.clone())?;
    Ok(detail)
}

fn reference_metrics() -> Check {
    let cm = ConfusionMatrix {
        obs_pass_pred_pass: 861,
        obs_pass_pred_fail: 37,
        obs_fail_pred_pass: 75,
        obs_fail_pred_fail: 70,
    };
    let m = metrics(&cm).map_err(|e| e.to_string())?;
    let hit = m.fail_precision.ok_or("hitting ratio undefined")?;
    ensure(
        (m.misclassification_rate - 112.0 / 1043.0).abs() < 1e-12,
        || format!("misclassification {}", m.misclassification_rate),
    )?;
    ensure((hit - 70.0 / 107.0).abs() < 1e-12, || {
        format!("hitting ratio {hit}")
    })?;
    ensure(format!("{:.2}", m.misclassification_rate) == "0.11", || {
        "rounding".into()
    })?;
    ensure((hit * 100.0).round() == 65.0, || "percentage".into())?;
    Ok(format!(
        "misclassification {:.5}, hitting ratio {hit:.5}",
        m.misclassification_rate
    ))
}

fn oracle_min_errors(abilities: &[f64], labels: &[Outcome]) -> usize {
    let mut values = abilities.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() == 1 {
        let fails = labels.iter().filter(|&&l| l == Outcome::Fail).count();
        return fails.min(labels.len() - fails);
    }
    values
        .windows(2)
        .map(|w| {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            abilities
                .iter()
                .zip(labels)
                .filter(|(&a, &l)| (if a < t { Outcome::Fail } else { Outcome::Pass }) != l)
                .count()
        })
        .min()
        .unwrap()
}

fn stump_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(2..=500);
        let abilities: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-40..40) as f64 / 10.0)
            .collect();
        let labels: Vec<Outcome> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    Outcome::Fail
                } else {
                    Outcome::Pass
                }
            })
            .collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        let model = fit_stump(&abilities, &labels).map_err(|e| e.to_string())?;
        let expected = oracle_min_errors(&abilities, &labels);
        let achieved = apply_stump(&model, &abilities, &labels)
            .unwrap()
            .misclassified();
        ensure(
            model.training_errors == expected && achieved == expected,
            || {
                format!(
                    "dataset {done}: stump {} / {achieved}, oracle {expected}",
                    model.training_errors
                )
            },
        )?;
        done += 1;
    }
    Ok("200 datasets agree".into())
}

fn t_density(x: f64, nu: f64) -> f64 {
    let log_norm =
        ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    (log_norm - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln()).exp()
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (f(a) + 4.0 * f((a + b) / 2.0) + f(b))
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = (a + b) / 2.0;
    let (left, right) = (simpson(f, a, m), simpson(f, m, b));
    if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
        return left + right + (left + right - whole) / 15.0;
    }
    adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
}

fn p_quadrature(t: f64, nu: f64) -> f64 {
    let f = |x: f64| t_density(x, nu);
    let b = t.abs();
    2.0 * (0.5 - adaptive(&f, 0.0, b, simpson(&f, 0.0, b), 1e-14, 50))
}

fn design(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
    DesignMatrix::with_intercept(cols.into_iter().map(|(n, c)| (n.to_string(), c)).collect())
        .unwrap()
}

fn ols_checks() -> Check {
    // noiseless recovery
    let x1: Vec<f64> = (0..30).map(|i| i as f64 * 0.3).collect();
    let x2: Vec<f64> = (0..30).map(|i| ((i * 5) % 7) as f64).collect();
    let y: Vec<f64> = (0..30).map(|i| -1.0 + 2.5 * x1[i] + 0.75 * x2[i]).collect();
    let res = fit_ols(&design(vec![("x1", x1), ("x2", x2)]), &y).map_err(|e| e.to_string())?;
    let exact = res
        .coefficients
        .iter()
        .zip([-1.0, 2.5, 0.75])
        .map(|(c, b)| (c.estimate - b).abs());
    let worst_beta = exact.fold(0.0f64, f64::max);
    ensure(worst_beta < 1e-10, || {
        format!("noiseless error {worst_beta:e}")
    })?;

    // p-values against quadrature on the 20 × 3 fixture
    let x1: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
    let x2: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
    let y: Vec<f64> = (0..20)
        .map(|i| 1.5 + 0.8 * x1[i] - 0.3 * x2[i] + (i as f64 * 1.3).sin() * 2.0)
        .collect();
    let x = design(vec![("x1", x1), ("x2", x2)]);
    let res = fit_ols(&x, &y).map_err(|e| e.to_string())?;
    let nu = res.degrees_of_freedom as f64;
    let worst_p = res
        .coefficients
        .iter()
        .map(|c| (c.p_value - p_quadrature(c.t_value, nu)).abs())
        .fold(0.0f64, f64::max);
    ensure(worst_p < 1e-8, || format!("p-value error {worst_p:e}"))?;

    // scaling equivariance
    let mut worst_scale = 0.0f64;
    for c in [1e-3, -2.5, 40.0] {
        let mut data = x.data().clone();
        data.column_mut(1).scale_mut(c);
        let scaled = fit_ols(&DesignMatrix::new(x.names().to_vec(), data).unwrap(), &y).unwrap();
        let (b, s) = (&res.coefficients[1], &scaled.coefficients[1]);
        for err in [
            (s.estimate * c - b.estimate).abs() / b.estimate.abs().max(1.0),
            (s.std_error * c.abs() - b.std_error).abs() / b.std_error.max(1.0),
            (s.t_value * c.signum() - b.t_value).abs(),
            (s.p_value - b.p_value).abs(),
        ] {
            worst_scale = worst_scale.max(err);
        }
    }
    ensure(worst_scale < 1e-10, || {
        format!("scaling error {worst_scale:e}")
    })?;
    Ok(format!(
        "beta error {worst_beta:.1e}, p error {worst_p:.1e}, scaling error {worst_scale:.1e}"
    ))
}

fn planted_ranking() -> Check {
    let mut hits = 0;
    let mut misses = Vec::new();
    for seed in 0..100u64 {
        let cfg = SimConfig {
            seed,
            ..SimConfig::default()
        };
        let (ds, truth) = simulate(&cfg).map_err(|e| e.to_string())?;
        // the planted effect on fpt_not_required must be the largest standardized one
        let recs = ds.records();
        let col = |f: fn(&lcta_core::model::StudentRecord) -> u32| -> Vec<f64> {
            recs.iter().map(|r| f(r) as f64).collect()
        };
        let s = &truth.score;
        let fpt = (s.fpt_not_required_weight * sd(&col(|r| r.fpt_not_required_count))).abs();
        let others = [
            (s.ability_weight * sd(&truth.thetas())).abs(),
            (s.class_absence_weight * sd(&col(|r| r.class_absence_count))).abs(),
            (s.fpc_absence_weight * sd(&col(|r| r.fpc_absence_count))).abs(),
        ];
        ensure(others.iter().all(|&o| fpt > o), || {
            format!("seed {seed}: planted effects {fpt:.2} vs {others:?}")
        })?;

        let matrix = ds.full_matrix().map_err(|e| e.to_string())?;
        let cal =
            estimate_joint(&matrix, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
        let ability = mean_session_abilities(&ds, &cal.items, &CalibrationConfig::default())
            .map_err(|e| e.to_string())?;
        let ability: Vec<Option<f64>> = ability.into_iter().map(Some).collect();
        let design = build_design(recs, &ability, &Factor::ALL).map_err(|e| e.to_string())?;
        let res = fit_ols(&design.x, &design.y).map_err(|e| e.to_string())?;
        let top = rank_factors(&res)[0];
        if top.name == Factor::FptNotRequired.name() && top.p_value < 0.001 {
            hits += 1;
        } else {
            misses.push(seed);
        }
    }
    let detail =
        format!("{hits}/100 seeds rank fpt_not_required first with p < 0.001 (misses: {misses:?})");
    ensure(hits >= 95, || detail.clone())?;
    Ok(detail)
}

fn encoding() -> Check {
    let mut seen = std::collections::BTreeSet::new();
    for x in 1..=5u8 {
        for y in 1..=5u8 {
            let s = encode_cell(x, y).map_err(|e| e.to_string())?;
            ensure(s == 10 * x + y, || format!("({x}, {y}) -> {s}"))?;
            ensure(decode_cell(s).ok() == Some((x, y)), || {
                format!("decode {s}")
            })?;
            seen.insert(s);
        }
    }
    ensure(seen.len() == 25, || "codes collide".into())?;
    ensure(
        encode_cell(1, 1).ok() == Some(11) && encode_cell(5, 5).ok() == Some(55),
        || "endpoints".into(),
    )?;
    Ok("25 cells, 11..=55, round trip exact".into())
}

fn risk_rules() -> Check {
    let rules = RiskRules::for_sessions(13);
    let mut pairs = 0;
    for s in 0..=13u32 {
        for f in 0..=(13 - s) {
            ensure(rules.risk(f) == (f > 7), || format!("risk at {f} failures"))?;
            ensure(rules.strong(s) == (s >= 10), || {
                format!("strong at {s} successes")
            })?;
            pairs += 1;
        }
    }
    Ok(format!("{pairs} (successes, failures) pairs"))
}

fn pipeline_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_lcta"))
            .args(["pipeline", "--seed", "42", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || {
            String::from_utf8_lossy(&status.stderr).into_owned()
        })?;
        std::fs::read(Path::new(&out).join("manifest.json")).map_err(|e| e.to_string())
    };
    let (a, b) = (run("first")?, run("second")?);
    ensure(a == b, || "manifests differ".into())?;
    Ok(format!("manifests identical ({} bytes)", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("2PL analytic checks", 1, probability_checks),
        (
            "log-likelihood gradient vs central differences",
            5,
            gradient_checks,
        ),
        ("JML parameter recovery", 60, recovery),
        ("reference confusion-matrix metrics", 1, reference_metrics),
        ("stump oracle equivalence", 30, stump_oracle),
        ("OLS exactness and inference", 5, ols_checks),
        ("planted-effect ranking", 120, planted_ranking),
        ("attendance encoding", 1, encoding),
        ("risk and strong rules at T = 13", 1, risk_rules),
        ("pipeline determinism", 180, pipeline_determinism),
    ];
    let mut failed = 0;
    for (k, (name, budget, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(budget);
        let (status, detail) = match result {
            Ok(d) if !over => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; over time budget")),
            Err(e) => ("FAIL", e),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} criterion {:>2}: {name} ({:.2} s, budget {budget} s) - {detail}",
            k + 1,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("all 10 criteria passed");
        ExitCode::SUCCESS
    }
}
