//! End-to-end acceptance checks. Runs sequentially (no test harness) so the
//! timing criteria are not distorted by concurrent tests, prints one line
//! per criterion and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use weakid::cli::config::{parse, BenchConfig};
use weakid::cli::{run_bench, BenchReport};
use weakid::coarse::{coarse_grain, Warnings};
use weakid::data::Grid;
use weakid::library::{fokker_planck_library, pde_poly_library, FeatureLibrary};
use weakid::pipeline::{discover, SparseSettings, WeakSettings};
use weakid::sim::{band_limited_initial, integrate_ks, integrate_ode, ks_space_axis, ks_time_axis, BuiltinOde, Diffusion, Drift, InitialDistribution, ParticleEnsemble};
use weakid::sparse::{select_lambda, LambdaGrid, Regression};
use weakid::testfn::{discretize, TestFunction};
use weakid::weak::{assemble, ConvMethod, QueryPlan, QuerySpec};
use weakid::wendy::{gls_solve, ols_solve, wendy_estimate, WendySettings};
use weakid::{add_noise, Axis, Dataset, NoiseSpec};

const KS_LABELS: [&str; 3] = ["d/dx(u^2)", "d^2/dx^2(u^1)", "d^4/dx^4(u^1)"];
const KS_TRUTH: [f64; 3] = [-0.5, -1.0, -1.0];

type Criterion = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn ks_data(seed: u64) -> Dataset {
    let x = ks_space_axis();
    integrate_ks(&band_limited_initial(&x, 16, seed), &x, &ks_time_axis()).unwrap()
}

/// Largest relative coefficient error if the KS terms are exactly recovered.
fn ks_check(d: &Dataset, lib: &FeatureLibrary) -> (Option<f64>, f64) {
    let start = Instant::now();
    let r = discover(d, lib, &WeakSettings::default(), &SparseSettings::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m = &r.models[0];
    let labels: Vec<&str> = m.terms.iter().map(|(l, _)| l.as_str()).collect();
    if labels != KS_LABELS {
        return (None, secs);
    }
    let err = m.terms.iter().zip(KS_TRUTH).map(|((_, w), t)| ((w - t) / t).abs()).fold(0.0, f64::max);
    (Some(err), secs)
}

fn criterion_1() -> Outcome {
    let lib = pde_poly_library(6, 6);
    assert_eq!(lib.len(), 43);
    let mut hits = 0;
    let mut worst_err: f64 = 0.0;
    let mut worst_secs: f64 = 0.0;
    for s in 0..10u64 {
        let noisy = add_noise(&ks_data(1000 + s), &NoiseSpec::gaussian(0.5, s)).unwrap();
        let (err, secs) = ks_check(&noisy, &lib);
        worst_secs = worst_secs.max(secs);
        if let Some(e) = err {
            worst_err = worst_err.max(e);
            if e <= 0.25 {
                hits += 1;
            }
        }
    }
    let (clean_err, _) = ks_check(&ks_data(1000), &lib);
    let clean_ok = clean_err.is_some_and(|e| e <= 0.01);
    let pass = hits >= 8 && worst_secs <= 10.0 && clean_ok;
    outcome(
        pass,
        format!(
            "{hits}/10 noisy trials exact within 25% (worst recovered error {worst_err:.3}); slowest discovery {worst_secs:.3} s; noiseless error {}",
            clean_err.map_or("support wrong".into(), |e| format!("{e:.2e}"))
        ),
    )
}

fn ode_closure(m: BuiltinOde) -> Result<f64, String> {
    let model = m.model();
    let d = integrate_ode(&model, &m.initial_state(), &m.time_axis(), 1e-10).unwrap();
    let r = discover(&d, model.library(), &WeakSettings::default(), &SparseSettings::default()).unwrap();
    let mut worst: f64 = 0.0;
    for (c, cm) in r.models.iter().enumerate() {
        let truth = &model.coefficients()[c];
        let support: Vec<usize> = (0..truth.len()).filter(|&j| truth[j] != 0.0).collect();
        if cm.support != support {
            return Err(format!("{m:?} component {c}: {:?}", cm.terms));
        }
        for &j in &support {
            worst = worst.max(((cm.coefficients[j] - truth[j]) / truth[j]).abs());
        }
    }
    Ok(worst)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for m in [BuiltinOde::Logistic, BuiltinOde::Lorenz, BuiltinOde::FitzhughNagumo] {
        match ode_closure(m) {
            Ok(e) => {
                pass &= e <= 0.01;
                parts.push(format!("{m:?} {e:.1e}"));
            }
            Err(msg) => {
                pass = false;
                parts.push(msg);
            }
        }
    }
    match ks_check(&ks_data(7), &pde_poly_library(6, 6)).0 {
        Some(e) => {
            pass &= e <= 0.01;
            parts.push(format!("KS {e:.1e}"));
        }
        None => {
            pass = false;
            parts.push("KS support wrong".into());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 60.0;
    outcome(pass, format!("max coefficient errors: {}; total {secs:.1} s", parts.join(", ")))
}

fn summary_of(r: &BenchReport, method: &str, level: f64) -> (f64, f64) {
    let s = r.summary.iter().find(|s| s.method == method && s.noise_level == level).expect("method in summary");
    (s.geomean_error, s.geomean_walltime_s)
}

fn criterion_3() -> Outcome {
    let cfg: BenchConfig = parse(
        r#"{"schema": 1, "problem": {"kind": "ode", "model": "lorenz"}, "noise_levels": [0.1, 0.2],
            "trials": 20, "methods": ["wendy", "ee-ols", "weak-ols"], "seed": 0}"#,
    )
    .unwrap();
    let r = run_bench(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for level in [0.1, 0.2] {
        let (w, _) = summary_of(&r, "wendy", level);
        let (ee, _) = summary_of(&r, "ee-ols", level);
        let (ols, _) = summary_of(&r, "weak-ols", level);
        pass &= w < ee;
        parts.push(format!("{:.0}%: wendy {w:.3e} vs ee-ols {ee:.3e} (weak-ols {ols:.3e})", level * 100.0));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_4() -> Outcome {
    let cfg: BenchConfig =
        parse(r#"{"schema": 1, "problem": {"kind": "ks"}, "noise_levels": [0.2], "trials": 5, "methods": ["wendy", "oe"], "seed": 0}"#).unwrap();
    let r = run_bench(&cfg).unwrap();
    let (we, wt) = summary_of(&r, "wendy", 0.2);
    let (oe, ot) = summary_of(&r, "oe", 0.2);
    outcome(wt < ot && we <= oe, format!("wendy error {we:.3e} in {wt:.3} s; oe error {oe:.3e} in {ot:.2} s (geometric means)"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let ens = ParticleEnsemble {
        particles: 100_000,
        initial: InitialDistribution::Gaussian { mean: 2.0, std: 0.3 },
        drift: Drift::Linear { theta: 1.0 },
        diffusion: Diffusion::Constant { d: 0.5 },
        seed: 0,
    };
    let x = Axis::new(161, -4.0, 4.0).unwrap();
    let t = Axis::new(81, 0.0, 4.0).unwrap();
    let lib = fokker_planck_library(2, 2);
    let (r, _) = coarse_grain(&ens, &x, &t, 1e-3, &lib, &WeakSettings::default(), &SparseSettings::default(), &Warnings::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let m = &r.discovery.models[0];
    let labels: Vec<&str> = m.terms.iter().map(|(l, _)| l.as_str()).collect();
    let support_ok = labels == ["d/dx(x^1*u^1)", "d^2/dx^2(u^1)"];
    let errs: Vec<f64> = if support_ok { m.terms.iter().zip([1.0, 0.5]).map(|((_, w), t)| ((w - t) / t).abs()).collect() } else { vec![] };
    let pass = support_ok && errs.iter().all(|&e| e <= 0.1) && secs <= 120.0;
    outcome(pass, format!("terms {:?}; relative errors {errs:.3?}; L1 {:.3e}; {secs:.1} s", m.terms, r.l1_mean))
}

fn kernel_fft_vs_direct() -> Result<f64, String> {
    let grid = Grid::new(&[(32, 0.0, 2.0), (32, 0.0, 1.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vals: Vec<f64> = (0..32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d = Dataset::new(grid.clone(), 1, vals).unwrap();
    let lib = pde_poly_library(4, 3);
    let tfx = TestFunction::poly_bump(7, 1.0, 4).unwrap();
    let tft = TestFunction::poly_bump(4, 1.0, 1).unwrap();
    let st = vec![discretize(&tfx, grid.spacing(0), 6, 4).unwrap(), discretize(&tft, grid.spacing(1), 5, 1).unwrap()];
    let plan = QueryPlan::new(&grid, &[6, 5], &QuerySpec::Stride(vec![1])).unwrap();
    let a = assemble(&d, &lib, &st, &plan, ConvMethod::Fft).unwrap();
    let b = assemble(&d, &lib, &st, &plan, ConvMethod::Direct).unwrap();
    let mut worst: f64 = 0.0;
    for (x, y) in [(a.g_raw(), b.g_raw()), (a.b_raw(), b.b_raw())] {
        for c in 0..y.ncols() {
            let scale = y.column(c).amax().max(f64::MIN_POSITIVE);
            for r in 0..y.nrows() {
                worst = worst.max((x[(r, c)] - y[(r, c)]).abs() / scale);
            }
        }
    }
    if worst <= 1e-10 {
        Ok(worst)
    } else {
        Err(format!("fft vs direct {worst:.2e}"))
    }
}

fn kernel_derivatives() -> Result<f64, String> {
    let fams = [
        TestFunction::poly_bump(9, 1.3, 6).unwrap(),
        TestFunction::cinf_bump(1.0, 6).unwrap(),
        TestFunction::shinbrot_sin(8, 2.0, 6).unwrap(),
        TestFunction::takaya_hermite(6),
        TestFunction::valeur_asym(7.5, 9.0, 6).unwrap(),
        TestFunction::patra_cas(7, 2, 1.5, 6).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for tf in &fams {
        let (lo, hi) = tf.support();
        let xs: Vec<f64> = (0..20).map(|_| lo + rng.random_range(0.1..0.9) * (hi - lo)).collect();
        let h = 1e-3 * (hi - lo);
        for k in 1..=6 {
            let scale = xs.iter().map(|&x| tf.eval(k, x).abs()).fold(0.0, f64::max);
            for &x in &xs {
                let f = |t: f64| tf.eval(k - 1, t);
                let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
                let an = tf.eval(k, x);
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-3 * scale));
            }
        }
    }
    if worst <= 1e-5 {
        Ok(worst)
    } else {
        Err(format!("derivative mismatch {worst:.2e}"))
    }
}

fn kernel_integration_by_parts() -> Result<f64, String> {
    // signed <d^k phi, sin> against <phi, d^k sin> on a shrinking grid
    let tf = TestFunction::poly_bump(7, 1.0, 4).unwrap();
    let (x0, half_width) = (0.4, 1.5);
    let err = |m: usize, k: usize| {
        let h = half_width / m as f64;
        let s = discretize(&tf, h, m, k).unwrap();
        let xs: Vec<f64> = (-(m as isize)..=m as isize).map(|i| x0 + i as f64 * h).collect();
        let weak: f64 = s.weights(k).iter().zip(&xs).map(|(w, x)| w * x.sin()).sum();
        let dk = |x: f64| [x.sin(), x.cos(), -x.sin(), -x.cos()][k % 4];
        let strong: f64 = s.weights(0).iter().zip(&xs).map(|(w, x)| w * dk(*x)).sum();
        (weak - strong).abs()
    };
    let mut worst_ratio = f64::INFINITY;
    for k in 1..=4 {
        let e: Vec<f64> = [6, 12, 24].iter().map(|&m| err(m, k)).collect();
        for w in e.windows(2) {
            if w[1] > 1e-13 {
                worst_ratio = worst_ratio.min(w[0] / w[1]);
            }
        }
    }
    if worst_ratio >= 3.5 {
        Ok(worst_ratio)
    } else {
        Err(format!("error ratio per halving {worst_ratio:.2}"))
    }
}

fn kernel_best_subset() -> Result<usize, String> {
    let lambdas = LambdaGrid::default().values().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 40;
    for case in 0..cases {
        let cols = rng.random_range(3..=10usize);
        let k = rng.random_range(1..=3usize).min(cols);
        let g = DMatrix::from_fn(60, cols, |_, _| rng.random_range(-1.0..1.0));
        let mut support: Vec<usize> = (0..cols).collect();
        for i in 0..cols {
            let j = rng.random_range(i..cols);
            support.swap(i, j);
        }
        support.truncate(k);
        support.sort_unstable();
        let mut w = vec![0.0; cols];
        for &j in &support {
            w[j] = rng.random_range(0.5..2.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        let b: Vec<f64> = (0..60).map(|r| (0..cols).map(|j| g[(r, j)] * w[j]).sum()).collect();
        let found = select_lambda(&g, &b, &lambdas, 0.3).unwrap().support;
        let reg = Regression::new(&g, &b).unwrap();
        let mut best = (f64::INFINITY, Vec::new());
        for mask in 0u32..(1 << cols) {
            if mask.count_ones() as usize == k {
                let s: Vec<usize> = (0..cols).filter(|&j| mask & (1 << j) != 0).collect();
                let res = reg.relative_residual(&reg.solve_subset(&s).unwrap());
                if res < best.0 {
                    best = (res, s);
                }
            }
        }
        if found != best.1 || found != support {
            return Err(format!("case {case}: stls {found:?}, best subset {:?}, planted {support:?}", best.1));
        }
    }
    Ok(cases)
}

fn kernel_gls_identity() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (rows, cols) = (rng.random_range(10..50usize), rng.random_range(1..8usize));
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ols = ols_solve(&g, &b).unwrap();
        let gls = gls_solve(&g, &b, &DMatrix::identity(rows, rows)).unwrap();
        for (a, e) in gls.w.iter().zip(&ols) {
            worst = worst.max((a - e).abs() / e.abs().max(1.0));
        }
    }
    // the full estimator with zero noise must reduce to the same solve
    let m = BuiltinOde::Logistic;
    let d = integrate_ode(&m.model(), &m.initial_state(), &m.time_axis(), 1e-10).unwrap();
    let s = WendySettings { noise_std: Some(0.0), ..WendySettings::default() };
    let r = wendy_estimate(&d, &m.library(), &[vec![1, 2]], &s).unwrap();
    let c = &r.components[0];
    for (a, e) in c.gls.w.iter().zip(&c.ols) {
        worst = worst.max((a - e).abs() / e.abs().max(1.0));
    }
    if worst <= 1e-10 {
        Ok(worst)
    } else {
        Err(format!("gls vs ols {worst:.2e}"))
    }
}

fn criterion_6() -> Outcome {
    let results = [
        ("fft/direct", kernel_fft_vs_direct().map(|v| format!("{v:.1e}"))),
        ("derivatives", kernel_derivatives().map(|v| format!("{v:.1e}"))),
        ("by-parts ratio", kernel_integration_by_parts().map(|v| format!("{v:.1}"))),
        ("best subset", kernel_best_subset().map(|v| format!("{v} systems"))),
        ("gls/ols", kernel_gls_identity().map(|v| format!("{v:.1e}"))),
    ];
    let pass = results.iter().all(|(_, r)| r.is_ok());
    let detail = results.iter().map(|(n, r)| format!("{n} {}", r.as_ref().unwrap_or_else(|e| e))).collect::<Vec<_>>().join("; ");
    outcome(pass, detail)
}

// ---------------------------------------------------------------- determinism

/// Timing fields are the only values allowed to differ between reruns.
fn is_timing(key: &str) -> bool {
    key.contains("seconds") || key.contains("walltime")
}

fn same_json(a: &Value, b: &Value, path: &str, diffs: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                if is_timing(k) || k == "out" {
                    continue;
                }
                match y.get(k) {
                    Some(w) => same_json(v, w, &format!("{path}.{k}"), diffs),
                    None => diffs.push(format!("{path}.{k} missing")),
                }
            }
        }
        (Value::Array(x), Value::Array(y)) if x.len() == y.len() => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                same_json(v, w, &format!("{path}[{i}]"), diffs);
            }
        }
        (Value::Number(x), Value::Number(y)) => {
            if x.as_f64().map(f64::to_bits) != y.as_f64().map(f64::to_bits) {
                diffs.push(format!("{path}: {x} vs {y}"));
            }
        }
        _ if a == b => {}
        _ => diffs.push(format!("{path} differs")),
    }
}

fn same_csv(a: &str, b: &str, name: &str, diffs: &mut Vec<String>) {
    let (la, lb): (Vec<&str>, Vec<&str>) = (a.lines().collect(), b.lines().collect());
    if la.len() != lb.len() || la.first() != lb.first() {
        diffs.push(format!("{name}: shape or header differs"));
        return;
    }
    let header: Vec<&str> = la[0].split(',').collect();
    for (r, (x, y)) in la.iter().zip(&lb).enumerate().skip(1) {
        for (c, (u, v)) in x.split(',').zip(y.split(',')).enumerate() {
            if !is_timing(header.get(c).unwrap_or(&"")) && u != v {
                diffs.push(format!("{name} row {r} column {}: {u} vs {v}", header[c]));
            }
        }
    }
}

fn compare_dirs(a: &Path, b: &Path, diffs: &mut Vec<String>) {
    let mut names: Vec<PathBuf> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for p in names {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let other = b.join(&name);
        let (x, y) = (std::fs::read(&p).unwrap(), std::fs::read(&other).unwrap_or_default());
        match p.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let (u, v): (Value, Value) = (serde_json::from_slice(&x).unwrap(), serde_json::from_slice(&y).unwrap_or(Value::Null));
                same_json(&u, &v, &name, diffs);
            }
            Some("csv") => same_csv(&String::from_utf8_lossy(&x), &String::from_utf8_lossy(&y), &name, diffs),
            _ => {
                if x != y {
                    diffs.push(format!("{name}: bytes differ"));
                }
            }
        }
    }
}

fn cli(cmd: &str, config: &Path, out: &Path) -> i32 {
    weakid::cli::run(["weakid", cmd, "--config", &config.display().to_string(), "--out", &out.display().to_string()])
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    let logistic = root.join("logistic");
    let configs: Vec<(&str, String, PathBuf)> = vec![
        ("simulate", r#"{"schema": 1, "model": {"kind": "ks"}, "noise": {"level": 0.3}, "seed": 12}"#.into(), data.clone()),
        ("simulate", r#"{"schema": 1, "model": {"kind": "ode", "model": "logistic", "initial": [0.2]}, "noise": {"level": 0.05}, "seed": 2}"#.into(), logistic.clone()),
        (
            "noise",
            format!(r#"{{"schema": 1, "input": "{}", "noise": {{"level": 0.1}}, "seed": 4}}"#, data.join("data.bin").display()),
            root.join("noisy"),
        ),
        (
            "discover",
            format!(
                r#"{{"schema": 1, "input": "{}", "library": {{"kind": "pde-poly", "max_derivative": 6, "max_power": 6}}}}"#,
                data.join("data.bin").display()
            ),
            root.join("discover"),
        ),
        (
            "estimate",
            format!(
                r#"{{"schema": 1, "input": "{}", "method": "both",
                    "model": {{"library": {{"kind": "ode-poly", "max_degree": 2}}, "terms": [["u^1", "u^2"]], "truth": [[1.0, -1.0]]}}}}"#,
                logistic.join("data.bin").display()
            ),
            root.join("estimate"),
        ),
        ("coarsegrain", r#"{"schema": 1, "particles": {"particles": 20000}, "seed": 6}"#.into(), root.join("coarse")),
        (
            "bench",
            r#"{"schema": 1, "problem": {"kind": "ode", "model": "fitzhugh-nagumo"}, "noise_levels": [0.05, 0.1], "trials": 3,
                "methods": ["wendy", "weak-ols", "ee-ols"], "seed": 8}"#
                .into(),
            root.join("bench"),
        ),
    ];
    let mut diffs = Vec::new();
    for (i, (cmd, text, out)) in configs.iter().enumerate() {
        let cfg = root.join(format!("config{i}.json"));
        std::fs::write(&cfg, text).unwrap();
        let code = cli(cmd, &cfg, out);
        if code != 0 {
            diffs.push(format!("{cmd} exited with {code}"));
            continue;
        }
        let rerun = root.join(format!("rerun{i}"));
        let code = cli(cmd, &out.join("resolved_config.json"), &rerun);
        if code != 0 {
            diffs.push(format!("{cmd} rerun exited with {code}"));
            continue;
        }
        compare_dirs(out, &rerun, &mut diffs);
    }
    let n = configs.len();
    if diffs.is_empty() {
        outcome(true, format!("{n} command runs reproduced from resolved_config.json (timing fields excluded)"))
    } else {
        outcome(false, diffs.iter().take(5).cloned().collect::<Vec<_>>().join("; "))
    }
}

fn main() {
    // under `cargo test -- --list` or filters, behave like an empty harness
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Criterion); 7] = [
        ("KS discovery at 50% noise", criterion_1),
        ("noiseless closure", criterion_2),
        ("WENDy vs equation-error OLS on Lorenz", criterion_3),
        ("WENDy vs output error on KS at 20% noise", criterion_4),
        ("Ornstein-Uhlenbeck coarse graining", criterion_5),
        ("numerical kernel oracles", criterion_6),
        ("determinism from resolved_config.json", criterion_7),
    ];
    // numeric arguments (`cargo test --test acceptance -- 3 5`) select criteria
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {} ({:.1} s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
