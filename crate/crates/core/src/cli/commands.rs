use std::path::{Path, PathBuf};

use serde::Serialize;

use super::bench::{relative_errors, rms};
use super::config::{self, BenchConfig, CoarsegrainConfig, DiscoverConfig, EstimateConfig, NoiseConfig, SimModel, SimulateConfig};
use super::{num, prepare_out, run_bench, stream_seed, table, write_csv, write_json, Cli};
use crate::coarse::coarse_grain;
use crate::data::{add_noise, Dataset, NoiseSpec};
use crate::error::{Error, Result};
use crate::io::{read_dataset, write_dataset, Format};
use crate::library::FeatureLibrary;
use crate::pipeline::{discover as run_discover, ComponentModel, Discovery};
use crate::sim::{band_limited_initial, histogram_density, integrate_ode, integrate_periodic, ks_terms, simulate_ips};
use crate::wendy::{output_error_estimate, wendy_estimate, OeResult, WendyResult, WendySettings};

const NOISE_STREAM: u64 = 1;

fn apply_overrides(out: &mut PathBuf, seed: Option<&mut u64>, cli: &Cli) {
    if let Some(o) = &cli.out {
        out.clone_from(o);
    }
    if let (Some(s), Some(v)) = (seed, cli.seed) {
        *s = v;
    }
}

fn read_input(path: &Path) -> Result<Dataset> {
    read_dataset(path, Format::from_path(path)).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other.context(&path.display().to_string()),
    })
}

fn write_output(d: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    write_dataset(d, &path, Format::from_path(&path))?;
    Ok(path)
}

/// Write the fully defaulted config before doing any work.
fn start(out: &Path, resolved: &impl Serialize) -> Result<()> {
    prepare_out(out)?;
    write_json(&out.join("resolved_config.json"), resolved)
}

fn shape_string(d: &Dataset) -> String {
    let s: Vec<String> = d.grid().shape().iter().map(|n| n.to_string()).collect();
    format!("{} x {} component(s)", s.join(" x "), d.components())
}

pub fn simulate(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: SimulateConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, Some(&mut cfg.seed), cli);
    if let SimModel::Ode { model, t, initial, .. } = &mut cfg.model {
        t.get_or_insert_with(|| model.time_axis());
        initial.get_or_insert_with(|| model.initial_state());
    }
    start(&cfg.out, &cfg)?;
    let clean = match &cfg.model {
        SimModel::Ks { initial_modes, x, t, dt } => {
            let u0 = band_limited_initial(x, *initial_modes, cfg.seed);
            integrate_periodic(&ks_terms(), &u0, x, t, *dt)?
        }
        SimModel::Ode { model, t, initial, tol } => {
            integrate_ode(&model.model(), initial.as_deref().unwrap_or_default(), &t.expect("filled above"), *tol)?
        }
        SimModel::Particles(p) => {
            let traj = simulate_ips(&p.ensemble(cfg.seed), &p.t, p.dt)?;
            let (d, outside) = histogram_density(&traj, &p.x)?;
            if outside > 0.0 {
                println!("{:.4}% of particles fell outside the bins", 100.0 * outside);
            }
            d
        }
    };
    let d = match cfg.noise {
        Some(n) => add_noise(&clean, &NoiseSpec { kind: n.kind, level: n.level, seed: stream_seed(cfg.seed, NOISE_STREAM) })?,
        None => clean,
    };
    let p = write_output(&d, &cfg.out, &cfg.output)?;
    println!("wrote {} ({})", p.display(), shape_string(&d));
    Ok(())
}

pub fn noise(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: NoiseConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, Some(&mut cfg.seed), cli);
    start(&cfg.out, &cfg)?;
    let d = read_input(&cfg.input)?;
    let spec = NoiseSpec { kind: cfg.noise.kind, level: cfg.noise.level, seed: stream_seed(cfg.seed, NOISE_STREAM) };
    let noisy = add_noise(&d, &spec)?;
    let p = write_output(&noisy, &cfg.out, &cfg.output)?;
    println!("wrote {} (noise std {:.6e})", p.display(), cfg.noise.level * d.rms());
    Ok(())
}

#[derive(Serialize)]
struct ModelReport<'a> {
    library: &'a FeatureLibrary,
    labels: Vec<String>,
    discovery: &'a Discovery,
}

fn loss_rows(models: &[ComponentModel]) -> Vec<Vec<String>> {
    models.iter().flat_map(|m| m.loss_curve.iter().map(move |&(l, v)| vec![m.component.to_string(), num(l), num(v)])).collect()
}

fn print_models(models: &[ComponentModel]) {
    let rows: Vec<Vec<String>> = models
        .iter()
        .flat_map(|m| {
            let mut r: Vec<Vec<String>> = m.terms.iter().map(|(l, w)| vec![m.component.to_string(), l.clone(), format!("{w:+.6e}")]).collect();
            if r.is_empty() {
                r.push(vec![m.component.to_string(), "(none)".into(), String::new()]);
            }
            r
        })
        .collect();
    print!("{}", table(&["component", "term", "coefficient"], &rows));
    for m in models {
        println!("component {}: residual {:.4e}, lambda* {:.4e}", m.component, m.residual, m.lambda_star);
    }
}

fn write_discovery(out: &Path, lib: &FeatureLibrary, disc: &Discovery) -> Result<()> {
    write_json(&out.join("model.json"), &ModelReport { library: lib, labels: lib.labels(), discovery: disc })?;
    write_csv(&out.join("loss_curve.csv"), &["component".into(), "lambda".into(), "loss".into()], &loss_rows(&disc.models))
}

pub fn discover(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: DiscoverConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, None, cli);
    start(&cfg.out, &cfg)?;
    let d = read_input(&cfg.input)?;
    let lib = cfg.library.build(d.components())?;
    let disc = run_discover(&d, &lib, &cfg.weak, &cfg.sparse)?;
    write_discovery(&cfg.out, &lib, &disc)?;
    print_models(&disc.models);
    println!(
        "{} rows x {} terms, radii {:?}; assembly {:.3} s, regression {:.3} s",
        disc.rows, disc.columns, disc.radii, disc.assembly_seconds, disc.regression_seconds
    );
    Ok(())
}

#[derive(Serialize)]
struct EstimateReport {
    parameters: Vec<String>,
    truth: Option<Vec<f64>>,
    wendy: Option<WendyResult>,
    oe: Option<OeResult>,
    oe_initial: Option<Vec<f64>>,
}

fn estimate_row(method: &str, walltime: f64, params: &[f64], truth: Option<&[f64]>) -> Vec<String> {
    let mut r = vec![method.to_string(), num(walltime)];
    let errs = truth.map(|t| relative_errors(params, t));
    r.push(errs.as_ref().map_or(String::new(), |e| num(rms(e))));
    r.extend(params.iter().map(|&p| num(p)));
    if let Some(e) = errs {
        r.extend(e.iter().map(|&v| num(v)));
    }
    r
}

pub fn estimate(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: EstimateConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, None, cli);
    start(&cfg.out, &cfg)?;
    let d = read_input(&cfg.input)?;
    let (lib, supports) = cfg.model.resolve(d.components())?;
    let truth = cfg.model.truth_flat();
    let labels = lib.labels();
    let names: Vec<String> = supports.iter().enumerate().flat_map(|(c, s)| s.iter().map(move |&j| (c, j))).map(|(c, j)| format!("{c}:{}", labels[j])).collect();
    let mut report = EstimateReport { parameters: names.clone(), truth: truth.clone(), wendy: None, oe: None, oe_initial: None };
    let mut rows = Vec::new();
    if cfg.method.runs_wendy() {
        let r = wendy_estimate(&d, &lib, &supports, &cfg.wendy)?;
        let w: Vec<f64> = r.components.iter().flat_map(|c| c.gls.w.iter().copied()).collect();
        rows.push(estimate_row("wendy", r.seconds, &w, truth.as_deref()));
        if r.components.iter().any(|c| !c.gls.converged) {
            println!("warning: WENDy iteration did not converge for every component");
        }
        report.wendy = Some(r);
    }
    if cfg.method.runs_oe() {
        let w0 = match &cfg.initial {
            Some(w) => w.clone(),
            None => {
                let ols = WendySettings { noise_std: Some(0.0), ..cfg.wendy.clone() };
                let r = wendy_estimate(&d, &lib, &supports, &ols)?;
                r.components.iter().flat_map(|c| c.ols.iter().copied()).collect()
            }
        };
        let r = output_error_estimate(&d, &lib, &supports, &w0, &cfg.oe)?;
        rows.push(estimate_row("oe", r.seconds, &r.parameters, truth.as_deref()));
        report.oe = Some(r);
        report.oe_initial = Some(w0);
    }
    let mut header: Vec<String> = vec!["method".into(), "walltime_s".into(), "rms_rel_error".into()];
    header.extend(names.iter().map(|n| format!("w[{n}]")));
    if truth.is_some() {
        header.extend(names.iter().map(|n| format!("err[{n}]")));
    }
    write_csv(&cfg.out.join("estimate.csv"), &header, &rows)?;
    write_json(&cfg.out.join("estimate.json"), &report)?;
    let mut shown = vec![];
    for (i, n) in names.iter().enumerate() {
        let mut r = vec![n.clone()];
        r.extend(rows.iter().map(|row| row[3 + i].clone()));
        if let Some(t) = &truth {
            r.push(num(t[i]));
        }
        shown.push(r);
    }
    let mut h: Vec<&str> = vec!["parameter"];
    h.extend(rows.iter().map(|r| r[0].as_str()));
    if truth.is_some() {
        h.push("truth");
    }
    print!("{}", table(&h, &shown));
    for r in &rows {
        println!("{}: {} s{}", r[0], r[1], if r[2].is_empty() { String::new() } else { format!(", rms relative error {}", r[2]) });
    }
    Ok(())
}

pub fn coarsegrain(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: CoarsegrainConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, Some(&mut cfg.seed), cli);
    start(&cfg.out, &cfg)?;
    let lib = cfg.library.build(1)?;
    let p = &cfg.particles;
    let (report, density) = coarse_grain(&p.ensemble(cfg.seed), &p.x, &p.t, p.dt, &lib, &cfg.weak, &cfg.sparse, &cfg.warnings)?;
    write_output(&density, &cfg.out, "density.bin")?;
    write_json(&cfg.out.join("report.json"), &report)?;
    write_csv(&cfg.out.join("loss_curve.csv"), &["component".into(), "lambda".into(), "loss".into()], &loss_rows(&report.discovery.models))?;
    print_models(&report.discovery.models);
    let (arith, harm) = report.diffusivity_means;
    println!("density L1 error vs discovered model: mean {:.4e}, max {:.4e}", report.l1_mean, report.l1_max);
    println!("diffusivity means: arithmetic {arith:.6}, harmonic {harm:.6}");
    if report.high_residual {
        println!("warning: model fits the histograms poorly (too few particles for the bin width?)");
    }
    Ok(())
}

pub fn bench(path: &Path, cli: &Cli) -> Result<()> {
    let mut cfg: BenchConfig = config::load(path)?;
    apply_overrides(&mut cfg.out, Some(&mut cfg.seed), cli);
    start(&cfg.out, &cfg)?;
    let r = run_bench(&cfg)?;
    let mut header: Vec<String> = ["method", "seed", "noise_level", "walltime_s", "rms_rel_error"].map(String::from).to_vec();
    header.extend(r.parameters.iter().map(|n| format!("w[{n}]")));
    header.extend(r.parameters.iter().map(|n| format!("err[{n}]")));
    let rows: Vec<Vec<String>> = r
        .rows
        .iter()
        .map(|b| {
            let mut v = vec![b.method.clone(), b.seed.to_string(), num(b.noise_level), num(b.walltime_s), num(b.rms_rel_error)];
            v.extend(b.parameters.iter().map(|&x| num(x)));
            v.extend(b.rel_errors.iter().map(|&x| num(x)));
            v
        })
        .collect();
    write_csv(&cfg.out.join("bench.csv"), &header, &rows)?;
    let summary: Vec<Vec<String>> = r
        .summary
        .iter()
        .map(|s| vec![s.method.clone(), num(s.noise_level), s.trials.to_string(), s.failures.to_string(), num(s.geomean_error), num(s.geomean_walltime_s)])
        .collect();
    let sh = ["method", "noise_level", "trials", "failures", "geomean_error", "geomean_walltime_s"];
    write_csv(&cfg.out.join("summary.csv"), &sh.map(String::from), &summary)?;
    print!("{}", table(&sh, &summary));
    if r.summary.iter().any(|s| s.failures == s.trials) {
        return Err(Error::numerical("a method failed on every trial"));
    }
    Ok(())
}
