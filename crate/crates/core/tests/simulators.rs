use weakid::sim::{
    band_limited_initial, histogram_density, integrate_ks, integrate_periodic, ks_space_axis, ks_terms, ks_time_axis, simulate_ips, Diffusion,
    Drift, InitialDistribution, ParticleEnsemble,
};
use weakid::wendy::estimate_noise_std;
use weakid::Axis;

fn ou(particles: usize, initial: InitialDistribution, seed: u64) -> ParticleEnsemble {
    ParticleEnsemble { particles, initial, drift: Drift::Linear { theta: 1.0 }, diffusion: Diffusion::Constant { d: 0.5 }, seed }
}

#[test]
fn ks_conserves_spatial_mean() {
    let x = ks_space_axis();
    let mut u0 = band_limited_initial(&x, 16, 11);
    // give the field a nonzero mean so conservation is not trivially zero
    u0.iter_mut().for_each(|v| *v += 0.3);
    let d = integrate_ks(&u0, &x, &ks_time_axis()).unwrap();
    let nt = d.grid().shape()[1];
    let mean = |it: usize| (0..x.n).map(|ix| d.values()[ix * nt + it]).sum::<f64>() / x.n as f64;
    let m0 = mean(0);
    for it in 0..nt {
        assert!((mean(it) - m0).abs() <= 1e-8, "t index {it}: {} vs {m0}", mean(it));
    }
}

#[test]
fn ks_step_halving_converges() {
    let x = ks_space_axis();
    let t = Axis::new(11, 0.0, 10.0).unwrap();
    let u0 = band_limited_initial(&x, 16, 5);
    let nt = t.n;
    let last = |dt: f64| {
        let d = integrate_periodic(&ks_terms(), &u0, &x, &t, dt).unwrap();
        (0..x.n).map(|ix| d.values()[ix * nt + nt - 1]).collect::<Vec<_>>()
    };
    let (a, b, c) = (last(0.05), last(0.025), last(0.0125));
    let dist = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (d1, d2) = (dist(&a, &b), dist(&b, &c));
    assert!(d2 <= 1e-6 * norm, "relative change {}", d2 / norm);
    // fourth order: each halving shrinks the change about 16-fold
    assert!(d1 / d2 > 10.0, "ratio {}", d1 / d2);
}

#[test]
fn noiseless_ks_has_quiet_spectrum_tail() {
    let x = ks_space_axis();
    let d = integrate_ks(&band_limited_initial(&x, 16, 2), &x, &ks_time_axis()).unwrap();
    assert!(estimate_noise_std(&d) <= 0.05 * d.rms());
}

#[test]
fn ou_stationary_variance() {
    let t = Axis::new(11, 0.0, 6.0).unwrap();
    let traj = simulate_ips(&ou(100_000, InitialDistribution::Point { x: 0.0 }, 3), &t, 1e-2).unwrap();
    let last = traj.positions.last().unwrap();
    let n = last.len() as f64;
    let mean = last.iter().sum::<f64>() / n;
    let var = last.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / 0.5 - 1.0).abs() < 0.03, "variance {var}");
}

#[test]
fn ou_stationary_histogram_is_gaussian() {
    let t = Axis::new(11, 0.0, 6.0).unwrap();
    let x = Axis::new(81, -4.0, 4.0).unwrap();
    let traj = simulate_ips(&ou(100_000, InitialDistribution::Gaussian { mean: 0.0, std: 0.5f64.sqrt() }, 4), &t, 1e-2).unwrap();
    let (d, outside) = histogram_density(&traj, &x).unwrap();
    assert!(outside < 1e-3);
    let nt = t.n;
    let sup = x
        .coords()
        .iter()
        .enumerate()
        .map(|(ix, &xv)| {
            let exact = (-xv * xv).exp() / std::f64::consts::PI.sqrt();
            (d.values()[ix * nt + nt - 1] - exact).abs()
        })
        .fold(0.0, f64::max);
    assert!(sup <= 0.05, "sup-norm difference {sup}");
    let mass: f64 = (0..x.n).map(|ix| d.values()[ix * nt + nt - 1]).sum::<f64>() * x.spacing();
    assert!((mass - 1.0).abs() <= outside + 1e-12);
}

#[test]
fn particle_runs_are_reproducible() {
    let t = Axis::new(5, 0.0, 1.0).unwrap();
    let e = ou(5000, InitialDistribution::Gaussian { mean: 1.0, std: 0.2 }, 9);
    let a = simulate_ips(&e, &t, 1e-2).unwrap();
    let b = simulate_ips(&e, &t, 1e-2).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let c = pool.install(|| simulate_ips(&e, &t, 1e-2).unwrap());
    assert_eq!(a, c);
}
