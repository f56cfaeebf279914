use weakid::coarse::{coarse_grain, Warnings};
use weakid::library::fokker_planck_library;
use weakid::pipeline::{SparseSettings, WeakSettings};
use weakid::sim::{Diffusion, Drift, InitialDistribution, ParticleEnsemble};
use weakid::Axis;

#[test]
fn too_few_particles_are_flagged_not_fatal() {
    let ens = ParticleEnsemble {
        particles: 100,
        initial: InitialDistribution::Gaussian { mean: 2.0, std: 0.3 },
        drift: Drift::Linear { theta: 1.0 },
        diffusion: Diffusion::Constant { d: 0.5 },
        seed: 1,
    };
    let x = Axis::new(161, -4.0, 4.0).unwrap();
    let t = Axis::new(81, 0.0, 4.0).unwrap();
    let lib = fokker_planck_library(2, 2);
    let (r, _) = coarse_grain(&ens, &x, &t, 1e-3, &lib, &WeakSettings::default(), &SparseSettings::default(), &Warnings::default()).unwrap();
    assert!(r.high_residual, "residual {}, L1 {}", r.discovery.models[0].residual, r.l1_mean);
}

#[test]
fn oscillatory_diffusivity_homogenizes() {
    // period equal to the bin width, so each histogram bin averages one cell
    let period = 0.2;
    let ens = ParticleEnsemble {
        particles: 20_000,
        initial: InitialDistribution::Gaussian { mean: 0.0, std: 0.3 },
        drift: Drift::Zero,
        diffusion: Diffusion::Oscillatory { d0: 0.5, amplitude: 0.8, omega: 2.0 * std::f64::consts::PI / period },
        seed: 0,
    };
    let x = Axis::new(41, -4.0, 4.0).unwrap();
    let t = Axis::new(41, 0.0, 2.0).unwrap();
    let lib = fokker_planck_library(2, 2);
    let (r, _) = coarse_grain(&ens, &x, &t, 2e-4, &lib, &WeakSettings::default(), &SparseSettings::default(), &Warnings::default()).unwrap();
    let m = &r.discovery.models[0];
    let labels: Vec<&str> = m.terms.iter().map(|(l, _)| l.as_str()).collect();
    assert_eq!(labels, ["d^2/dx^2(u^1)"]);
    let d_eff = m.terms[0].1;
    let (arith, harm) = r.diffusivity_means;
    assert!(d_eff < arith, "{d_eff} vs arithmetic {arith}");
    assert!((d_eff / harm - 1.0).abs() < 0.05, "{d_eff} vs harmonic {harm}");
    assert!(!r.high_residual && r.l1_max < 0.15);
}
