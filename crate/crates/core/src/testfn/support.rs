//! Data-driven choice of the test-function radius along one axis.
//!
//! The log of the averaged magnitude spectrum is accumulated over
//! wavenumber and fitted by a continuous two-piece line; the break marks the
//! corner `k*` between the signal-dominated band and the flat noise floor.
//! The radius is then the smallest one whose discretized test function
//! attenuates every frequency at or above `k*` by the configured factor.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::family::TestFunction;
use super::stencil::discretize;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::spectrum::{mean_magnitude, two_piece_fit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupportSelector {
    /// Required spectral attenuation at and above the corner, relative to
    /// the test function's spectral peak.
    pub attenuation: f64,
    /// The corner counts as a signal band only when the mean spectrum level
    /// before the break is at least this many times the level after it.
    pub signal_slope_ratio: f64,
    pub min_radius: Option<usize>,
    pub max_radius: Option<usize>,
}

impl Default for SupportSelector {
    fn default() -> Self {
        SupportSelector { attenuation: 0.03, signal_slope_ratio: 2.0, min_radius: None, max_radius: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportChoice {
    pub radius: usize,
    /// Corner wavenumber index (cycles per axis length).
    pub k_star: usize,
    /// Set when the data carried no usable spectrum (e.g. constant data).
    pub flat_spectrum: bool,
}

const FREQ_SAMPLES: usize = 512;
const ROUNDOFF_FLOOR: f64 = 1e-12;

impl SupportSelector {
    pub fn bounds(&self, tf: &TestFunction, n: usize) -> (usize, usize) {
        let lo = self.min_radius.unwrap_or(tf.max_derivative() + 1).max(1);
        let hi = self.max_radius.unwrap_or((n / 2).saturating_sub(1)).min((n / 2).saturating_sub(1));
        (lo.min(hi), hi)
    }

    /// Corner wavenumber of the data along `axis` and whether the spectrum
    /// was degenerate.
    pub fn corner(&self, d: &Dataset, axis: usize) -> Result<(usize, bool)> {
        let n = axis_len(d, axis)?;
        let spec = mean_magnitude(d, axis);
        let total: f64 = spec.iter().sum();
        let peak = spec.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) || !total.is_finite() || peak <= 1e-14 * d.values().iter().fold(0.0f64, |a, v| a.max(v.abs())) * n as f64 {
            return Ok((1, true));
        }
        let mut cum = Vec::with_capacity(spec.len());
        let mut run = 0.0;
        // Levels below this are roundoff and count as a flat floor.
        let floor = peak * ROUNDOFF_FLOOR;
        for s in &spec {
            run += (s.max(floor) / peak).ln();
            cum.push(run);
        }
        let (k, before, after) = two_piece_fit(&cum);
        if before - after < self.signal_slope_ratio.ln() {
            // No band rises clearly above the floor: everything resolved is
            // treated as noise.
            return Ok((1, false));
        }
        Ok((k.max(1), false))
    }

    pub fn select(&self, d: &Dataset, axis: usize, tf: &TestFunction) -> Result<SupportChoice> {
        let n = axis_len(d, axis)?;
        let (lo, hi) = self.bounds(tf, n);
        let (k_star, flat) = self.corner(d, axis)?;
        if flat {
            return Ok(SupportChoice { radius: lo, k_star, flat_spectrum: true });
        }
        let h = d.grid().spacing(axis);
        let length = n as f64 * h;
        let xi_star = 2.0 * PI * k_star as f64 / length;
        let radius = smallest_attenuating_radius(tf, h, xi_star, self.attenuation, lo, hi)?;
        Ok(SupportChoice { radius, k_star, flat_spectrum: false })
    }
}

fn axis_len(d: &Dataset, axis: usize) -> Result<usize> {
    if axis >= d.grid().ndim() {
        return Err(Error::domain(format!("axis {axis} out of range for a {}-d grid", d.grid().ndim())));
    }
    let n = d.grid().shape()[axis];
    if n < 16 {
        return Err(Error::domain(format!("axis {axis} has {n} samples; support selection needs at least 16")));
    }
    Ok(n)
}

/// Largest spectral magnitude of the order-0 stencil at frequencies
/// `>= xi_star`, relative to its peak over all frequencies.
pub fn relative_tail(weights: &[f64], h: f64, xi_star: f64) -> f64 {
    let m = (weights.len() / 2) as f64;
    let nyquist = PI / h;
    let mut peak: f64 = 0.0;
    let mut tail: f64 = 0.0;
    for s in 0..=FREQ_SAMPLES {
        let xi = nyquist * s as f64 / FREQ_SAMPLES as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, w) in weights.iter().enumerate() {
            let x = (i as f64 - m) * h;
            let (sn, cs) = (xi * x).sin_cos();
            re += w * cs;
            im -= w * sn;
        }
        let mag = (re * re + im * im).sqrt();
        peak = peak.max(mag);
        if xi >= xi_star {
            tail = tail.max(mag);
        }
    }
    if xi_star > nyquist {
        tail = 0.0;
    }
    if peak > 0.0 {
        tail / peak
    } else {
        f64::INFINITY
    }
}

fn smallest_attenuating_radius(tf: &TestFunction, h: f64, xi_star: f64, attenuation: f64, lo: usize, hi: usize) -> Result<usize> {
    for m in lo..=hi {
        let s = discretize(tf, h, m, 0)?;
        if relative_tail(s.weights(0), h, xi_star) <= attenuation {
            return Ok(m);
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{add_noise, Grid, NoiseSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tf() -> TestFunction {
        TestFunction::poly_bump(9, 1.0, 6).unwrap()
    }

    fn white_noise(n: usize, lines: usize, seed: u64) -> Dataset {
        let g = Grid::new(&[(n, 0.0, 2.0 * PI), (lines, 0.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * lines).map(|_| StandardNormal.sample(&mut rng)).collect();
        Dataset::new(g, 1, v).unwrap()
    }

    #[test]
    fn pure_noise_hits_upper_clamp() {
        let d = white_noise(256, 32, 5);
        let sel = SupportSelector::default();
        let c = sel.select(&d, 0, &tf()).unwrap();
        assert!(c.k_star <= 3, "k* = {}", c.k_star);
        assert_eq!(c.radius, 127);
    }

    #[test]
    fn sinusoid_gets_small_radius() {
        // The leakage of the sampled sine has no noise floor, so the corner
        // itself is not pinned down; the radius must still stay small.
        let g = Grid::new(&[(256, 0.0, 2.0 * PI)]).unwrap();
        let d = Dataset::from_fn(g, 1, |x| vec![x[0].sin()]).unwrap();
        let c = SupportSelector::default().select(&d, 0, &tf()).unwrap();
        assert!(c.radius <= 16, "radius {} k* {}", c.radius, c.k_star);
    }

    #[test]
    fn constant_data_flags_flat_spectrum() {
        let g = Grid::new(&[(64, 0.0, 1.0)]).unwrap();
        let d = Dataset::new(g, 1, vec![2.5; 64]).unwrap();
        let c = SupportSelector::default().select(&d, 0, &tf()).unwrap();
        assert!(c.flat_spectrum);
        assert_eq!(c.radius, 7);
    }

    #[test]
    fn short_axis_rejected() {
        let g = Grid::new(&[(8, 0.0, 1.0)]).unwrap();
        let d = Dataset::new(g, 1, vec![1.0, 2.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(SupportSelector::default().select(&d, 0, &tf()).is_err());
        assert!(SupportSelector::default().select(&d, 1, &tf()).is_err());
    }

    fn smooth_field() -> Dataset {
        let g = Grid::new(&[(128, 0.0, 2.0 * PI), (64, 0.0, 4.0)]).unwrap();
        Dataset::from_fn(g, 1, |x| vec![(x[0] - x[1]).sin() + 0.5 * (2.0 * x[0] + 0.3 * x[1]).cos() * (-0.1 * x[1]).exp()]).unwrap()
    }

    #[test]
    fn noise_never_shrinks_radius() {
        let d = smooth_field();
        let sel = SupportSelector::default();
        let clean = sel.select(&d, 0, &tf()).unwrap();
        let noisy = add_noise(&d, &NoiseSpec::gaussian(0.5, 1)).unwrap();
        let n = sel.select(&noisy, 0, &tf()).unwrap();
        assert!(n.radius >= clean.radius, "{} < {}", n.radius, clean.radius);
    }

    #[test]
    fn scale_invariant() {
        let d = add_noise(&smooth_field(), &NoiseSpec::gaussian(0.2, 9)).unwrap();
        let sel = SupportSelector::default();
        let a = sel.select(&d, 0, &tf()).unwrap();
        for c in [-3.0, 1e-3, 250.0] {
            assert_eq!(sel.select(&d.scaled(c).unwrap(), 0, &tf()).unwrap(), a);
        }
    }

    #[test]
    fn deterministic() {
        let d = white_noise(64, 8, 2);
        let sel = SupportSelector::default();
        assert_eq!(sel.select(&d, 0, &tf()).unwrap(), sel.select(&d, 0, &tf()).unwrap());
    }
}
