use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Gaussian tail cutoff for the Hermite family: exp(-R^2/2) < 1e-12.
pub const HERMITE_CUTOFF: f64 = 7.5;

/// Parameterization of a test-function family, in the family's natural
/// coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    /// `(1 - (x/a)^2)^q` on `|x| <= a`.
    PolyBump { q: u32, radius: f64 },
    /// `exp(1 - 1/(1 - (x/a)^2))` on `|x| < a`.
    CinfBump { radius: f64 },
    /// `sin^n(w t)` on one half period `[0, pi/w]`.
    ShinbrotSin { power: u32, omega: f64 },
    /// Standard Gaussian density whose n-th derivative is
    /// `(-1)^n He_n(r) exp(-r^2/2) / sqrt(2 pi)`, truncated at `|r| = 7.5`.
    TakayaHermite { order: u32 },
    /// `t^alpha (1 - t)^beta` on `[0, 1]`.
    ValeurAsym { alpha: f64, beta: f64 },
    /// `(1/T) sum_j (-1)^j C(n,j) cas(2 (n + k - j) pi t / T)` on `[0, T]`.
    PatraCas { n: u32, k: u32, window: f64 },
}

/// A test function together with the highest derivative order it is asked
/// to supply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    family: Family,
    max_derivative: usize,
}

fn binom(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `a (a-1) ... (a-i+1)`
fn falling(a: f64, i: usize) -> f64 {
    (0..i).fold(1.0, |acc, j| acc * (a - j as f64))
}

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_deriv(coeffs: &[f64]) -> Vec<f64> {
    coeffs.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

/// Numerators `P_k` with `d^k/dy^k exp(1 - 1/(1-y^2)) = P_k(y) / (1-y^2)^(2k) * exp(..)`.
fn cinf_numerators(k_max: usize) -> Vec<Vec<f64>> {
    let one_minus_sq = [1.0, 0.0, -1.0];
    let one_minus_sq_2 = poly_mul(&one_minus_sq, &one_minus_sq);
    let mut out = vec![vec![1.0]];
    for k in 0..k_max {
        let p = &out[k];
        // P_{k+1} = P_k' (1-y^2)^2 + 4k y (1-y^2) P_k - 2 y P_k
        let t1 = poly_mul(&poly_deriv(p), &one_minus_sq_2);
        let t2 = poly_mul(&poly_mul(&[0.0, 4.0 * k as f64], &one_minus_sq), p);
        let t3 = poly_mul(&[0.0, -2.0], p);
        out.push(poly_add(&poly_add(&t1, &t2), &t3));
    }
    out
}

/// Probabilists' Hermite polynomial He_n(r).
pub fn hermite_he(n: u32, r: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, r);
    if n == 0 {
        return 1.0;
    }
    for j in 1..n {
        let next = r * cur - f64::from(j) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// k-th derivative of cas(x) = cos(x) + sin(x).
fn cas_deriv(k: usize, x: f64) -> f64 {
    let (s, c) = x.sin_cos();
    match k % 4 {
        0 => c + s,
        1 => c - s,
        2 => -c - s,
        _ => s - c,
    }
}

/// k-th derivative of sin^n(u) with respect to u, via the monomial
/// expansion in (sin u, cos u).
fn sin_power_deriv(n: u32, k: usize, u: f64) -> f64 {
    // terms: (coef, power of sin, power of cos)
    let mut terms: Vec<(f64, i32, i32)> = vec![(1.0, n as i32, 0)];
    for _ in 0..k {
        let mut next: Vec<(f64, i32, i32)> = Vec::with_capacity(terms.len() * 2);
        for &(c, a, b) in &terms {
            if a > 0 {
                next.push((c * a as f64, a - 1, b + 1));
            }
            if b > 0 {
                next.push((-c * b as f64, a + 1, b - 1));
            }
        }
        next.sort_by_key(|t| (t.1, t.2));
        let mut merged: Vec<(f64, i32, i32)> = Vec::with_capacity(next.len());
        for t in next {
            match merged.last_mut() {
                Some(m) if m.1 == t.1 && m.2 == t.2 => m.0 += t.0,
                _ => merged.push(t),
            }
        }
        terms = merged;
    }
    let (s, c) = u.sin_cos();
    terms.iter().map(|&(coef, a, b)| coef * s.powi(a) * c.powi(b)).sum()
}

impl TestFunction {
    pub fn poly_bump(q: u32, radius: f64, k_max: usize) -> Result<Self> {
        if (q as usize) < k_max + 1 {
            return Err(Error::domain(format!("poly-bump order q={q} must be at least K_max+1 = {}", k_max + 1)));
        }
        check_positive(radius, "poly-bump radius")?;
        Ok(TestFunction { family: Family::PolyBump { q, radius }, max_derivative: k_max })
    }

    pub fn cinf_bump(radius: f64, k_max: usize) -> Result<Self> {
        check_positive(radius, "bump radius")?;
        Ok(TestFunction { family: Family::CinfBump { radius }, max_derivative: k_max })
    }

    pub fn shinbrot_sin(power: u32, omega: f64, k_max: usize) -> Result<Self> {
        if (power as usize) < k_max + 1 {
            return Err(Error::domain(format!("sine power n={power} must be at least K_max+1 = {}", k_max + 1)));
        }
        check_positive(omega, "sine frequency")?;
        Ok(TestFunction { family: Family::ShinbrotSin { power, omega }, max_derivative: k_max })
    }

    /// Gaussian family supplying derivatives `0..=order`.
    pub fn takaya_hermite(order: u32) -> Self {
        TestFunction { family: Family::TakayaHermite { order }, max_derivative: order as usize }
    }

    pub fn valeur_asym(alpha: f64, beta: f64, k_max: usize) -> Result<Self> {
        let k = k_max as f64;
        if !(alpha > k && beta > k) {
            return Err(Error::domain(format!(
                "asymmetric exponents ({alpha}, {beta}) must both exceed K_max = {k_max}"
            )));
        }
        Ok(TestFunction { family: Family::ValeurAsym { alpha, beta }, max_derivative: k_max })
    }

    /// Hartley-type cas sum. Derivatives of order below `n` vanish at both
    /// window ends; higher orders are still supplied analytically.
    pub fn patra_cas(n: u32, k: u32, window: f64, k_max: usize) -> Result<Self> {
        if n < 1 || k < 1 {
            return Err(Error::domain("cas-sum needs n >= 1 and k >= 1"));
        }
        check_positive(window, "cas window")?;
        Ok(TestFunction { family: Family::PatraCas { n, k, window }, max_derivative: k_max })
    }

    /// Validate a deserialized family and attach a derivative budget.
    pub fn from_family(family: Family, k_max: usize) -> Result<Self> {
        match family {
            Family::PolyBump { q, radius } => Self::poly_bump(q, radius, k_max),
            Family::CinfBump { radius } => Self::cinf_bump(radius, k_max),
            Family::ShinbrotSin { power, omega } => Self::shinbrot_sin(power, omega, k_max),
            Family::TakayaHermite { order } => {
                if (order as usize) < k_max {
                    return Err(Error::domain(format!("Hermite order {order} supplies fewer than {k_max} derivatives")));
                }
                Ok(Self::takaya_hermite(order))
            }
            Family::ValeurAsym { alpha, beta } => Self::valeur_asym(alpha, beta, k_max),
            Family::PatraCas { n, k, window } => Self::patra_cas(n, k, window, k_max),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn max_derivative(&self) -> usize {
        self.max_derivative
    }

    /// Natural-coordinate support interval.
    pub fn support(&self) -> (f64, f64) {
        match self.family {
            Family::PolyBump { radius, .. } | Family::CinfBump { radius } => (-radius, radius),
            Family::ShinbrotSin { omega, .. } => (0.0, PI / omega),
            Family::TakayaHermite { .. } => (-HERMITE_CUTOFF, HERMITE_CUTOFF),
            Family::ValeurAsym { .. } => (0.0, 1.0),
            Family::PatraCas { window, .. } => (0.0, window),
        }
    }

    /// Whether the function and all supplied derivatives vanish exactly at
    /// the support boundary.
    pub fn is_compact(&self) -> bool {
        match self.family {
            Family::TakayaHermite { .. } => false,
            Family::PatraCas { n, .. } => (n as usize) > self.max_derivative,
            _ => true,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match self.family {
            Family::PolyBump { .. } | Family::CinfBump { .. } | Family::ShinbrotSin { .. } | Family::TakayaHermite { .. } => true,
            Family::ValeurAsym { alpha, beta } => alpha == beta,
            Family::PatraCas { .. } => false,
        }
    }

    /// k-th derivative at natural coordinate `x`. Zero outside the support
    /// (and on its boundary, for compactly supported families).
    pub fn eval(&self, k: usize, x: f64) -> f64 {
        let (lo, hi) = self.support();
        let compact = self.is_compact();
        if x < lo || x > hi || (compact && (x == lo || x == hi)) {
            return 0.0;
        }
        match self.family {
            Family::PolyBump { q, radius } => {
                let y = x / radius;
                let q = q as usize;
                if k > 2 * q {
                    return 0.0;
                }
                let mut s = 0.0;
                // Leibniz on (1-y)^q (1+y)^q avoids cancellation near |y| = 1.
                for i in 0..=k {
                    let j = k - i;
                    if i > q || j > q {
                        continue;
                    }
                    let left = falling(q as f64, i) * if i % 2 == 1 { -1.0 } else { 1.0 } * (1.0 - y).powi((q - i) as i32);
                    let right = falling(q as f64, j) * (1.0 + y).powi((q - j) as i32);
                    s += binom(k as u32, i as u32) * left * right;
                }
                s / radius.powi(k as i32)
            }
            Family::CinfBump { radius } => {
                let y = x / radius;
                let w = 1.0 - y * y;
                if w <= 0.0 {
                    return 0.0;
                }
                let base = (1.0 - 1.0 / w).exp();
                if base == 0.0 {
                    return 0.0;
                }
                let p = &cinf_numerators(k)[k];
                poly_eval(p, y) / w.powi(2 * k as i32) * base / radius.powi(k as i32)
            }
            Family::ShinbrotSin { power, omega } => omega.powi(k as i32) * sin_power_deriv(power, k, omega * x),
            Family::TakayaHermite { .. } => {
                let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
                sign * hermite_he(k as u32, x) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
            }
            Family::ValeurAsym { alpha, beta } => {
                let mut s = 0.0;
                for i in 0..=k {
                    let j = k - i;
                    let left = falling(alpha, i) * x.powf(alpha - i as f64);
                    let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
                    let right = sign * falling(beta, j) * (1.0 - x).powf(beta - j as f64);
                    s += binom(k as u32, i as u32) * left * right;
                }
                s
            }
            Family::PatraCas { n, k: shift, window } => {
                let mut s = 0.0;
                for j in 0..=n {
                    let a = 2.0 * f64::from(n + shift - j) * PI / window;
                    let sign = if j % 2 == 1 { -1.0 } else { 1.0 };
                    s += sign * binom(n, j) * a.powi(k as i32) * cas_deriv(k, a * x);
                }
                s / window
            }
        }
    }
}

fn check_positive(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("{what} must be positive and finite, got {v}")))
    }
}
