use serde::{Deserialize, Serialize};

use super::family::TestFunction;
use crate::error::{Error, Result};

/// A test function discretized on `2m + 1` grid points centred at zero.
///
/// `weights[k][i]` holds `(-1)^k d^k phi(x_i) * trap_i * spacing` for
/// `x_i = (i - m) * spacing`, so a plain inner product with samples of `f`
/// approximates `<(-1)^k d^k phi, f>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stencil {
    radius: usize,
    spacing: f64,
    weights: Vec<Vec<f64>>,
}

impl Stencil {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn max_order(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn len(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed weights for derivative order `k`.
    pub fn weights(&self, k: usize) -> &[f64] {
        &self.weights[k]
    }
}

/// Map the family's support onto `[-m h, m h]` and sample orders `0..=k_max`.
pub fn discretize(tf: &TestFunction, spacing: f64, radius: usize, k_max: usize) -> Result<Stencil> {
    if radius == 0 || radius < k_max {
        return Err(Error::domain(format!(
            "stencil radius {radius} too small for derivative order {k_max}"
        )));
    }
    if k_max > tf.max_derivative() {
        return Err(Error::domain(format!(
            "derivative order {k_max} exceeds the test function's capability {}",
            tf.max_derivative()
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::domain(format!("grid spacing must be positive, got {spacing}")));
    }
    let (lo, hi) = tf.support();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    // d/dx = (half / (m h)) d/dt
    let chain = half / (radius as f64 * spacing);
    let m = radius as isize;
    let weights = (0..=k_max)
        .map(|k| {
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            let scale = sign * chain.powi(k as i32) * spacing;
            (-m..=m)
                .map(|i| {
                    let t = if i == -m {
                        lo
                    } else if i == m {
                        hi
                    } else {
                        mid + half * i as f64 / radius as f64
                    };
                    let trap = if i.abs() == m { 0.5 } else { 1.0 };
                    scale * trap * tf.eval(k, t)
                })
                .collect()
        })
        .collect();
    Ok(Stencil { radius, spacing, weights })
}
