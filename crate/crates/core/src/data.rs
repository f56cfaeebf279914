//! Sample grids, datasets and measurement noise.
//!
//! Datasets are stored row-major over the grid axes with the component index
//! varying fastest. For space-time data the time axis is the last grid axis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Axis {
    pub fn new(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::domain(format!("axis needs at least 2 samples, got {n}")));
        }
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::domain(format!("axis endpoints must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Axis { n, lo, hi })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coord(i)).collect()
    }
}

/// Uniform rectangular sample grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    /// Build a grid from `(n, lo, hi)` triples.
    pub fn new(axes: &[(usize, f64, f64)]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::domain("grid needs at least one axis"));
        }
        let axes = axes
            .iter()
            .enumerate()
            .map(|(i, &(n, lo, hi))| Axis::new(n, lo, hi).map_err(|e| e.context(&format!("axis {i}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Grid { axes })
    }

    pub fn from_axes(axes: Vec<Axis>) -> Result<Self> {
        let triples: Vec<_> = axes.iter().map(|a| (a.n, a.lo, a.hi)).collect();
        Self::new(&triples)
    }

    /// Build a grid from explicit coordinate vectors, rejecting non-uniform
    /// sampling.
    pub fn from_coordinates(coords: &[Vec<f64>]) -> Result<Self> {
        let mut triples = Vec::with_capacity(coords.len());
        for (i, c) in coords.iter().enumerate() {
            if c.len() < 2 {
                return Err(Error::domain(format!("axis {i} needs at least 2 samples")));
            }
            let lo = c[0];
            let hi = c[c.len() - 1];
            let h = (hi - lo) / (c.len() - 1) as f64;
            let tol = 1e-9 * (hi - lo).abs().max(f64::MIN_POSITIVE);
            for (j, &x) in c.iter().enumerate() {
                if (x - (lo + j as f64 * h)).abs() > tol {
                    return Err(Error::domain(format!("axis {i} is not uniformly sampled at index {j}")));
                }
            }
            triples.push((c.len(), lo, hi));
        }
        Self::new(&triples)
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes[i]
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.n).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.axes[axis].spacing()
    }

    pub fn spacings(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Multi-index of flat position `flat` in a row-major array of `shape`.
pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for i in (0..shape.len()).rev() {
        idx[i] = flat % shape[i];
        flat /= shape[i];
    }
    idx
}

/// State values sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    grid: Grid,
    components: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(grid: Grid, components: usize, values: Vec<f64>) -> Result<Self> {
        if components == 0 {
            return Err(Error::domain("dataset needs at least one component"));
        }
        let expected = grid.len() * components;
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} values for grid {:?} x {components} components, got {}",
                grid.shape(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("dataset entry {i} is {}", values[i])));
        }
        Ok(Dataset { grid, components, values })
    }

    /// Fill a dataset from a function of the grid coordinates returning all
    /// components at that point.
    pub fn from_fn(grid: Grid, components: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let shape = grid.shape();
        let mut values = Vec::with_capacity(grid.len() * components);
        let mut x = vec![0.0; shape.len()];
        for flat in 0..grid.len() {
            let idx = unravel(flat, &shape);
            for (a, &i) in idx.iter().enumerate() {
                x[a] = grid.axis(a).coord(i);
            }
            let v = f(&x);
            if v.len() != components {
                return Err(Error::Shape(format!("function returned {} components, expected {components}", v.len())));
            }
            values.extend(v);
        }
        Self::new(grid, components, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Grid-shaped copy of one component.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().skip(c).step_by(self.components).copied().collect()
    }

    pub fn get(&self, flat_point: usize, c: usize) -> f64 {
        self.values[flat_point * self.components + c]
    }

    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.components, self.values.iter().map(|v| v * c).collect())
    }
}

pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    GaussianAdditive,
}

/// Measurement-noise settings. `level` is the ratio of the noise
/// standard deviation to the root-mean-square of the clean signal, so a
/// level of 0.5 means "50% noise".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn gaussian(level: f64, seed: u64) -> Self {
        NoiseSpec { kind: NoiseKind::GaussianAdditive, level, seed }
    }
}

/// Return `d` plus i.i.d. Gaussian noise with std `level * rms(d)`.
pub fn add_noise(d: &Dataset, spec: &NoiseSpec) -> Result<Dataset> {
    if !(spec.level >= 0.0) || !spec.level.is_finite() {
        return Err(Error::domain(format!("noise level must be finite and >= 0, got {}", spec.level)));
    }
    if spec.level == 0.0 {
        return Ok(d.clone());
    }
    let std = spec.level * d.rms();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let values = d
        .values
        .iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + std * z
        })
        .collect();
    Dataset::new(d.grid.clone(), d.components, values)
}
