//! Candidate term libraries.
//!
//! Every term splits into a pointwise part (a nonlinearity of the state,
//! optionally times a monomial in the spatial coordinates) and a derivative
//! multi-index over the spatial axes. Derivatives are never applied to data;
//! the weak-system assembly moves them onto the test function.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{unravel, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    /// `prod_c u_c^{powers[c]}`; all zeros is the constant term.
    Monomial { powers: Vec<u32> },
    Sin { component: usize, freq: u32 },
    Cos { component: usize, freq: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub nonlinearity: Nonlinearity,
    /// Powers of the spatial coordinates multiplying the nonlinearity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coord_powers: Vec<u32>,
    /// Derivative order per spatial axis.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub derivative: Vec<u32>,
}

fn trim(v: &[u32]) -> Vec<u32> {
    let end = v.iter().rposition(|&p| p != 0).map_or(0, |i| i + 1);
    v[..end].to_vec()
}

impl Term {
    pub fn monomial(powers: Vec<u32>) -> Self {
        Term { nonlinearity: Nonlinearity::Monomial { powers }, coord_powers: vec![], derivative: vec![] }
    }

    /// `d^k/dx^k (u^p)` for a scalar field on one spatial axis.
    pub fn dx_power(k: u32, p: u32) -> Self {
        Term { nonlinearity: Nonlinearity::Monomial { powers: vec![p] }, coord_powers: vec![], derivative: vec![k] }
    }

    pub fn with_coords(mut self, coord_powers: Vec<u32>) -> Self {
        self.coord_powers = coord_powers;
        self
    }

    pub fn with_derivative(mut self, derivative: Vec<u32>) -> Self {
        self.derivative = derivative;
        self
    }

    pub fn derivative_order(&self, axis: usize) -> usize {
        self.derivative.get(axis).copied().unwrap_or(0) as usize
    }

    pub fn total_derivative(&self) -> usize {
        self.derivative.iter().map(|&k| k as usize).sum()
    }

    /// Pointwise part only (derivative stripped), in canonical form.
    pub fn pointwise_key(&self) -> Term {
        Term { nonlinearity: self.nonlinearity.clone(), coord_powers: trim(&self.coord_powers), derivative: vec![] }
    }

    fn canonical(&self) -> Term {
        let mut t = self.pointwise_key();
        t.derivative = trim(&self.derivative);
        if let Nonlinearity::Monomial { powers } = &t.nonlinearity {
            t.nonlinearity = Nonlinearity::Monomial { powers: trim(powers) };
        }
        t
    }

    /// True when the pointwise part is a constant, so any derivative of it
    /// vanishes identically.
    pub fn is_constant(&self) -> bool {
        matches!(&self.nonlinearity, Nonlinearity::Monomial { powers } if powers.iter().all(|&p| p == 0))
            && self.coord_powers.iter().all(|&p| p == 0)
    }

    /// Pointwise value at state `u` and spatial coordinates `x`.
    pub fn eval(&self, u: &[f64], x: &[f64]) -> f64 {
        let base = match &self.nonlinearity {
            Nonlinearity::Monomial { powers } => powers.iter().zip(u).map(|(&p, &v)| v.powi(p as i32)).product(),
            Nonlinearity::Sin { component, freq } => (f64::from(*freq) * u[*component]).sin(),
            Nonlinearity::Cos { component, freq } => (f64::from(*freq) * u[*component]).cos(),
        };
        base * self.coord_factor(x)
    }

    fn coord_factor(&self, x: &[f64]) -> f64 {
        self.coord_powers.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product()
    }

    /// Gradient of the pointwise value with respect to each state component.
    pub fn grad(&self, u: &[f64], x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let cf = self.coord_factor(x);
        match &self.nonlinearity {
            Nonlinearity::Monomial { powers } => {
                for (c, &p) in powers.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    let mut g = f64::from(p) * u[c].powi(p as i32 - 1);
                    for (c2, &p2) in powers.iter().enumerate() {
                        if c2 != c {
                            g *= u[c2].powi(p2 as i32);
                        }
                    }
                    out[c] = g * cf;
                }
            }
            Nonlinearity::Sin { component, freq } => {
                let f = f64::from(*freq);
                out[*component] = f * (f * u[*component]).cos() * cf;
            }
            Nonlinearity::Cos { component, freq } => {
                let f = f64::from(*freq);
                out[*component] = -f * (f * u[*component]).sin() * cf;
            }
        }
    }

    fn state_components(&self) -> usize {
        match &self.nonlinearity {
            Nonlinearity::Monomial { powers } => trim(powers).len(),
            Nonlinearity::Sin { component, .. } | Nonlinearity::Cos { component, .. } => component + 1,
        }
    }
}

fn var_name(c: usize, components: usize) -> String {
    if components == 1 {
        "u".to_string()
    } else {
        format!("u{c}")
    }
}

const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

fn axis_name(a: usize) -> String {
    AXIS_NAMES.get(a).map_or_else(|| format!("x{a}"), |s| s.to_string())
}

impl Term {
    /// Human-readable form, e.g. `d^2/dx^2(u^1)` or `u0^1*u2^1`.
    pub fn label(&self, components: usize) -> String {
        let mut factors = Vec::new();
        for (a, &p) in self.coord_powers.iter().enumerate() {
            if p > 0 {
                factors.push(format!("{}^{p}", axis_name(a)));
            }
        }
        match &self.nonlinearity {
            Nonlinearity::Monomial { powers } => {
                if components == 1 {
                    let p = powers.first().copied().unwrap_or(0);
                    if p > 0 {
                        factors.push(format!("u^{p}"));
                    }
                } else {
                    for (c, &p) in powers.iter().enumerate() {
                        if p > 0 {
                            factors.push(format!("{}^{p}", var_name(c, components)));
                        }
                    }
                }
            }
            Nonlinearity::Sin { component, freq } => factors.push(format!("sin({freq}*{})", var_name(*component, components))),
            Nonlinearity::Cos { component, freq } => factors.push(format!("cos({freq}*{})", var_name(*component, components))),
        }
        let body = if factors.is_empty() { "1".to_string() } else { factors.join("*") };
        let mut ops = Vec::new();
        for (a, &k) in self.derivative.iter().enumerate() {
            match k {
                0 => {}
                1 => ops.push(format!("d/d{}", axis_name(a))),
                k => ops.push(format!("d^{k}/d{}^{k}", axis_name(a))),
            }
        }
        if ops.is_empty() {
            body
        } else {
            format!("{}({body})", ops.join(" "))
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let comps = match &self.nonlinearity {
            Nonlinearity::Monomial { powers } => powers.len().max(1),
            _ => self.state_components().max(2),
        };
        f.write_str(&self.label(comps))
    }
}

/// Ordered candidate library for `d/dt u = sum_j w_j f_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureLibrary {
    components: usize,
    spatial_dims: usize,
    terms: Vec<Term>,
}

impl FeatureLibrary {
    pub fn new(components: usize, spatial_dims: usize, terms: Vec<Term>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::domain("feature library is empty"));
        }
        if components == 0 {
            return Err(Error::domain("library needs at least one state component"));
        }
        let mut seen = HashSet::new();
        for (j, t) in terms.iter().enumerate() {
            if t.state_components() > components {
                return Err(Error::domain(format!("term {j} ({t}) refers to a component beyond {components}")));
            }
            if trim(&t.derivative).len() > spatial_dims || trim(&t.coord_powers).len() > spatial_dims {
                return Err(Error::domain(format!("term {j} ({t}) refers to a spatial axis beyond {spatial_dims}")));
            }
            if matches!(t.nonlinearity, Nonlinearity::Sin { freq: 0, .. } | Nonlinearity::Cos { freq: 0, .. }) {
                return Err(Error::domain(format!("term {j}: trig frequency must be positive")));
            }
            if t.is_constant() && t.total_derivative() > 0 {
                return Err(Error::domain(format!("term {j} differentiates a constant")));
            }
            if !seen.insert(t.canonical()) {
                return Err(Error::domain(format!("term {j} ({t}) duplicates an earlier term")));
            }
        }
        let terms = terms
            .into_iter()
            .map(|mut t| {
                if let Nonlinearity::Monomial { powers } = &mut t.nonlinearity {
                    powers.resize(components, 0);
                }
                t.coord_powers = trim(&t.coord_powers);
                t.derivative = trim(&t.derivative);
                t
            })
            .collect();
        Ok(FeatureLibrary { components, spatial_dims, terms })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn spatial_dims(&self) -> usize {
        self.spatial_dims
    }

    pub fn labels(&self) -> Vec<String> {
        self.terms.iter().map(|t| t.label(self.components)).collect()
    }

    pub fn index_of(&self, term: &Term) -> Option<usize> {
        let c = term.canonical();
        self.terms.iter().position(|t| t.canonical() == c)
    }

    /// Highest derivative order requested on each spatial axis.
    pub fn max_derivative(&self, axis: usize) -> usize {
        self.terms.iter().map(|t| t.derivative_order(axis)).max().unwrap_or(0)
    }

    /// Sub-library restricted to the given term indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let terms = indices
            .iter()
            .map(|&i| self.terms.get(i).cloned().ok_or_else(|| Error::domain(format!("term index {i} out of range"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.components, self.spatial_dims, terms)
    }

    /// Distinct pointwise parts and, for each term, the index of its part.
    pub fn pointwise_groups(&self) -> (Vec<Term>, Vec<usize>) {
        let mut keys: Vec<Term> = Vec::new();
        let mut map = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let k = t.pointwise_key();
            let idx = keys.iter().position(|e| *e == k).unwrap_or_else(|| {
                keys.push(k);
                keys.len() - 1
            });
            map.push(idx);
        }
        (keys, map)
    }
}

/// All distinct `d_x^k (u^p)` with `0 <= k <= K`, `0 <= p <= P` for a scalar
/// field on one spatial axis: `(K+1)(P+1) - K` terms.
pub fn pde_poly_library(k_max: u32, p_max: u32) -> FeatureLibrary {
    pde_library(1, 1, k_max, p_max)
}

/// Total-degree monomials (degree <= `p_max`) in `components` fields, each
/// under every derivative multi-index of total order <= `k_max`.
pub fn pde_library(components: usize, spatial_dims: usize, k_max: u32, p_max: u32) -> FeatureLibrary {
    let monos = monomials(components, p_max);
    let derivs = multi_indices(spatial_dims, k_max);
    let mut terms = Vec::new();
    for d in &derivs {
        for m in &monos {
            let t = Term::monomial(m.clone()).with_derivative(d.clone());
            if t.is_constant() && t.total_derivative() > 0 {
                continue;
            }
            terms.push(t);
        }
    }
    FeatureLibrary::new(components, spatial_dims, terms).expect("generated library is canonical")
}

/// Multivariate monomials of total degree <= `max_degree`, ordered by
/// degree then lexicographically, followed by `sin`/`cos` of each listed
/// frequency for each component.
pub fn ode_poly_trig_library(components: usize, max_degree: u32, trig_freqs: &[u32]) -> Result<FeatureLibrary> {
    let mut terms: Vec<Term> = monomials(components, max_degree).into_iter().map(Term::monomial).collect();
    for &f in trig_freqs {
        for c in 0..components {
            terms.push(Term { nonlinearity: Nonlinearity::Sin { component: c, freq: f }, coord_powers: vec![], derivative: vec![] });
            terms.push(Term { nonlinearity: Nonlinearity::Cos { component: c, freq: f }, coord_powers: vec![], derivative: vec![] });
        }
    }
    FeatureLibrary::new(components, 0, terms)
}

/// Linear Fokker-Planck library `d_x^k (x^r p)` for `k <= K`, `r <= R`.
pub fn fokker_planck_library(k_max: u32, r_max: u32) -> FeatureLibrary {
    let mut terms = Vec::new();
    for k in 0..=k_max {
        for r in 0..=r_max {
            terms.push(Term::dx_power(k, 1).with_coords(vec![r]));
        }
    }
    FeatureLibrary::new(1, 1, terms).expect("generated library is canonical")
}

fn monomials(components: usize, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for deg in 0..=max_degree {
        let mut cur = vec![0u32; components];
        fill_degree(&mut cur, 0, deg, &mut out);
    }
    out
}

// Emits exponent vectors summing to `remaining` in descending lexicographic
// order.
fn fill_degree(cur: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos == cur.len() - 1 {
        cur[pos] = remaining;
        out.push(cur.clone());
        return;
    }
    for p in (0..=remaining).rev() {
        cur[pos] = p;
        fill_degree(cur, pos + 1, remaining - p, out);
    }
    cur[pos] = 0;
}

fn multi_indices(dims: usize, k_max: u32) -> Vec<Vec<u32>> {
    if dims == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for k in 0..=k_max {
        let mut cur = vec![0u32; dims];
        fill_degree(&mut cur, 0, k, &mut out);
    }
    out
}

/// Pointwise values of every term on the grid of `d` (grid-shaped arrays;
/// derivatives are not applied).
pub fn evaluate_pointwise(lib: &FeatureLibrary, d: &Dataset) -> Result<Vec<Vec<f64>>> {
    let (keys, map) = lib.pointwise_groups();
    let values = evaluate_keys(&keys, lib, d)?;
    Ok(map.iter().map(|&i| values[i].clone()).collect())
}

/// Pointwise values for a list of pointwise keys.
pub(crate) fn evaluate_keys(keys: &[Term], lib: &FeatureLibrary, d: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_compatible(lib, d)?;
    let grid = d.grid();
    let shape = grid.shape();
    let nc = d.components();
    let spatial = lib.spatial_dims;
    let vals = d.values();
    let coords: Vec<Vec<f64>> = grid.axes().iter().map(|a| a.coords()).collect();
    let mut out = Vec::with_capacity(keys.len());
    let mut x = vec![0.0; spatial];
    for (j, key) in keys.iter().enumerate() {
        let needs_coords = !key.coord_powers.is_empty();
        let mut col = Vec::with_capacity(grid.len());
        for p in 0..grid.len() {
            if needs_coords {
                let idx = unravel(p, &shape);
                for a in 0..spatial {
                    x[a] = coords[a][idx[a]];
                }
            }
            let v = key.eval(&vals[p * nc..(p + 1) * nc], &x);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("term {} ({key}) overflows at grid point {p}", j)));
            }
            col.push(v);
        }
        out.push(col);
    }
    Ok(out)
}

pub(crate) fn check_compatible(lib: &FeatureLibrary, d: &Dataset) -> Result<()> {
    if d.components() != lib.components {
        return Err(Error::Shape(format!(
            "library expects {} components, dataset has {}",
            lib.components,
            d.components()
        )));
    }
    if d.grid().ndim() != lib.spatial_dims + 1 {
        return Err(Error::Shape(format!(
            "library has {} spatial axes; grid must have that many plus time, got {} axes",
            lib.spatial_dims,
            d.grid().ndim()
        )));
    }
    Ok(())
}
