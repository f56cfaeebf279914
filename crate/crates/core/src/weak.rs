//! Weak-form regression system `G w ~ b`.
//!
//! Row `q` integrates the model against a tensor-product test function
//! centred at query point `q`:
//!
//! * `G[q][j] = <(-1)^|k_j| d^k_j phi, f_j(U)>` (derivatives on the spatial
//!   stencils, order 0 in time);
//! * `b[q] = -<d_t phi, U>` (order 1 in time, order 0 in space).
//!
//! The inner products are separable correlations, evaluated either by
//! direct summation or through zero-padded FFTs.

use std::io::Write;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::data::{strides, Dataset, Grid};
use crate::error::{Error, Result};
use crate::library::{check_compatible, evaluate_keys, FeatureLibrary, Term};
use crate::testfn::Stencil;

/// Tensor-product set of interior query points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    indices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    /// Per-axis stride (one value applies to all axes).
    Stride(Vec<usize>),
    /// Approximate number of query points; a common stride is chosen so at
    /// least this many fit.
    Count(usize),
}

impl QueryPlan {
    pub fn new(grid: &Grid, radii: &[usize], spec: &QuerySpec) -> Result<Self> {
        if radii.len() != grid.ndim() {
            return Err(Error::Shape(format!("{} radii for a {}-d grid", radii.len(), grid.ndim())));
        }
        let avail: Vec<usize> = grid
            .shape()
            .iter()
            .zip(radii)
            .map(|(&n, &m)| n.saturating_sub(2 * m))
            .collect();
        if let Some(a) = avail.iter().position(|&v| v == 0) {
            return Err(Error::domain(format!(
                "axis {a}: radius {} leaves no interior query point on {} samples",
                radii[a],
                grid.shape()[a]
            )));
        }
        let strides: Vec<usize> = match spec {
            QuerySpec::Stride(s) => {
                let s: Vec<usize> = match s.len() {
                    1 => vec![s[0]; grid.ndim()],
                    n if n == grid.ndim() => s.clone(),
                    n => return Err(Error::Shape(format!("{n} strides for a {}-d grid", grid.ndim()))),
                };
                if s.contains(&0) {
                    return Err(Error::domain("query stride must be >= 1"));
                }
                s
            }
            QuerySpec::Count(count) => {
                let total: usize = avail.iter().product();
                if *count == 0 {
                    return Err(Error::domain("query count must be positive"));
                }
                if *count > total {
                    return Err(Error::domain(format!("requested {count} query points but only {total} interior points exist")));
                }
                let max_s = *avail.iter().max().unwrap();
                let s = (1..=max_s)
                    .rev()
                    .find(|&s| avail.iter().map(|&a| a.div_ceil(s)).product::<usize>() >= *count)
                    .unwrap_or(1);
                vec![s; grid.ndim()]
            }
        };
        let indices = radii
            .iter()
            .zip(&avail)
            .zip(&strides)
            .map(|((&m, &a), &s)| (m..m + a).step_by(s).collect())
            .collect();
        Ok(QueryPlan { indices })
    }

    pub fn axis_indices(&self, axis: usize) -> &[usize] {
        &self.indices[axis]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.indices.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.indices.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid multi-indices of all query points in lexicographic order.
    pub fn points(&self) -> Vec<Vec<usize>> {
        let shape = self.shape();
        (0..self.len())
            .map(|f| {
                crate::data::unravel(f, &shape)
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| self.indices[a][i])
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConvMethod {
    #[default]
    Fft,
    Direct,
}

/// Correlate every line of `data` along `axis` with `weights` (length
/// `2m+1`), keeping only outputs centred at `centers`. Returns the new array
/// and its shape.
pub fn correlate_axis(data: &[f64], shape: &[usize], axis: usize, weights: &[f64], centers: &[usize], method: ConvMethod) -> (Vec<f64>, Vec<usize>) {
    let n = shape[axis];
    let m = weights.len() / 2;
    debug_assert!(centers.iter().all(|&c| c >= m && c + m < n));
    let st = strides(shape);
    let stride = st[axis];
    let outer: usize = shape[..axis].iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = centers.len();
    let out_stride = stride;
    let mut out = vec![0.0; out_shape.iter().product()];
    let nc = centers.len();
    match method {
        ConvMethod::Direct => {
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * n * stride + i;
                    let obase = o * nc * out_stride + i;
                    for (ci, &c) in centers.iter().enumerate() {
                        let start = c - m;
                        let mut s = 0.0;
                        for (k, w) in weights.iter().enumerate() {
                            s += w * data[base + (start + k) * stride];
                        }
                        out[obase + ci * out_stride] = s;
                    }
                }
            }
        }
        ConvMethod::Fft => {
            let len = weights.len();
            let size = (n + len - 1).next_power_of_two();
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(size);
            let inv = planner.plan_fft_inverse(size);
            let mut kernel = vec![Complex::new(0.0, 0.0); size];
            for (j, w) in weights.iter().rev().enumerate() {
                kernel[j] = Complex::new(*w, 0.0);
            }
            fwd.process(&mut kernel);
            let scale = 1.0 / size as f64;
            let mut buf = vec![Complex::new(0.0, 0.0); size];
            for o in 0..outer {
                for i in 0..stride {
                    let base = o * n * stride + i;
                    let obase = o * nc * out_stride + i;
                    for (j, slot) in buf.iter_mut().enumerate() {
                        *slot = if j < n { Complex::new(data[base + j * stride], 0.0) } else { Complex::new(0.0, 0.0) };
                    }
                    fwd.process(&mut buf);
                    for (b, k) in buf.iter_mut().zip(&kernel) {
                        *b *= k;
                    }
                    inv.process(&mut buf);
                    for (ci, &c) in centers.iter().enumerate() {
                        out[obase + ci * out_stride] = buf[c + m].re * scale;
                    }
                }
            }
        }
    }
    (out, out_shape)
}

/// Valid-region separable correlation of `data` with one kernel per axis.
pub fn separable_convolve(data: &[f64], shape: &[usize], kernels: &[&[f64]], method: ConvMethod) -> Result<(Vec<f64>, Vec<usize>)> {
    if kernels.len() != shape.len() {
        return Err(Error::Shape(format!("{} kernels for a {}-d array", kernels.len(), shape.len())));
    }
    let mut cur = data.to_vec();
    let mut cur_shape = shape.to_vec();
    for (a, k) in kernels.iter().enumerate() {
        if k.len() % 2 == 0 || k.len() > shape[a] {
            return Err(Error::Shape(format!("kernel of length {} does not fit axis {a} of length {}", k.len(), shape[a])));
        }
        let m = k.len() / 2;
        let centers: Vec<usize> = (m..shape[a] - m).collect();
        let (next, ns) = correlate_axis(&cur, &cur_shape, a, k, &centers, method);
        cur = next;
        cur_shape = ns;
    }
    Ok((cur, cur_shape))
}

/// FFT route of [`separable_convolve`].
pub fn fft_convolve(data: &[f64], shape: &[usize], kernels: &[&[f64]]) -> Result<(Vec<f64>, Vec<usize>)> {
    separable_convolve(data, shape, kernels, ConvMethod::Fft)
}

/// Direct-summation route of [`separable_convolve`].
pub fn direct_convolve(data: &[f64], shape: &[usize], kernels: &[&[f64]]) -> Result<(Vec<f64>, Vec<usize>)> {
    separable_convolve(data, shape, kernels, ConvMethod::Direct)
}

/// Assembled weak system. Raw matrices are kept; regression works on the
/// column-scaled copies.
#[derive(Debug, Clone)]
pub struct WeakSystem {
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    col_scales: Vec<f64>,
    b_scales: Vec<f64>,
    query_points: Vec<Vec<usize>>,
    column_map: Vec<Term>,
    labels: Vec<String>,
}

/// Power of two at or above `max |v|` (1 for an all-zero vector), so that
/// scaling and unscaling are exact.
fn pow2_scale<'a>(v: impl Iterator<Item = &'a f64>) -> f64 {
    let m = v.fold(0.0f64, |a, x| a.max(x.abs()));
    if m > 0.0 && m.is_finite() {
        2f64.powi(m.log2().ceil() as i32)
    } else {
        1.0
    }
}

impl WeakSystem {
    pub fn from_parts(g: DMatrix<f64>, b: DMatrix<f64>, query_points: Vec<Vec<usize>>, column_map: Vec<Term>, labels: Vec<String>) -> Result<Self> {
        if g.nrows() != b.nrows() {
            return Err(Error::Shape(format!("G has {} rows, b has {}", g.nrows(), b.nrows())));
        }
        if g.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weak system has non-finite entries".into()));
        }
        let col_scales = (0..g.ncols()).map(|j| pow2_scale(g.column(j).iter())).collect();
        let b_scales = (0..b.ncols()).map(|c| pow2_scale(b.column(c).iter())).collect();
        Ok(WeakSystem { g, b, col_scales, b_scales, query_points, column_map, labels })
    }

    pub fn rows(&self) -> usize {
        self.g.nrows()
    }

    pub fn cols(&self) -> usize {
        self.g.ncols()
    }

    pub fn responses(&self) -> usize {
        self.b.ncols()
    }

    pub fn g_raw(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn b_raw(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn col_scales(&self) -> &[f64] {
        &self.col_scales
    }

    pub fn b_scales(&self) -> &[f64] {
        &self.b_scales
    }

    pub fn query_points(&self) -> &[Vec<usize>] {
        &self.query_points
    }

    pub fn column_map(&self) -> &[Term] {
        &self.column_map
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// `G` with each column divided by its scale factor.
    pub fn g_scaled(&self) -> DMatrix<f64> {
        let mut g = self.g.clone();
        for (j, s) in self.col_scales.iter().enumerate() {
            g.column_mut(j).iter_mut().for_each(|v| *v /= s);
        }
        g
    }

    pub fn b_scaled(&self, c: usize) -> Vec<f64> {
        self.b.column(c).iter().map(|v| v / self.b_scales[c]).collect()
    }

    /// Map coefficients found on the scaled system back to raw units.
    pub fn unscale(&self, c: usize, w_scaled: &[f64]) -> Vec<f64> {
        w_scaled.iter().zip(&self.col_scales).map(|(w, s)| w * self.b_scales[c] / s).collect()
    }

    /// Restrict to a subset of columns (order preserved).
    pub fn select_columns(&self, cols: &[usize]) -> Result<WeakSystem> {
        let g = self.g.select_columns(cols);
        let map = cols.iter().map(|&j| self.column_map[j].clone()).collect();
        let labels = cols.iter().map(|&j| self.labels[j].clone()).collect();
        Self::from_parts(g, self.b.clone(), self.query_points.clone(), map, labels)
    }

    /// Debug dump: one row per query point with its grid indices, the raw
    /// `G` row and the raw `b` entries.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let ndim = self.query_points.first().map_or(0, Vec::len);
        let mut head: Vec<String> = (0..ndim).map(|a| format!("q{a}")).collect();
        head.extend(self.labels.iter().map(|l| format!("\"{l}\"")));
        head.extend((0..self.b.ncols()).map(|c| format!("b{c}")));
        writeln!(w, "{}", head.join(","))?;
        for (q, p) in self.query_points.iter().enumerate() {
            let mut f: Vec<String> = p.iter().map(|i| i.to_string()).collect();
            f.extend(self.g.row(q).iter().map(|v| format!("{v:?}")));
            f.extend(self.b.row(q).iter().map(|v| format!("{v:?}")));
            writeln!(w, "{}", f.join(","))?;
        }
        Ok(())
    }
}

/// Check that each axis has a stencil with enough derivative orders and
/// that the stencils fit the grid.
fn check_stencils(grid: &Grid, lib: &FeatureLibrary, stencils: &[Stencil]) -> Result<()> {
    if stencils.len() != grid.ndim() {
        return Err(Error::Shape(format!("{} stencils for a {}-d grid", stencils.len(), grid.ndim())));
    }
    let t = grid.ndim() - 1;
    for (a, s) in stencils.iter().enumerate() {
        let need = if a == t { 1 } else { lib.max_derivative(a) };
        if s.max_order() < need {
            return Err(Error::domain(format!("axis {a} stencil supplies order {} but {need} is needed", s.max_order())));
        }
        if 2 * s.radius() >= grid.shape()[a] {
            return Err(Error::domain(format!(
                "axis {a}: stencil radius {} does not fit {} samples",
                s.radius(),
                grid.shape()[a]
            )));
        }
        let rel = (s.spacing() - grid.spacing(a)).abs() / grid.spacing(a);
        if rel > 1e-12 {
            return Err(Error::domain(format!("axis {a}: stencil spacing differs from grid spacing")));
        }
    }
    Ok(())
}

/// Assemble the weak system for `lib` on `d`. The last grid axis is time.
pub fn assemble(d: &Dataset, lib: &FeatureLibrary, stencils: &[Stencil], queries: &QueryPlan, method: ConvMethod) -> Result<WeakSystem> {
    check_compatible(lib, d)?;
    let grid = d.grid();
    check_stencils(grid, lib, stencils)?;
    if queries.is_empty() {
        return Err(Error::domain("empty query plan"));
    }
    let shape = grid.shape();
    for (a, s) in stencils.iter().enumerate() {
        let idx = queries.axis_indices(a);
        let m = s.radius();
        if idx.iter().any(|&i| i < m || i + m >= shape[a]) {
            return Err(Error::domain(format!("axis {a}: a query footprint leaves the grid")));
        }
    }
    let t = grid.ndim() - 1;
    let spatial = t;

    let (keys, key_of) = lib.pointwise_groups();
    let pointwise = evaluate_keys(&keys, lib, d)?;

    // time pass once per pointwise part
    let time_reduced: Vec<(Vec<f64>, Vec<usize>)> = pointwise
        .iter()
        .map(|f| correlate_axis(f, &shape, t, stencils[t].weights(0), queries.axis_indices(t), method))
        .collect();

    let q = queries.len();
    let mut g = DMatrix::zeros(q, lib.len());
    for (j, term) in lib.terms().iter().enumerate() {
        let (mut cur, mut cur_shape) = time_reduced[key_of[j]].clone();
        for a in 0..spatial {
            let k = term.derivative_order(a);
            let (next, ns) = correlate_axis(&cur, &cur_shape, a, stencils[a].weights(k), queries.axis_indices(a), method);
            cur = next;
            cur_shape = ns;
        }
        for (r, v) in cur.into_iter().enumerate() {
            g[(r, j)] = v;
        }
    }

    let mut b = DMatrix::zeros(q, d.components());
    for c in 0..d.components() {
        let u = d.component(c);
        let (mut cur, mut cur_shape) = correlate_axis(&u, &shape, t, stencils[t].weights(1), queries.axis_indices(t), method);
        for a in 0..spatial {
            let (next, ns) = correlate_axis(&cur, &cur_shape, a, stencils[a].weights(0), queries.axis_indices(a), method);
            cur = next;
            cur_shape = ns;
        }
        // stencil order 1 already carries the minus sign: this is -<phi_t, u>
        for (r, v) in cur.into_iter().enumerate() {
            b[(r, c)] = v;
        }
    }

    WeakSystem::from_parts(g, b, queries.points(), lib.terms().to_vec(), lib.labels())
}
