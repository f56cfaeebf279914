//! Parameter estimation for a fixed model structure.
//!
//! [`wendy_estimate`] solves the weak-form regression by iteratively
//! reweighted generalized least squares. The residual covariance comes from
//! propagating i.i.d. measurement noise through the linearized weak
//! operators, `C = s^2 L L^T`, where row `q` of `L` maps noise at the grid
//! points of query `q`'s footprint to the residual `(Gw - b)_q`.
//! [`output_error_estimate`] is the forward-simulation baseline and
//! [`ee_ols_estimate`] the finite-difference equation-error baseline.

mod ee;
mod noise;
mod oe;

use crate::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{unravel, Dataset};
use crate::error::{Error, Result};
use crate::library::FeatureLibrary;
use crate::pipeline::{prepare, WeakSettings};
use crate::testfn::Stencil;
use crate::weak::{assemble, QueryPlan};

pub use ee::ee_ols_estimate;
pub use noise::estimate_noise_std;
pub use oe::{nelder_mead, output_error_estimate, ForwardModel, NelderMeadResult, NelderMeadSettings, OeResult, OeSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WendySettings {
    pub weak: WeakSettings,
    /// Relative change in the coefficients that ends the iteration.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal loading `eps * trace(C) / Q` added before factorizing.
    pub regularization: f64,
    /// Noise standard deviation; estimated from the data when absent.
    pub noise_std: Option<f64>,
}

impl Default for WendySettings {
    fn default() -> Self {
        WendySettings { weak: WeakSettings::default(), tol: 1e-6, max_iter: 100, regularization: 1e-10, noise_std: None }
    }
}

/// Outcome of the reweighted solve for one response component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlsResult {
    pub w: Vec<f64>,
    /// Estimated parameter covariance `(G^T C^-1 G)^-1`.
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterates, starting with the ordinary least-squares solution.
    pub history: Vec<Vec<f64>>,
    /// `r^T C^-1 r` after each reweighted solve.
    pub weighted_residuals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate {
    pub component: usize,
    /// Term indices into the estimation library.
    pub support: Vec<usize>,
    pub labels: Vec<String>,
    pub ols: Vec<f64>,
    pub gls: GlsResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WendyResult {
    pub components: Vec<ComponentEstimate>,
    pub noise_std: f64,
    pub radii: Vec<usize>,
    pub rows: usize,
    pub seconds: f64,
}

impl WendyResult {
    /// Full coefficient rows (library length, zero off the support).
    pub fn coefficients(&self, terms: usize) -> Vec<Vec<f64>> {
        self.expand(terms, |c| &c.gls.w)
    }

    pub fn ols_coefficients(&self, terms: usize) -> Vec<Vec<f64>> {
        self.expand(terms, |c| &c.ols)
    }

    fn expand<'a>(&'a self, terms: usize, pick: impl Fn(&'a ComponentEstimate) -> &'a Vec<f64>) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| {
                let mut row = vec![0.0; terms];
                for (&j, &v) in c.support.iter().zip(pick(c)) {
                    row[j] = v;
                }
                row
            })
            .collect()
    }
}

/// Least squares with columns normalized before an SVD solve.
pub fn ols_solve(g: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    if g.nrows() != b.len() {
        return Err(Error::Shape(format!("G has {} rows, b has {}", g.nrows(), b.len())));
    }
    if g.nrows() < g.ncols() {
        return Err(Error::domain(format!("underdetermined system: {} rows for {} columns", g.nrows(), g.ncols())));
    }
    let norms: Vec<f64> = g.column_iter().map(|c| c.norm()).map(|n| if n > 0.0 { n } else { 1.0 }).collect();
    let mut gs = g.clone();
    for (j, n) in norms.iter().enumerate() {
        gs.column_mut(j).unscale_mut(*n);
    }
    let svd = gs.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if !(smax > 0.0) || smin / smax < crate::sparse::RANK_TOLERANCE {
        return Err(Error::RankDeficient { condition: if smin > 0.0 { smax / smin } else { f64::INFINITY } });
    }
    let x = svd.solve(&DVector::from_column_slice(b), 0.0).map_err(|e| Error::numerical(e.to_string()))?;
    Ok(x.iter().zip(&norms).map(|(v, n)| v / n).collect())
}

/// Solution of `min (Gw - b)^T C^-1 (Gw - b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsSolution {
    pub w: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub weighted_residual: f64,
}

/// Generalized least squares through a Cholesky factor of `cov`.
pub fn gls_solve(g: &DMatrix<f64>, b: &[f64], cov: &DMatrix<f64>) -> Result<GlsSolution> {
    let q = g.nrows();
    if cov.nrows() != q || cov.ncols() != q {
        return Err(Error::Shape(format!("covariance is {}x{}, expected {q}x{q}", cov.nrows(), cov.ncols())));
    }
    let chol = cov.clone().cholesky().ok_or_else(|| Error::numerical("residual covariance is not positive definite"))?;
    let l = chol.l();
    let x = l.solve_lower_triangular(g).ok_or_else(|| Error::numerical("singular covariance factor"))?;
    let y = l
        .solve_lower_triangular(&DVector::from_column_slice(b))
        .ok_or_else(|| Error::numerical("singular covariance factor"))?;
    let w = ols_solve(&x, y.as_slice())?;
    let r = &x * DVector::from_column_slice(&w) - &y;
    let info = x.transpose() * &x;
    let covariance = info.try_inverse().ok_or_else(|| Error::numerical("information matrix is singular"))?;
    Ok(GlsSolution { w, covariance: symmetrize(covariance), weighted_residual: r.norm_squared() })
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Add `eps * trace / Q` to the diagonal. Returns `None` for a zero trace.
pub fn regularize(mut cov: DMatrix<f64>, eps: f64) -> Option<DMatrix<f64>> {
    let q = cov.nrows();
    let tr = cov.trace();
    if !(tr > 0.0) {
        return None;
    }
    let load = eps * tr / q as f64;
    for i in 0..q {
        cov[(i, i)] += load;
    }
    Some(cov)
}

/// Footprint geometry shared by every query: box shape, the grid index of
/// each box point per query, and the overlapping query pairs.
struct Footprints {
    box_shape: Vec<usize>,
    box_len: usize,
    /// `grid_index[q * box_len + l]`.
    grid_index: Vec<usize>,
    centers: Vec<Vec<usize>>,
}

impl Footprints {
    fn new(shape: &[usize], stencils: &[Stencil], plan: &QueryPlan) -> Self {
        let box_shape: Vec<usize> = stencils.iter().map(|s| 2 * s.radius() + 1).collect();
        let box_len: usize = box_shape.iter().product();
        let centers = plan.points();
        let strides = crate::data::strides(shape);
        let mut grid_index = Vec::with_capacity(centers.len() * box_len);
        for c in &centers {
            for l in 0..box_len {
                let li = unravel(l, &box_shape);
                let p: usize = (0..shape.len()).map(|a| (c[a] + li[a] - stencils[a].radius()) * strides[a]).sum();
                grid_index.push(p);
            }
        }
        Footprints { box_shape, box_len, grid_index, centers }
    }

    /// Call `f(l1, l2)` for every box point shared by queries `q1`, `q2`.
    fn for_each_shared(&self, q1: usize, q2: usize, mut f: impl FnMut(usize, usize)) {
        let nd = self.box_shape.len();
        let mut lo = vec![0usize; nd];
        let mut hi = vec![0usize; nd];
        let mut delta = vec![0isize; nd];
        for a in 0..nd {
            let d = self.centers[q2][a] as isize - self.centers[q1][a] as isize;
            let n = self.box_shape[a] as isize;
            if d.abs() >= n {
                return;
            }
            delta[a] = d;
            lo[a] = d.max(0) as usize;
            hi[a] = (n + d.min(0)) as usize;
        }
        let mut idx = lo.clone();
        let st = crate::data::strides(&self.box_shape);
        loop {
            let l1: usize = idx.iter().zip(&st).map(|(i, s)| i * s).sum();
            let l2: usize = idx.iter().zip(&st).zip(&delta).map(|((i, s), d)| (*i as isize - d) as usize * s).sum();
            f(l1, l2);
            let mut a = nd;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < hi[a] {
                    break;
                }
                idx[a] = lo[a];
            }
        }
    }

    fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let q = self.centers.len();
        let mut out = Vec::new();
        for q1 in 0..q {
            for q2 in q1..q {
                if (0..self.box_shape.len()).all(|a| self.centers[q1][a].abs_diff(self.centers[q2][a]) < self.box_shape[a]) {
                    out.push((q1, q2));
                }
            }
        }
        out
    }
}

/// Product of per-axis stencil weights over the footprint box.
fn box_weights(stencils: &[Stencil], orders: &[usize], box_shape: &[usize]) -> Vec<f64> {
    let len: usize = box_shape.iter().product();
    (0..len)
        .map(|l| {
            let li = unravel(l, box_shape);
            stencils.iter().zip(orders).zip(&li).map(|((s, &k), &i)| s.weights(k)[i]).product()
        })
        .collect()
}

/// Linearized noise-to-residual operators for each term and for `b`.
struct NoiseOperators {
    fp: Footprints,
    components: usize,
    /// `terms[j][(q * box_len + l) * C + c]`.
    terms: Vec<Vec<f64>>,
    /// `rhs[q * box_len + l]`, the operator producing `b` from one component.
    rhs: Vec<f64>,
    pairs: Vec<(usize, usize)>,
}

impl NoiseOperators {
    fn new(d: &Dataset, lib: &FeatureLibrary, stencils: &[Stencil], plan: &QueryPlan) -> Self {
        let grid = d.grid();
        let shape = grid.shape();
        let fp = Footprints::new(&shape, stencils, plan);
        let nd = shape.len();
        let spatial = nd - 1;
        let nc = d.components();
        let coords: Vec<Vec<f64>> = grid.axes().iter().map(|a| a.coords()).collect();
        let vals = d.values();
        let q = fp.centers.len();
        let mut grad = vec![0.0; nc];
        let mut x = vec![0.0; spatial];
        let terms = lib
            .terms()
            .iter()
            .map(|term| {
                let mut orders: Vec<usize> = (0..spatial).map(|a| term.derivative_order(a)).collect();
                orders.push(0);
                let wbox = box_weights(stencils, &orders, &fp.box_shape);
                let mut out = vec![0.0; q * fp.box_len * nc];
                for qi in 0..q {
                    for l in 0..fp.box_len {
                        let p = fp.grid_index[qi * fp.box_len + l];
                        let idx = unravel(p, &shape);
                        for a in 0..spatial {
                            x[a] = coords[a][idx[a]];
                        }
                        term.grad(&vals[p * nc..(p + 1) * nc], &x, &mut grad);
                        let base = (qi * fp.box_len + l) * nc;
                        for c in 0..nc {
                            out[base + c] = wbox[l] * grad[c];
                        }
                    }
                }
                out
            })
            .collect();
        let mut orders = vec![0; spatial];
        orders.push(1);
        let bbox = box_weights(stencils, &orders, &fp.box_shape);
        let rhs = (0..q).flat_map(|_| bbox.iter().copied()).collect();
        let pairs = fp.overlapping_pairs();
        NoiseOperators { fp, components: nc, terms, rhs, pairs }
    }

    /// `L L^T` for response `component` with coefficients `w` on `support`.
    fn covariance(&self, component: usize, support: &[usize], w: &[f64]) -> DMatrix<f64> {
        let q = self.fp.centers.len();
        let bl = self.fp.box_len;
        let nc = self.components;
        let mut l = vec![0.0; q * bl * nc];
        for (&j, &wj) in support.iter().zip(w) {
            for (o, a) in l.iter_mut().zip(&self.terms[j]) {
                *o += wj * a;
            }
        }
        for (i, r) in self.rhs.iter().enumerate() {
            l[i * nc + component] -= r;
        }
        let mut cov = DMatrix::zeros(q, q);
        for &(q1, q2) in &self.pairs {
            let mut s = 0.0;
            self.fp.for_each_shared(q1, q2, |l1, l2| {
                let a = (q1 * bl + l1) * nc;
                let b = (q2 * bl + l2) * nc;
                for c in 0..nc {
                    s += l[a + c] * l[b + c];
                }
            });
            cov[(q1, q2)] = s;
            cov[(q2, q1)] = s;
        }
        cov
    }
}

fn relative_change(new: &[f64], old: &[f64]) -> f64 {
    let diff: f64 = new.iter().zip(old).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let base: f64 = old.iter().map(|v| v * v).sum::<f64>().sqrt();
    if base > 0.0 {
        diff / base
    } else {
        diff
    }
}

/// Estimate the coefficients of `lib`'s terms listed in `supports[c]` for
/// each response component `c`.
pub fn wendy_estimate(d: &Dataset, lib: &FeatureLibrary, supports: &[Vec<usize>], s: &WendySettings) -> Result<WendyResult> {
    let start = Instant::now();
    if supports.len() != lib.components() {
        return Err(Error::Shape(format!("{} supports for {} components", supports.len(), lib.components())));
    }
    if let Some(j) = supports.iter().flatten().find(|&&j| j >= lib.len()) {
        return Err(Error::domain(format!("support index {j} out of range for {} terms", lib.len())));
    }
    if supports.iter().any(|s| s.is_empty()) {
        return Err(Error::domain("every component needs at least one term"));
    }
    if !(s.tol > 0.0) || s.max_iter == 0 || !(s.regularization >= 0.0) {
        return Err(Error::Config(format!("invalid iteration settings tol={} max_iter={} regularization={}", s.tol, s.max_iter, s.regularization)));
    }
    let noise_std = match s.noise_std {
        Some(v) if v >= 0.0 && v.is_finite() => v,
        Some(v) => return Err(Error::Config(format!("noise_std must be finite and >= 0, got {v}"))),
        None => estimate_noise_std(d),
    };
    let mut used: Vec<usize> = supports.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let sub = lib.subset(&used)?;
    let local = |j: usize| used.binary_search(&j).expect("support index is in the used set");
    let setup = prepare(d, &sub, &s.weak).map_err(|e| e.context("support selection"))?;
    let sys = assemble(d, &sub, &setup.stencils, &setup.plan, s.weak.convolution).map_err(|e| e.context("assembly"))?;
    let ops = if noise_std > 0.0 { Some(NoiseOperators::new(d, &sub, &setup.stencils, &setup.plan)) } else { None };
    let var = noise_std * noise_std;
    let labels = lib.labels();

    let mut components = Vec::with_capacity(supports.len());
    for (c, support) in supports.iter().enumerate() {
        let cols: Vec<usize> = support.iter().map(|&j| local(j)).collect();
        let g = sys.g_raw().select_columns(&cols);
        let b: Vec<f64> = sys.b_raw().column(c).iter().copied().collect();
        let ols = ols_solve(&g, &b).map_err(|e| e.context(&format!("component {c}")))?;
        let mut history = vec![ols.clone()];
        let mut weighted_residuals = Vec::new();
        let mut w = ols.clone();
        let mut covariance = DMatrix::zeros(cols.len(), cols.len());
        let mut converged = false;
        let mut iterations = 0;
        if let Some(ops) = &ops {
            for _ in 0..s.max_iter {
                let cov = ops.covariance(c, &cols, &w) * var;
                let Some(cov) = regularize(cov, s.regularization) else { break };
                let sol = gls_solve(&g, &b, &cov).map_err(|e| e.context(&format!("component {c} iteration {}", iterations + 1)))?;
                iterations += 1;
                let change = relative_change(&sol.w, &w);
                w = sol.w;
                covariance = sol.covariance;
                history.push(w.clone());
                weighted_residuals.push(sol.weighted_residual);
                if change <= s.tol {
                    converged = true;
                    break;
                }
            }
        } else {
            converged = true;
        }
        if iterations == 0 {
            converged = true;
        }
        components.push(ComponentEstimate {
            component: c,
            support: support.clone(),
            labels: support.iter().map(|&j| labels[j].clone()).collect(),
            ols,
            gls: GlsResult {
                w,
                covariance: covariance.row_iter().map(|r| r.iter().copied().collect()).collect(),
                iterations,
                converged,
                history,
                weighted_residuals,
            },
        });
    }
    Ok(WendyResult {
        components,
        noise_std,
        radii: setup.choices.iter().map(|c| c.radius).collect(),
        rows: sys.rows(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{add_noise, Grid, NoiseSpec};
    use crate::library::ode_poly_trig_library;
    use crate::sim::{integrate_ode, BuiltinOde};
    use crate::testfn::{discretize, TestFunction};
    use crate::weak::QuerySpec;

    fn logistic() -> (Dataset, FeatureLibrary) {
        let m = BuiltinOde::Logistic;
        let d = integrate_ode(&m.model(), &m.initial_state(), &m.time_axis(), 1e-11).unwrap();
        (d, ode_poly_trig_library(1, 2, &[]).unwrap())
    }

    #[test]
    fn identity_covariance_is_ols() {
        let g = DMatrix::from_fn(30, 3, |i, j| ((i * 7 + j * 3) as f64).sin() + j as f64 * 0.1);
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos()).collect();
        let a = ols_solve(&g, &b).unwrap();
        let s = gls_solve(&g, &b, &DMatrix::identity(30, 30)).unwrap();
        for (x, y) in a.iter().zip(&s.w) {
            assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn noiseless_logistic_recovered() {
        let (d, lib) = logistic();
        let r = wendy_estimate(&d, &lib, &[vec![1, 2]], &WendySettings::default()).unwrap();
        let w = &r.components[0].gls.w;
        assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] + 1.0).abs() < 1e-3, "{w:?}");
    }

    #[test]
    fn zero_noise_returns_ols() {
        let (d, lib) = logistic();
        let s = WendySettings { noise_std: Some(0.0), ..Default::default() };
        let r = wendy_estimate(&d, &lib, &[vec![1, 2]], &s).unwrap();
        let c = &r.components[0];
        assert_eq!(c.gls.w, c.ols);
        assert!(c.gls.converged);
        assert_eq!(c.gls.iterations, 0);
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let (d, lib) = logistic();
        let noisy = add_noise(&d, &NoiseSpec::gaussian(0.05, 3)).unwrap();
        let r = wendy_estimate(&noisy, &lib, &[vec![1, 2]], &WendySettings::default()).unwrap();
        let c = DMatrix::from_fn(2, 2, |i, j| r.components[0].gls.covariance[i][j]);
        assert_eq!(c, c.transpose());
        let ev = c.clone().symmetric_eigen().eigenvalues;
        assert!(ev.iter().all(|&e| e >= -1e-10 * c.trace()), "{ev:?}");
    }

    #[test]
    fn converged_flag_matches_last_step() {
        let (d, lib) = logistic();
        let noisy = add_noise(&d, &NoiseSpec::gaussian(0.1, 8)).unwrap();
        let s = WendySettings::default();
        let r = wendy_estimate(&noisy, &lib, &[vec![1, 2]], &s).unwrap();
        let g = &r.components[0].gls;
        assert!(g.converged);
        let n = g.history.len();
        assert!(relative_change(&g.history[n - 1], &g.history[n - 2]) <= s.tol);
    }

    /// The linearized operator must match finite differences of the
    /// assembled residual with respect to each data value.
    #[test]
    fn noise_operator_matches_finite_differences() {
        let g = Grid::new(&[(24, 0.0, 2.0), (20, 0.0, 1.0)]).unwrap();
        let d = Dataset::from_fn(g, 1, |x| vec![1.0 + 0.5 * (3.0 * x[0] - x[1]).sin()]).unwrap();
        let lib = FeatureLibrary::new(
            1,
            1,
            vec![crate::library::Term::dx_power(1, 2), crate::library::Term::dx_power(2, 1), crate::library::Term::dx_power(0, 3).with_coords(vec![1])],
        )
        .unwrap();
        let st = vec![
            discretize(&TestFunction::poly_bump(5, 1.0, 2).unwrap(), d.grid().spacing(0), 4, 2).unwrap(),
            discretize(&TestFunction::poly_bump(4, 1.0, 1).unwrap(), d.grid().spacing(1), 3, 1).unwrap(),
        ];
        let plan = QueryPlan::new(d.grid(), &[4, 3], &QuerySpec::Stride(vec![3])).unwrap();
        let w = [0.7, -1.3, 0.4];
        let residual = |d: &Dataset| -> Vec<f64> {
            let sys = assemble(d, &lib, &st, &plan, crate::weak::ConvMethod::Direct).unwrap();
            (0..sys.rows()).map(|q| (0..3).map(|j| w[j] * sys.g_raw()[(q, j)]).sum::<f64>() - sys.b_raw()[(q, 0)]).collect()
        };
        let ops = NoiseOperators::new(&d, &lib, &st, &plan);
        let bl = ops.fp.box_len;
        let q = plan.len();
        // dense L from the operators
        let n = d.grid().len();
        let mut dense: DMatrix<f64> = DMatrix::zeros(q, n);
        for qi in 0..q {
            for l in 0..bl {
                let p = ops.fp.grid_index[qi * bl + l];
                let v: f64 = (0..3).map(|j| w[j] * ops.terms[j][qi * bl + l]).sum::<f64>() - ops.rhs[qi * bl + l];
                dense[(qi, p)] += v;
            }
        }
        let h = 1e-6;
        let base = d.values().to_vec();
        for p in (0..n).step_by(7) {
            let mut up = base.clone();
            up[p] += h;
            let mut dn = base.clone();
            dn[p] -= h;
            let ru = residual(&Dataset::new(d.grid().clone(), 1, up).unwrap());
            let rd = residual(&Dataset::new(d.grid().clone(), 1, dn).unwrap());
            for qi in 0..q {
                let fd: f64 = (ru[qi] - rd[qi]) / (2.0 * h);
                assert!((fd - dense[(qi, p)]).abs() < 1e-7 * (1.0 + fd.abs()), "q {qi} p {p}: {fd} vs {}", dense[(qi, p)]);
            }
        }
        // covariance agrees with the dense product
        let cov = ops.covariance(0, &[0, 1, 2], &w);
        let dd = &dense * dense.transpose();
        let diff: DMatrix<f64> = cov - dd;
        assert!(diff.amax() < 1e-10);
    }
}
