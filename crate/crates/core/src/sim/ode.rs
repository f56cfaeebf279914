//! Adaptive Dormand-Prince 5(4) integration of library-represented ODEs.

use serde::{Deserialize, Serialize};

use crate::data::{Axis, Dataset, Grid};
use crate::error::{Error, Result};
use crate::library::{ode_poly_trig_library, FeatureLibrary, Term};

/// Right-hand side `du_c/dt = sum_j w[c][j] f_j(u)` over a feature library.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeModel {
    library: FeatureLibrary,
    coefficients: Vec<Vec<f64>>,
}

impl OdeModel {
    pub fn new(library: FeatureLibrary, coefficients: Vec<Vec<f64>>) -> Result<Self> {
        if library.spatial_dims() != 0 {
            return Err(Error::domain("an ODE model needs a library without spatial axes"));
        }
        if coefficients.len() != library.components() {
            return Err(Error::Shape(format!(
                "{} coefficient rows for {} components",
                coefficients.len(),
                library.components()
            )));
        }
        if let Some(row) = coefficients.iter().find(|r| r.len() != library.len()) {
            return Err(Error::Shape(format!("coefficient row of length {} for {} terms", row.len(), library.len())));
        }
        if coefficients.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("ODE coefficients".into()));
        }
        Ok(OdeModel { library, coefficients })
    }

    pub fn library(&self) -> &FeatureLibrary {
        &self.library
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    pub fn dim(&self) -> usize {
        self.library.components()
    }

    pub fn rhs(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (j, term) in self.library.terms().iter().enumerate() {
            let mut f = None;
            for (c, row) in self.coefficients.iter().enumerate() {
                if row[j] != 0.0 {
                    let v = *f.get_or_insert_with(|| term.eval(u, &[]));
                    out[c] += row[j] * v;
                }
            }
        }
    }

    /// Build a model from `(component, term, coefficient)` entries on the
    /// given library.
    fn from_entries(library: FeatureLibrary, entries: &[(usize, Vec<u32>, f64)]) -> Self {
        let mut w = vec![vec![0.0; library.len()]; library.components()];
        for (c, powers, v) in entries {
            let j = library.index_of(&Term::monomial(powers.clone())).expect("built-in term is in its library");
            w[*c][j] = *v;
        }
        OdeModel::new(library, w).expect("built-in model is valid")
    }
}

/// Built-in ODE benchmarks with their default initial data and sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuiltinOde {
    /// `u' = u - u^2`.
    Logistic,
    /// `(sigma, rho, beta) = (10, 28, 8/3)`.
    Lorenz,
    /// `v' = v - v^3/3 - w + 0.5`, `w' = 0.08 (v + 0.7 - 0.8 w)`.
    FitzhughNagumo,
}

impl BuiltinOde {
    /// The library the model is written in (and discovery searches).
    pub fn library(self) -> FeatureLibrary {
        let r = match self {
            BuiltinOde::Logistic => ode_poly_trig_library(1, 5, &[]),
            BuiltinOde::Lorenz => ode_poly_trig_library(3, 2, &[]),
            BuiltinOde::FitzhughNagumo => ode_poly_trig_library(2, 3, &[]),
        };
        r.expect("built-in library is valid")
    }

    pub fn model(self) -> OdeModel {
        let lib = self.library();
        match self {
            BuiltinOde::Logistic => OdeModel::from_entries(lib, &[(0, vec![1], 1.0), (0, vec![2], -1.0)]),
            BuiltinOde::Lorenz => OdeModel::from_entries(
                lib,
                &[
                    (0, vec![1, 0, 0], -10.0),
                    (0, vec![0, 1, 0], 10.0),
                    (1, vec![1, 0, 0], 28.0),
                    (1, vec![0, 1, 0], -1.0),
                    (1, vec![1, 0, 1], -1.0),
                    (2, vec![1, 1, 0], 1.0),
                    (2, vec![0, 0, 1], -8.0 / 3.0),
                ],
            ),
            BuiltinOde::FitzhughNagumo => OdeModel::from_entries(
                lib,
                &[
                    (0, vec![0, 0], 0.5),
                    (0, vec![1, 0], 1.0),
                    (0, vec![0, 1], -1.0),
                    (0, vec![3, 0], -1.0 / 3.0),
                    (1, vec![0, 0], 0.08 * 0.7),
                    (1, vec![1, 0], 0.08),
                    (1, vec![0, 1], -0.08 * 0.8),
                ],
            ),
        }
    }

    pub fn initial_state(self) -> Vec<f64> {
        match self {
            BuiltinOde::Logistic => vec![0.01],
            BuiltinOde::Lorenz => vec![-8.0, 7.0, 27.0],
            BuiltinOde::FitzhughNagumo => vec![-1.0, 1.0],
        }
    }

    pub fn time_axis(self) -> Axis {
        match self {
            BuiltinOde::Logistic => Axis { n: 512, lo: 0.0, hi: 10.0 },
            BuiltinOde::Lorenz => Axis { n: 5001, lo: 0.0, hi: 10.0 },
            BuiltinOde::FitzhughNagumo => Axis { n: 2001, lo: 0.0, hi: 100.0 },
        }
    }
}

// Dormand-Prince tableau (autonomous form, so the nodes are not needed).
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// Integrate `u' = f(u)` and sample the state at every point of `t_axis`.
/// The step is controlled so the mixed absolute/relative local error
/// estimate stays below `tol`; steps are shortened to land on each output
/// time exactly.
pub fn integrate_fn(f: impl Fn(&[f64], &mut [f64]), u0: &[f64], t_axis: &Axis, tol: f64) -> Result<Dataset> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    if u0.is_empty() || u0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("initial state must be nonempty and finite"));
    }
    let grid = Grid::from_axes(vec![*t_axis])?;
    let dim = u0.len();
    let mut out = Vec::with_capacity(t_axis.n * dim);
    out.extend_from_slice(u0);
    let mut u = u0.to_vec();
    let mut t = t_axis.lo;
    let mut h = (t_axis.spacing() * 0.1).min(1e-2 * (t_axis.hi - t_axis.lo));
    let mut k = vec![vec![0.0; dim]; 7];
    let mut stage = vec![0.0; dim];
    let mut u5 = vec![0.0; dim];
    f(&u, &mut k[0]);
    for i in 1..t_axis.n {
        let target = t_axis.coord(i);
        while t < target {
            let last = t + h >= target;
            let step = if last { target - t } else { h };
            for s in 1..7 {
                let (done, rest) = k.split_at_mut(s);
                for d in 0..dim {
                    stage[d] = u[d] + step * (0..s).map(|r| A[s][r] * done[r][d]).sum::<f64>();
                }
                f(&stage, &mut rest[0]);
            }
            // k[6] is f at the fifth-order solution (first-same-as-last)
            let mut err2 = 0.0;
            for d in 0..dim {
                u5[d] = u[d] + step * (0..7).map(|r| B5[r] * k[r][d]).sum::<f64>();
                let e = step * (0..7).map(|r| (B5[r] - B4[r]) * k[r][d]).sum::<f64>();
                let sc = tol + tol * u[d].abs().max(u5[d].abs());
                err2 += (e / sc).powi(2);
            }
            let err = (err2 / dim as f64).sqrt();
            if !err.is_finite() || u5.iter().any(|v| !v.is_finite()) {
                h = step * 0.1;
            } else if err <= 1.0 {
                t = if last { target } else { t + step };
                u.copy_from_slice(&u5);
                k.swap(0, 6);
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                // a clamped final step says nothing about the natural step size
                if !last || fac < 1.0 {
                    h = step * fac;
                }
            } else {
                h = step * (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::numerical(format!("step size underflow at t = {t}")));
            }
        }
        out.extend_from_slice(&u);
    }
    Dataset::new(grid, dim, out)
}

pub fn integrate_ode(model: &OdeModel, u0: &[f64], t_axis: &Axis, tol: f64) -> Result<Dataset> {
    if u0.len() != model.dim() {
        return Err(Error::Shape(format!("initial state has {} entries for a {}-d model", u0.len(), model.dim())));
    }
    integrate_fn(|u, out| model.rhs(u, out), u0, t_axis, tol)
}
