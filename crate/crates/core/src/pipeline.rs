//! End-to-end discovery: choose test-function radii from the data,
//! assemble the weak system, and sparsify per response component.

use crate::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::library::FeatureLibrary;
use crate::sparse::{select_lambda, LambdaGrid, SparseResult};
use crate::testfn::{discretize, Family, Stencil, SupportChoice, SupportSelector, TestFunction};
use crate::weak::{assemble, ConvMethod, QueryPlan, QuerySpec, WeakSystem};

/// Weak-form settings shared by discovery and estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakSettings {
    /// Test-function family for every axis; `None` picks a polynomial bump
    /// of order `K + 3` where `K` is the highest derivative on that axis.
    pub family: Option<Family>,
    pub support: SupportSelector,
    /// Fixed radii per axis, bypassing data-driven selection.
    pub radii: Option<Vec<usize>>,
    /// Query placement; `None` targets about `rows_per_term` rows per term.
    pub query: Option<QuerySpec>,
    pub rows_per_term: usize,
    pub convolution: ConvMethod,
}

impl Default for WeakSettings {
    fn default() -> Self {
        WeakSettings {
            family: None,
            support: SupportSelector::default(),
            radii: None,
            query: None,
            rows_per_term: 100,
            convolution: ConvMethod::Fft,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseSettings {
    pub lambdas: LambdaGrid,
    pub gamma: f64,
}

impl Default for SparseSettings {
    fn default() -> Self {
        SparseSettings { lambdas: LambdaGrid::default(), gamma: 0.3 }
    }
}

/// Test functions, radii and stencils chosen for one dataset.
#[derive(Debug, Clone)]
pub struct WeakSetup {
    pub test_functions: Vec<TestFunction>,
    pub choices: Vec<SupportChoice>,
    pub stencils: Vec<Stencil>,
    pub plan: QueryPlan,
}

/// Derivative order each axis must supply: the library's highest order on
/// spatial axes, one on the (last) time axis.
pub fn axis_orders(lib: &FeatureLibrary, ndim: usize) -> Vec<usize> {
    (0..ndim).map(|a| if a + 1 == ndim { 1 } else { lib.max_derivative(a) }).collect()
}

pub fn prepare(d: &Dataset, lib: &FeatureLibrary, s: &WeakSettings) -> Result<WeakSetup> {
    let grid = d.grid();
    let ndim = grid.ndim();
    let orders = axis_orders(lib, ndim);
    let tfs = orders
        .iter()
        .map(|&k| match &s.family {
            Some(f) => TestFunction::from_family(f.clone(), k),
            None => TestFunction::poly_bump(k as u32 + 3, 1.0, k),
        })
        .collect::<Result<Vec<_>>>()?;
    let choices: Vec<SupportChoice> = match &s.radii {
        Some(r) => {
            if r.len() != ndim {
                return Err(Error::Config(format!("{} radii given for a {ndim}-d grid", r.len())));
            }
            r.iter().map(|&radius| SupportChoice { radius, k_star: 0, flat_spectrum: false }).collect()
        }
        None => (0..ndim).map(|a| s.support.select(d, a, &tfs[a])).collect::<Result<_>>()?,
    };
    let stencils = (0..ndim)
        .map(|a| discretize(&tfs[a], grid.spacing(a), choices[a].radius, orders[a]))
        .collect::<Result<Vec<_>>>()?;
    let radii: Vec<usize> = choices.iter().map(|c| c.radius).collect();
    let spec = s.query.clone().unwrap_or_else(|| QuerySpec::Count(s.rows_per_term.max(1) * lib.len()));
    let plan = match QueryPlan::new(grid, &radii, &spec) {
        Err(Error::Domain(_)) if s.query.is_none() => QueryPlan::new(grid, &radii, &QuerySpec::Stride(vec![1]))?,
        other => other?,
    };
    Ok(WeakSetup { test_functions: tfs, choices, stencils, plan })
}

/// Discovered equation for one response component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentModel {
    pub component: usize,
    /// `(label, coefficient)` for every retained term.
    pub terms: Vec<(String, f64)>,
    /// Full coefficient vector in library order (raw units).
    pub coefficients: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda_star: f64,
    pub residual: f64,
    pub loss_curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub models: Vec<ComponentModel>,
    pub radii: Vec<usize>,
    pub corner_wavenumbers: Vec<usize>,
    pub rows: usize,
    pub columns: usize,
    pub assembly_seconds: f64,
    pub regression_seconds: f64,
}

pub fn regress(sys: &WeakSystem, sp: &SparseSettings) -> Result<Vec<ComponentModel>> {
    let lambdas = sp.lambdas.values()?;
    let g = sys.g_scaled();
    (0..sys.responses())
        .map(|c| {
            let b = sys.b_scaled(c);
            let r: SparseResult = select_lambda(&g, &b, &lambdas, sp.gamma).map_err(|e| e.context(&format!("component {c}")))?;
            let w = sys.unscale(c, &r.w);
            let terms = r.support.iter().map(|&j| (sys.labels()[j].clone(), w[j])).collect();
            Ok(ComponentModel {
                component: c,
                terms,
                coefficients: w,
                support: r.support,
                lambda_star: r.lambda_star,
                residual: r.residual,
                loss_curve: r.loss_curve,
            })
        })
        .collect()
}

pub fn discover(d: &Dataset, lib: &FeatureLibrary, weak: &WeakSettings, sparse: &SparseSettings) -> Result<Discovery> {
    if lib.is_empty() {
        return Err(Error::Config("library is empty".into()));
    }
    let setup = prepare(d, lib, weak).map_err(|e| e.context("support selection"))?;
    let t0 = Instant::now();
    let sys = assemble(d, lib, &setup.stencils, &setup.plan, weak.convolution).map_err(|e| e.context("assembly"))?;
    let assembly_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let models = regress(&sys, sparse).map_err(|e| e.context("regression"))?;
    let regression_seconds = t1.elapsed().as_secs_f64();
    Ok(Discovery {
        models,
        radii: setup.choices.iter().map(|c| c.radius).collect(),
        corner_wavenumbers: setup.choices.iter().map(|c| c.k_star).collect(),
        rows: sys.rows(),
        columns: sys.cols(),
        assembly_seconds,
        regression_seconds,
    })
}
