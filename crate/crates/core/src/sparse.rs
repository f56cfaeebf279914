//! Sequential thresholded least squares with automatic threshold selection.
//!
//! All solves go through one thin QR factorization `G = QR`: the
//! least-squares problem restricted to a column subset `S` is then the small
//! problem `min |R_S w - Q^T b|`, and the part of `b` outside the range of
//! `G` only shifts the residual by a constant.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Singular-value ratio below which a restricted solve is refused.
pub const RANK_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseResult {
    /// Coefficients (zero off the support).
    pub w: Vec<f64>,
    pub support: Vec<usize>,
    pub lambda_star: f64,
    /// `(lambda, loss)` for every threshold tried; failed solves are
    /// recorded with an infinite loss.
    pub loss_curve: Vec<(f64, f64)>,
    /// `|Gw - b| / |b|`.
    pub residual: f64,
    /// Every coefficient was thresholded away.
    pub degenerate: bool,
    /// Active-set sizes, one per least-squares solve.
    pub active_history: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid { min: 1e-4, max: 1.0, count: 40 }
    }
}

impl LambdaGrid {
    /// Log-spaced values from `min` to `max` inclusive.
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.count == 0 || !(self.min > 0.0) || !(self.max >= self.min) || !self.max.is_finite() {
            return Err(Error::Config(format!("invalid lambda grid {self:?}")));
        }
        if self.count == 1 {
            return Ok(vec![self.min]);
        }
        let (a, b) = (self.min.ln(), self.max.ln());
        Ok((0..self.count).map(|i| (a + (b - a) * i as f64 / (self.count - 1) as f64).exp()).collect())
    }
}

/// Precomputed factorization of one regression problem.
pub struct Regression {
    r: DMatrix<f64>,
    qtb: DVector<f64>,
    b_norm2: f64,
    outside2: f64,
    cols: usize,
}

impl Regression {
    pub fn new(g: &DMatrix<f64>, b: &[f64]) -> Result<Self> {
        if g.nrows() != b.len() {
            return Err(Error::Shape(format!("G has {} rows, b has {}", g.nrows(), b.len())));
        }
        if g.nrows() < g.ncols() {
            return Err(Error::domain(format!("underdetermined system: {} rows for {} columns", g.nrows(), g.ncols())));
        }
        if g.iter().chain(b).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("regression inputs contain non-finite values".into()));
        }
        let b = DVector::from_column_slice(b);
        let qr = g.clone().qr();
        let qtb = qr.q().transpose() * &b;
        let b_norm2 = b.norm_squared();
        let outside2 = (b_norm2 - qtb.norm_squared()).max(0.0);
        Ok(Regression { r: qr.r(), qtb, b_norm2, outside2, cols: g.ncols() })
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Least squares restricted to `cols`; returns the full-length
    /// coefficient vector.
    pub fn solve_subset(&self, cols: &[usize]) -> Result<Vec<f64>> {
        let mut w = vec![0.0; self.cols];
        if cols.is_empty() {
            return Ok(w);
        }
        let rs = self.r.select_columns(cols);
        let svd = rs.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smax > 0.0) || smin / smax < RANK_TOLERANCE {
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            return Err(Error::RankDeficient { condition });
        }
        let x = svd.solve(&self.qtb, 0.0).map_err(|e| Error::numerical(e.to_string()))?;
        for (k, &j) in cols.iter().enumerate() {
            w[j] = x[k];
        }
        Ok(w)
    }

    /// `|Gw - b| / |b|` evaluated through the factorization.
    pub fn relative_residual(&self, w: &[f64]) -> f64 {
        if self.b_norm2 == 0.0 {
            return 0.0;
        }
        let wv = DVector::from_column_slice(w);
        let inside = (&self.r * wv - &self.qtb).norm_squared();
        ((inside + self.outside2) / self.b_norm2).sqrt()
    }

    /// Sequential thresholding at relative level `lambda`.
    pub fn stls(&self, lambda: f64) -> Result<SparseResult> {
        if !(lambda >= 0.0) {
            return Err(Error::domain(format!("threshold must be >= 0, got {lambda}")));
        }
        let mut active: Vec<usize> = (0..self.cols).collect();
        let mut history = Vec::new();
        loop {
            history.push(active.len());
            let w = self.solve_subset(&active)?;
            let wmax = active.iter().map(|&j| w[j].abs()).fold(0.0, f64::max);
            let next: Vec<usize> = active.iter().copied().filter(|&j| w[j] != 0.0 && w[j].abs() >= lambda * wmax).collect();
            if next.is_empty() {
                return Ok(SparseResult {
                    w: vec![0.0; self.cols],
                    support: Vec::new(),
                    lambda_star: lambda,
                    loss_curve: Vec::new(),
                    residual: if self.b_norm2 == 0.0 { 0.0 } else { 1.0 },
                    degenerate: true,
                    active_history: history,
                });
            }
            if next == active {
                let residual = self.relative_residual(&w);
                return Ok(SparseResult {
                    w,
                    support: active,
                    lambda_star: lambda,
                    loss_curve: Vec::new(),
                    residual,
                    degenerate: false,
                    active_history: history,
                });
            }
            active = next;
        }
    }
}

/// `|Gw - b| / |b| + gamma |S| / J`.
pub fn loss(r: &SparseResult, cols: usize, gamma: f64) -> f64 {
    r.residual + gamma * r.support.len() as f64 / cols as f64
}

pub fn stls(g: &DMatrix<f64>, b: &[f64], lambda: f64) -> Result<SparseResult> {
    Regression::new(g, b)?.stls(lambda)
}

/// Run thresholding over `lambdas` (ascending) and keep the minimizer of
/// [`loss`]; ties go to the larger threshold.
pub fn select_lambda(g: &DMatrix<f64>, b: &[f64], lambdas: &[f64], gamma: f64) -> Result<SparseResult> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    if lambdas.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Config("lambda grid must be sorted ascending".into()));
    }
    let reg = Regression::new(g, b)?;
    let runs: Vec<Result<SparseResult>> = lambdas.par_iter().map(|&l| reg.stls(l)).collect();
    let mut curve = Vec::with_capacity(lambdas.len());
    let mut best: Option<(f64, SparseResult)> = None;
    let mut first_err = None;
    for (run, &l) in runs.into_iter().zip(lambdas) {
        match run {
            Ok(r) => {
                let value = loss(&r, reg.cols(), gamma);
                curve.push((l, value));
                if !r.degenerate && best.as_ref().is_none_or(|(v, _)| value <= *v) {
                    best = Some((value, r));
                }
            }
            Err(e) => {
                curve.push((l, f64::INFINITY));
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((_, mut r)) => {
            r.loss_curve = curve;
            Ok(r)
        }
        None => Err(first_err.map_or_else(
            || Error::numerical("every threshold removed all terms"),
            |e| e.context("no threshold produced a usable model"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_g(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn zero_threshold_is_least_squares() {
        let g = random_g(30, 5, 1);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let r = stls(&g, &b, 0.0).unwrap();
        let ls = g.clone().svd(true, true).solve(&DVector::from_column_slice(&b), 0.0).unwrap();
        for j in 0..5 {
            assert!((r.w[j] - ls[j]).abs() < 1e-12);
        }
        assert_eq!(r.support, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn threshold_above_one_is_degenerate() {
        let g = random_g(30, 5, 2);
        let b = vec![1.0; 30];
        let r = stls(&g, &b, 1.0 + 1e-9).unwrap();
        assert!(r.degenerate);
        assert!(r.w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rank_deficiency_reports_condition() {
        let mut g = random_g(20, 3, 3);
        let c0 = g.column(0).clone_owned();
        g.set_column(2, &(c0 * 2.0));
        let b = vec![1.0; 20];
        match stls(&g, &b, 0.0) {
            Err(Error::RankDeficient { condition }) => assert!(condition > 1e12),
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn single_lambda_grid_matches_stls() {
        let g = random_g(40, 6, 4);
        let w = [1.0, 0.0, -2.0, 0.0, 0.0, 0.5];
        let b: Vec<f64> = (g.clone() * DVector::from_column_slice(&w)).iter().copied().collect();
        let a = stls(&g, &b, 0.1).unwrap();
        let s = select_lambda(&g, &b, &[0.1], 1.0).unwrap();
        assert_eq!(a.w, s.w);
        assert_eq!(s.loss_curve.len(), 1);
    }

    #[test]
    fn curve_has_one_entry_per_lambda() {
        let g = random_g(40, 6, 5);
        let b: Vec<f64> = g.column(1).iter().map(|v| 3.0 * v).collect();
        let grid = LambdaGrid::default().values().unwrap();
        let r = select_lambda(&g, &b, &grid, 1.0).unwrap();
        assert_eq!(r.loss_curve.len(), 40);
        assert_eq!(r.support, vec![1]);
    }

    #[test]
    fn lambda_grid_endpoints() {
        let v = LambdaGrid::default().values().unwrap();
        assert!((v[0] - 1e-4).abs() < 1e-18 && (v[39] - 1.0).abs() < 1e-14);
        assert!(LambdaGrid { min: 0.0, max: 1.0, count: 3 }.values().is_err());
    }

    #[test]
    fn unsorted_or_empty_grid_rejected() {
        let g = random_g(10, 2, 6);
        let b = vec![1.0; 10];
        assert!(select_lambda(&g, &b, &[], 1.0).is_err());
        assert!(select_lambda(&g, &b, &[0.5, 0.1], 1.0).is_err());
    }
}
