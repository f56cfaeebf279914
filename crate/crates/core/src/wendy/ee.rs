//! Strong-form equation-error baseline: substitute the data into the
//! equation, approximate every derivative by central differences, and solve
//! by ordinary least squares.

use nalgebra::DMatrix;

use super::ols_solve;
use crate::data::{strides, unravel, Dataset};
use crate::error::{Error, Result};
use crate::library::{evaluate_pointwise, FeatureLibrary};

/// Central difference of order `k` along `axis`, built from repeated second
/// differences plus one first difference for odd `k`. Values within
/// `margin(k)` of either end are left at zero.
fn central_diff(data: &[f64], shape: &[usize], axis: usize, k: usize, h: f64) -> Vec<f64> {
    let st = strides(shape)[axis];
    let n = shape[axis];
    let mut cur = data.to_vec();
    let apply = |cur: &mut Vec<f64>, second: bool| {
        let mut out = vec![0.0; cur.len()];
        for (p, o) in out.iter_mut().enumerate() {
            let i = (p / st) % n;
            if i == 0 || i + 1 == n {
                continue;
            }
            *o = if second { (cur[p + st] - 2.0 * cur[p] + cur[p - st]) / (h * h) } else { (cur[p + st] - cur[p - st]) / (2.0 * h) };
        }
        *cur = out;
    };
    for _ in 0..k / 2 {
        apply(&mut cur, true);
    }
    if k % 2 == 1 {
        apply(&mut cur, false);
    }
    cur
}

fn margin(k: usize) -> usize {
    k / 2 + k % 2
}

/// OLS on `u_t = sum_j w_j f_j(u)` with finite-difference derivatives,
/// restricted to `supports`. Returns coefficients on each support.
pub fn ee_ols_estimate(d: &Dataset, lib: &FeatureLibrary, supports: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    if supports.len() != lib.components() {
        return Err(Error::Shape(format!("{} supports for {} components", supports.len(), lib.components())));
    }
    if let Some(j) = supports.iter().flatten().find(|&&j| j >= lib.len()) {
        return Err(Error::domain(format!("support index {j} out of range for {} terms", lib.len())));
    }
    let grid = d.grid();
    let shape = grid.shape();
    let nd = shape.len();
    let t = nd - 1;
    let mut used: Vec<usize> = supports.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let pointwise = evaluate_pointwise(lib, d)?;
    let mut margins = vec![0usize; nd];
    margins[t] = 1;
    for &j in &used {
        for (a, m) in margins.iter_mut().enumerate().take(t) {
            *m = (*m).max(margin(lib.terms()[j].derivative_order(a)));
        }
    }
    if (0..nd).any(|a| shape[a] <= 2 * margins[a]) {
        return Err(Error::domain("grid too small for the finite-difference stencils"));
    }
    let rows: Vec<usize> = (0..grid.len())
        .filter(|&p| {
            let idx = unravel(p, &shape);
            (0..nd).all(|a| idx[a] >= margins[a] && idx[a] + margins[a] < shape[a])
        })
        .collect();
    let columns: Vec<Vec<f64>> = used
        .iter()
        .map(|&j| {
            let term = &lib.terms()[j];
            let mut col = pointwise[j].clone();
            for a in 0..t {
                let k = term.derivative_order(a);
                if k > 0 {
                    col = central_diff(&col, &shape, a, k, grid.spacing(a));
                }
            }
            col
        })
        .collect();
    supports
        .iter()
        .enumerate()
        .map(|(c, support)| {
            let ut = central_diff(&d.component(c), &shape, t, 1, grid.spacing(t));
            let g = DMatrix::from_fn(rows.len(), support.len(), |r, i| {
                let col = used.binary_search(&support[i]).expect("support index is in the used set");
                columns[col][rows[r]]
            });
            let b: Vec<f64> = rows.iter().map(|&p| ut[p]).collect();
            ols_solve(&g, &b).map_err(|e| e.context(&format!("component {c}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Grid;
    use crate::library::Term;

    #[test]
    fn fourth_difference_of_quartic() {
        let g = Grid::new(&[(20, 0.0, 1.0)]).unwrap();
        let h = g.spacing(0);
        let x = g.axis(0).coords();
        let f: Vec<f64> = x.iter().map(|v| v.powi(4)).collect();
        let d4 = central_diff(&f, &[20], 0, 4, h);
        for v in &d4[2..18] {
            assert!((v - 24.0).abs() < 1e-6, "{v}");
        }
        let d1 = central_diff(&f, &[20], 0, 1, h);
        assert!((d1[10] - 4.0 * x[10].powi(3)).abs() < 4.0 * 6.0 * x[10] * h * h);
    }

    #[test]
    fn advection_solution_recovered() {
        // u = sin(x - 2t) solves u_t = -2 u_x
        let g = Grid::new(&[(200, 0.0, 6.0), (150, 0.0, 1.0)]).unwrap();
        let d = Dataset::from_fn(g, 1, |p| vec![(p[0] - 2.0 * p[1]).sin()]).unwrap();
        let lib = FeatureLibrary::new(1, 1, vec![Term::dx_power(1, 1), Term::dx_power(2, 1)]).unwrap();
        let w = ee_ols_estimate(&d, &lib, &[vec![0, 1]]).unwrap();
        assert!((w[0][0] + 2.0).abs() < 1e-3 && w[0][1].abs() < 1e-3, "{w:?}");
    }
}
