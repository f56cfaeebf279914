//! Power-spectrum utilities along one axis of gridded data.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::{strides, Dataset};

/// Run `f` on the DFT of every (endpoint-detrended) line of `d` along
/// `axis`, for every component.
pub fn for_each_line_spectrum(d: &Dataset, axis: usize, mut f: impl FnMut(&[Complex<f64>])) {
    let shape = d.grid().shape();
    let n = shape[axis];
    let st = strides(&shape);
    let stride = st[axis];
    let outer: usize = shape[..axis].iter().product();
    let inner = stride;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let values = d.values();
    let nc = d.components();
    for c in 0..nc {
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * stride + i;
                for (j, slot) in buf.iter_mut().enumerate() {
                    *slot = Complex::new(values[(base + j * stride) * nc + c], 0.0);
                }
                detrend_endpoints(&mut buf);
                fft.process(&mut buf);
                f(&buf);
            }
        }
    }
}

/// Subtract the straight line through the first and last samples, which
/// removes the jump a non-periodic line has at the wrap-around.
fn detrend_endpoints(buf: &mut [Complex<f64>]) {
    let n = buf.len();
    let a = buf[0].re;
    let b = buf[n - 1].re;
    for (j, v) in buf.iter_mut().enumerate() {
        v.re -= a + (b - a) * j as f64 / (n - 1) as f64;
    }
}

/// Mean DFT magnitude for wavenumbers `0..=n/2` along `axis`, averaged over
/// all lines and components.
pub fn mean_magnitude(d: &Dataset, axis: usize) -> Vec<f64> {
    let n = d.grid().shape()[axis];
    let half = n / 2;
    let mut acc = vec![0.0; half + 1];
    let mut count = 0usize;
    for_each_line_spectrum(d, axis, |s| {
        for (k, a) in acc.iter_mut().enumerate() {
            *a += s[k].norm();
        }
        count += 1;
    });
    acc.iter_mut().for_each(|a| *a /= count as f64);
    acc
}

/// Least-squares continuous two-piece linear fit of `y` against the index.
/// Returns `(break index, slope before, slope after)`; breaks are searched
/// over `1..len-1` and the first minimiser wins.
pub fn two_piece_fit(y: &[f64]) -> (usize, f64, f64) {
    let n = y.len();
    assert!(n >= 4, "two-piece fit needs at least 4 points");
    let mut best = (1usize, f64::INFINITY, 0.0, 0.0);
    for b in 1..n - 1 {
        // basis 1, k, (k - b)_+ ; solve 3x3 normal equations
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for (k, &v) in y.iter().enumerate() {
            let row = [1.0, k as f64, (k as f64 - b as f64).max(0.0)];
            for r in 0..3 {
                aty[r] += row[r] * v;
                for c in 0..3 {
                    ata[r][c] += row[r] * row[c];
                }
            }
        }
        let Some(beta) = solve3(ata, aty) else { continue };
        let sse: f64 = y
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let fit = beta[0] + beta[1] * k as f64 + beta[2] * (k as f64 - b as f64).max(0.0);
                (v - fit).powi(2)
            })
            .sum();
        if sse < best.1 {
            best = (b, sse, beta[1], beta[1] + beta[2]);
        }
    }
    (best.0, best.2, best.3)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_piece_recovers_planted_corner() {
        let y: Vec<f64> = (0..40).map(|k| if k < 13 { 5.0 * k as f64 } else { 65.0 + 0.5 * (k - 13) as f64 }).collect();
        let (b, s1, s2) = two_piece_fit(&y);
        assert_eq!(b, 13);
        assert!((s1 - 5.0).abs() < 1e-9 && (s2 - 0.5).abs() < 1e-9);
    }
}
