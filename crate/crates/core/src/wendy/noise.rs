//! Measurement-noise level from the high-wavenumber end of the spectrum.

use crate::data::Dataset;
use crate::spectrum::for_each_line_spectrum;

/// Standard deviation of i.i.d. noise implied by the top quarter of the
/// spectrum, taking the quietest axis.
///
/// For white noise of std `s`, `|X_k|^2` of a length-`n` line is exponential
/// with mean `n s^2`, so its median is `n s^2 ln 2`. Axes shorter than 16
/// samples are skipped; if none qualifies the result is 0.
pub fn estimate_noise_std(d: &Dataset) -> f64 {
    let shape = d.grid().shape();
    let mut best: Option<f64> = None;
    for (axis, &n) in shape.iter().enumerate() {
        if n < 16 {
            continue;
        }
        let lo = (3 * n).div_ceil(8);
        // the Nyquist bin is real-valued and follows a different law
        let hi = n.div_ceil(2);
        let mut power = Vec::new();
        for_each_line_spectrum(d, axis, |s| {
            power.extend(s[lo..hi].iter().map(|z| z.norm_sqr()));
        });
        if power.is_empty() {
            continue;
        }
        let mid = power.len() / 2;
        let (_, median, _) = power.select_nth_unstable_by(mid, f64::total_cmp);
        let var = *median / (n as f64 * std::f64::consts::LN_2);
        let s = var.max(0.0).sqrt();
        best = Some(best.map_or(s, |b: f64| b.min(s)));
    }
    best.unwrap_or(0.0)
}
