use std::collections::VecDeque;

use super::DspError;

/// Moving-window min-max normalization into `[0, 1]`.
///
/// The window spans `round(window_s * fs)` samples centered on each index and
/// is truncated at the signal edges. A flat window maps to 0.5.
pub fn moving_minmax_norm(signal: &[f64], window_s: f64, fs: f64) -> Result<Vec<f64>, DspError> {
    let w = (window_s * fs).round();
    if !(w >= 2.0) {
        return Err(DspError::WindowTooShort { window_s, fs, min: 2 });
    }
    let n = signal.len();
    if n == 0 {
        return Err(DspError::Empty);
    }
    let w = w as usize;
    let left = (w - 1) / 2;
    let right = w / 2;

    // Monotone deques of indices: front holds the window min / max.
    let mut mins: VecDeque<usize> = VecDeque::new();
    let mut maxs: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let hi = (i + right).min(n - 1);
        while next <= hi {
            let x = signal[next];
            while mins.back().is_some_and(|&j| signal[j] >= x) {
                mins.pop_back();
            }
            mins.push_back(next);
            while maxs.back().is_some_and(|&j| signal[j] <= x) {
                maxs.pop_back();
            }
            maxs.push_back(next);
            next += 1;
        }
        let lo = i.saturating_sub(left);
        while mins.front().is_some_and(|&j| j < lo) {
            mins.pop_front();
        }
        while maxs.front().is_some_and(|&j| j < lo) {
            maxs.pop_front();
        }
        let (mn, mx) = (signal[mins[0]], signal[maxs[0]]);
        let range = mx - mn;
        out.push(if range > 0.0 {
            ((signal[i] - mn) / range).clamp(0.0, 1.0)
        } else {
            0.5
        });
    }
    Ok(out)
}
