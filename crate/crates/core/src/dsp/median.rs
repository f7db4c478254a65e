use super::DspError;

/// Window lengths (seconds) of the two-pass median baseline estimator.
pub const BASELINE_WINDOWS_S: [f64; 2] = [0.8, 1.25];

fn window_len(window_s: f64, fs: f64) -> Result<usize, DspError> {
    let w = (window_s * fs).round();
    if !(w >= 1.0) {
        return Err(DspError::WindowTooShort { window_s, fs, min: 1 });
    }
    let w = w as usize;
    Ok(if w % 2 == 0 { w + 1 } else { w })
}

/// Centered running median over `window_s` seconds.
///
/// The window length is rounded to samples and forced odd. Near the edges
/// the window shrinks symmetrically, so index `i` uses
/// `min(half, i, n - 1 - i)` samples on each side.
pub fn median_filter(signal: &[f64], window_s: f64, fs: f64) -> Result<Vec<f64>, DspError> {
    median_filter_len(signal, window_len(window_s, fs)?)
}

/// [`median_filter`] with the window given in samples (forced odd).
pub fn median_filter_len(signal: &[f64], window: usize) -> Result<Vec<f64>, DspError> {
    let n = signal.len();
    if n == 0 {
        return Err(DspError::Empty);
    }
    let half = window.max(1) / 2;
    let mut out = vec![0.0; n];
    let mut scratch = Vec::with_capacity(2 * half + 1);
    let edge_median = |i: usize, scratch: &mut Vec<f64>| {
        let h = half.min(i).min(n - 1 - i);
        scratch.clear();
        scratch.extend_from_slice(&signal[i - h..=i + h]);
        let mid = scratch.len() / 2;
        *scratch.select_nth_unstable_by(mid, f64::total_cmp).1
    };

    if n <= 2 * half {
        for (i, o) in out.iter_mut().enumerate() {
            *o = edge_median(i, &mut scratch);
        }
        return Ok(out);
    }

    for i in (0..half).chain(n - half..n) {
        out[i] = edge_median(i, &mut scratch);
    }

    // Interior: keep the full window sorted and slide it one sample at a time.
    let mut sorted: Vec<f64> = signal[..=2 * half].to_vec();
    sorted.sort_by(f64::total_cmp);
    out[half] = sorted[half];
    for i in half + 1..n - half {
        let leaving = signal[i - half - 1];
        let pos = sorted.partition_point(|v| v.total_cmp(&leaving).is_lt());
        sorted.remove(pos);
        let entering = signal[i + half];
        let pos = sorted.partition_point(|v| v.total_cmp(&entering).is_lt());
        sorted.insert(pos, entering);
        out[i] = sorted[half];
    }
    Ok(out)
}

/// Remove baseline wander: the baseline is a 0.8 s median filter followed
/// by a 1.25 s median filter, and it is subtracted from the input.
pub fn baseline_remove(signal: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    let longest = window_len(BASELINE_WINDOWS_S[1], fs)?;
    if signal.len() < 2 * longest {
        return Err(DspError::TooShort {
            needed: 2 * longest,
            got: signal.len(),
        });
    }
    let first = median_filter(signal, BASELINE_WINDOWS_S[0], fs)?;
    let baseline = median_filter(&first, BASELINE_WINDOWS_S[1], fs)?;
    Ok(signal.iter().zip(&baseline).map(|(x, b)| x - b).collect())
}
