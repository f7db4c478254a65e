use super::DspError;

/// Sample the piecewise-linear curve through `(times_s, values)` at
/// `t0, t0 + 1/rate, ...` up to and including `t1`.
///
/// Outside the knot span the nearest knot value is held. Knot times must be
/// strictly increasing.
pub fn linear_interp(
    times_s: &[f64],
    values: &[f64],
    out_rate_hz: f64,
    t0: f64,
    t1: f64,
) -> Result<Vec<f64>, DspError> {
    if times_s.len() != values.len() {
        return Err(DspError::InvalidParameter(format!(
            "{} knot times but {} values",
            times_s.len(),
            values.len()
        )));
    }
    if times_s.len() < 2 {
        return Err(DspError::TooFewKnots(times_s.len()));
    }
    if !(out_rate_hz > 0.0) || !(t1 >= t0) {
        return Err(DspError::InvalidParameter(format!(
            "invalid sampling grid: rate {out_rate_hz} Hz on [{t0}, {t1}]"
        )));
    }
    if times_s.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DspError::InvalidParameter("knot times must be strictly increasing".into()));
    }
    let n = ((t1 - t0) * out_rate_hz + 1e-9).floor() as usize + 1;
    let last = times_s.len() - 1;
    let mut seg = 0;
    let out = (0..n)
        .map(|i| {
            let t = t0 + i as f64 / out_rate_hz;
            if t <= times_s[0] {
                return values[0];
            }
            if t >= times_s[last] {
                return values[last];
            }
            while times_s[seg + 1] < t {
                seg += 1;
            }
            let (ta, tb) = (times_s[seg], times_s[seg + 1]);
            let (va, vb) = (values[seg], values[seg + 1]);
            va + (vb - va) * (t - ta) / (tb - ta)
        })
        .collect();
    Ok(out)
}
