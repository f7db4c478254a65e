//! Student t and studentized range distributions.

use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("degrees of freedom must be positive and finite, got {0}")]
    InvalidDf(f64),
    #[error("number of groups must be at least 2, got {0}")]
    InvalidGroups(usize),
    #[error("probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
}

fn check_df(df: f64) -> Result<(), DistError> {
    if df > 0.0 && df.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidDf(df))
    }
}

fn students_t(df: f64) -> Result<StudentsT, DistError> {
    check_df(df)?;
    StudentsT::new(0.0, 1.0, df).map_err(|_| DistError::InvalidDf(df))
}

pub fn t_cdf(t: f64, df: f64) -> Result<f64, DistError> {
    Ok(students_t(df)?.cdf(t))
}

/// `P(|T| >= |t|)`.
pub fn t_two_sided_p(t: f64, df: f64) -> Result<f64, DistError> {
    let d = students_t(df)?;
    if t.is_nan() {
        return Ok(f64::NAN);
    }
    Ok((2.0 * d.sf(t.abs())).min(1.0))
}

/// Quantile of the t distribution, by bracketing and bisection on [`t_cdf`].
pub fn t_quantile(p: f64, df: f64) -> Result<f64, DistError> {
    let d = students_t(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(DistError::InvalidProbability(p));
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while d.cdf(lo) > p {
        lo *= 2.0;
    }
    while d.cdf(hi) < p {
        hi *= 2.0;
    }
    Ok(bisect(|x| d.cdf(x) - p, lo, hi))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn upper_normal_tail(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kronrod = 0.0;
    let mut gauss = 0.0;
    for (i, (&x, &wk)) in GK_NODES.iter().zip(&K15_WEIGHTS).enumerate() {
        let pair = if x == 0.0 { f(c) } else { f(c - h * x) + f(c + h * x) };
        kronrod += wk * pair;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]` to absolute tolerance `tol`.
pub(crate) fn integrate(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (value, err) = gauss_kronrod(f, a, b);
        if err <= tol || depth == 0 {
            return value;
        }
        let m = 0.5 * (a + b);
        recurse(f, a, m, 0.5 * tol, depth - 1) + recurse(f, m, b, 0.5 * tol, depth - 1)
    }
    recurse(f, a, b, tol, 30)
}

/// `P(range of k standard normals <= w)`.
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let k_f = k as f64;
    let integrand = |z: f64| {
        let inner = upper_normal_tail(z - w) - upper_normal_tail(z);
        if inner <= 0.0 {
            0.0
        } else {
            normal_pdf(z) * inner.powf(k_f - 1.0)
        }
    };
    // Split at the peak region so narrow integrands are not missed.
    let lo = -9.0;
    let hi = 9.0;
    let mid = (0.5 * w).min(hi);
    let value = k_f * (integrate(&integrand, lo, mid, 1e-12) + integrate(&integrand, mid, hi, 1e-12));
    value.clamp(0.0, 1.0)
}

/// CDF of the studentized range for `k` groups and `df` error degrees of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> Result<f64, DistError> {
    check_df(df)?;
    if k < 2 {
        return Err(DistError::InvalidGroups(k));
    }
    if q.is_nan() {
        return Ok(f64::NAN);
    }
    if q <= 0.0 {
        return Ok(0.0);
    }
    if df > 1e9 {
        return Ok(normal_range_cdf(q, k));
    }
    // Density of s = sqrt(chi2_df / df).
    let half = 0.5 * df;
    let log_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * 2f64.ln();
    let density = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            (log_norm + (df - 1.0) * s.ln() - half * s * s).exp()
        }
    };
    let spread = 12.0 / df.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread;
    let integrand = |s: f64| density(s) * normal_range_cdf(q * s, k);
    // Split around the mode so the adaptive rule sees the peak.
    let mode = ((df - 1.0) / df).max(0.0).sqrt().clamp(lo, hi);
    let value = integrate(&integrand, lo, mode, 1e-10) + integrate(&integrand, mode, hi, 1e-10);
    Ok(value.clamp(0.0, 1.0))
}

/// Upper-tail probability of the studentized range.
pub fn ptukey_upper(q: f64, k: usize, df: f64) -> Result<f64, DistError> {
    Ok((1.0 - ptukey(q, k, df)?).clamp(0.0, 1.0))
}

/// Quantile of the studentized range.
pub fn qtukey(p: f64, k: usize, df: f64) -> Result<f64, DistError> {
    check_df(df)?;
    if k < 2 {
        return Err(DistError::InvalidGroups(k));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(DistError::InvalidProbability(p));
    }
    let f = |q: f64| ptukey(q, k, df).unwrap_or(f64::NAN) - p;
    let mut hi = 4.0;
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-10 {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
