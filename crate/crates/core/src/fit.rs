//! Least-squares fits of exponential rates.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Result of fitting `y ~ C * exp(-rate * x)` over a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub rate_stderr: f64,
    pub log_prefactor: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Weighted straight-line fit `y = c + m x`. Returns `(m, c, stderr(m))`.
///
/// With `sigma` given the weights are `1/sigma^2` and the covariance is
/// inflated by the reduced chi-square when that exceeds one; without it the
/// standard error comes from the residuals.
pub fn linear_fit(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<(f64, f64, f64)> {
    let n = x.len();
    if n != y.len() || sigma.is_some_and(|s| s.len() != n) {
        return invalid("fit arrays have different lengths");
    }
    if n < 2 {
        return invalid("need at least two points to fit a line");
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|&s| if s > 0.0 { 1.0 / (s * s) } else { 1e30 }).collect(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    if sxx <= 0.0 {
        return invalid("fit abscissae are all equal");
    }
    let sxy: f64 = (0..n).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let m = sxy / sxx;
    let c = ym - m * xm;
    let chi2: f64 = (0..n).map(|i| w[i] * (y[i] - c - m * x[i]).powi(2)).sum();
    let dof = (n as f64 - 2.0).max(1.0);
    let se = match sigma {
        Some(_) => (1.0 / sxx * (chi2 / dof).max(1.0)).sqrt(),
        None => (chi2 / dof / sxx).sqrt(),
    };
    Ok((m, c, se))
}

/// Fit a decay rate to positive samples `y(x)`; `stderr` are absolute
/// standard errors of `y`, propagated to log space.
pub fn fit_decay(x: &[f64], y: &[f64], stderr: Option<&[f64]>) -> Result<DecayFit> {
    if y.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return invalid("decay fit needs strictly positive finite samples");
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let sl: Option<Vec<f64>> = stderr.map(|s| s.iter().zip(y).map(|(e, v)| e / v).collect());
    let (m, c, se) = linear_fit(x, &ly, sl.as_deref())?;
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit { rate: -m, rate_stderr: se, log_prefactor: c, window: (lo, hi), points: x.len() })
}

/// Quantile of a sample by linear interpolation of the order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(v.len() - 1);
    v[i] + (pos - i as f64) * (v[j] - v[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_exponential_is_recovered() {
        let x: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_decay(&x, &y, None).unwrap();
        assert_relative_eq!(f.rate, 0.7, max_relative = 1e-12);
        assert!(f.rate_stderr < 1e-10);
        assert_relative_eq!(f.log_prefactor, 3f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let f = fit_decay(&x, &[2.0; 4], Some(&[0.1; 4])).unwrap();
        assert!(f.rate.abs() < 1e-12);
        assert!(f.rate_stderr > 0.0);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(fit_decay(&[1.0, 2.0], &[1.0, 0.0], None).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }
}
