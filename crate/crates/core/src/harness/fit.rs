//! Logarithmic-stability trend `e ≈ C |ln δ|^{-γ}`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityFit {
    pub gamma: f64,
    pub c: f64,
    /// Coefficient of determination of the log-log regression.
    pub r2: f64,
    pub n: usize,
}

impl StabilityFit {
    pub fn predict(&self, delta: f64) -> f64 {
        self.c * delta.ln().abs().powf(-self.gamma)
    }
}

/// Least squares on `ln e = ln C - γ ln|ln δ|` over `(δ, e)` pairs.
pub fn fit_stability(points: &[(f64, f64)]) -> Result<StabilityFit> {
    if points.len() < 3 {
        return Err(Error::Parameter(format!(
            "stability fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    for &(d, e) in points {
        if !(d > 0.0 && d < 1.0) {
            return Err(Error::Parameter(format!("noise level {d} outside (0, 1)")));
        }
        if !(e > 0.0 && e.is_finite()) {
            return Err(Error::Parameter(format!("error value {e} must be positive")));
        }
        xs.push(d.ln().abs().ln());
        ys.push(e.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) {
        return Err(Error::Parameter(
            "degenerate stability fit: noise levels coincide".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(StabilityFit {
        gamma: -slope,
        c: intercept.exp(),
        r2,
        n: points.len(),
    })
}
