//! Least-squares line fits for scaling exponents.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination; 1 for a perfect or flat fit.
    pub r_squared: f64,
}

impl LinearFit {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidParameter(format!("fit needs matched points, got {} and {}", xs.len(), ys.len())));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("fit points must be finite".into()));
        }
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::InvalidParameter("fit abscissae are all equal".into()));
        }
        let slope = sxy / sxx;
        let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
        Ok(Self { slope, intercept: my - slope * mx, r_squared })
    }

    /// Fit of `ln y` against `ln x`.
    pub fn log_log(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        Self::new(&lx, &ly)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_power_law() {
        let xs = [1e-3, 1e-2, 1e-1, 1.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.6)).collect();
        let f = LinearFit::log_log(&xs, &ys).unwrap();
        assert!((f.slope - 0.6).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(LinearFit::new(&[1.0, 1.0], &[0.0, 1.0]).is_err());
        assert!(LinearFit::new(&[1.0], &[0.0]).is_err());
    }
}
