//! Executable checks of the three desiderata: coordinate checks on the
//! transformer, the laziness experiment on the linear toy network, the
//! one-step maximal-update probe, and the analytic signal-propagation
//! recursion.

pub mod coordcheck;
pub mod laziness;
pub mod maxupdate;
pub mod sigprop;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use coordcheck::{coordinate_check, CoordCheckConfig, CoordCheckReport, CoordVariant};
pub use laziness::{laziness_experiment, laziness_metric, LazinessConfig, LazinessReport, UpdateMode, UpdateRule};
pub use maxupdate::{max_update_probe, MaxUpdateConfig, MaxUpdateReport};
pub use sigprop::{sigprop, sigprop_closed_form, sigprop_limit, SigpropLimit, SigpropResult};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fits `ln y = slope·ln x + intercept`. Needs at least three points with
/// two or more distinct `x` values, all strictly positive.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LogLogFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("log-log fit needs >= 3 points, got {}", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InvalidArgument(format!("log-log fit needs positive finite values, got ({x}, {y})")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept) =
        crate::scaling::ols(&xs, &ys).ok_or_else(|| Error::InvalidArgument("all x values are equal".into()))?;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLogFit { slope, intercept, r2 })
}

/// Median and first/third quartiles by linear interpolation between order
/// statistics. `None` for an empty slice.
pub fn quartiles(values: &[f64]) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (v.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    };
    Some([at(0.25), at(0.5), at(0.75)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law_slope() {
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0, 64.0].iter().map(|&l: &f64| (l, 7.0 * l.powf(-0.5))).collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-9);
        assert!((fit.intercept - 7f64.ln()).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_values_have_zero_slope() {
        let fit = fit_loglog_slope(&[(2.0, 3.0), (4.0, 3.0), (8.0, 3.0)]).unwrap();
        assert!(fit.slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_loglog_slope(&[(2.0, 1.0), (4.0, 2.0)]).is_err());
        assert!(fit_loglog_slope(&[(2.0, 1.0), (4.0, 0.0), (8.0, 2.0)]).is_err());
        assert!(fit_loglog_slope(&[(2.0, 1.0), (2.0, 2.0), (2.0, 3.0)]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        assert_eq!(quartiles(&[4.0, 1.0, 3.0, 2.0, 5.0]), Some([2.0, 3.0, 4.0]));
        assert_eq!(quartiles(&[1.0, 2.0]), Some([1.25, 1.5, 1.75]));
        assert_eq!(quartiles(&[]), None);
    }
}
