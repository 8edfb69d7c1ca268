use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass sample standard deviation with divisor `n - 1`.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

pub fn standard_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// `sqrt(Σ (a - e)² / Σ e²)`.
pub fn relative_l2(approx: &[f64], exact: &[f64]) -> f64 {
    let num: f64 = approx.iter().zip(exact).map(|(a, e)| (a - e) * (a - e)).sum();
    let den: f64 = exact.iter().map(|e| e * e).sum();
    (num / den).sqrt()
}

/// Ordinary least squares line with a two-sided confidence interval on the
/// slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub level: f64,
    pub slope_low: f64,
    pub slope_high: f64,
}

pub fn fit_line(x: &[f64], y: &[f64], level: f64) -> Result<LineFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(invalid("a line fit needs at least two paired points"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("line fit data must be finite"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return Err(invalid("line fit needs at least two distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (slope_stderr, half) = if n > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        let se = (rss / (n - 2) as f64 / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64)
            .map_err(|e| invalid(e.to_string()))?
            .inverse_cdf(0.5 + level / 2.0);
        (se, t * se)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        level,
        slope_low: slope - half,
        slope_high: slope + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_pass_std() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(std_dev(&xs), (5.0f64 / 3.0).sqrt(), epsilon = 1e-15);
        assert_eq!(std_dev(&[2.5; 5]), 0.0);
        assert!(std_dev(&[1.0]).is_nan());
        // large offset: a one-pass formula loses every digit here
        let shifted: Vec<f64> = xs.iter().map(|x| x + 1e9).collect();
        assert_relative_eq!(std_dev(&shifted), std_dev(&xs), max_relative = 1e-6);
    }

    #[test]
    fn relative_l2_by_hand() {
        let v = relative_l2(&[1.1, 1.9], &[1.0, 2.0]);
        assert_relative_eq!(v, (0.02f64 / 5.0).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn exact_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = fit_line(&x, &y, 0.95).unwrap();
        assert_relative_eq!(f.slope, 2.0, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, -1.0, epsilon = 1e-12);
        assert!(f.slope_stderr < 1e-12);
    }

    #[test]
    fn interval_matches_t_quantile() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [0.1, 0.9, 2.2, 2.8];
        let f = fit_line(&x, &y, 0.95).unwrap();
        // t(0.975, 2) = 4.302653
        assert_relative_eq!((f.slope_high - f.slope) / f.slope_stderr, 4.302653, max_relative = 1e-5);
        assert!(f.slope_low < f.slope && f.slope < f.slope_high);
    }

    #[test]
    fn two_points_have_unbounded_interval() {
        let f = fit_line(&[0.0, 1.0], &[0.0, 3.0], 0.95).unwrap();
        assert_eq!(f.slope, 3.0);
        assert!(f.slope_high.is_infinite());
    }

    #[test]
    fn degenerate_fits_fail() {
        assert!(fit_line(&[1.0], &[1.0], 0.95).is_err());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0], 0.95).is_err());
        assert!(fit_line(&[1.0, 2.0], &[1.0, f64::NAN], 0.95).is_err());
    }
}
