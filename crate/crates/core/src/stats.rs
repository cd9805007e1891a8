//! Power-law fits with bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// `y ~ C x^q` fitted by least squares in log-log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFit {
    pub exponent: f64,
    pub prefactor: f64,
    /// 2.5% and 97.5% bootstrap quantiles of the exponent.
    pub ci_low: f64,
    pub ci_high: f64,
}

fn slope_intercept(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits a power law and a residual-bootstrap interval for the exponent.
/// Returns `None` if fewer than two points or any value is non-positive.
pub fn power_law_fit(xs: &[f64], ys: &[f64], n_boot: usize, seed: u64) -> Option<PowerFit> {
    if xs.len() < 2 || xs.len() != ys.len() || xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (q, c) = slope_intercept(&lx, &ly);
    let fitted: Vec<f64> = lx.iter().map(|x| c + q * x).collect();
    let resid: Vec<f64> = ly.iter().zip(&fitted).map(|(y, f)| y - f).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(n_boot);
    let mut yb = vec![0.0; lx.len()];
    for _ in 0..n_boot {
        for (k, y) in yb.iter_mut().enumerate() {
            *y = fitted[k] + resid[rng.random_range(0..resid.len())];
        }
        slopes.push(slope_intercept(&lx, &yb).0);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (ci_low, ci_high) = if slopes.is_empty() {
        (q, q)
    } else {
        let lo = ((0.025 * n_boot as f64) as usize).min(n_boot - 1);
        let hi = ((0.975 * n_boot as f64) as usize).min(n_boot - 1);
        (slopes[lo].min(q), slopes[hi].max(q))
    };
    Some(PowerFit { exponent: q, prefactor: c.exp(), ci_low, ci_high })
}

/// Observed order between consecutive refinements, `log(e_k / e_{k+1}) / log(r)`.
pub fn observed_orders(errors: &[f64], ratio: f64) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).ln() / ratio.ln()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x = [0.05, 0.1, 0.2];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powi(2)).collect();
        let f = power_law_fit(&x, &y, 200, 1).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        assert!((f.prefactor - 3.0).abs() < 1e-10);
        assert!((f.ci_low - 2.0).abs() < 1e-10 && (f.ci_high - 2.0).abs() < 1e-10);
    }

    #[test]
    fn noisy_fit_brackets_estimate() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y = [1.0, 4.4, 15.0, 66.0];
        let f = power_law_fit(&x, &y, 500, 7).unwrap();
        assert!(f.ci_low <= f.exponent && f.exponent <= f.ci_high);
        assert!(f.ci_high - f.ci_low > 0.0);
    }

    #[test]
    fn rejects_nonpositive() {
        assert!(power_law_fit(&[1.0, 2.0], &[0.0, 1.0], 10, 0).is_none());
        assert_eq!(observed_orders(&[4.0, 1.0], 2.0), vec![2.0]);
    }
}
