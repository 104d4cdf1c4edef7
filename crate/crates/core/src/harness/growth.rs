//! Growth-class fit of live tokens against frame count, and spike ratio.

use serde::{Deserialize, Serialize};

use super::strategy::StrategyTrace;
use super::HarnessError;

pub const MIN_FRAMES: usize = 100;
pub const LINEAR_EXPONENT: f64 = 0.95;
pub const SUBLINEAR_EXPONENT: f64 = 0.8;
/// Relative growth over the second half below which a series is bounded.
pub const BOUNDED_TAIL_GROWTH: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthClass {
    Linear,
    Sublinear,
    Bounded,
    /// Exponent between the sublinear and linear thresholds.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub class: GrowthClass,
    /// Slope of `ln(tokens)` against `ln(frame)`.
    pub exponent: f64,
    pub r2: f64,
    /// Fitted growth across the second half divided by its mean level.
    pub tail_growth: f64,
}

/// Least-squares `y = slope·x + intercept`; returns `(slope, intercept, r²)`.
/// A constant `y` has `r² = 1`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

pub fn fit_growth(trace: &StrategyTrace) -> Result<GrowthFit, HarnessError> {
    fit_series(&trace.live_series())
}

/// Classifies `values[i]`, the token count after frame `i + 1`.
pub fn fit_series(values: &[f64]) -> Result<GrowthFit, HarnessError> {
    if values.len() < MIN_FRAMES {
        return Err(HarnessError::TooFewFrames {
            needed: MIN_FRAMES,
            got: values.len(),
        });
    }
    let frames: Vec<f64> = (1..=values.len()).map(|i| i as f64).collect();
    let lx: Vec<f64> = frames.iter().map(|f| f.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.max(1e-12).ln()).collect();
    let (exponent, _, r2) = linear_fit(&lx, &ly);

    let half = values.len() / 2;
    let (tail_x, tail_y) = (&frames[half..], &values[half..]);
    let (slope, _, _) = linear_fit(tail_x, tail_y);
    let mean = tail_y.iter().sum::<f64>() / tail_y.len() as f64;
    let tail_growth = if mean > 0.0 {
        slope * tail_y.len() as f64 / mean
    } else {
        0.0
    };

    let class = if tail_growth.abs() < BOUNDED_TAIL_GROWTH {
        GrowthClass::Bounded
    } else if exponent >= LINEAR_EXPONENT {
        GrowthClass::Linear
    } else if exponent <= SUBLINEAR_EXPONENT {
        GrowthClass::Sublinear
    } else {
        GrowthClass::Indeterminate
    };
    Ok(GrowthFit {
        class,
        exponent,
        r2,
        tail_growth,
    })
}

/// Largest per-frame cost over the median per-frame cost.
pub fn spike_ratio(costs: &[u64]) -> Result<f64, HarnessError> {
    if costs.is_empty() {
        return Err(HarnessError::EmptyTrace);
    }
    let mut sorted = costs.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    Ok(sorted[n - 1] as f64 / median.max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_fit_recovers_a_line() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let (s, b, r2) = linear_fit(&xs, &ys);
        assert!((s - 3.0).abs() < 1e-12 && (b + 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classes() {
        let linear: Vec<f64> = (1..=1000).map(|f| 2.0 * f as f64).collect();
        assert_eq!(fit_series(&linear).unwrap().class, GrowthClass::Linear);
        let root: Vec<f64> = (1..=1000).map(|f| (f as f64).sqrt()).collect();
        let fit = fit_series(&root).unwrap();
        assert_eq!(fit.class, GrowthClass::Sublinear);
        assert!((fit.exponent - 0.5).abs() < 1e-9);
        let capped: Vec<f64> = (1..=1000).map(|f| (f as f64).min(50.0)).collect();
        assert_eq!(fit_series(&capped).unwrap().class, GrowthClass::Bounded);
        assert_eq!(fit_series(&[7.0; 200]).unwrap().class, GrowthClass::Bounded);
    }

    #[test]
    fn short_series_is_refused() {
        assert!(matches!(fit_series(&[1.0; 99]), Err(HarnessError::TooFewFrames { .. })));
    }

    #[test]
    fn spike_ratio_uses_median() {
        assert_eq!(spike_ratio(&[1, 1, 1, 10]).unwrap(), 10.0);
        assert_eq!(spike_ratio(&[2, 4, 6]).unwrap(), 1.5);
        assert!(spike_ratio(&[]).is_err());
    }
}
