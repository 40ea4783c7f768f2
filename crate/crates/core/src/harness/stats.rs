//! Welch's two-tailed t-test for comparing per-seed metric lists.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least 2 samples per side, got {a} and {b}")]
    TooFewSamples { a: usize, b: usize },
    #[error("samples must be finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub degrees_of_freedom: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance t-test, two-tailed. Identical inputs give
/// t = 0, p = 1 rather than 0/0.
pub fn compare_runs(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;

    if sa + sb == 0.0 {
        // Zero variance on both sides: equal means are indistinguishable,
        // different means are separated with certainty.
        let (t, p) = if ma == mb {
            (0.0, 1.0)
        } else if ma > mb {
            (f64::INFINITY, 0.0)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
        return Ok(TTestResult {
            t,
            p,
            degrees_of_freedom: (a.len() + b.len() - 2) as f64,
            significant: p < SIGNIFICANCE_LEVEL,
        });
    }

    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(TTestResult {
        t,
        p,
        degrees_of_freedom: df,
        significant: p < SIGNIFICANCE_LEVEL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_lists_are_not_significant() {
        let r = compare_runs(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn full_separation_is_significant() {
        let a = [10.0, 10.001, 9.999];
        let b = [0.0, 0.001, -0.001];
        let r = compare_runs(&a, &b).unwrap();
        assert!(r.p < 1e-6, "p = {}", r.p);
        assert!(r.significant);
    }

    #[test]
    fn zero_variance_but_different_means() {
        let r = compare_runs(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert!(r.t.is_infinite() && r.t > 0.0);
        assert_eq!(r.p, 0.0);
        assert!(r.significant);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            compare_runs(&[1.0], &[1.0, 2.0]),
            Err(StatsError::TooFewSamples { a: 1, b: 2 })
        ));
    }

    #[test]
    fn textbook_pair_matches_reference() {
        // Reference values computed independently with SciPy:
        // scipy.stats.ttest_ind([2.1,2.5,2.3,2.2],[1.9,2.0,2.1,1.8], equal_var=False)
        let a = [2.1, 2.5, 2.3, 2.2];
        let b = [1.9, 2.0, 2.1, 1.8];
        let r = compare_runs(&a, &b).unwrap();
        assert!((r.t - 3.0361458822299396).abs() < 1e-4, "t = {}", r.t);
        assert!((r.p - 0.025081308884364682).abs() < 1e-4, "p = {}", r.p);
        assert!((r.degrees_of_freedom - 5.584615384615387).abs() < 1e-4);
        assert!(r.significant);
    }
}
