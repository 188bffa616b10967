//! Monte Carlo statistics: Kolmogorov-Smirnov tests, batch means,
//! normal distribution helpers.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Number of batches used for batch-means standard errors.
pub const BATCHES: usize = 20;

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    0.5 * erfc(-(x - mean) / (sd * std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Two-sided KS statistic of a sample against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// KS statistic of integer-valued samples against a discrete CDF, evaluated
/// at the support points.
pub fn ks_statistic_discrete(samples: &[i64], support: &[i64], cdf: &[f64]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_unstable();
    let n = xs.len() as f64;
    let mut idx = 0usize;
    let mut d: f64 = 0.0;
    for (s, f) in support.iter().zip(cdf) {
        while idx < xs.len() && xs[idx] <= *s {
            idx += 1;
        }
        d = d.max((idx as f64 / n - f).abs());
    }
    d
}

/// Asymptotic Kolmogorov survival function with Stephens' small-sample
/// correction: P(D_n > d).
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Result of a KS test at a given significance level.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub samples: usize,
}

impl KsOutcome {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> KsOutcome {
    let d = ks_statistic(samples, cdf);
    KsOutcome {
        statistic: d,
        p_value: ks_pvalue(d, samples.len()),
        samples: samples.len(),
    }
}

/// KS test of a weighted sample; the p-value uses the effective sample size
/// `(sum w)^2 / sum w^2`.
pub fn ks_test_weighted(samples: &[f64], weights: &[f64], cdf: impl Fn(f64) -> f64) -> KsOutcome {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&i, &j| samples[i].total_cmp(&samples[j]));
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    let mut d: f64 = 0.0;
    for &i in &idx {
        let f = cdf(samples[i]);
        d = d.max(f - acc / total);
        acc += weights[i];
        d = d.max(acc / total - f);
    }
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    let n_eff = (total * total / sq).round().max(1.0) as usize;
    KsOutcome {
        statistic: d,
        p_value: ks_pvalue(d, n_eff),
        samples: n_eff,
    }
}

/// Mean and batch-means standard error of a sequence in its stored order.
pub fn batch_mean_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < BATCHES {
        return Err(Error::InsufficientSamples {
            got: values.len(),
            required: BATCHES,
        });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batch_means: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let lo = b * n / BATCHES;
            let hi = (b + 1) * n / BATCHES;
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect();
    let bm = batch_means.iter().sum::<f64>() / BATCHES as f64;
    let var = batch_means.iter().map(|x| (x - bm).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((mean, (var / BATCHES as f64).sqrt()))
}

/// Binomial standard deviation of a frequency estimate.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Least-squares slope of y against x.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_helpers() {
        assert!((normal_cdf(0.0, 0.0, 1.0) - 0.5).abs() < 1e-15);
        let p = normal_cdf(1.96, 0.0, 1.0);
        assert!((p - 0.9750021048517795).abs() < 1e-11, "{p}");
        assert!((normal_pdf(0.0, 0.0, 1.0) - 0.398942280401433).abs() < 1e-12);
    }

    #[test]
    fn ks_critical_value_matches_table() {
        // the 1% critical value of sqrt(n) D is 1.6276 asymptotically
        let n = 1_000_000;
        let d = 1.6276 / (n as f64).sqrt();
        assert!((ks_pvalue(d, n) - 0.01).abs() < 2e-4);
    }

    #[test]
    fn ks_statistic_of_perfect_grid() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn weighted_ks_reduces_to_unweighted() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 500) as f64 / 500.0 + 0.001).collect();
        let a = ks_test(&xs, |x| x.clamp(0.0, 1.0));
        let b = ks_test_weighted(&xs, &vec![3.0; xs.len()], |x| x.clamp(0.0, 1.0));
        assert!((a.statistic - b.statistic).abs() < 1e-14);
        assert_eq!(b.samples, 500);
    }

    #[test]
    fn batch_means_of_constant() {
        let v = vec![2.0; 100];
        let (m, se) = batch_mean_stderr(&v).unwrap();
        assert_eq!(m, 2.0);
        assert_eq!(se, 0.0);
        assert!(batch_mean_stderr(&v[..5]).is_err());
    }
}
