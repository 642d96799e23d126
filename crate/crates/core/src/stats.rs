//! Estimators and goodness-of-fit tests shared by the simulators and the
//! test suites.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, std_error, n }
    }

    /// `|mean - target| <= k * std_error`.
    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }

    pub fn relative_error(&self, target: f64) -> f64 {
        ((self.mean - target) / target).abs()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Result of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

impl KsResult {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value > level
    }
}

/// Asymptotic Kolmogorov survival function `P(K > x)`.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `sample` against a continuous cdf.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> KsResult {
    let n = sample.len();
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let en = nf.sqrt();
    let p = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    KsResult {
        statistic: d,
        p_value: p,
        n,
    }
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = xa[i].min(xb[j]);
        while i < na && xa[i] <= x {
            i += 1;
        }
        while j < nb && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let en = ((na * nb) as f64 / (na + nb) as f64).sqrt();
    let p = kolmogorov_survival((en + 0.12 + 0.11 / en) * d);
    KsResult {
        statistic: d,
        p_value: p,
        n: na + nb,
    }
}

/// Kolmogorov distance between the empirical cdf of `sample` and `cdf`.
pub fn kolmogorov_distance<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    ks_one_sample(sample, cdf).statistic
}

/// Total-variation distance `0.5 * sum |p - q|` over a common support; the
/// shorter vector is padded with zeros.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let n = p.len().max(q.len());
    (0..n)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
        * 0.5
}

/// Pearson correlation of two equal-length samples.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Unbiased sample covariance.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
}

/// Sample covariance with a delete-one jackknife standard error.
pub fn covariance_jackknife(x: &[f64], y: &[f64]) -> Result<Estimate> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Usage("covariance samples differ in length".into()));
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 replicas for a jackknife error, got {n}"
        )));
    }
    let full = covariance(x, y);
    let nf = n as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    // leave-one-out covariance from running sums
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let m = nf - 1.0;
            let ax = (sx - x[i]) / m;
            let ay = (sy - y[i]) / m;
            ((sxy - x[i] * y[i]) - m * ax * ay) / (m - 1.0)
        })
        .collect();
    let loo_mean = mean(&loo);
    let var = (nf - 1.0) / nf * loo.iter().map(|c| (c - loo_mean).powi(2)).sum::<f64>();
    Ok(Estimate {
        mean: full,
        std_error: var.sqrt(),
        n,
    })
}

/// Pearson chi-square test of independence on a contingency table.
/// Rows or columns with zero total are dropped.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, f64) {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    let ncol = rows.first().map(|r| r.len()).unwrap_or(0);
    let col_tot: Vec<f64> = (0..ncol).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let keep: Vec<usize> = (0..ncol).filter(|&j| col_tot[j] > 0.0).collect();
    let total: f64 = col_tot.iter().sum();
    let mut stat = 0.0;
    for r in &rows {
        let rt: f64 = r.iter().sum();
        for &j in &keep {
            let e = rt * col_tot[j] / total;
            stat += (r[j] - e).powi(2) / e;
        }
    }
    let dof = ((rows.len().max(1) - 1) * (keep.len().max(1) - 1)).max(1) as f64;
    let p = 1.0 - ChiSquared::new(dof).expect("positive dof").cdf(stat);
    (stat, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn kolmogorov_survival_reference_points() {
        // tabulated critical values of the Kolmogorov distribution
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_accepts_uniform_rejects_shifted() {
        let mut rng = seeded(11);
        let xs: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_one_sample(&xs, |x| x.clamp(0.0, 1.0)).passes(0.01));
        assert!(!ks_one_sample(&xs, |x| (x - 0.05).clamp(0.0, 1.0)).passes(0.01));
    }

    #[test]
    fn ks_two_sample_same_law() {
        let mut rng = seeded(12);
        let a: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..3000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_two_sample(&a, &b).passes(0.01));
        let c: Vec<f64> = b.iter().map(|x| x * 1.1).collect();
        assert!(!ks_two_sample(&a, &c).passes(0.01));
    }

    #[test]
    fn jackknife_matches_covariance() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.1, 5.9, 8.2, 9.9];
        let e = covariance_jackknife(&x, &y).unwrap();
        assert!((e.mean - covariance(&x, &y)).abs() < 1e-14);
        assert!(e.std_error > 0.0);
        assert!(covariance_jackknife(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn total_variation_pads() {
        assert!((total_variation(&[0.5, 0.5], &[1.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_square_detects_dependence() {
        let indep = vec![vec![100.0, 200.0], vec![50.0, 100.0]];
        assert!(chi_square_independence(&indep).1 > 0.5);
        let dep = vec![vec![200.0, 10.0], vec![10.0, 200.0]];
        assert!(chi_square_independence(&dep).1 < 1e-6);
    }
}
