//! Pattern-frequency statistics: mean, asymptotic variance, normality of the
//! normalized sums, and the skew-product mixing bound.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::environment::MixingProfile;
use crate::error::{input, Error, Result};
use crate::rng::{domain, keyed_uniform};
use crate::trajectory::Pattern;

/// Per-trajectory indicators `δN_k`, `k = 1..=n_steps`.
#[derive(Clone, Debug)]
pub struct IndicatorPanel {
    n_steps: usize,
    rows: Vec<Vec<u8>>,
}

impl IndicatorPanel {
    pub fn new<S: AsRef<[usize]> + Sync>(records: &[S], b: &Pattern, n_steps: usize) -> Result<Self> {
        if records.is_empty() {
            return input("no trajectories");
        }
        if n_steps == 0 {
            return input("n_steps must be positive");
        }
        let need = n_steps + b.len() - 1;
        if let Some(r) = records.iter().find(|r| r.as_ref().len() < need) {
            return input(format!("record of length {} shorter than n + m − 1 = {need}", r.as_ref().len()));
        }
        let rows = records.par_iter().map(|r| (0..n_steps).map(|k| b.matches_at(r.as_ref(), k) as u8).collect()).collect();
        Ok(Self { n_steps, rows })
    }

    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self> {
        let n_steps = rows.first().map(|r| r.len()).unwrap_or(0);
        if n_steps == 0 || rows.iter().any(|r| r.len() != n_steps) {
            return input("indicator rows must be nonempty and of equal length");
        }
        Ok(Self { n_steps, rows })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_trajectories(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    /// `S_n` for each trajectory.
    pub fn partial_sums(&self, n: usize) -> Vec<u64> {
        self.rows.iter().map(|r| r[..n].iter().map(|&x| x as u64).sum()).collect()
    }

    fn subset(&self, idx: std::ops::Range<usize>) -> Self {
        Self { n_steps: self.n_steps, rows: self.rows[idx].to_vec() }
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if n > 1.0 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Time-and-trajectory average of `δN_k` with a trajectory-level standard error.
pub fn estimate_mu(panel: &IndicatorPanel) -> Result<(f64, f64)> {
    if panel.rows.is_empty() {
        return input("no trajectories");
    }
    let per: Vec<f64> = panel.rows.iter().map(|r| r.iter().map(|&x| x as f64).sum::<f64>() / panel.n_steps as f64).collect();
    let (m, sd) = mean_sd(&per);
    Ok((m, sd / (per.len() as f64).sqrt()))
}

/// `⌈5 log₁₀ n⌉`.
pub fn default_lag_window(n_steps: usize) -> usize {
    (5.0 * (n_steps as f64).log10()).ceil().max(1.0) as usize
}

/// Batch length used when none is configured: the largest divisor of
/// `n_steps` not exceeding `n_steps / 20`.
pub fn default_batch_len(n_steps: usize) -> usize {
    let target = (n_steps / 20).max(1);
    (1..=target).rev().find(|b| n_steps.is_multiple_of(*b)).unwrap_or(1)
}

/// `γ(0) + 2 Σ_{k=1}^{K} γ(k)` from empirical autocovariances pooled over
/// trajectories, clamped at 0.
pub fn estimate_sigma2_series(panel: &IndicatorPanel, mu: f64, lag_window: usize) -> Result<f64> {
    let n = panel.n_steps;
    if lag_window >= n {
        return input(format!("lag window {lag_window} must be below n_steps {n}"));
    }
    let gammas: Vec<f64> = (0..=lag_window)
        .into_par_iter()
        .map(|k| {
            let total: f64 = panel.rows.iter().map(|r| (0..n - k).map(|t| (r[t] as f64 - mu) * (r[t + k] as f64 - mu)).sum::<f64>()).sum();
            total / ((n - k) * panel.rows.len()) as f64
        })
        .collect();
    Ok((gammas[0] + 2.0 * gammas[1..].iter().sum::<f64>()).max(0.0))
}

/// `batch_len` times the mean square deviation of batch means from `mu`.
pub fn estimate_sigma2_batch(panel: &IndicatorPanel, mu: f64, batch_len: usize) -> Result<f64> {
    let n = panel.n_steps;
    if batch_len == 0 || !n.is_multiple_of(batch_len) {
        return input(format!("batch length {batch_len} must divide n_steps {n}"));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for r in &panel.rows {
        for chunk in r.chunks(batch_len) {
            let m = chunk.iter().map(|&x| x as f64).sum::<f64>() / batch_len as f64;
            acc += (m - mu).powi(2);
            count += 1;
        }
    }
    Ok((batch_len as f64 * acc / count as f64).max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct VariancePoint {
    pub n: usize,
    /// Sample variance of `(S_n − nμ)/√n` across trajectories.
    pub variance: f64,
    pub stderr: f64,
}

pub fn variance_convergence_check(panel: &IndicatorPanel, mu: f64, n_grid: &[usize]) -> Result<Vec<VariancePoint>> {
    if n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return input("n_grid must be increasing");
    }
    n_grid
        .iter()
        .map(|&n| {
            if n == 0 || n > panel.n_steps {
                return input(format!("horizon {n} outside 1..={}", panel.n_steps));
            }
            let x = normalized_sums(panel, n, mu, None);
            let k = x.len() as f64;
            let m = x.iter().sum::<f64>() / k;
            let c2: Vec<f64> = x.iter().map(|v| (v - m).powi(2)).collect();
            let var = c2.iter().sum::<f64>() / (k - 1.0).max(1.0);
            let m4 = c2.iter().map(|v| v * v).sum::<f64>() / k;
            Ok(VariancePoint { n, variance: var, stderr: ((m4 - var * var).max(0.0) / k).sqrt() })
        })
        .collect()
}

/// `(S_n − nμ)/√n` per trajectory. With `jitter_seed`, each sum first gets
/// an independent `U(−½, ½)` offset, which removes the lattice structure of
/// integer counts and adds only `1/(12n)` to the variance.
pub fn normalized_sums(panel: &IndicatorPanel, n: usize, mu: f64, jitter_seed: Option<u64>) -> Vec<f64> {
    let sq = (n as f64).sqrt();
    panel
        .partial_sums(n)
        .into_iter()
        .enumerate()
        .map(|(t, s)| {
            let j = jitter_seed.map_or(0.0, |seed| keyed_uniform(seed, domain::JITTER, t as u64, 0) - 0.5);
            (s as f64 + j - n as f64 * mu) / sq
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct NormalityResult {
    pub ks_statistic: f64,
    pub ks_pvalue: f64,
    pub ad_statistic: f64,
    pub ad_pvalue: f64,
}

/// Kolmogorov–Smirnov (primary) and Anderson–Darling (secondary) tests
/// against `𝒩(0, σ²)`. A non-positive `σ²` is routed to
/// [`degenerate_check`] and reported as `None`.
pub fn normality_test(samples: &[f64], sigma2: f64) -> Result<Option<NormalityResult>> {
    if samples.is_empty() {
        return input("no samples");
    }
    if !(sigma2 > 0.0) {
        return Ok(None);
    }
    let normal = Normal::new(0.0, sigma2.sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let cdf: Vec<f64> = x.iter().map(|&v| normal.cdf(v)).collect();
    let d = cdf.iter().enumerate().map(|(i, &f)| (f - i as f64 / n).max((i + 1) as f64 / n - f)).fold(0.0, f64::max);
    let ks_pvalue = kolmogorov_pvalue(d, x.len());
    let tiny = 1e-300;
    let s: f64 = (0..x.len()).map(|i| (2 * i + 1) as f64 * (cdf[i].max(tiny).ln() + (1.0 - cdf[x.len() - 1 - i]).max(tiny).ln())).sum();
    let ad = -n - s / n;
    Ok(Some(NormalityResult { ks_statistic: d, ks_pvalue, ad_statistic: ad, ad_pvalue: 1.0 - anderson_darling_cdf(ad) }))
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

/// Limiting distribution of the Anderson–Darling statistic for a fully
/// specified null (Marsaglia and Marsaglia's approximation).
fn anderson_darling_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 2.0 {
        (-1.2337141 / z).exp() / z.sqrt() * (2.00012 + (0.247105 - (0.0649821 - (0.0347962 - (0.011672 - 0.00168691 * z) * z) * z) * z) * z)
    } else {
        (-(1.0776 - (2.30695 - (0.43424 - (0.082433 - (0.008056 - 0.0003146 * z) * z) * z) * z) * z).exp()).exp()
    }
    .clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct DegenerateCheck {
    pub max_abs: f64,
    pub threshold: f64,
    pub mean_square: f64,
    pub pass: bool,
}

/// Zero-variance branch: all `|(S_n − nμ)/√n| ≤ n^{-1/4}`.
pub fn degenerate_check(samples: &[f64], n: usize) -> DegenerateCheck {
    let max_abs = samples.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let threshold = (n as f64).powf(-0.25);
    let mean_square = samples.iter().map(|x| x * x).sum::<f64>() / samples.len().max(1) as f64;
    DegenerateCheck { max_abs, threshold, mean_square, pass: max_abs <= threshold }
}

/// `min_{1≤m<n} 8α(n−m) + r_{n−1} + 2r_m`, capped at 1/4.
pub fn skew_mixing_bound(alpha: &MixingProfile, r: &dyn Fn(usize) -> f64, n: usize) -> Result<f64> {
    if n < 2 {
        return input("skew mixing bound needs n ≥ 2");
    }
    let best = (1..n).map(|m| 8.0 * alpha.alpha(n - m) + r(n - 1) + 2.0 * r(m)).fold(f64::INFINITY, f64::min);
    Ok(best.min(0.25))
}

#[derive(Clone, Debug, Serialize)]
pub struct SummabilityReport {
    /// Exponent used in `Σ ᾱ(n)^{δ/(2+δ)}`; fixed at 1 as a representative value.
    pub delta: f64,
    pub n_max: usize,
    pub partial_sum: f64,
    /// Geometric tail estimate beyond `n_max`.
    pub tail_estimate: f64,
    pub converged: bool,
}

/// Numerical summability of `ᾱ(n)^{δ/(2+δ)}` for `n = 2..=n_max`.
pub fn summability(alpha: &MixingProfile, r: &dyn Fn(usize) -> f64, n_max: usize) -> Result<SummabilityReport> {
    if n_max < 8 {
        return input("n_max must be at least 8");
    }
    let delta = 1.0;
    let e = delta / (2.0 + delta);
    let terms: Vec<f64> = (2..=n_max).map(|n| skew_mixing_bound(alpha, r, n).map(|b| b.powf(e))).collect::<Result<_>>()?;
    let partial_sum: f64 = terms.iter().sum();
    let last = *terms.last().unwrap();
    let mid = terms[terms.len() / 2];
    let (tail_estimate, converged) = if last == 0.0 {
        (0.0, true)
    } else if mid > 0.0 {
        let steps = (terms.len() - 1 - terms.len() / 2) as f64;
        let ratio = (last / mid).powf(1.0 / steps);
        if ratio < 1.0 {
            let tail = last * ratio / (1.0 - ratio);
            (tail, tail <= 1e-3 * partial_sum.max(1.0))
        } else {
            (f64::INFINITY, false)
        }
    } else {
        (f64::INFINITY, false)
    };
    Ok(SummabilityReport { delta, n_max, partial_sum, tail_estimate, converged })
}

#[derive(Clone, Debug, Serialize)]
pub struct CltOptions {
    pub lag_window: Option<usize>,
    pub batch_len: Option<usize>,
    /// Seed for the lattice jitter applied before the normality test.
    pub jitter_seed: Option<u64>,
    pub variance_grid: Vec<usize>,
    /// Number of trajectory groups used for the standard error of `Σ̂²`.
    pub n_groups: usize,
}

impl Default for CltOptions {
    fn default() -> Self {
        Self { lag_window: None, batch_len: None, jitter_seed: Some(0), variance_grid: Vec::new(), n_groups: 20 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub mu_hat: f64,
    pub mu_stderr: f64,
    pub sigma2_series: f64,
    pub sigma2_series_stderr: f64,
    pub sigma2_batch: f64,
    pub lag_window: usize,
    pub batch_len: usize,
    #[serde(skip)]
    pub normalized_samples: Vec<f64>,
    pub normality: Option<NormalityResult>,
    pub degenerate: Option<DegenerateCheck>,
    pub variance_check: Vec<VariancePoint>,
    pub n_steps: usize,
    pub n_trajectories: usize,
}

impl CltReport {
    pub fn ks_statistic(&self) -> Option<f64> {
        self.normality.as_ref().map(|r| r.ks_statistic)
    }

    pub fn ks_pvalue(&self) -> Option<f64> {
        self.normality.as_ref().map(|r| r.ks_pvalue)
    }
}

/// Full pipeline on one indicator panel.
pub fn clt_report(panel: &IndicatorPanel, opts: &CltOptions) -> Result<CltReport> {
    let n = panel.n_steps();
    let (mu_hat, mu_stderr) = estimate_mu(panel)?;
    let lag_window = opts.lag_window.unwrap_or_else(|| default_lag_window(n)).min(n - 1);
    let batch_len = opts.batch_len.unwrap_or_else(|| default_batch_len(n));
    let sigma2_series = estimate_sigma2_series(panel, mu_hat, lag_window)?;
    let sigma2_batch = estimate_sigma2_batch(panel, mu_hat, batch_len)?;
    let groups = opts.n_groups.clamp(2, panel.n_trajectories().max(2));
    let sigma2_series_stderr = if panel.n_trajectories() >= groups {
        let size = panel.n_trajectories() / groups;
        let est: Vec<f64> = (0..groups)
            .map(|g| estimate_sigma2_series(&panel.subset(g * size..(g + 1) * size), mu_hat, lag_window))
            .collect::<Result<_>>()?;
        mean_sd(&est).1 / (groups as f64).sqrt()
    } else {
        f64::NAN
    };
    let normalized_samples = normalized_sums(panel, n, mu_hat, opts.jitter_seed);
    let (normality, degenerate) = if sigma2_series > 0.0 {
        (normality_test(&normalized_samples, sigma2_series)?, None)
    } else {
        (None, Some(degenerate_check(&normalized_sums(panel, n, mu_hat, None), n)))
    };
    let mut grid = opts.variance_grid.clone();
    if grid.is_empty() {
        grid = vec![n / 8, n / 4, n / 2, n].into_iter().filter(|&k| k > 0).collect();
        grid.dedup();
    }
    let variance_check = variance_convergence_check(panel, mu_hat, &grid)?;
    Ok(CltReport {
        mu_hat,
        mu_stderr,
        sigma2_series,
        sigma2_series_stderr,
        sigma2_batch,
        lag_window,
        batch_len,
        normalized_samples,
        normality,
        degenerate,
        variance_check,
        n_steps: n,
        n_trajectories: panel.n_trajectories(),
    })
}
