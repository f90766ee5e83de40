//! Empirical CDFs, Kolmogorov–Smirnov tests and summary statistics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("standard error is zero or undefined (n = {0})")]
    DegenerateStd(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMode {
    OneSample,
    TwoSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_stat: f64,
    pub p_value: f64,
    pub n_eff: f64,
    pub mode: KsMode,
    /// Set when a sample has fewer than two points; the p-value is then
    /// formally defined but carries no information.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
    pub count: usize,
    /// `count == 1`: `std` and `sem` are reported as 0.
    pub degenerate: bool,
}

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

fn sorted_copy(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self, StatsError> {
        Ok(Self {
            sorted: sorted_copy(samples)?,
        })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `#(samples <= x) / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    /// Distinct jump points with the CDF value just after each.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => out.push((x, f)),
            }
        }
        out
    }
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ_{k≥1} (-1)^{k-1} e^{-2 k² λ²}`.
///
/// For small `λ` the alternating series converges slowly, so the
/// equivalent theta-function form
/// `1 - (sqrt(2π) / λ) Σ_{k≥1} e^{-(2k-1)² π² / (8 λ²)}` is summed instead.
pub fn kolmogorov_pvalue(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let q = if lambda < 1.18 {
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=50u32 {
            let j = (2 * k - 1) as f64;
            let t = (-j * j * c).exp();
            s += t;
            if t < 1e-16 * s {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s
    } else {
        let mut s = 0.0;
        for k in 1..=100u32 {
            let kk = k as f64;
            let t = (-2.0 * kk * kk * lambda * lambda).exp();
            s += if k % 2 == 1 { t } else { -t };
            if t < 1e-12 {
                break;
            }
        }
        2.0 * s
    };
    q.clamp(0.0, 1.0)
}

/// `(sqrt(n) + 0.12 + 0.11 / sqrt(n)) * d`.
fn corrected_lambda(n_eff: f64, d: f64) -> f64 {
    let sn = n_eff.sqrt();
    (sn + 0.12 + 0.11 / sn) * d
}

/// One-sample KS statistic and p-value against a continuous CDF.
///
/// Both sides of each empirical jump are checked, so tied samples (integer
/// extinction times) are handled.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<KsResult, StatsError> {
    let sorted = sorted_copy(samples)?;
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x).clamp(0.0, 1.0);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above.abs()).max(below.abs());
    }
    let d = d.min(1.0);
    Ok(KsResult {
        d_stat: d,
        p_value: kolmogorov_pvalue(corrected_lambda(n, d)),
        n_eff: n,
        mode: KsMode::OneSample,
        degenerate: sorted.len() < 2,
    })
}

/// Two-sample KS statistic `sup |F_a - F_b|` with the effective size
/// `n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < na && j < nb {
        let x = a[i].min(b[j]);
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult {
        d_stat: d,
        p_value: if d == 0.0 {
            1.0
        } else {
            kolmogorov_pvalue(corrected_lambda(n_eff, d))
        },
        n_eff,
        mode: KsMode::TwoSample,
        degenerate: na < 2 || nb < 2,
    })
}

/// Mean, unbiased standard deviation and standard error of the mean.
pub fn summarize(samples: &[f64]) -> Result<SampleSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(SampleSummary {
            mean,
            std: 0.0,
            sem: 0.0,
            count: 1,
            degenerate: true,
        });
    }
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    Ok(SampleSummary {
        mean,
        std,
        sem: std / (n as f64).sqrt(),
        count: n,
        degenerate: false,
    })
}

/// `(mean_sim - mean_theory) / sem`; `|z| <= 1` counts as compatible.
pub fn z_compat(sim: &SampleSummary, theory_mean: f64) -> Result<f64, StatsError> {
    if sim.count < 2 || !(sim.sem > 0.0) {
        return Err(StatsError::DegenerateStd(sim.count));
    }
    Ok((sim.mean - theory_mean) / sim.sem)
}
