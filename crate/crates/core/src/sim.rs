//! Monte Carlo ground truth for the first-extinction time.
//!
//! Two simulators:
//!
//! * multinomial resampling, `p(t+1) = n(t) / N` with
//!   `n(t) ~ Multinomial(N, p(t))`, counting the first draw as `tau = 1`;
//! * Euler–Maruyama on `M` independent paths of `dp = sqrt(p / N) dW`,
//!   absorbed at 0, with the crossing time interpolated inside the step.
//!
//! Trials use [`crate::rng::stream_rng`] keyed by the trial index and are
//! merged in index order, so the output does not depend on the thread count.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Binomial, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Distribution;
use crate::rng::{stream_rng, Domain};

pub const DEFAULT_MAX_STEPS: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sample size N must be at least 1")]
    ZeroSamples,
    #[error("need at least one trial")]
    NoTrials,
    #[error("invalid SDE options: {0}")]
    InvalidOptions(&'static str),
    #[error("malformed sample CSV at line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Resampling,
    Sde,
    Markov,
}

/// One trial. A censored trial hit the step cap and has no `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionRecord {
    pub trial_index: u64,
    pub tau: Option<f64>,
    pub extinct_state: Option<usize>,
    pub source: Source,
}

impl ExtinctionRecord {
    pub fn censored(&self) -> bool {
        self.tau.is_none()
    }

    fn hit(trial_index: u64, tau: f64, state: usize, source: Source) -> Self {
        Self {
            trial_index,
            tau: Some(tau),
            extinct_state: Some(state),
            source,
        }
    }

    fn cut(trial_index: u64, source: Source) -> Self {
        Self {
            trial_index,
            tau: None,
            extinct_state: None,
            source,
        }
    }
}

/// Records from one source and one `(dist, N)` setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtinctionSampleSet {
    pub records: Vec<ExtinctionRecord>,
    pub dist: Distribution,
    pub n_samples: u64,
    pub seed: u64,
    pub source: Source,
}

impl ExtinctionSampleSet {
    /// Extinction times of the uncensored trials, in trial order.
    pub fn taus(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.tau).collect()
    }

    pub fn censored_count(&self) -> usize {
        self.records.iter().filter(|r| r.censored()).count()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeOptions {
    /// Reporting step, in iterations.
    pub dt: f64,
    /// Euler substeps per `dt`; the integration step is `dt / substeps`.
    pub substeps: u32,
    /// Cap on the number of `dt` steps.
    pub max_steps: u64,
}

impl Default for SdeOptions {
    fn default() -> Self {
        Self {
            dt: 1.0,
            substeps: 1,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl SdeOptions {
    fn check(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidOptions("dt must be positive"));
        }
        if self.substeps == 0 {
            return Err(SimError::InvalidOptions("substeps must be at least 1"));
        }
        Ok(())
    }
}

/// Draws `Multinomial(total, weights / weight_sum)` into `out` by
/// conditional binomials: `n_i ~ Bin(remaining, w_i / remaining_weight)`.
pub fn multinomial_into<R: Rng + ?Sized>(rng: &mut R, total: u64, weights: &[f64], out: &mut [u64]) {
    debug_assert_eq!(weights.len(), out.len());
    let mut remaining = total;
    let mut rest: f64 = weights.iter().sum();
    let last = weights.len() - 1;
    for (i, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            out[i] = 0;
            continue;
        }
        if i == last {
            out[i] = remaining;
            remaining = 0;
            continue;
        }
        let p = if rest > 0.0 { (w / rest).clamp(0.0, 1.0) } else { 0.0 };
        let k = if p >= 1.0 {
            remaining
        } else if p <= 0.0 {
            0
        } else {
            rng.sample(Binomial::new(remaining, p).expect("p in (0, 1)"))
        };
        out[i] = k;
        remaining -= k;
        rest -= w;
    }
}

fn check_n(n_samples: u64) -> Result<(), SimError> {
    if n_samples == 0 {
        Err(SimError::ZeroSamples)
    } else {
        Ok(())
    }
}

/// Runs one resampling trial until some state draws zero samples.
pub fn resample_trial(
    dist: &Distribution,
    n_samples: u64,
    seed: u64,
    trial: u64,
    max_steps: u64,
) -> Result<ExtinctionRecord, SimError> {
    check_n(n_samples)?;
    if let Some(i) = dist.first_zero() {
        return Ok(ExtinctionRecord::hit(trial, 0.0, i, Source::Resampling));
    }
    let mut rng = stream_rng(seed, Domain::Resampling, trial);
    let m = dist.m();
    let mut counts = vec![0u64; m];
    multinomial_into(&mut rng, n_samples, dist.probs(), &mut counts);
    let mut weights = vec![0.0; m];
    for step in 1..=max_steps {
        if step > 1 {
            for (w, &c) in weights.iter_mut().zip(&counts) {
                *w = c as f64;
            }
            multinomial_into(&mut rng, n_samples, &weights, &mut counts);
        }
        debug_assert_eq!(counts.iter().sum::<u64>(), n_samples);
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Ok(ExtinctionRecord::hit(trial, step as f64, i, Source::Resampling));
        }
    }
    Ok(ExtinctionRecord::cut(trial, Source::Resampling))
}

/// Independent resampling trials `0..trials`.
pub fn resample_many(
    dist: &Distribution,
    n_samples: u64,
    trials: u64,
    seed: u64,
    max_steps: u64,
) -> Result<ExtinctionSampleSet, SimError> {
    check_n(n_samples)?;
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let records = (0..trials)
        .into_par_iter()
        .map(|t| resample_trial(dist, n_samples, seed, t, max_steps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExtinctionSampleSet {
        records,
        dist: dist.clone(),
        n_samples,
        seed,
        source: Source::Resampling,
    })
}

/// Integrates the `M` independent square-root paths until the first one is
/// absorbed.
///
/// Each path moves by `sqrt(max(p, 0) h / N) z`; the first time a path
/// reaches `p <= 0` it is absorbed, and the crossing time is linearly
/// interpolated inside the step.
pub fn sde_trial(
    dist: &Distribution,
    n_samples: u64,
    opts: &SdeOptions,
    seed: u64,
    trial: u64,
) -> Result<ExtinctionRecord, SimError> {
    check_n(n_samples)?;
    opts.check()?;
    if let Some(i) = dist.first_zero() {
        return Ok(ExtinctionRecord::hit(trial, 0.0, i, Source::Sde));
    }
    let mut rng = stream_rng(seed, Domain::Sde, trial);
    let h = opts.dt / opts.substeps as f64;
    let noise_scale = (h / n_samples as f64).sqrt();
    let mut p = dist.probs().to_vec();
    let total_steps = opts.max_steps.saturating_mul(opts.substeps as u64);
    for step in 0..total_steps {
        let t0 = step as f64 * h;
        let mut first: Option<(f64, usize)> = None;
        for (i, pi) in p.iter_mut().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            let next = *pi + (pi.max(0.0)).sqrt() * noise_scale * z;
            if next <= 0.0 {
                let frac = *pi / (*pi - next);
                let t = t0 + h * frac;
                if first.is_none_or(|(tf, _)| t < tf) {
                    first = Some((t, i));
                }
                *pi = 0.0;
            } else {
                *pi = next;
            }
        }
        if let Some((t, i)) = first {
            return Ok(ExtinctionRecord::hit(trial, t, i, Source::Sde));
        }
    }
    Ok(ExtinctionRecord::cut(trial, Source::Sde))
}

/// Independent SDE trials `0..trials`.
pub fn sde_many(
    dist: &Distribution,
    n_samples: u64,
    opts: &SdeOptions,
    trials: u64,
    seed: u64,
) -> Result<ExtinctionSampleSet, SimError> {
    check_n(n_samples)?;
    opts.check()?;
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let records = (0..trials)
        .into_par_iter()
        .map(|t| sde_trial(dist, n_samples, opts, seed, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ExtinctionSampleSet {
        records,
        dist: dist.clone(),
        n_samples,
        seed,
        source: Source::Sde,
    })
}

pub const CSV_HEADER: &str = "trial,tau,extinct_state,censored";

/// Writes `trial,tau,extinct_state,censored`, one row per record. Censored
/// rows leave `tau` and `extinct_state` empty.
pub fn write_csv<W: Write>(records: &[ExtinctionRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        match (r.tau, r.extinct_state) {
            (Some(t), Some(s)) => writeln!(w, "{},{},{},false", r.trial_index, t, s)?,
            _ => writeln!(w, "{},,,true", r.trial_index)?,
        }
    }
    Ok(())
}

/// Parses the format written by [`write_csv`].
pub fn read_csv<R: BufRead>(r: R, source: Source) -> Result<Vec<ExtinctionRecord>, SimError> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != CSV_HEADER {
                return Err(SimError::Csv {
                    line: lineno,
                    msg: format!("expected header `{CSV_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| SimError::Csv {
            line: lineno,
            msg: msg.to_string(),
        };
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let trial_index = cols[0].parse().map_err(|_| bad("bad trial index"))?;
        let censored: bool = cols[3].parse().map_err(|_| bad("bad censored flag"))?;
        let rec = if censored {
            ExtinctionRecord::cut(trial_index, source)
        } else {
            let tau: f64 = cols[1].parse().map_err(|_| bad("bad tau"))?;
            if !(tau >= 0.0 && tau.is_finite()) {
                return Err(bad("tau must be finite and nonnegative"));
            }
            let state = cols[2].parse().map_err(|_| bad("bad extinct_state"))?;
            ExtinctionRecord::hit(trial_index, tau, state, source)
        };
        out.push(rec);
    }
    if out.is_empty() && !matches!(source, Source::Markov) {
        return Err(SimError::Csv {
            line: 1,
            msg: "no records".into(),
        });
    }
    Ok(out)
}
