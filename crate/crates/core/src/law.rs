//! Closed-form first-extinction law.
//!
//! Each state `i` is treated as an independent zero-drift square-root
//! diffusion `dp = sqrt(p / N) dW` absorbed at 0. State `i` is extinct by
//! time `tau` with probability `exp(-2 N p_i / tau)`, so the first
//! extinction time over all states has survival
//!
//! ```text
//! P(tau_min > tau) = prod_i (1 - exp(-2 N p_i / tau))
//! ```
//!
//! and mean `2N * ∫_0^∞ prod_i (1 - exp(-x p_i)) x^-2 dx` after `x = 2N / tau`.
//! The mean is evaluated by adaptive quadrature in `O(M)` per integrand
//! call, as opposed to the `O(2^M)` subset sum in [`crate::baxter`].

use std::f64::consts::LN_2;

use serde::Serialize;
use thiserror::Error;

use crate::dist::{DistError, Distribution};
use crate::numeric::DoubleDouble;
use crate::quad::{self, QuadError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("tau must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("sample size N must be at least 1")]
    ZeroSamples,
    #[error("need at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("state {0} has zero initial mass; the law needs strictly positive entries")]
    ZeroEntry(usize),
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidQuantile(f64),
    #[error("could not bracket the quantile {0}")]
    BracketFailure(f64),
    #[error("quadrature failed: {0}")]
    QuadratureFailure(#[from] QuadError),
    #[error("invalid quadrature options: {0}")]
    InvalidOptions(&'static str),
    #[error("closed form is limited to M <= {max} states in double-double arithmetic, got {m}")]
    ClosedFormRange { m: usize, max: usize },
}

impl From<DistError> for LawError {
    fn from(e: DistError) -> Self {
        match e {
            DistError::ZeroEntry(i) => LawError::ZeroEntry(i),
            DistError::TooFewStates(m) => LawError::TooFewStates(m),
            _ => LawError::InvalidProbability(f64::NAN),
        }
    }
}

/// A strictly positive initial distribution together with the number of
/// samples drawn per iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawParams {
    dist: Distribution,
    n_samples: u64,
}

impl LawParams {
    pub fn new(dist: Distribution, n_samples: u64) -> Result<Self, LawError> {
        if n_samples == 0 {
            return Err(LawError::ZeroSamples);
        }
        if dist.m() < 2 {
            return Err(LawError::TooFewStates(dist.m()));
        }
        dist.require_positive()?;
        Ok(Self { dist, n_samples })
    }

    pub fn dist(&self) -> &Distribution {
        &self.dist
    }

    pub fn n_samples(&self) -> u64 {
        self.n_samples
    }

    /// Same distribution with a different `N`.
    pub fn with_samples(&self, n_samples: u64) -> Result<Self, LawError> {
        Self::new(self.dist.clone(), n_samples)
    }

    fn two_n(&self) -> f64 {
        2.0 * self.n_samples as f64
    }

    pub fn survival(&self, tau: f64) -> Result<f64, LawError> {
        min_survival(self, tau)
    }

    pub fn cdf(&self, tau: f64) -> Result<f64, LawError> {
        min_cdf(self, tau)
    }

    pub fn pdf(&self, tau: f64) -> Result<f64, LawError> {
        min_pdf(self, tau)
    }

    /// Infallible CDF for callers that only pass positive `tau`; returns 0
    /// for `tau <= 0`.
    pub fn cdf_or_zero(&self, tau: f64) -> f64 {
        if tau > 0.0 {
            min_cdf(self, tau).unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadOptions {
    /// Absolute tolerance on the mean, in iterations.
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl QuadOptions {
    /// Defaults: `abs_tol = 1e-300 * 2N` (the relative tolerance decides),
    /// `rel_tol = 1e-10`, 2000 subdivisions.
    pub fn for_samples(n_samples: u64) -> Self {
        Self {
            abs_tol: 1e-300 * 2.0 * n_samples as f64,
            rel_tol: 1e-10,
            max_subdivisions: 2000,
        }
    }

    fn check(&self) -> Result<(), LawError> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(LawError::InvalidOptions("tolerances must be positive"));
        }
        Ok(())
    }
}

/// Mean first-extinction time with its quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub value: f64,
    pub abs_error: f64,
    pub subdivisions: usize,
}

fn check_tau(tau: f64) -> Result<(), LawError> {
    if tau > 0.0 {
        Ok(())
    } else {
        Err(LawError::NonPositiveTau(tau))
    }
}

/// `1 - exp(-y)` without cancellation for small `y`.
#[inline]
fn survival_factor(y: f64) -> f64 {
    -(-y).exp_m1()
}

/// `ln(1 - exp(-y))`, accurate at both ends.
#[inline]
fn log_survival_factor(y: f64) -> f64 {
    if y > LN_2 {
        (-(-y).exp()).ln_1p()
    } else {
        survival_factor(y).ln()
    }
}

/// `prod_i (1 - exp(-scale * w_i))`, switching to log space before the
/// running product can leave the normal range.
fn survival_product(weights: &[f64], scale: f64) -> f64 {
    let mut prod = 1.0;
    for (k, &w) in weights.iter().enumerate() {
        let factor = survival_factor(scale * w);
        if factor < 1e-300 || prod * factor < 1e-300 {
            let log: f64 = prod.ln()
                + log_survival_factor(scale * w)
                + weights[k + 1..]
                    .iter()
                    .map(|&v| log_survival_factor(scale * v))
                    .sum::<f64>();
            return log.exp();
        }
        prod *= factor;
    }
    prod
}

/// Probability that a state with initial mass `p0` is extinct by `tau`:
/// `exp(-2 n p0 / tau)`.
pub fn state_extinction_cdf(p0: f64, n: u64, tau: f64) -> Result<f64, LawError> {
    check_tau(tau)?;
    if !(0.0..=1.0).contains(&p0) {
        return Err(LawError::InvalidProbability(p0));
    }
    Ok((-2.0 * n as f64 * p0 / tau).exp())
}

/// Density of a single state's extinction time,
/// `(2 n p0 / tau^2) exp(-2 n p0 / tau)`.
pub fn state_extinction_pdf(p0: f64, n: u64, tau: f64) -> Result<f64, LawError> {
    check_tau(tau)?;
    if !(0.0..=1.0).contains(&p0) {
        return Err(LawError::InvalidProbability(p0));
    }
    let a = 2.0 * n as f64 * p0;
    let y = a / tau;
    if y > 745.0 {
        return Ok(0.0);
    }
    Ok(y / tau * (-y).exp())
}

/// `P(tau_min > tau)`.
pub fn min_survival(params: &LawParams, tau: f64) -> Result<f64, LawError> {
    check_tau(tau)?;
    Ok(survival_product(params.dist.probs(), params.two_n() / tau))
}

/// `ln P(tau_min > tau)`, accurate when the survival is close to 0 or 1.
pub fn log_min_survival(params: &LawParams, tau: f64) -> Result<f64, LawError> {
    check_tau(tau)?;
    let scale = params.two_n() / tau;
    Ok(params
        .dist
        .probs()
        .iter()
        .map(|&p| log_survival_factor(scale * p))
        .sum())
}

/// `P(tau_min <= tau)`.
pub fn min_cdf(params: &LawParams, tau: f64) -> Result<f64, LawError> {
    let s = min_survival(params, tau)?;
    if s < 0.5 {
        Ok(1.0 - s)
    } else {
        Ok(-log_min_survival(params, tau)?.exp_m1())
    }
}

/// Density of `tau_min`:
/// `sum_j (a_j / tau^2) e^{-a_j/tau} prod_{i != j} (1 - e^{-a_i/tau})`, `a_i = 2 N p_i`.
pub fn min_pdf(params: &LawParams, tau: f64) -> Result<f64, LawError> {
    let log_s = log_min_survival(params, tau)?;
    let two_n = params.two_n();
    // e^{-y} / (1 - e^{-y}) = 1 / expm1(y)
    let hazard: f64 = params
        .dist
        .probs()
        .iter()
        .map(|&p| {
            let y = two_n * p / tau;
            if y > 700.0 {
                0.0
            } else {
                y / tau / y.exp_m1()
            }
        })
        .sum();
    Ok(log_s.exp() * hazard)
}

/// Log-variable span added beyond the outermost state scales; the
/// integrand there is below `e^-40` of its plateau.
const TAIL_SPAN: f64 = 40.0;

/// `<tau_min>` by adaptive quadrature of
/// `2N ∫_0^∞ prod_i (1 - e^{-x p_i}) x^-2 dx`.
///
/// Integrates in `u = ln x`, where the integrand
/// `prod_i (1 - e^{-p_i e^u}) e^{-u}` is smooth with a knee at each
/// `u = -ln p_i`; those are the breakpoints. Between two knees it is close
/// to flat, so skewed distributions with tiny `p_min` do not hide their
/// mass in a narrow spike. Outside `[-ln p_max - 40, -ln p_min + 40]` the
/// tails are added in closed form (`e^{(M-1)u}` below, `e^{-u}` above).
pub fn mean_first_extinction(params: &LawParams, opts: &QuadOptions) -> Result<MeanEstimate, LawError> {
    opts.check()?;
    let probs = params.dist.probs();
    let m = probs.len();
    let g = |u: f64| survival_product(probs, u.exp()) * (-u).exp();
    let mut knees: Vec<f64> = probs.iter().map(|p| -p.ln()).collect();
    knees.sort_by(f64::total_cmp);
    let lo = knees[0] - TAIL_SPAN;
    let hi = knees[m - 1] + TAIL_SPAN;
    let mut breaks = vec![lo];
    for &k in &knees {
        if k - breaks[breaks.len() - 1] > 0.25 {
            breaks.push(k);
        }
    }
    if hi - breaks[breaks.len() - 1] > 0.25 {
        breaks.push(hi);
    } else {
        *breaks.last_mut().expect("nonempty") = hi;
    }
    let two_n = params.two_n();
    let r = quad::integrate(g, &breaks, opts.abs_tol / two_n, opts.rel_tol, opts.max_subdivisions)?;
    let tails = g(lo) / (m - 1) as f64 + g(hi);
    Ok(MeanEstimate {
        value: (r.value + tails) * two_n,
        abs_error: r.abs_error * two_n,
        subdivisions: r.subdivisions,
    })
}

/// Solves `min_cdf(tau) = q` by geometric bracketing and bisection.
pub fn quantile(params: &LawParams, q: f64) -> Result<f64, LawError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(LawError::InvalidQuantile(q));
    }
    // Compare on whichever side of the distribution is not rounded away.
    let reached = |tau: f64| -> bool {
        if q <= 0.5 {
            min_cdf(params, tau).map(|c| c >= q).unwrap_or(false)
        } else {
            let log_target = (-q).ln_1p();
            log_min_survival(params, tau).map(|l| l <= log_target).unwrap_or(false)
        }
    };
    let p_max = params.dist.probs().iter().copied().fold(0.0, f64::max);
    let guess = params.two_n() * p_max;
    let mut lo = guess;
    let mut hi = guess;
    let mut steps = 0;
    while reached(lo) {
        lo *= 0.5;
        steps += 1;
        if steps > 2000 || lo <= f64::MIN_POSITIVE {
            return Err(LawError::BracketFailure(q));
        }
    }
    while !reached(hi) {
        hi *= 2.0;
        steps += 1;
        if steps > 4000 || !hi.is_finite() {
            return Err(LawError::BracketFailure(q));
        }
    }
    for _ in 0..400 {
        if hi / lo - 1.0 <= 1e-14 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if reached(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Largest `M` for which [`flat_mean_closed_form`] keeps ~1e-12 relative
/// accuracy; the alternating binomial terms reach ~2^90 at this size.
pub const CLOSED_FORM_MAX_STATES: usize = 60;

/// Mean first-extinction time of the flat distribution:
/// `(2N / M) sum_{k=2}^{M} (-1)^k C(M, k) k ln k`.
///
/// Terms are formed exactly (`C(M, k) k` as an integer) and summed in
/// double-double arithmetic, since they cancel by ~10 orders of
/// magnitude already at `M = 30`.
pub fn flat_mean_closed_form(m: usize, n: u64) -> Result<f64, LawError> {
    if m < 2 {
        return Err(LawError::TooFewStates(m));
    }
    if m > CLOSED_FORM_MAX_STATES {
        return Err(LawError::ClosedFormRange {
            m,
            max: CLOSED_FORM_MAX_STATES,
        });
    }
    let mm = m as u128;
    let mut binom: u128 = mm; // C(M, 1)
    let mut acc = DoubleDouble::ZERO;
    for k in 2..=mm {
        binom = binom * (mm - k + 1) / k;
        let term = DoubleDouble::from_u128(binom * k) * DoubleDouble::ln_u64(k as u64);
        acc = if k % 2 == 0 { acc + term } else { acc - term };
    }
    Ok(acc.to_f64() * 2.0 * n as f64 / m as f64)
}
