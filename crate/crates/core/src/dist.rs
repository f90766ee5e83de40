//! Initial probability distributions over `M` states.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, Domain};

/// Absolute tolerance on `|sum - 1|` accepted (and renormalized) by [`Distribution::validate`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default entropy tolerance for [`Distribution::gen_with_entropy`].
pub const DEFAULT_ENTROPY_TOL: f64 = 1e-4;

const MAX_BISECTIONS: usize = 200;
/// Draws tried before giving up on a target whose entries underflow.
const GEN_ATTEMPTS: u64 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("entry {index} is negative or not finite ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, outside 1 ± {SUM_TOLERANCE:e}")]
    SumOutOfTolerance { sum: f64 },
    #[error("need at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("entry {0} is zero; a strictly positive distribution is required")]
    ZeroEntry(usize),
    #[error("cannot reach normalized entropy {target} within {tol:e} (closest {achieved})")]
    Unreachable { target: f64, tol: f64, achieved: f64 },
    #[error("entries underflow to zero at normalized entropy {target}; no strictly positive draw found")]
    Underflow { target: f64 },
    #[error("invalid entropy target {0}; expected a value in (0, 1]")]
    InvalidTarget(f64),
}

/// A validated probability vector with its cached normalized entropy.
///
/// Serializes as `{"p": [...], "m": M, "entropy_norm": S, "gen_seed": seed|null}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    #[serde(rename = "p")]
    probs: Vec<f64>,
    m: usize,
    entropy_norm: f64,
    gen_seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDistribution {
    p: Vec<f64>,
    m: usize,
    #[allow(dead_code)]
    entropy_norm: Option<f64>,
    gen_seed: Option<u64>,
}

impl<'de> Deserialize<'de> for Distribution {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let raw = RawDistribution::deserialize(de)?;
        if raw.m != raw.p.len() {
            return Err(serde::de::Error::custom(format!(
                "m = {} does not match {} probabilities",
                raw.m,
                raw.p.len()
            )));
        }
        let mut d = Distribution::validate(&raw.p).map_err(serde::de::Error::custom)?;
        d.gen_seed = raw.gen_seed;
        Ok(d)
    }
}

impl Distribution {
    /// Validates a raw vector. A sum within [`SUM_TOLERANCE`] of one is
    /// renormalized; anything further off is rejected.
    pub fn validate(raw: &[f64]) -> Result<Self, DistError> {
        if raw.len() < 2 {
            return Err(DistError::TooFewStates(raw.len()));
        }
        if let Some((index, &value)) = raw.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(DistError::NegativeEntry { index, value });
        }
        let sum: f64 = raw.iter().copied().sum::<crate::numeric::CompensatedSum>().value();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistError::SumOutOfTolerance { sum });
        }
        let probs: Vec<f64> = if sum == 1.0 {
            raw.to_vec()
        } else {
            raw.iter().map(|p| p / sum).collect()
        };
        Ok(Self::from_normalized(probs, None))
    }

    fn from_normalized(probs: Vec<f64>, gen_seed: Option<u64>) -> Self {
        let entropy_norm = entropy_normalized(&probs);
        Self {
            m: probs.len(),
            probs,
            entropy_norm,
            gen_seed,
        }
    }

    /// Uniform distribution `1/m` over `m` states.
    pub fn flat(m: usize) -> Result<Self, DistError> {
        if m < 2 {
            return Err(DistError::TooFewStates(m));
        }
        Ok(Self::from_normalized(vec![1.0 / m as f64; m], None))
    }

    /// Draws a strictly positive distribution whose normalized entropy is
    /// within `tol` of `s_target`.
    ///
    /// Samples `u_i ~ U(0, 1]` once from the seed, then bisects the exponent
    /// `beta >= 0` of `p_i ∝ u_i^beta`; entropy is nonincreasing in `beta`,
    /// from 1 at `beta = 0` towards 0 as the largest `u_i` takes over. A draw
    /// whose smallest entries underflow is replaced by the next stream.
    pub fn gen_with_entropy(m: usize, s_target: f64, seed: u64, tol: f64) -> Result<Self, DistError> {
        if m < 2 {
            return Err(DistError::TooFewStates(m));
        }
        if !(s_target > 0.0 && s_target <= 1.0) {
            return Err(DistError::InvalidTarget(s_target));
        }
        for attempt in 0..GEN_ATTEMPTS {
            let mut rng = stream_rng(seed, Domain::Distribution, attempt << 32 | m as u64);
            let log_u: Vec<f64> = (0..m).map(|_| (1.0 - rng.random::<f64>()).ln()).collect();
            let (probs, achieved) =
                bisect_exponent(&log_u, s_target, tol, entropy_normalized).ok_or(DistError::Unreachable {
                    target: s_target,
                    tol,
                    achieved: f64::NAN,
                })?;
            if (achieved - s_target).abs() > tol {
                return Err(DistError::Unreachable {
                    target: s_target,
                    tol,
                    achieved,
                });
            }
            if probs.iter().all(|&p| p > 0.0) {
                return Ok(Self::from_normalized(probs, Some(seed)));
            }
            // The smallest entries underflowed; draw again from the next stream.
        }
        Err(DistError::Underflow { target: s_target })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn entropy_norm(&self) -> f64 {
        self.entropy_norm
    }

    pub fn gen_seed(&self) -> Option<u64> {
        self.gen_seed
    }

    pub fn with_gen_seed(mut self, seed: Option<u64>) -> Self {
        self.gen_seed = seed;
        self
    }

    /// Index of the first zero entry, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.probs.iter().position(|&p| p == 0.0)
    }

    pub fn require_positive(&self) -> Result<(), DistError> {
        match self.first_zero() {
            Some(i) => Err(DistError::ZeroEntry(i)),
            None => Ok(()),
        }
    }

    /// Copy with the entries reordered by `perm` (`out[k] = p[perm[k]]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.m);
        let probs = perm.iter().map(|&i| self.probs[i]).collect();
        Self::from_normalized(probs, self.gen_seed)
    }
}

/// Normalized Shannon entropy `H(p) / ln M`, with `0 ln 0 = 0`.
pub fn entropy_normalized(probs: &[f64]) -> f64 {
    let m = probs.len();
    if m < 2 {
        return 0.0;
    }
    let h: f64 = -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    (h / (m as f64).ln()).clamp(0.0, 1.0)
}

/// Normalized `exp(beta * log_u)`, computed relative to the largest weight.
pub(crate) fn powered(log_u: &[f64], beta: f64) -> Vec<f64> {
    let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_u.iter().map(|&l| (beta * (l - max)).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

/// Bisects `beta` so that `measure(powered(log_u, beta))` hits `target`.
///
/// `measure` must be 1 at `beta = 0` and (approximately) nonincreasing in
/// `beta`. Returns the vector and its measure, or `None` when no upper
/// bracket exists.
pub(crate) fn bisect_exponent<F>(log_u: &[f64], target: f64, tol: f64, measure: F) -> Option<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> f64,
{
    let flat = powered(log_u, 0.0);
    let s0 = measure(&flat);
    if (s0 - target).abs() <= tol {
        return Some((flat, s0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut hi_vec = powered(log_u, hi);
    let mut hi_s = measure(&hi_vec);
    let mut doublings = 0;
    while hi_s > target {
        lo = hi;
        hi *= 2.0;
        hi_vec = powered(log_u, hi);
        hi_s = measure(&hi_vec);
        doublings += 1;
        if doublings > 60 {
            return None;
        }
    }
    let mut best = (hi_vec, hi_s);
    for _ in 0..MAX_BISECTIONS {
        if (best.1 - target).abs() <= tol * 0.5 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = powered(log_u, mid);
        let s = measure(&v);
        if s > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (s - target).abs() < (best.1 - target).abs() {
            best = (v, s);
        }
    }
    Some(best)
}
