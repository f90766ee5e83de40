//! Exact inclusion–exclusion mean of the first-extinction time.
//!
//! ```text
//! <tau_min> = sum_{S ≠ ∅} (-1)^{|S|} A_S ln A_S,   A_S = sum_{i in S} a_i,  a_i = 2 N p_i
//! ```
//!
//! This equals the law's integral for every `M` and costs `2^M - 1` terms,
//! which is why it is only used as an oracle for small state counts.

use rayon::prelude::*;
use thiserror::Error;

use crate::law::LawParams;
use crate::numeric::{two_sum, CompensatedSum};

pub const DEFAULT_SUBSET_CAP: usize = 30;

/// Subset enumerations at or above this size are split into fixed chunks
/// and evaluated in parallel.
const PARALLEL_THRESHOLD: usize = 20;
const CHUNK_BITS: u32 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaxterError {
    #[error("{m} states exceed the subset cap of {cap} (2^{m} - 1 terms)")]
    TooManyStates { m: usize, cap: usize },
    #[error("need at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("weight {index} is not positive ({value})")]
    NonPositiveWeight { index: usize, value: f64 },
}

/// Positive weights `a_i = 2 N p_i` (iterations) and the enumeration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct BaxterTerms {
    a: Vec<f64>,
    subset_cap: usize,
}

impl BaxterTerms {
    pub fn new(a: Vec<f64>, subset_cap: usize) -> Result<Self, BaxterError> {
        if a.len() < 2 {
            return Err(BaxterError::TooFewStates(a.len()));
        }
        if a.len() > subset_cap {
            return Err(BaxterError::TooManyStates {
                m: a.len(),
                cap: subset_cap,
            });
        }
        if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(BaxterError::NonPositiveWeight { index, value });
        }
        Ok(Self { a, subset_cap })
    }

    pub fn from_params(params: &LawParams, subset_cap: usize) -> Result<Self, BaxterError> {
        let two_n = 2.0 * params.n_samples() as f64;
        Self::new(params.dist().probs().iter().map(|p| two_n * p).collect(), subset_cap)
    }

    pub fn weights(&self) -> &[f64] {
        &self.a
    }

    pub fn subset_cap(&self) -> usize {
        self.subset_cap
    }
}

/// Number of nonempty subsets, `2^m - 1`.
pub fn cost_estimate(m: u32) -> u128 {
    (1u128 << m) - 1
}

/// Subset sum kept as an unevaluated pair so that 2^M add/remove updates
/// do not drift.
#[derive(Clone, Copy, Default)]
struct RunningSum {
    hi: f64,
    lo: f64,
}

impl RunningSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let (s, e) = two_sum(self.hi, x);
        let (s2, e2) = two_sum(s, self.lo + e);
        self.hi = s2;
        self.lo = e2;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Sums the paired terms for Gray codes `g(i)`, `i` in `[start, end)`,
/// over the weights `rest`.
///
/// Subset `S` of `rest` stands for both `S` and `S + {a0}`; their two
/// terms combine to `-(-1)^{|S|} (a0 ln(A + a0) + A ln(1 + a0 / A))`,
/// whose size scales with `a0` instead of `A`. With `a0` the smallest
/// weight the alternating sum loses far fewer digits.
fn gray_range(rest: &[f64], a0: f64, start: u64, end: u64) -> CompensatedSum {
    let mut acc = CompensatedSum::new();
    let mut code = start ^ (start >> 1);
    let mut sum = RunningSum::default();
    for (bit, &w) in rest.iter().enumerate() {
        if code >> bit & 1 == 1 {
            sum.add(w);
        }
    }
    let mut size = code.count_ones();
    let mut i = start;
    loop {
        if code == 0 {
            acc.add_product(-a0, a0.ln());
        } else {
            let total = sum.value();
            let sign = if size.is_multiple_of(2) { -1.0 } else { 1.0 };
            acc.add_product(sign * a0, (total + a0).ln());
            acc.add_product(sign * total, (a0 / total).ln_1p());
        }
        i += 1;
        if i >= end {
            break;
        }
        // Gray code step i-1 -> i flips the lowest set bit of i.
        let bit = i.trailing_zeros() as usize;
        code ^= 1 << bit;
        if code >> bit & 1 == 1 {
            sum.add(rest[bit]);
            size += 1;
        } else {
            sum.add(-rest[bit]);
            size -= 1;
        }
    }
    acc
}

/// Smallest weight and the others, in their original order.
fn split_smallest(a: &[f64]) -> (f64, Vec<f64>) {
    let k = (0..a.len())
        .min_by(|&i, &j| a[i].total_cmp(&a[j]))
        .expect("at least two weights");
    let rest = a.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &w)| w).collect();
    (a[k], rest)
}

/// Exact mean first-extinction time by Gray-code subset enumeration.
///
/// Each step adds or removes one weight, so the whole sum is `O(2^M)`.
/// Large enumerations are cut into a fixed number of contiguous chunks,
/// each with its own compensated accumulator, merged in chunk order; the
/// result does not depend on the thread count.
pub fn exact_mean(terms: &BaxterTerms) -> f64 {
    let (a0, rest) = split_smallest(&terms.a);
    let total = 1u64 << rest.len();
    if terms.a.len() < PARALLEL_THRESHOLD {
        return gray_range(&rest, a0, 0, total).value();
    }
    let chunks = 1u64 << CHUNK_BITS;
    let width = total / chunks;
    let parts: Vec<CompensatedSum> = (0..chunks)
        .into_par_iter()
        .map(|c| gray_range(&rest, a0, c * width, (c + 1) * width))
        .collect();
    let mut acc = CompensatedSum::new();
    for p in &parts {
        acc.merge(p);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Distribution;
    use crate::law::{flat_mean_closed_form, mean_first_extinction, QuadOptions};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    /// Direct loop over subset bitmasks, unpaired, for cross-checking the
    /// Gray code walk. Also returns `sum |A ln A|`, the scale of its own
    /// rounding error.
    fn naive(a: &[f64]) -> (f64, f64) {
        let m = a.len();
        let mut acc = CompensatedSum::new();
        let mut scale = 0.0;
        for mask in 1u64..(1 << m) {
            let mut s = RunningSum::default();
            for (i, &w) in a.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    s.add(w);
                }
            }
            let total = s.value();
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            acc.add_product(sign * total, total.ln());
            scale += (total * total.ln()).abs();
        }
        (acc.value(), scale)
    }

    #[test]
    fn two_equal_weights() {
        // -2 * 1000 ln 1000 + 2000 ln 2000 = 2000 ln 2
        let t = BaxterTerms::new(vec![1000.0, 1000.0], DEFAULT_SUBSET_CAP).unwrap();
        assert!((exact_mean(&t) - 2000.0 * LN_2).abs() < 1e-10);
    }

    #[test]
    fn three_weights_hand_sum() {
        let t = BaxterTerms::new(vec![1000.0, 600.0, 400.0], DEFAULT_SUBSET_CAP).unwrap();
        assert!((exact_mean(&t) - 509.784_243_952_240_8).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            BaxterTerms::new(vec![5.0], DEFAULT_SUBSET_CAP),
            Err(BaxterError::TooFewStates(1))
        ));
        assert!(matches!(
            BaxterTerms::new(vec![1.0; 31], DEFAULT_SUBSET_CAP),
            Err(BaxterError::TooManyStates { m: 31, cap: 30 })
        ));
        assert!(matches!(
            BaxterTerms::new(vec![1.0, 0.0], DEFAULT_SUBSET_CAP),
            Err(BaxterError::NonPositiveWeight { index: 1, .. })
        ));
        assert!(BaxterTerms::new(vec![1.0; 31], 31).is_ok());
    }

    #[test]
    fn cost_counts() {
        assert_eq!(cost_estimate(3), 7);
        assert_eq!(cost_estimate(10), 1023);
        assert_eq!(cost_estimate(30), 1_073_741_823);
    }

    #[test]
    fn flat_matches_closed_form() {
        // Alternating terms reach C(M, M/2) times the result, so the
        // attainable accuracy falls with M.
        for (m, tol) in [(2usize, 1e-13), (5, 1e-12), (10, 1e-10), (16, 1e-8), (22, 1e-6)] {
            let d = Distribution::flat(m).unwrap();
            let p = LawParams::new(d, 777).unwrap();
            let t = BaxterTerms::from_params(&p, DEFAULT_SUBSET_CAP).unwrap();
            let closed = flat_mean_closed_form(m, 777).unwrap();
            assert!(((exact_mean(&t) - closed) / closed).abs() < tol, "m = {m}");
        }
    }

    #[test]
    fn parallel_chunks_match_single_walk() {
        let d = Distribution::gen_with_entropy(20, 0.95, 11, 1e-4).unwrap();
        let p = LawParams::new(d, 5000).unwrap();
        let t = BaxterTerms::from_params(&p, DEFAULT_SUBSET_CAP).unwrap();
        let (a0, rest) = split_smallest(t.weights());
        let serial = gray_range(&rest, a0, 0, 1 << 19).value();
        assert!(((exact_mean(&t) - serial) / serial).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn gray_walk_equals_naive(m in 2usize..=12, s in 0.6f64..1.0, seed in any::<u64>(), n in 1u64..1_000_000) {
            let d = Distribution::gen_with_entropy(m, s, seed, 1e-4).unwrap();
            let t = BaxterTerms::from_params(&LawParams::new(d, n).unwrap(), DEFAULT_SUBSET_CAP).unwrap();
            let g = exact_mean(&t);
            let (nv, scale) = naive(t.weights());
            prop_assert!((g - nv).abs() <= 1e-14 * scale, "{} vs {}", g, nv);
        }

        #[test]
        fn homogeneous_of_degree_one(m in 2usize..=10, seed in any::<u64>(), k in 1.5f64..100.0) {
            let d = Distribution::gen_with_entropy(m, 0.9, seed, 1e-4).unwrap();
            let a: Vec<f64> = d.probs().iter().map(|p| 2000.0 * p).collect();
            let ka: Vec<f64> = a.iter().map(|x| k * x).collect();
            let base = exact_mean(&BaxterTerms::new(a, DEFAULT_SUBSET_CAP).unwrap());
            let scaled = exact_mean(&BaxterTerms::new(ka, DEFAULT_SUBSET_CAP).unwrap());
            prop_assert!(((scaled - k * base) / (k * base)).abs() < 1e-11);
        }

        #[test]
        fn permutation_invariant(m in 2usize..=10, seed in any::<u64>()) {
            let d = Distribution::gen_with_entropy(m, 0.85, seed, 1e-4).unwrap();
            let a: Vec<f64> = d.probs().iter().map(|p| 500.0 * p).collect();
            let mut r = a.clone();
            r.reverse();
            let x = exact_mean(&BaxterTerms::new(a, DEFAULT_SUBSET_CAP).unwrap());
            let y = exact_mean(&BaxterTerms::new(r, DEFAULT_SUBSET_CAP).unwrap());
            prop_assert!(((x - y) / x).abs() < 1e-12);
        }

        #[test]
        fn agrees_with_quadrature(m in 2usize..=15, s in 0.7f64..1.0, seed in any::<u64>(), n in 1u64..100_000) {
            let d = Distribution::gen_with_entropy(m, s, seed, 1e-4).unwrap();
            let p = LawParams::new(d, n).unwrap();
            let exact = exact_mean(&BaxterTerms::from_params(&p, DEFAULT_SUBSET_CAP).unwrap());
            let q = mean_first_extinction(&p, &QuadOptions::for_samples(n)).unwrap().value;
            prop_assert!(((q - exact) / exact).abs() <= 1e-6, "{} vs {}", q, exact);
        }
    }
}
