//! First-extinction times of discrete distributions under repeated
//! finite-sample resampling.
//!
//! A distribution `p` over `M` states is replaced every iteration by the
//! normalized counts of `N` multinomial draws from itself. State `i` dies
//! out at a random time with CDF `exp(-2 N p_i / tau)`; the first of the
//! `M` extinctions has survival `prod_i (1 - exp(-2 N p_i / tau))`.
//!
//! * [`dist`]: validated distributions and entropy-targeted generation.
//! * [`law`]: CDF, PDF, quantiles and the mean of the first-extinction time.
//! * [`baxter`]: exact subset-sum mean, exponential cost.
//! * [`sim`]: multinomial resampling and square-root SDE simulators.
//! * [`stats`]: empirical CDFs, KS tests, summaries.
//! * [`markov`]: the model-collapse surrogate on a Markov chain.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baxter;
pub mod dist;
pub mod law;
pub mod markov;
pub mod numeric;
pub mod quad;
pub mod rng;
pub mod sim;
pub mod stats;

pub use baxter::{exact_mean, BaxterError, BaxterTerms};
pub use dist::{entropy_normalized, DistError, Distribution};
pub use law::{LawError, LawParams, MeanEstimate, QuadOptions};
pub use markov::{CollapseRecord, MarkovChain, MarkovError};
pub use sim::{ExtinctionRecord, ExtinctionSampleSet, SdeOptions, SimError, Source};
pub use stats::{KsMode, KsResult, SampleSummary, StatsError};
