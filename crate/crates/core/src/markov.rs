//! Model-collapse surrogate on a Markov chain.
//!
//! A "model" is a transition matrix. Each training cycle spends a budget of
//! `N` observed transitions, split across states by the current stationary
//! distribution, and re-estimates every row from its own multinomial
//! sample. The run collapses when some state stops being reachable, i.e.
//! its stationary mass becomes exactly zero. The collapse time is compared
//! to the first-extinction law evaluated at the initial stationary
//! distribution.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{bisect_exponent, entropy_normalized, powered, DistError, Distribution};
use crate::law::{LawError, LawParams};
use crate::rng::{stream_rng, Domain};
use crate::sim::{multinomial_into, ExtinctionRecord, ExtinctionSampleSet, Source};
use crate::stats::{ks_one_sample, KsResult, StatsError};

pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_STATIONARY_TOL: f64 = 1e-12;
pub const MAX_POWER_ITERATIONS: usize = 1_000_000;
pub const CHAIN_ENTROPY_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_CYCLES: u64 = 1_000_000;

/// Fresh draws tried by [`random_chain`] before giving up.
const CHAIN_ATTEMPTS: u64 = 16;

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error("need at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("transition matrix is not square (row {row} has {len} entries, expected {m})")]
    NotSquare { row: usize, len: usize, m: usize },
    #[error("entry ({row}, {col}) is negative or not finite")]
    BadEntry { row: usize, col: usize },
    #[error("row {row} sums to {sum}, not 1")]
    RowSum { row: usize, sum: f64 },
    #[error("chain has {0} closed classes; the stationary distribution is not unique")]
    Reducible(usize),
    #[error("power iteration did not reach {tol:e} after {iterations} iterations (residual {residual:e})")]
    NotConverged { tol: f64, iterations: usize, residual: f64 },
    #[error("no chain with stationary entropy {target} within {tol:e} (closest {achieved})")]
    Unreachable { target: f64, tol: f64, achieved: f64 },
    #[error("invalid entropy target {0}; expected a value in (0, 1]")]
    InvalidTarget(f64),
    #[error("per-cycle budget N = {n} is smaller than the state count {m}")]
    BudgetTooSmall { n: u64, m: usize },
    #[error("need at least one run")]
    NoRuns,
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Law(#[from] LawError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Row-stochastic matrix with its stationary distribution.
///
/// Serializes as `{"m", "transition", "stationary", "seed"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    m: usize,
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    seed: Option<u64>,
}

impl MarkovChain {
    /// Validates `transition` and computes its stationary distribution.
    ///
    /// States outside the single closed class are accepted and get zero
    /// stationary mass.
    pub fn from_transition(transition: Vec<Vec<f64>>) -> Result<Self, MarkovError> {
        check_stochastic(&transition)?;
        let pi = stationary_vec(&transition, DEFAULT_STATIONARY_TOL, None)?;
        Ok(Self {
            m: transition.len(),
            transition,
            stationary: pi,
            seed: None,
        })
    }

    /// Re-validates a deserialized chain and recomputes the stationary
    /// distribution from the matrix.
    pub fn revalidated(self) -> Result<Self, MarkovError> {
        let seed = self.seed;
        let mut c = Self::from_transition(self.transition)?;
        c.seed = seed;
        Ok(c)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn stationary_dist(&self) -> Result<Distribution, MarkovError> {
        Ok(Distribution::validate(&self.stationary)?)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn is_irreducible(&self) -> bool {
        strongly_connected(self.m, |i, j| self.transition[i][j] > 0.0)
    }

    /// Relabels states: new state `k` is old state `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.m);
        let transition = perm
            .iter()
            .map(|&i| perm.iter().map(|&j| self.transition[i][j]).collect())
            .collect();
        Self {
            m: self.m,
            transition,
            stationary: perm.iter().map(|&i| self.stationary[i]).collect(),
            seed: self.seed,
        }
    }
}

fn check_stochastic(p: &[Vec<f64>]) -> Result<(), MarkovError> {
    let m = p.len();
    if m < 2 {
        return Err(MarkovError::TooFewStates(m));
    }
    for (row, r) in p.iter().enumerate() {
        if r.len() != m {
            return Err(MarkovError::NotSquare { row, len: r.len(), m });
        }
        if let Some(col) = r.iter().position(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(MarkovError::BadEntry { row, col });
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE * m as f64 {
            return Err(MarkovError::RowSum { row, sum });
        }
    }
    Ok(())
}

/// Strong connectivity of the graph `edge(i, j)`: everything reachable from
/// 0 forwards and backwards.
fn strongly_connected(m: usize, edge: impl Fn(usize, usize) -> bool) -> bool {
    let reach = |fwd: bool| {
        let mut seen = vec![false; m];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..m {
                let e = if fwd { edge(i, j) } else { edge(j, i) };
                if e && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Strongly connected components (Kosaraju), as a component id per state,
/// plus the number of components.
fn components(m: usize, edge: impl Fn(usize, usize) -> bool) -> (Vec<usize>, usize) {
    let mut order = Vec::with_capacity(m);
    let mut seen = vec![false; m];
    for s in 0..m {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some((i, next)) = stack.last_mut() {
            let i = *i;
            if let Some(j) = (*next..m).find(|&j| edge(i, j) && !seen[j]) {
                *next = j + 1;
                seen[j] = true;
                stack.push((j, 0));
            } else {
                order.push(i);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; m];
    let mut count = 0;
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = count;
        let mut stack = vec![s];
        while let Some(i) = stack.pop() {
            for j in 0..m {
                if edge(j, i) && comp[j] == usize::MAX {
                    comp[j] = count;
                    stack.push(j);
                }
            }
        }
        count += 1;
    }
    (comp, count)
}

/// Components with no edge leaving them.
fn closed_classes(m: usize, edge: impl Fn(usize, usize) -> bool + Copy) -> Vec<Vec<usize>> {
    let (comp, count) = components(m, edge);
    let mut open = vec![false; count];
    for i in 0..m {
        for j in 0..m {
            if comp[i] != comp[j] && edge(i, j) {
                open[comp[i]] = true;
            }
        }
    }
    (0..count)
        .filter(|&c| !open[c])
        .map(|c| (0..m).filter(|&i| comp[i] == c).collect())
        .collect()
}

/// `out = x P`.
fn left_mul(p: &[Vec<f64>], x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (xi, row) in x.iter().zip(p) {
        if *xi == 0.0 {
            continue;
        }
        for (o, pij) in out.iter_mut().zip(row) {
            *o += xi * pij;
        }
    }
}

fn stationary_vec(p: &[Vec<f64>], tol: f64, warm: Option<&[f64]>) -> Result<Vec<f64>, MarkovError> {
    let m = p.len();
    let classes = closed_classes(m, |i, j| p[i][j] > 0.0);
    if classes.len() != 1 {
        return Err(MarkovError::Reducible(classes.len()));
    }
    let class = &classes[0];
    let mut in_class = vec![false; m];
    for &i in class {
        in_class[i] = true;
    }
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    if let Some(direct) = gth(p, class) {
        for (&i, v) in class.iter().zip(direct) {
            x[i] = v;
        }
        left_mul(p, &x, &mut y);
        if x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() < tol {
            return Ok(x);
        }
    } else {
        match warm {
            Some(w) if class.iter().map(|&i| w[i]).sum::<f64>() > 0.0 => {
                for &i in class {
                    x[i] = w[i];
                }
            }
            _ => {
                for &i in class {
                    x[i] = 1.0;
                }
            }
        }
    }
    normalize(&mut x);
    // Polish: iterating the lazy chain (P + I) / 2 removes periodicity
    // without changing the fixed point.
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POWER_ITERATIONS {
        left_mul(p, &x, &mut y);
        residual = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if residual < tol {
            for (i, v) in y.iter_mut().enumerate() {
                if !in_class[i] {
                    *v = 0.0;
                }
            }
            normalize(&mut y);
            return Ok(y);
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = 0.5 * (*a + b);
        }
        normalize(&mut x);
    }
    Err(MarkovError::NotConverged {
        tol,
        iterations: MAX_POWER_ITERATIONS,
        residual,
    })
}

/// Grassmann-Taksar-Heyman elimination on the closed class `class`.
/// Subtraction-free, so accurate even for nearly decoupled chains.
fn gth(p: &[Vec<f64>], class: &[usize]) -> Option<Vec<f64>> {
    let k = class.len();
    let mut a: Vec<Vec<f64>> = class
        .iter()
        .map(|&i| class.iter().map(|&j| p[i][j]).collect())
        .collect();
    for n in (1..k).rev() {
        let s: f64 = a[n][..n].iter().sum();
        if !(s > 0.0) {
            return None;
        }
        for i in 0..n {
            a[i][n] /= s;
        }
        for i in 0..n {
            let f = a[i][n];
            if f != 0.0 {
                for j in 0..n {
                    a[i][j] += f * a[n][j];
                }
            }
        }
    }
    let mut pi = vec![0.0; k];
    pi[0] = 1.0;
    for j in 1..k {
        pi[j] = (0..j).map(|i| pi[i] * a[i][j]).sum();
    }
    normalize(&mut pi);
    pi.iter().all(|v| v.is_finite()).then_some(pi)
}

fn normalize(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
}

/// Stationary distribution `pi P = pi` with `||pi P - pi||_1 < tol`, solved
/// directly and polished by power iteration when needed.
///
/// Requires a single closed class; states outside it get zero mass.
pub fn stationary(transition: &[Vec<f64>], tol: f64) -> Result<Distribution, MarkovError> {
    check_stochastic(transition)?;
    let pi = stationary_vec(transition, tol, None)?;
    Ok(Distribution::validate(&pi)?)
}

fn rows_from_flat(flat: &[f64], m: usize) -> Vec<Vec<f64>> {
    flat.chunks(m)
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Random strictly positive chain whose stationary distribution has
/// normalized entropy within [`CHAIN_ENTROPY_TOL`] of `s_target`.
///
/// Entries are `u_ij^beta` (rows normalized) with `u_ij ~ U(0, 1]` drawn
/// from the seed; `beta` is bisected on the stationary entropy. At
/// `beta = 0` every row is uniform and so is the stationary distribution.
/// A draw whose sharpened limit cannot get low enough (e.g. rows peaking
/// on a permutation) is replaced by the next stream of the same seed.
pub fn random_chain(m: usize, s_target: f64, seed: u64) -> Result<MarkovChain, MarkovError> {
    if m < 2 {
        return Err(MarkovError::TooFewStates(m));
    }
    if !(s_target > 0.0 && s_target <= 1.0) {
        return Err(MarkovError::InvalidTarget(s_target));
    }
    let mut closest = f64::NAN;
    for attempt in 0..CHAIN_ATTEMPTS {
        match chain_attempt(m, s_target, seed, attempt) {
            Ok(flat) => {
                let mut chain = MarkovChain::from_transition(rows_from_flat(&flat, m))?;
                chain.seed = Some(seed);
                return Ok(chain);
            }
            Err(achieved) => {
                if closest.is_nan() || (achieved - s_target).abs() < (closest - s_target).abs() {
                    closest = achieved;
                }
            }
        }
    }
    Err(MarkovError::Unreachable {
        target: s_target,
        tol: CHAIN_ENTROPY_TOL,
        achieved: closest,
    })
}

/// One draw of `u`; returns the flat matrix or the closest entropy seen.
fn chain_attempt(m: usize, s_target: f64, seed: u64, attempt: u64) -> Result<Vec<f64>, f64> {
    let mut rng = stream_rng(seed, Domain::Chain, attempt << 32 | m as u64);
    let mut log_u: Vec<f64> = (0..m * m).map(|_| (1.0 - rng.random::<f64>()).ln()).collect();
    // Shifting each row to a maximum of 0 leaves the normalized rows
    // unchanged and keeps every row's peak at exactly 1 for any beta.
    for row in log_u.chunks_mut(m) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|l| *l -= max);
    }
    let measure = |flat: &[f64]| match stationary_vec(&rows_from_flat(flat, m), DEFAULT_STATIONARY_TOL, None) {
        Ok(pi) => entropy_normalized(&pi),
        Err(_) => 0.0,
    };
    // As beta grows each row tends to its largest entry; the entropy of
    // that deterministic limit bounds the reachable targets from below.
    let (flat, achieved) = bisect_exponent(&log_u, s_target, CHAIN_ENTROPY_TOL * 0.1, measure)
        .ok_or_else(|| measure(&powered(&log_u, 1e6)))?;
    if (achieved - s_target).abs() > CHAIN_ENTROPY_TOL || flat.iter().any(|&x| !(x > 0.0)) {
        return Err(achieved);
    }
    Ok(flat)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseOutcome {
    Collapsed,
    /// The initial chain already has a state of zero stationary mass.
    PreCollapsed,
    /// `max_cycles` reached without a loss.
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseRecord {
    pub run_index: u64,
    /// Training cycle at which the first state was lost; 0 when
    /// pre-collapsed, `None` when censored.
    pub tau: Option<u64>,
    pub lost_state: Option<usize>,
    pub outcome: CollapseOutcome,
}

impl CollapseRecord {
    pub fn to_extinction(&self) -> ExtinctionRecord {
        ExtinctionRecord {
            trial_index: self.run_index,
            tau: self.tau.map(|t| t as f64),
            extinct_state: self.lost_state,
            source: Source::Markov,
        }
    }
}

/// Splits `n` into integer parts proportional to `pi` by largest remainder
/// (ties to the lower index), so the parts sum to `n` exactly.
pub fn allocate_visits(n: u64, pi: &[f64]) -> Vec<u64> {
    let nf = n as f64;
    let mut parts: Vec<u64> = pi.iter().map(|&p| (nf * p).floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut left = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..pi.len()).filter(|&i| pi[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = nf * pi[a] - parts[a] as f64;
        let fb = nf * pi[b] - parts[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        parts[i] += 1;
        left -= 1;
    }
    parts
}

fn lowest_mass(states: impl Iterator<Item = usize>, pi: &[f64]) -> Option<usize> {
    states.min_by(|&a, &b| pi[a].total_cmp(&pi[b]).then(a.cmp(&b)))
}

/// One self-training run.
///
/// Each cycle: allocate `N` visits by the current stationary distribution,
/// re-estimate row `i` as `Multinomial(n_i, P_i) / n_i`, and check that
/// every state is still reachable. A state with `n_i = 0` has no data and
/// is lost. Otherwise the run collapses when the re-estimated chain is no
/// longer strongly connected; the lost state reported is the unreachable
/// state of smallest prior stationary mass. A run that settles on a
/// deterministic cycle can never lose a state and is censored at once.
pub fn collapse_run(
    chain: &MarkovChain,
    n_samples: u64,
    seed: u64,
    run: u64,
    max_cycles: u64,
) -> Result<CollapseRecord, MarkovError> {
    let m = chain.m;
    if n_samples < m as u64 {
        return Err(MarkovError::BudgetTooSmall { n: n_samples, m });
    }
    let record = |tau, lost_state, outcome| CollapseRecord {
        run_index: run,
        tau,
        lost_state,
        outcome,
    };
    if let Some(i) = chain.stationary.iter().position(|&p| p == 0.0) {
        return Ok(record(Some(0), Some(i), CollapseOutcome::PreCollapsed));
    }
    let mut rng = stream_rng(seed, Domain::Collapse, run);
    let mut p = chain.transition.clone();
    let mut pi = chain.stationary.clone();
    let mut counts = vec![0u64; m];
    for cycle in 1..=max_cycles {
        let visits = allocate_visits(n_samples, &pi);
        if let Some(i) = lowest_mass((0..m).filter(|&i| visits[i] == 0), &pi) {
            return Ok(record(Some(cycle), Some(i), CollapseOutcome::Collapsed));
        }
        for (row, &n_i) in p.iter_mut().zip(&visits) {
            multinomial_into(&mut rng, n_i, row, &mut counts);
            let inv = 1.0 / n_i as f64;
            for (x, &c) in row.iter_mut().zip(&counts) {
                *x = c as f64 * inv;
            }
        }
        let edge = |i: usize, j: usize| p[i][j] > 0.0;
        if !strongly_connected(m, edge) {
            let classes = closed_classes(m, edge);
            // Keep the closed class carrying the most prior mass; the rest
            // is unreachable from it.
            let keep = classes
                .iter()
                .max_by(|a, b| {
                    let ma: f64 = a.iter().map(|&i| pi[i]).sum();
                    let mb: f64 = b.iter().map(|&i| pi[i]).sum();
                    ma.total_cmp(&mb)
                })
                .expect("a finite graph has a closed class");
            let lost = lowest_mass((0..m).filter(|i| !keep.contains(i)), &pi);
            return Ok(record(Some(cycle), lost, CollapseOutcome::Collapsed));
        }
        if p.iter().all(|row| row.contains(&1.0)) {
            // An irreducible 0/1 chain is a single cycle that every later
            // cycle reproduces exactly.
            return Ok(record(None, None, CollapseOutcome::Censored));
        }
        pi = stationary_vec(&p, DEFAULT_STATIONARY_TOL, Some(&pi))?;
    }
    Ok(record(None, None, CollapseOutcome::Censored))
}

/// Runs `runs` independent collapse runs in parallel and tests their
/// collapse times against the law evaluated at the initial stationary
/// distribution.
pub fn collapse_experiment(
    chain: &MarkovChain,
    n_samples: u64,
    runs: u64,
    seed: u64,
    max_cycles: u64,
) -> Result<(ExtinctionSampleSet, Vec<CollapseRecord>, KsResult), MarkovError> {
    if runs == 0 {
        return Err(MarkovError::NoRuns);
    }
    let dist = chain.stationary_dist()?;
    let params = LawParams::new(dist.clone(), n_samples)?;
    let collapses = (0..runs)
        .into_par_iter()
        .map(|r| collapse_run(chain, n_samples, seed, r, max_cycles))
        .collect::<Result<Vec<_>, _>>()?;
    let set = ExtinctionSampleSet {
        records: collapses.iter().map(CollapseRecord::to_extinction).collect(),
        dist,
        n_samples,
        seed,
        source: Source::Markov,
    };
    let ks = ks_one_sample(&set.taus(), |t| params.cdf_or_zero(t))?;
    Ok((set, collapses, ks))
}
