//! `markov`: self-training collapse of a random chain.

use extinction::law;
use extinction::markov::{collapse_experiment, random_chain, CollapseOutcome};
use extinction::stats;
use extinction::{KsResult, LawParams, MeanEstimate, QuadOptions, SampleSummary};
use serde::Serialize;

use crate::config::{CommandConfig, ExperimentConfig, MarkovArgs};
use crate::error::CliError;
use crate::output;
use crate::simulate::write_samples;

#[derive(Serialize, Default)]
struct OutcomeCounts {
    collapsed: usize,
    pre_collapsed: usize,
    censored: usize,
}

#[derive(Serialize)]
struct MarkovReport {
    config: ExperimentConfig,
    states: usize,
    stationary_entropy: f64,
    stationary: Vec<f64>,
    predicted_mean: MeanEstimate,
    empirical: Option<SampleSummary>,
    z: Option<f64>,
    ks: KsResult,
    outcomes: OutcomeCounts,
}

pub fn markov(args: &MarkovArgs) -> Result<(), CliError> {
    let chain = random_chain(args.states, args.entropy, args.seed)?;
    let pi = chain.stationary_dist()?;
    eprintln!(
        "chain with {} states, stationary entropy {}; running {} collapse runs at N = {}",
        chain.m(),
        pi.entropy_norm(),
        args.runs,
        args.n_samples
    );
    let (set, records, ks) = collapse_experiment(&chain, args.n_samples, args.runs, args.seed, args.max_cycles)?;
    let params = LawParams::new(pi.clone(), args.n_samples)?;
    let predicted = law::mean_first_extinction(&params, &QuadOptions::for_samples(args.n_samples))?;

    let mut outcomes = OutcomeCounts::default();
    for r in &records {
        match r.outcome {
            CollapseOutcome::Collapsed => outcomes.collapsed += 1,
            CollapseOutcome::PreCollapsed => outcomes.pre_collapsed += 1,
            CollapseOutcome::Censored => outcomes.censored += 1,
        }
    }
    let taus = set.taus();
    let empirical = stats::summarize(&taus).ok();
    let z = empirical
        .as_ref()
        .and_then(|s| stats::z_compat(s, predicted.value).ok());

    let config = ExperimentConfig::new(CommandConfig::Markov(args.clone()));
    write_samples(&args.out, &set, &config)?;
    if let Some(path) = &args.chain_out {
        output::write_json(Some(path), &chain)?;
    }
    if let Some(e) = &empirical {
        eprintln!(
            "predicted mean {}, empirical mean {} (z = {}), KS p = {}",
            predicted.value,
            e.mean,
            z.map_or(f64::NAN, |z| z),
            ks.p_value
        );
    }
    let report = MarkovReport {
        config,
        states: chain.m(),
        stationary_entropy: pi.entropy_norm(),
        stationary: chain.stationary().to_vec(),
        predicted_mean: predicted,
        empirical,
        z,
        ks,
        outcomes,
    };
    output::write_json(args.report.as_deref(), &report)
}
