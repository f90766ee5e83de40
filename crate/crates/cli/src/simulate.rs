//! `sim`, `compare` and `grid`.

use std::io::{BufReader, Write};
use std::path::Path;

use extinction::dist::DEFAULT_ENTROPY_TOL;
use extinction::law;
use extinction::rng::{derive_seed, Domain};
use extinction::sim::{self, ExtinctionRecord};
use extinction::stats::{self, Ecdf};
use extinction::{
    Distribution, ExtinctionSampleSet, KsResult, LawParams, QuadOptions, SampleSummary, SdeOptions, Source,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{CommandConfig, CompareArgs, ExperimentConfig, GridArgs, SimArgs, SimKind};
use crate::error::CliError;
use crate::output::{self, fmt_f64};

/// Writes the sample CSV and its sidecar.
pub fn write_samples(path: &Path, set: &ExtinctionSampleSet, config: &ExperimentConfig) -> Result<(), CliError> {
    let mut w = output::create(path)?;
    sim::write_csv(&set.records, &mut w).map_err(|e| CliError::io(path, e))?;
    output::finish(w, path)?;
    output::write_sidecar(
        path,
        config,
        json!({
            "source": set.source,
            "dist": set.dist,
            "n_samples": set.n_samples,
            "seed": set.seed,
            "trials": set.len(),
            "censored": set.censored_count(),
        }),
    )
}

pub fn sim(args: &SimArgs) -> Result<(), CliError> {
    let dist = output::read_dist(&args.dist)?;
    eprintln!(
        "simulating {} trials ({:?}, M = {}, N = {})",
        args.trials,
        args.kind,
        dist.m(),
        args.n_samples
    );
    let set = match args.kind {
        SimKind::Resample => sim::resample_many(&dist, args.n_samples, args.trials, args.seed, args.max_steps)?,
        SimKind::Sde => {
            let opts = SdeOptions {
                dt: args.dt,
                substeps: args.substeps,
                max_steps: args.max_steps,
            };
            sim::sde_many(&dist, args.n_samples, &opts, args.trials, args.seed)?
        }
    };
    let censored = set.censored_count();
    eprintln!("done: {} extinct, {censored} censored", set.len() - censored);
    write_samples(
        &args.out,
        &set,
        &ExperimentConfig::new(CommandConfig::Sim(args.clone())),
    )?;
    if censored == set.len() {
        return Err(CliError::Numerical(format!(
            "all {censored} trials hit the step cap of {}; raise --max-steps",
            args.max_steps
        )));
    }
    Ok(())
}

struct LoadedSamples {
    records: Vec<ExtinctionRecord>,
    meta: Option<Value>,
}

impl LoadedSamples {
    fn taus(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.tau).collect()
    }

    fn censored(&self) -> usize {
        self.records.iter().filter(|r| r.censored()).count()
    }
}

fn load_samples(path: &Path) -> Result<LoadedSamples, CliError> {
    let meta = output::read_sidecar(path)?;
    let source = meta
        .as_ref()
        .and_then(|m| m.get("source"))
        .map(|s| serde_json::from_value::<Source>(s.clone()))
        .transpose()
        .map_err(|e| CliError::invalid(format!("sidecar of {}: {e}", path.display())))?
        .unwrap_or(Source::Resampling);
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let records =
        sim::read_csv(BufReader::new(f), source).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    if records.iter().all(|r| r.censored()) {
        return Err(CliError::invalid(format!("{}: no uncensored samples", path.display())));
    }
    Ok(LoadedSamples { records, meta })
}

/// Resolves the law parameters from flags, falling back to the sidecar.
/// A flag that contradicts the sidecar is a schema mismatch.
fn resolve_params(args: &CompareArgs, samples: &LoadedSamples) -> Result<LawParams, CliError> {
    let meta_dist = samples
        .meta
        .as_ref()
        .and_then(|m| m.get("dist"))
        .map(|d| serde_json::from_value::<Distribution>(d.clone()))
        .transpose()
        .map_err(|e| CliError::invalid(format!("sample sidecar: {e}")))?;
    let meta_n = samples
        .meta
        .as_ref()
        .and_then(|m| m.get("n_samples"))
        .and_then(Value::as_u64);

    let dist = match (&args.dist, meta_dist) {
        (Some(p), meta) => {
            let d = output::read_dist(p)?;
            if let Some(md) = meta {
                if md.probs() != d.probs() {
                    return Err(CliError::invalid(format!(
                        "{} does not match the distribution recorded with the samples",
                        p.display()
                    )));
                }
            }
            d
        }
        (None, Some(md)) => md,
        (None, None) => return Err(CliError::invalid("no --dist given and the samples have no sidecar")),
    };
    let n = match (args.n_samples, meta_n) {
        (Some(n), Some(mn)) if n != mn => {
            return Err(CliError::invalid(format!(
                "--n-samples {n} does not match N = {mn} recorded with the samples"
            )))
        }
        (Some(n), _) | (None, Some(n)) => n,
        (None, None) => {
            return Err(CliError::invalid(
                "no --n-samples given and the samples have no sidecar",
            ))
        }
    };
    Ok(LawParams::new(dist, n)?)
}

#[derive(Serialize)]
struct CompareReport {
    config: ExperimentConfig,
    #[serde(flatten)]
    ks: KsResult,
    sim_summary: SampleSummary,
    censored: usize,
    theory_mean: Option<f64>,
    z: Option<f64>,
    sim_summary_b: Option<SampleSummary>,
}

pub fn compare(args: &CompareArgs) -> Result<(), CliError> {
    let a = load_samples(&args.samples)?;
    let taus = a.taus();
    let summary = stats::summarize(&taus)?;
    let config = ExperimentConfig::new(CommandConfig::Compare(args.clone()));
    let ecdf = Ecdf::new(&taus)?;

    let report = if let Some(path_b) = &args.samples_b {
        let b = load_samples(path_b)?.taus();
        let ks = stats::ks_two_sample(&taus, &b)?;
        if let Some(path) = &args.overlay_out {
            let eb = Ecdf::new(&b)?;
            let mut grid: Vec<f64> = taus.iter().chain(&b).copied().collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            write_overlay(
                path,
                &config,
                "tau,ecdf,ecdf_b",
                grid.iter().map(|&t| (t, ecdf.eval(t), eb.eval(t))),
            )?;
        }
        CompareReport {
            config,
            ks,
            sim_summary: summary,
            censored: a.censored(),
            theory_mean: None,
            z: None,
            sim_summary_b: Some(stats::summarize(&b)?),
        }
    } else {
        let params = resolve_params(args, &a)?;
        let ks = stats::ks_one_sample(&taus, |t| params.cdf_or_zero(t))?;
        let theory = law::mean_first_extinction(&params, &QuadOptions::for_samples(params.n_samples()))?.value;
        let z = stats::z_compat(&summary, theory).ok();
        if let Some(path) = &args.overlay_out {
            let mut grid = ecdf.sorted().to_vec();
            grid.dedup();
            write_overlay(
                path,
                &config,
                "tau,ecdf,theory_cdf",
                grid.iter().map(|&t| (t, ecdf.eval(t), params.cdf_or_zero(t))),
            )?;
        }
        CompareReport {
            config,
            ks,
            sim_summary: summary,
            censored: a.censored(),
            theory_mean: Some(theory),
            z,
            sim_summary_b: None,
        }
    };
    eprintln!("KS D = {}, p = {}", report.ks.d_stat, report.ks.p_value);
    output::write_json(args.out.as_deref(), &report)
}

fn write_overlay(
    path: &Path,
    config: &ExperimentConfig,
    header: &str,
    rows: impl Iterator<Item = (f64, f64, f64)>,
) -> Result<(), CliError> {
    let mut body = format!("{header}\n");
    for (t, x, y) in rows {
        body.push_str(&format!("{},{},{}\n", fmt_f64(t), fmt_f64(x), fmt_f64(y)));
    }
    let mut w = output::create(path)?;
    w.write_all(body.as_bytes()).map_err(|e| CliError::io(path, e))?;
    output::finish(w, path)?;
    output::write_sidecar(path, config, json!({}))
}

#[derive(Debug, Clone, Copy, Serialize)]
struct Cell {
    m: usize,
    n: u64,
    mean_sim: f64,
    mean_theory: f64,
    z: f64,
}

/// Averages over `dists_per_cell` distributions, each simulated with
/// `trials_per_dist` trials. Means and `z` are per-distribution values
/// averaged over the cell.
fn grid_cell(args: &GridArgs, m: usize, n: u64, cell_index: u64) -> Result<Cell, CliError> {
    if args.dists_per_cell == 0 {
        return Err(CliError::invalid("--dists-per-cell must be at least 1"));
    }
    let mut sim_means = Vec::new();
    let mut theory_means = Vec::new();
    let mut zs = Vec::new();
    for d in 0..args.dists_per_cell {
        let idx = cell_index * args.dists_per_cell + d;
        let dist = Distribution::gen_with_entropy(
            m,
            args.entropy,
            derive_seed(args.seed, Domain::Grid, idx),
            DEFAULT_ENTROPY_TOL,
        )?;
        let set = sim::resample_many(
            &dist,
            n,
            args.trials_per_dist,
            derive_seed(args.seed, Domain::Resampling, idx),
            args.max_steps,
        )?;
        if set.censored_count() > 0 {
            return Err(CliError::Numerical(format!("{} censored trials", set.censored_count())));
        }
        let s = stats::summarize(&set.taus())?;
        let params = LawParams::new(dist, n)?;
        let theory = law::mean_first_extinction(&params, &QuadOptions::for_samples(n))?.value;
        zs.push(stats::z_compat(&s, theory)?);
        theory_means.push(theory);
        sim_means.push(s.mean);
    }
    let k = args.dists_per_cell as f64;
    let mean_sim = sim_means.iter().sum::<f64>() / k;
    let mean_theory = theory_means.iter().sum::<f64>() / k;
    let z = zs.iter().sum::<f64>() / k;
    Ok(Cell {
        m,
        n,
        mean_sim,
        mean_theory,
        z,
    })
}

pub fn grid(args: &GridArgs) -> Result<(), CliError> {
    if args.m_list.is_empty() || args.n_list.is_empty() {
        return Err(CliError::invalid("--m-list and --n-list must be nonempty"));
    }
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    let mut index = 0u64;
    for &m in &args.m_list {
        for &n in &args.n_list {
            match grid_cell(args, m, n, index) {
                Ok(c) => {
                    eprintln!("cell m={m} n={n}: z = {:.3}", c.z);
                    cells.push(c);
                }
                Err(e) => {
                    eprintln!("cell m={m} n={n} failed: {e}");
                    failures.push(json!({ "m": m, "n": n, "error": e.to_string() }));
                    cells.push(Cell {
                        m,
                        n,
                        mean_sim: f64::NAN,
                        mean_theory: f64::NAN,
                        z: f64::NAN,
                    });
                }
            }
            index += 1;
        }
    }
    let mut body = String::from("m,n,mean_sim,mean_theory,z\n");
    for c in &cells {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            c.m,
            c.n,
            fmt_f64(c.mean_sim),
            fmt_f64(c.mean_theory),
            fmt_f64(c.z)
        ));
    }
    let mut w = output::create(&args.out)?;
    w.write_all(body.as_bytes()).map_err(|e| CliError::io(&args.out, e))?;
    output::finish(w, &args.out)?;
    output::write_sidecar(
        &args.out,
        &ExperimentConfig::new(CommandConfig::Grid(args.clone())),
        json!({ "failed_cells": failures }),
    )
}
