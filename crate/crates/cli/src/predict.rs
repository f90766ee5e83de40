//! `gen-dist`, `predict` and `baxter`.

use std::io::Write;
use std::time::Instant;

use extinction::baxter::DEFAULT_SUBSET_CAP;
use extinction::dist::DEFAULT_ENTROPY_TOL;
use extinction::law::{self, CLOSED_FORM_MAX_STATES};
use extinction::{exact_mean, BaxterTerms, Distribution, LawParams, MeanEstimate, QuadOptions};
use serde::Serialize;
use serde_json::json;

use crate::config::{BaxterArgs, CommandConfig, ExperimentConfig, GenDistArgs, PredictArgs};
use crate::error::CliError;
use crate::output::{self, fmt_f64};

pub fn gen_dist(args: &GenDistArgs) -> Result<(), CliError> {
    let d = Distribution::gen_with_entropy(args.m, args.entropy, args.seed, DEFAULT_ENTROPY_TOL)?;
    output::write_json(args.out.as_deref(), &d)?;
    if let Some(out) = &args.out {
        let cfg = ExperimentConfig::new(CommandConfig::GenDist(args.clone()));
        output::write_sidecar(out, &cfg, json!({ "entropy_norm": d.entropy_norm() }))?;
    }
    eprintln!("realized normalized entropy S = {}", d.entropy_norm());
    Ok(())
}

#[derive(Serialize)]
struct Point {
    tau: f64,
    cdf: f64,
    pdf: f64,
}

#[derive(Serialize)]
struct QuantilePoint {
    q: f64,
    tau: f64,
}

#[derive(Serialize)]
struct PredictReport {
    config: ExperimentConfig,
    m: usize,
    n_samples: u64,
    entropy_norm: f64,
    mean: Option<MeanEstimate>,
    points: Vec<Point>,
    quantiles: Vec<QuantilePoint>,
}

fn quad_options(args: &PredictArgs) -> Result<QuadOptions, CliError> {
    if !(args.rel_tol > 0.0) {
        return Err(CliError::invalid(format!(
            "--rel-tol must be positive, got {}",
            args.rel_tol
        )));
    }
    Ok(QuadOptions {
        rel_tol: args.rel_tol,
        max_subdivisions: args.max_subdivisions,
        ..QuadOptions::for_samples(args.n_samples)
    })
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    if let Some(&t) = args.tau.iter().find(|t| !(**t > 0.0)) {
        return Err(CliError::invalid(format!("--tau values must be positive, got {t}")));
    }
    let params = LawParams::new(output::read_dist(&args.dist)?, args.n_samples)?;
    let opts = quad_options(args)?;

    let want_mean = args.mean || (args.tau.is_empty() && args.quantiles.is_empty());
    let mean = if want_mean {
        Some(law::mean_first_extinction(&params, &opts)?)
    } else {
        None
    };
    let points = args
        .tau
        .iter()
        .map(|&tau| {
            Ok(Point {
                tau,
                cdf: params.cdf(tau)?,
                pdf: params.pdf(tau)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let quantiles = args
        .quantiles
        .iter()
        .map(|&q| {
            Ok(QuantilePoint {
                q,
                tau: law::quantile(&params, q)?,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    if let Some(m) = &mean {
        eprintln!("mean first-extinction time = {} ± {:e}", m.value, m.abs_error);
    }
    let config = ExperimentConfig::new(CommandConfig::Predict(args.clone()));
    if let Some(path) = &args.cdf_out {
        let mut w = output::create(path)?;
        let mut body = String::from("tau,cdf,pdf\n");
        for p in &points {
            body.push_str(&format!("{},{},{}\n", fmt_f64(p.tau), fmt_f64(p.cdf), fmt_f64(p.pdf)));
        }
        w.write_all(body.as_bytes()).map_err(|e| CliError::io(path, e))?;
        output::finish(w, path)?;
        output::write_sidecar(path, &config, json!({}))?;
    }
    let report = PredictReport {
        config,
        m: params.dist().m(),
        n_samples: params.n_samples(),
        entropy_norm: params.dist().entropy_norm(),
        mean,
        points,
        quantiles,
    };
    output::write_json(args.out.as_deref(), &report)
}

#[derive(Serialize)]
struct BaxterReport {
    config: ExperimentConfig,
    m: usize,
    n_samples: u64,
    exact_mean: f64,
    subsets: Option<u64>,
    wall_time_s: f64,
    quadrature_mean: MeanEstimate,
    rel_diff: f64,
    closed_form_mean: Option<f64>,
}

fn is_flat(d: &Distribution) -> bool {
    let p0 = d.probs()[0];
    d.probs().iter().all(|&p| p == p0)
}

pub fn baxter(args: &BaxterArgs) -> Result<(), CliError> {
    let params = LawParams::new(output::read_dist(&args.dist)?, args.n_samples)?;
    let cap = if args.force { usize::MAX } else { DEFAULT_SUBSET_CAP };
    let terms = BaxterTerms::from_params(&params, cap)?;
    let m = params.dist().m();

    let start = Instant::now();
    let exact = exact_mean(&terms);
    let wall = start.elapsed().as_secs_f64();

    let quad = law::mean_first_extinction(&params, &QuadOptions::for_samples(args.n_samples))?;
    let rel_diff = (quad.value - exact).abs() / exact.abs();
    let closed_form_mean = if is_flat(params.dist()) && m <= CLOSED_FORM_MAX_STATES {
        Some(law::flat_mean_closed_form(m, args.n_samples)?)
    } else {
        None
    };
    eprintln!(
        "exact (subset sum) {exact}   quadrature {}   relative difference {rel_diff:e}",
        quad.value
    );

    let subsets = u32::try_from(m).ok().and_then(|m| 1u64.checked_shl(m)).map(|s| s - 1);
    let report = BaxterReport {
        config: ExperimentConfig::new(CommandConfig::Baxter(args.clone())),
        m,
        n_samples: args.n_samples,
        exact_mean: exact,
        subsets,
        wall_time_s: wall,
        quadrature_mean: quad,
        rel_diff,
        closed_form_mean,
    };
    output::write_json(args.out.as_deref(), &report)
}
