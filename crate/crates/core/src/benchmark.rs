//! Replicated comparison of the variational fit against the reference
//! sampler on the additive simulation model.
//!
//! Each replicate simulates data, fits both, and scores the variational
//! densities of the mean at the nine quartile points of `(x₁, x₂)`, of each
//! `σ²_ℓ` and (Negative Binomial) of `κ` against density estimates of the
//! corresponding draws.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{InverseGamma, LogNormal};

use crate::mcmc::{accuracy_score, mcmc_fit, ChainConfig, InverseGammaDensity, LogNormalDensity};
use crate::model::{assemble_design, Family, Hyperparameters, RawRecord};
use crate::quadrature::KappaDensity;
use crate::simulation::simulate_additive;
use crate::vmp::{elbo, fit, fixed_point_change, predict, FitConfig, Problem};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub family: Family,
    pub n: usize,
    /// Spline basis size for both predictors.
    pub k: usize,
    pub replicates: usize,
    pub seed: u64,
    pub fit: FitConfig,
    pub chain: ChainConfig,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(family: Family) -> Self {
        BenchmarkConfig {
            family,
            n: 500,
            k: 17,
            replicates: 20,
            seed: 1,
            fit: FitConfig::default(),
            chain: ChainConfig::default(),
            threads: None,
        }
    }

    fn replicate_seed(&self, r: usize) -> u64 {
        self.seed.wrapping_mul(1_000_003).wrapping_add(r as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub fit_seconds: f64,
    pub mcmc_seconds: f64,
    /// Quartile points `(x₁, x₂)` in row-major order over `x₁`.
    pub points: Vec<(f64, f64)>,
    pub mu_accuracy: Vec<f64>,
    pub sigma2_accuracy: Vec<f64>,
    pub kappa_accuracy: Option<f64>,
    /// Variational posterior mean of `κ`.
    pub kappa_mean: Option<f64>,
    /// Largest relative change from applying one more unmodified cycle.
    pub fixed_point_change: f64,
    /// The last ten ELBO values are nondecreasing within `1e-8` relative.
    pub elbo_tail_monotone: bool,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub parameter: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn sample_quartiles(x: &[f64]) -> [f64; 3] {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let at = |p: f64| {
        let pos = p * (v.len() - 1) as f64;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if i + 1 < v.len() {
            v[i] + frac * (v[i + 1] - v[i])
        } else {
            v[i]
        }
    };
    [at(0.25), at(0.5), at(0.75)]
}

/// `true` when `values` never drops by more than `1e-8` relative.
pub fn tail_monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] >= w[0] - 1e-8 * w[0].abs())
}

pub fn run_replicate(config: &BenchmarkConfig, replicate: usize) -> Result<ReplicateResult> {
    let seed = config.replicate_seed(replicate);
    let data = simulate_additive(config.n, config.family, seed);
    let design = assemble_design(
        &[data.x1.clone(), data.x2.clone()],
        &[(0, config.k), (1, config.k)],
        None,
    )?;
    let hyper = Hyperparameters::default_for(2);

    let start = Instant::now();
    let res = fit(config.family, &design, &data.y, &hyper, &config.fit)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let pb = Problem::new(config.family, &design, &data.y, &hyper)?;
    let state = res.state();
    let change = fixed_point_change(&pb, &state)?;
    debug_assert!((elbo(&pb, &state) - res.final_elbo()).abs() <= 1e-8 * res.final_elbo().abs());
    let tail = &res.elbo_trace[res.elbo_trace.len().saturating_sub(10)..];

    let start = Instant::now();
    let chain = ChainConfig {
        seed: seed ^ 0x9e37_79b9_7f4a_7c15,
        ..config.chain
    };
    let samples = mcmc_fit(config.family, &design, &data.y, &hyper, &chain)?;
    let mcmc_seconds = start.elapsed().as_secs_f64();

    let encoder = design
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Design("assembled design has no encoder".into()))?;
    let (q1, q2) = (sample_quartiles(&data.x1), sample_quartiles(&data.x2));
    let mut points = Vec::with_capacity(9);
    let mut mu_accuracy = Vec::with_capacity(9);
    for &a in &q1 {
        for &b in &q2 {
            let c = encoder
                .encode(&RawRecord {
                    x: vec![a, b],
                    group: None,
                })?
                .c;
            let p = predict(
                &res.gaussian,
                &DMatrix::from_row_slice(1, c.len(), c.as_slice()),
            );
            let q = LogNormal::new(p.eta_mean[0], p.eta_sd[0])
                .map_err(|e| Error::Parameter(e.to_string()))?;
            let q = LogNormalDensity(q);
            mu_accuracy.push(accuracy_score(&q, &samples.mean_at(&c))?);
            points.push((a, b));
        }
    }
    let sigma2_accuracy = res
        .variances
        .blocks
        .iter()
        .zip(&samples.sigma2)
        .map(|(block, draws)| {
            let q = InverseGamma::new(block.sigma2_shape, block.sigma2_rate)
                .map_err(|e| Error::Parameter(e.to_string()))?;
            accuracy_score(&InverseGammaDensity(q), draws)
        })
        .collect::<Result<Vec<_>>>()?;
    let (kappa_accuracy, kappa_mean) = match (&res.negbin, &samples.kappa) {
        (Some(aux), Some(draws)) => {
            let q = KappaDensity::new(design.n() as f64, aux.c1, hyper.kappa_min, hyper.kappa_max)?;
            (Some(accuracy_score(&q, draws)?), Some(aux.mu_kappa))
        }
        _ => (None, None),
    };
    Ok(ReplicateResult {
        replicate,
        seed,
        converged: res.converged,
        iterations: res.iterations,
        fit_seconds,
        mcmc_seconds,
        points,
        mu_accuracy,
        sigma2_accuracy,
        kappa_accuracy,
        kappa_mean,
        fixed_point_change: change,
        elbo_tail_monotone: tail_monotone(tail),
        warnings: samples.warnings,
    })
}

/// All replicates, in replicate order, run in parallel.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<Vec<ReplicateResult>> {
    let run = || {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_replicate(config, r))
            .collect::<Result<Vec<_>>>()
    };
    match config.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Parameter(e.to_string()))?
            .install(run),
        None => run(),
    }
}

/// Median and quartiles of a sample; `None` if it is empty.
pub fn median_iqr(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let [q1, m, q3] = sample_quartiles(values);
    Some((m, q1, q3))
}

/// Median and IQR of every accuracy across replicates.
pub fn summarize(results: &[ReplicateResult]) -> Vec<Summary> {
    let mut out = Vec::new();
    let mut push = |name: String, values: Vec<f64>| {
        if let Some((median, q1, q3)) = median_iqr(&values) {
            out.push(Summary {
                parameter: name,
                median,
                q1,
                q3,
            });
        }
    };
    let Some(first) = results.first() else {
        return out;
    };
    for i in 0..first.points.len() {
        let name = format!("mu[x1=Q{},x2=Q{}]", i / 3 + 1, i % 3 + 1);
        push(name, results.iter().map(|r| r.mu_accuracy[i]).collect());
    }
    for ell in 0..first.sigma2_accuracy.len() {
        push(
            format!("sigma2_{}", ell + 1),
            results.iter().map(|r| r.sigma2_accuracy[ell]).collect(),
        );
    }
    push(
        "kappa".into(),
        results.iter().filter_map(|r| r.kappa_accuracy).collect(),
    );
    out
}

/// Pooled median over the nine mean-accuracy points of all replicates.
pub fn median_mu_accuracy(results: &[ReplicateResult]) -> f64 {
    let all: Vec<f64> = results
        .iter()
        .flat_map(|r| r.mu_accuracy.iter().copied())
        .collect();
    median_iqr(&all).map_or(f64::NAN, |(m, _, _)| m)
}
