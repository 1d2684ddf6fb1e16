use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use countvb::benchmark::{run_benchmark, summarize, BenchmarkConfig, ReplicateResult};
use countvb::mcmc::{mcmc_fit, ChainConfig, PosteriorSamples};
use countvb::model::{assemble_design, Family, ModelSpec};
use countvb::simulation::{simulate_additive, simulate_movie};
use countvb::stream::{warmup, Ingest};
use countvb::vmp::{fit, predict, GaussianQ};
use countvb::{DesignBlocks, FitConfig, RowEncoder};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::data::{default_spec, num, read_dataset, write_rows, Dataset};

pub const GRID_POINTS: usize = 200;

/// Process exit status for a fit that stopped without converging.
pub const EXIT_NOT_CONVERGED: u8 = 2;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn load_spec(config: Option<&Path>, input: &Path, k: usize) -> Result<ModelSpec> {
    match config {
        Some(p) => {
            let text =
                fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("{}: invalid model config", p.display()))
        }
        None => default_spec(input, k),
    }
}

fn build_design(spec: &ModelSpec, data: &Dataset) -> Result<DesignBlocks> {
    if let Some(s) = spec.smooths.iter().find(|s| s.k < 2) {
        bail!("smooth of '{}' needs K ≥ 2, got {}", s.column, s.k);
    }
    Ok(assemble_design(
        &data.x,
        &spec.smooth_indices()?,
        data.groups.as_deref(),
    )?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Curve {
    pub term: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Fitted mean over each smooth's training range, other predictors at their
/// training means and random intercepts at zero.
pub fn curves(spec: &ModelSpec, encoder: &RowEncoder, g: &GaussianQ) -> Result<Vec<Curve>> {
    let base: Vec<f64> = encoder.linear.iter().map(|s| s.mean).collect();
    let group = encoder.group_levels.as_ref().map(|l| l[0].clone());
    let group_cols = encoder.group_levels.as_ref().map_or(0, |l| l.len());
    let ncols = encoder.ncols();
    let mut out = Vec::new();
    for (term, (j, basis)) in spec.smooths.iter().zip(&encoder.smooths) {
        let (lo, hi) = basis.range();
        let xs: Vec<f64> = (0..GRID_POINTS)
            .map(|i| lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64)
            .collect();
        let mut c = DMatrix::zeros(GRID_POINTS, ncols);
        for (i, &x) in xs.iter().enumerate() {
            let mut rec = countvb::RawRecord {
                x: base.clone(),
                group: group.clone(),
            };
            rec.x[*j] = x;
            let mut row = encoder.encode(&rec)?.c;
            row.rows_mut(ncols - group_cols, group_cols).fill(0.0);
            c.row_mut(i).copy_from(&row.transpose());
        }
        let p = predict(g, &c);
        out.push(Curve {
            term: term.column.clone(),
            x: xs,
            mean: p.mean.as_slice().to_vec(),
            lower: p.lower.as_slice().to_vec(),
            upper: p.upper.as_slice().to_vec(),
        });
    }
    Ok(out)
}

pub struct SimulateArgs {
    pub family: Family,
    pub n: usize,
    pub seed: u64,
    pub movie: bool,
    pub output: Option<PathBuf>,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    if a.n == 0 {
        bail!("n must be at least 1");
    }
    let out = output(a.output.as_deref())?;
    if a.movie {
        let (y, x) = simulate_movie(a.n, a.seed);
        let rows = y.iter().zip(&x).map(|(y, x)| vec![y.to_string(), num(*x)]);
        write_rows(out, &["y", "x"], rows)
    } else {
        let d = simulate_additive(a.n, a.family, a.seed);
        let rows = (0..a.n).map(|i| vec![d.y[i].to_string(), num(d.x1[i]), num(d.x2[i])]);
        write_rows(out, &["y", "x1", "x2"], rows)
    }
}

pub struct FitArgs {
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub family: Option<Family>,
    pub k: usize,
    pub fit: FitConfig,
    pub seed: u64,
    pub output: PathBuf,
    pub mcmc_samples: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    spec: &'a ModelSpec,
    family: Family,
    fit_config: &'a FitConfig,
    encoder: &'a Option<RowEncoder>,
    result: &'a countvb::FitResult,
}

/// Returns whether the fit converged.
pub fn fit_command(a: &FitArgs) -> Result<bool> {
    let spec = load_spec(a.config.as_deref(), &a.input, a.k)?;
    let family = a.family.or(spec.family).unwrap_or(Family::Poisson);
    let data = read_dataset(&a.input, &spec)?;
    let design = build_design(&spec, &data)?;
    let hyper = spec.hyper.resolve(design.r())?;

    let start = Instant::now();
    let res = fit(family, &design, &data.y, &hyper, &a.fit)?;
    eprintln!(
        "{} after {} iterations in {:.3} s, lower bound {}",
        if res.converged {
            "converged"
        } else {
            "did not converge"
        },
        res.iterations,
        start.elapsed().as_secs_f64(),
        res.final_elbo()
    );

    output_dir(&a.output)?;
    let report = FitReport {
        spec: &spec,
        family,
        fit_config: &a.fit,
        encoder: &design.encoder,
        result: &res,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    fs::write(a.output.join("fit.json"), json)?;

    let encoder = design
        .encoder
        .as_ref()
        .expect("assembled designs carry an encoder");
    let rows = curves(&spec, encoder, &res.gaussian)?
        .into_iter()
        .flat_map(|c| {
            (0..c.x.len())
                .map(|i| {
                    vec![
                        c.term.clone(),
                        num(c.x[i]),
                        num(c.mean[i]),
                        num(c.lower[i]),
                        num(c.upper[i]),
                    ]
                })
                .collect::<Vec<_>>()
        });
    write_rows(
        output(Some(&a.output.join("curves.csv")))?,
        &["term", "x", "mean", "lower", "upper"],
        rows,
    )?;

    if let Some(path) = &a.mcmc_samples {
        let chain = ChainConfig {
            seed: a.seed,
            ..ChainConfig::default()
        };
        let samples = mcmc_fit(family, &design, &data.y, &hyper, &chain)?;
        for w in &samples.warnings {
            eprintln!("warning: {w}");
        }
        write_samples(output(Some(path))?, &samples)?;
    }
    Ok(res.converged)
}

fn write_samples<W: Write>(out: W, s: &PosteriorSamples) -> Result<()> {
    let mut header: Vec<String> = (0..s.theta.ncols()).map(|j| format!("theta_{j}")).collect();
    header.extend((1..=s.sigma2.len()).map(|l| format!("sigma2_{l}")));
    if s.kappa.is_some() {
        header.push("kappa".into());
    }
    let rows = (0..s.kept()).map(|i| {
        let mut row: Vec<String> = s.theta.row(i).iter().map(|v| num(*v)).collect();
        row.extend(s.sigma2.iter().map(|d| num(d[i])));
        if let Some(k) = &s.kappa {
            row.push(num(k[i]));
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(out, &header, rows)
}

pub struct StreamArgs {
    pub input: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub k: usize,
    pub n_warm: usize,
    pub f_update: usize,
    pub snapshot_every: usize,
    pub fit: FitConfig,
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct SnapshotLine<'a> {
    /// Observations seen, warm-up included.
    n: usize,
    offered: usize,
    rejected: usize,
    mu: &'a [f64],
    sigma_diag: Vec<f64>,
    grid: Vec<GridLine>,
}

#[derive(Serialize)]
struct GridLine {
    term: String,
    x: Vec<f64>,
    mean: Vec<f64>,
}

/// Summary of a streaming run, returned for reporting.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamSummary {
    pub snapshots: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub mean_latency_us: f64,
}

pub fn stream_command(a: &StreamArgs) -> Result<StreamSummary> {
    if a.snapshot_every == 0 {
        bail!("--snapshot-every must be at least 1");
    }
    let (spec, data) = match &a.input {
        Some(path) => {
            let spec = load_spec(a.config.as_deref(), path, a.k)?;
            let data = read_dataset(path, &spec)?;
            (spec, data)
        }
        None => {
            let (y, x) = simulate_movie(a.n, a.seed);
            let spec = ModelSpec::additive(&["x"], a.k);
            (
                spec,
                Dataset {
                    y,
                    x: vec![x],
                    groups: None,
                },
            )
        }
    };
    if a.n_warm > data.len() {
        bail!(
            "--n-warm {} exceeds the {} available records",
            a.n_warm,
            data.len()
        );
    }
    let warm = data.head(a.n_warm);
    let design = build_design(&spec, &warm)?;
    let hyper = spec.hyper.resolve(design.r())?;
    let mut state = warmup(&design, &warm.y, &hyper, &a.fit, a.f_update)?;
    let encoder = design
        .encoder
        .clone()
        .expect("assembled designs carry an encoder");

    let mut out = output(a.output.as_deref())?;
    let mut snapshots = 0;
    let mut emit =
        |state: &countvb::stream::StreamState, offered: usize, out: &mut dyn Write| -> Result<()> {
            let grid = curves(&spec, &encoder, &state.gaussian)?
                .into_iter()
                .map(|c| GridLine {
                    term: c.term,
                    x: c.x,
                    mean: c.mean,
                })
                .collect();
            let line = SnapshotLine {
                n: state.n,
                offered,
                rejected: state.rejected,
                mu: state.gaussian.mu.as_slice(),
                sigma_diag: state.gaussian.sigma.diagonal().as_slice().to_vec(),
                grid,
            };
            serde_json::to_writer(&mut *out, &line)?;
            out.write_all(b"\n")?;
            snapshots += 1;
            Ok(())
        };
    emit(&state, 0, &mut out)?;

    let mut elapsed = 0.0;
    let mut accepted = 0;
    for (k, i) in (a.n_warm..data.len()).enumerate() {
        let rec = data.record(i);
        let start = Instant::now();
        let result = state.ingest(data.y[i], &rec)?;
        elapsed += start.elapsed().as_secs_f64();
        match result {
            Ingest::Accepted { .. } => accepted += 1,
            Ingest::Rejected(why) => eprintln!("record {}: rejected: {why}", i + 1),
        }
        if (k + 1) % a.snapshot_every == 0 {
            emit(&state, k + 1, &mut out)?;
        }
    }
    out.flush()?;
    let streamed = data.len() - a.n_warm;
    Ok(StreamSummary {
        snapshots,
        accepted,
        rejected: state.rejected,
        mean_latency_us: if streamed > 0 {
            1e6 * elapsed / streamed as f64
        } else {
            0.0
        },
    })
}

pub struct BenchmarkArgs {
    pub config: BenchmarkConfig,
    pub output: Option<PathBuf>,
}

fn accuracy_rows(results: &[ReplicateResult]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in results {
        let mut push = |name: String, v: f64| {
            rows.push(vec![
                r.replicate.to_string(),
                r.seed.to_string(),
                name,
                num(v),
            ])
        };
        for (i, v) in r.mu_accuracy.iter().enumerate() {
            push(format!("mu[x1=Q{},x2=Q{}]", i / 3 + 1, i % 3 + 1), *v);
        }
        for (l, v) in r.sigma2_accuracy.iter().enumerate() {
            push(format!("sigma2_{}", l + 1), *v);
        }
        if let Some(v) = r.kappa_accuracy {
            push("kappa".into(), v);
        }
    }
    rows
}

pub fn benchmark_command(a: &BenchmarkArgs) -> Result<Vec<ReplicateResult>> {
    let start = Instant::now();
    let results = run_benchmark(&a.config)?;
    eprintln!(
        "{} replicates in {:.1} s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    for r in &results {
        if !r.converged {
            eprintln!(
                "replicate {}: variational fit did not converge",
                r.replicate
            );
        }
        for w in &r.warnings {
            eprintln!("replicate {}: {w}", r.replicate);
        }
    }
    let summary = summarize(&results);
    let summary_rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| vec![s.parameter.clone(), num(s.median), num(s.q1), num(s.q3)])
        .collect();
    let header = ["parameter", "median", "q1", "q3"];
    match &a.output {
        Some(dir) => {
            output_dir(dir)?;
            write_rows(
                output(Some(&dir.join("summary.csv")))?,
                &header,
                summary_rows,
            )?;
            write_rows(
                output(Some(&dir.join("accuracy.csv")))?,
                &["replicate", "seed", "parameter", "accuracy"],
                accuracy_rows(&results),
            )?;
            let timing = results.iter().map(|r| {
                vec![
                    r.replicate.to_string(),
                    r.iterations.to_string(),
                    num(r.fit_seconds),
                    num(r.mcmc_seconds),
                ]
            });
            write_rows(
                output(Some(&dir.join("timing.csv")))?,
                &["replicate", "iterations", "fit_seconds", "mcmc_seconds"],
                timing,
            )?;
        }
        None => write_rows(output(None)?, &header, summary_rows)?,
    }
    Ok(results)
}
