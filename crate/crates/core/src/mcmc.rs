//! Reference posterior sampler and the accuracy score that compares a
//! variational density with it.
//!
//! The sampler is Metropolis-within-Gibbs on the model's full conditionals:
//! `a_ℓ` and `σ²_ℓ` are drawn exactly from their Inverse-Gamma conditionals,
//! each coefficient block (fixed effects, then every random block) moves by a
//! random walk whose covariance is the inverse of that block's conditional
//! negative Hessian, and for the Negative Binomial model `log κ` moves by a
//! scalar random walk. The coefficient and `κ` moves target the likelihood
//! with the gamma variables `g` integrated out; `g` itself is drawn from its
//! Gamma full conditional each sweep and only its running mean is kept.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, InverseGamma, LogNormal, Normal};
use statrs::function::gamma::ln_gamma;

use crate::distributions::{gamma_draw, inverse_gamma_draw};
use crate::linalg::{cholesky, spd_inverse};
use crate::model::{DesignBlocks, Family, Hyperparameters};
use crate::quadrature::KappaDensity;
use crate::{Error, Result, SeededRng};

/// Acceptance rate the proposal scales are tuned toward during burn-in.
pub const TARGET_ACCEPTANCE: f64 = 0.35;
const ADAPT_BATCH: usize = 50;
const HESSIAN_REFRESH: usize = 500;
const ACCEPTANCE_BAND: (f64, f64) = (0.1, 0.6);
const GRID_POINTS: usize = 4096;
const TAIL: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub kept: usize,
    pub thin: usize,
    /// Multiplier on the initial random-walk scale `2.38/√d`.
    pub proposal_scale: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            burn_in: 5000,
            kept: 5000,
            thin: 5,
            proposal_scale: 1.0,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kept < 100 {
            return Err(Error::param(format!(
                "need at least 100 kept draws, got {}",
                self.kept
            )));
        }
        if self.thin == 0 {
            return Err(Error::param("thin must be at least 1"));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return Err(Error::domain("proposal scale", self.proposal_scale));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// One kept draw of `(β, u)` per row.
    pub theta: DMatrix<f64>,
    /// Kept draws of `σ²_ℓ`, one vector per variance block.
    pub sigma2: Vec<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    /// Posterior mean of the gamma variables (Negative Binomial only).
    pub g_mean: Option<DVector<f64>>,
    /// Post-burn-in acceptance rate of each coefficient block, then of `κ`.
    pub acceptance: Vec<f64>,
    pub warnings: Vec<String>,
}

impl PosteriorSamples {
    pub fn kept(&self) -> usize {
        self.theta.nrows()
    }

    /// Draws of the mean `exp(cᵀθ)` at a design row.
    pub fn mean_at(&self, c: &DVector<f64>) -> Vec<f64> {
        (&self.theta * c).iter().map(|e| e.exp()).collect()
    }
}

/// Log-likelihood with constants in `y` dropped. For the Negative Binomial
/// model `g` is integrated out and the `κ` terms are kept.
fn log_lik(family: Family, y: &DVector<f64>, eta: &DVector<f64>, kappa: f64) -> f64 {
    match family {
        Family::Poisson => y
            .iter()
            .zip(eta.iter())
            .map(|(&yi, &e)| yi * e - e.exp())
            .sum(),
        Family::NegativeBinomial => {
            let ln_k = kappa.ln();
            let mut total = y.len() as f64 * (kappa * ln_k - ln_gamma(kappa));
            for (&yi, &e) in y.iter().zip(eta.iter()) {
                total += ln_gamma(yi + kappa) + yi * e - (yi + kappa) * log_add_exp(ln_k, e);
            }
            total
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Gradient and Hessian weights of the log-likelihood in `η`.
fn lik_derivatives(
    family: Family,
    y: &DVector<f64>,
    eta: &DVector<f64>,
    kappa: f64,
) -> (DVector<f64>, DVector<f64>) {
    match family {
        Family::Poisson => {
            let mean = eta.map(f64::exp);
            (y - &mean, mean)
        }
        Family::NegativeBinomial => {
            let ln_k = kappa.ln();
            // p = e^η/(κ + e^η)
            let p = eta.map(|e| (e - log_add_exp(ln_k, e)).exp());
            let grad = DVector::from_fn(y.len(), |i, _| y[i] - (y[i] + kappa) * p[i]);
            let weight = DVector::from_fn(y.len(), |i, _| (y[i] + kappa) * p[i] * (1.0 - p[i]));
            (grad, weight)
        }
    }
}

/// One random-walk Metropolis step on a scalar. Returns the new value and
/// whether the proposal was accepted.
pub fn rw_step<R: Rng + ?Sized>(
    x: f64,
    log_target: impl Fn(f64) -> f64,
    scale: f64,
    current: f64,
    rng: &mut R,
) -> (f64, f64, bool) {
    let z: f64 = rng.sample(StandardNormal);
    let proposal = x + scale * z;
    let candidate = log_target(proposal);
    if candidate.is_finite() && rng.random::<f64>().ln() < candidate - current {
        (proposal, candidate, true)
    } else {
        (x, current, false)
    }
}

/// Exact Gibbs update of `(a_ℓ, σ²_ℓ)` given `‖u_ℓ‖²`:
/// `a ~ IG(1, 1/σ² + A⁻²)`, then `σ² ~ IG((K+1)/2, 1/a + ½‖u‖²)`.
pub fn variance_gibbs_step<R: Rng + ?Sized>(
    sigma2: f64,
    k: usize,
    u_sq: f64,
    big_a: f64,
    rng: &mut R,
) -> (f64, f64) {
    let a = inverse_gamma_draw(1.0, 1.0 / sigma2 + big_a.powi(-2), rng);
    let s2 = inverse_gamma_draw(0.5 * (k as f64 + 1.0), 1.0 / a + 0.5 * u_sq, rng);
    (a, s2)
}

struct Chain<'a> {
    family: Family,
    design: &'a DesignBlocks,
    hyper: &'a Hyperparameters,
    y: DVector<f64>,
    blocks: Vec<(usize, usize)>,
    block_cols: Vec<DMatrix<f64>>,
    theta: DVector<f64>,
    eta: DVector<f64>,
    sigma2: Vec<f64>,
    kappa: f64,
    log_lik: f64,
}

impl Chain<'_> {
    fn prior_precision(&self) -> DVector<f64> {
        self.design.prior_precision_diag(
            self.hyper.sigma_beta,
            &self.sigma2.iter().map(|s| 1.0 / s).collect::<Vec<_>>(),
        )
    }

    fn refresh_log_lik(&mut self) {
        self.log_lik = log_lik(self.family, &self.y, &self.eta, self.kappa);
    }

    /// Penalized Newton iterations with step halving toward the conditional
    /// mode of `θ` at the current variances and `κ`.
    fn move_to_mode(&mut self) -> Result<()> {
        let c = &self.design.c;
        let m = self.prior_precision();
        let objective = |theta: &DVector<f64>, eta: &DVector<f64>| {
            log_lik(self.family, &self.y, eta, self.kappa)
                - 0.5
                    * theta
                        .iter()
                        .zip(m.iter())
                        .map(|(t, mj)| mj * t * t)
                        .sum::<f64>()
        };
        let mut current = objective(&self.theta, &self.eta);
        for _ in 0..200 {
            let (grad, weight) = lik_derivatives(self.family, &self.y, &self.eta, self.kappa);
            let mut h = crate::linalg::weighted_gram(c, &weight);
            for j in 0..m.len() {
                h[(j, j)] += m[j];
            }
            let g = c.tr_mul(&grad) - m.component_mul(&self.theta);
            let step = cholesky(&h, "mode search Hessian")?.solve(&g);
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..50 {
                let trial = &self.theta + &step * t;
                let eta = c * &trial;
                let value = objective(&trial, &eta);
                if value.is_finite() && value >= current {
                    let gain = value - current;
                    self.theta = trial;
                    self.eta = eta;
                    current = value;
                    moved = gain > 1e-10 * current.abs().max(1.0);
                    break;
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        self.refresh_log_lik();
        Ok(())
    }

    /// Cholesky factors of the inverse conditional Hessian of every block,
    /// evaluated at the conditional mode of `θ` for the current variances
    /// and `κ`. The chain itself does not move.
    fn proposal_factors(&self) -> Result<Vec<DMatrix<f64>>> {
        let mut at_mode = Chain {
            blocks: Vec::new(),
            block_cols: Vec::new(),
            y: self.y.clone(),
            theta: self.theta.clone(),
            eta: self.eta.clone(),
            sigma2: self.sigma2.clone(),
            ..*self
        };
        at_mode.move_to_mode()?;
        let (_, weight) = lik_derivatives(self.family, &self.y, &at_mode.eta, self.kappa);
        let m = self.prior_precision();
        self.blocks
            .iter()
            .zip(&self.block_cols)
            .map(|(&(start, d), cols)| {
                let mut h = crate::linalg::weighted_gram(cols, &weight);
                for j in 0..d {
                    h[(j, j)] += m[start + j];
                }
                let cov = spd_inverse(&h, "block proposal covariance")?;
                Ok(cholesky(&cov, "block proposal covariance")?.l())
            })
            .collect()
    }

    fn block_log_prior(&self, start: usize, values: &[f64], m: &DVector<f64>) -> f64 {
        -0.5 * values
            .iter()
            .enumerate()
            .map(|(j, v)| m[start + j] * v * v)
            .sum::<f64>()
    }

    fn theta_block_step(
        &mut self,
        b: usize,
        factor: &DMatrix<f64>,
        scale: f64,
        rng: &mut SeededRng,
    ) -> bool {
        let (start, d) = self.blocks[b];
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let delta = factor * z * scale;
        let m = self.prior_precision();
        let old: Vec<f64> = self.theta.rows(start, d).iter().copied().collect();
        let new: Vec<f64> = old.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        let eta_new = &self.eta + &self.block_cols[b] * &delta;
        let lik_new = log_lik(self.family, &self.y, &eta_new, self.kappa);
        let log_ratio = lik_new - self.log_lik + self.block_log_prior(start, &new, &m)
            - self.block_log_prior(start, &old, &m);
        if lik_new.is_finite() && rng.random::<f64>().ln() < log_ratio {
            self.theta.rows_mut(start, d).copy_from_slice(&new);
            self.eta = eta_new;
            self.log_lik = lik_new;
            true
        } else {
            false
        }
    }

    fn variance_step(&mut self, rng: &mut SeededRng) {
        for ell in 0..self.sigma2.len() {
            let range = self.design.block_range(ell);
            let k = range.len();
            let u_sq: f64 = range.map(|j| self.theta[j] * self.theta[j]).sum();
            let (_, s2) = variance_gibbs_step(self.sigma2[ell], k, u_sq, self.hyper.a[ell], rng);
            self.sigma2[ell] = s2;
        }
    }

    /// `log κ` random walk under the uniform prior; the Jacobian adds `log κ`.
    fn kappa_step(&mut self, scale: f64, rng: &mut SeededRng) -> bool {
        let (lo, hi) = (self.hyper.kappa_min, self.hyper.kappa_max);
        let target = |log_k: f64| {
            let k = log_k.exp();
            if k < lo || k > hi {
                f64::NEG_INFINITY
            } else {
                log_lik(Family::NegativeBinomial, &self.y, &self.eta, k) + log_k
            }
        };
        let current = self.log_lik + self.kappa.ln();
        let (log_k, _, accepted) = rw_step(self.kappa.ln(), target, scale, current, rng);
        if accepted {
            self.kappa = log_k.exp();
            self.refresh_log_lik();
        }
        accepted
    }

    fn g_draw(&self, rng: &mut SeededRng) -> DVector<f64> {
        DVector::from_fn(self.y.len(), |i, _| {
            gamma_draw(
                self.kappa + self.y[i],
                1.0 + self.kappa * (-self.eta[i]).exp(),
                rng,
            )
        })
    }
}

/// Run the sampler.
pub fn mcmc_fit(
    family: Family,
    design: &DesignBlocks,
    y: &[u64],
    hyper: &Hyperparameters,
    config: &ChainConfig,
) -> Result<PosteriorSamples> {
    config.validate()?;
    hyper.validate(design.r())?;
    if y.len() != design.n() {
        return Err(Error::Design(format!(
            "{} responses for {} design rows",
            y.len(),
            design.n()
        )));
    }
    let mut rng = crate::seeded_rng(config.seed);
    let mut blocks = vec![(0, design.p())];
    for ell in 0..design.r() {
        let range = design.block_range(ell);
        blocks.push((range.start, range.len()));
    }
    blocks.retain(|&(_, d)| d > 0);
    let block_cols = blocks
        .iter()
        .map(|&(s, d)| design.c.columns(s, d).into_owned())
        .collect();
    let kappa = match family {
        Family::Poisson => 1.0,
        Family::NegativeBinomial => 1.0f64.clamp(hyper.kappa_min, hyper.kappa_max),
    };
    let ncols = design.ncols();
    let mut chain = Chain {
        family,
        design,
        hyper,
        y: DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64)),
        blocks,
        block_cols,
        theta: DVector::zeros(ncols),
        eta: DVector::zeros(design.n()),
        sigma2: vec![1.0; design.r()],
        kappa,
        log_lik: 0.0,
    };
    chain.move_to_mode()?;

    let nb = chain.blocks.len();
    let mut log_scale: Vec<f64> = chain
        .blocks
        .iter()
        .map(|&(_, d)| (config.proposal_scale * 2.38 / (d as f64).sqrt()).ln())
        .collect();
    let mut kappa_log_scale = config.proposal_scale.ln() - 1.0;
    let mut factors = chain.proposal_factors()?;
    let mut batch_accept = vec![0usize; nb + 1];
    let mut kept_accept = vec![0usize; nb + 1];

    let total = config.burn_in + config.kept * config.thin;
    let mut theta_out = DMatrix::zeros(config.kept, ncols);
    let mut sigma2_out = vec![Vec::with_capacity(config.kept); design.r()];
    let mut kappa_out = Vec::with_capacity(config.kept);
    let mut g_sum = DVector::zeros(design.n());
    let mut stored = 0;
    for it in 0..total {
        let burning = it < config.burn_in;
        for b in 0..nb {
            let accepted = chain.theta_block_step(b, &factors[b], log_scale[b].exp(), &mut rng);
            batch_accept[b] += accepted as usize;
            if !burning {
                kept_accept[b] += accepted as usize;
            }
        }
        chain.variance_step(&mut rng);
        if family == Family::NegativeBinomial {
            let accepted = chain.kappa_step(kappa_log_scale.exp(), &mut rng);
            batch_accept[nb] += accepted as usize;
            if !burning {
                kept_accept[nb] += accepted as usize;
            }
        }
        if burning {
            if (it + 1) % ADAPT_BATCH == 0 {
                let gain = 1.0 / (1.0 + ((it + 1) / ADAPT_BATCH) as f64).sqrt();
                let rate = |n: usize| n as f64 / ADAPT_BATCH as f64;
                for b in 0..nb {
                    log_scale[b] += gain * (rate(batch_accept[b]) - TARGET_ACCEPTANCE) * 2.0;
                }
                kappa_log_scale += gain * (rate(batch_accept[nb]) - TARGET_ACCEPTANCE) * 2.0;
                batch_accept.fill(0);
            }
            // the scale keeps adapting to the last refreshed factors
            if (it + 1) % HESSIAN_REFRESH == 0 && 2 * (it + 1) <= config.burn_in {
                factors = chain.proposal_factors()?;
            }
            continue;
        }
        if family == Family::NegativeBinomial {
            g_sum += chain.g_draw(&mut rng);
        }
        if (it - config.burn_in + 1).is_multiple_of(config.thin) {
            theta_out
                .row_mut(stored)
                .copy_from(&chain.theta.transpose());
            for (out, &s) in sigma2_out.iter_mut().zip(&chain.sigma2) {
                out.push(s);
            }
            kappa_out.push(chain.kappa);
            stored += 1;
        }
    }

    let post = (config.kept * config.thin) as f64;
    let mut acceptance: Vec<f64> = kept_accept[..nb].iter().map(|&a| a as f64 / post).collect();
    if family == Family::NegativeBinomial {
        acceptance.push(kept_accept[nb] as f64 / post);
    }
    let warnings = acceptance
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < ACCEPTANCE_BAND.0 || r > ACCEPTANCE_BAND.1)
        .map(|(i, r)| {
            let what = if i < nb {
                format!("coefficient block {i}")
            } else {
                "kappa".to_string()
            };
            format!(
                "{what}: acceptance rate {r:.3} outside [{}, {}]",
                ACCEPTANCE_BAND.0, ACCEPTANCE_BAND.1
            )
        })
        .collect();
    let negbin = family == Family::NegativeBinomial;
    Ok(PosteriorSamples {
        theta: theta_out,
        sigma2: sigma2_out,
        kappa: negbin.then_some(kappa_out),
        g_mean: negbin.then(|| g_sum / post),
        acceptance,
        warnings,
    })
}

/// A univariate density that can be compared by [`l1_accuracy`].
pub trait Density1d {
    fn pdf(&self, x: f64) -> f64;
    /// Interval between the 0.1% and 99.9% quantiles (or a comparably
    /// tight effective support).
    fn range(&self) -> (f64, f64);
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalDensity(pub Normal);

impl Density1d for NormalDensity {
    fn pdf(&self, x: f64) -> f64 {
        self.0.pdf(x)
    }

    fn range(&self) -> (f64, f64) {
        (self.0.inverse_cdf(TAIL), self.0.inverse_cdf(1.0 - TAIL))
    }
}

/// Density of `exp(η)` for Gaussian `η`; the variational density of the
/// mean at a design point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormalDensity(pub LogNormal);

impl Density1d for LogNormalDensity {
    fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.0.pdf(x)
        }
    }

    fn range(&self) -> (f64, f64) {
        (self.0.inverse_cdf(TAIL), self.0.inverse_cdf(1.0 - TAIL))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseGammaDensity(pub InverseGamma);

impl Density1d for InverseGammaDensity {
    fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            self.0.pdf(x)
        }
    }

    fn range(&self) -> (f64, f64) {
        (self.0.inverse_cdf(TAIL), self.0.inverse_cdf(1.0 - TAIL))
    }
}

impl Density1d for KappaDensity {
    fn pdf(&self, x: f64) -> f64 {
        KappaDensity::pdf(self, x)
    }

    fn range(&self) -> (f64, f64) {
        self.support()
    }
}

/// Gaussian kernel density estimate with Silverman's bandwidth.
#[derive(Clone, Debug, PartialEq)]
pub struct Kde {
    sorted: Vec<f64>,
    bandwidth: f64,
}

impl Kde {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(
                "density estimate needs at least two finite samples",
            ));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let sd = (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        if !(spread > 0.0) {
            return Err(Error::param("samples have zero spread"));
        }
        Ok(Kde {
            bandwidth: 0.9 * spread * n.powf(-0.2),
            sorted,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

impl Density1d for Kde {
    fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let lo = self.sorted.partition_point(|&s| s < x - 8.0 * h);
        let hi = self.sorted.partition_point(|&s| s <= x + 8.0 * h);
        let norm = 1.0 / (self.sorted.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        self.sorted[lo..hi]
            .iter()
            .map(|&s| {
                let z = (x - s) / h;
                (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            * norm
    }

    fn range(&self) -> (f64, f64) {
        let h = self.bandwidth;
        (
            quantile(&self.sorted, TAIL) - 3.0 * h,
            quantile(&self.sorted, 1.0 - TAIL) + 3.0 * h,
        )
    }
}

/// `100 (1 − ½ ∫ |a − b|)`, integrated by the trapezoid rule on the union
/// of two 4096-point grids spanning each density's range. Clamped to
/// `[0, 100]`.
pub fn l1_accuracy(a: &dyn Density1d, b: &dyn Density1d) -> f64 {
    let mut grid = Vec::with_capacity(2 * GRID_POINTS);
    for (lo, hi) in [a.range(), b.range()] {
        for i in 0..GRID_POINTS {
            grid.push(lo + (hi - lo) * i as f64 / (GRID_POINTS - 1) as f64);
        }
    }
    grid.retain(|v| v.is_finite());
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let diff: Vec<f64> = grid.iter().map(|&x| (a.pdf(x) - b.pdf(x)).abs()).collect();
    let l1: f64 = (1..grid.len())
        .map(|i| 0.5 * (grid[i] - grid[i - 1]) * (diff[i] + diff[i - 1]))
        .sum();
    (100.0 * (1.0 - 0.5 * l1)).clamp(0.0, 100.0)
}

/// Accuracy of `q` against the density estimate built from `samples`.
pub fn accuracy_score(q: &dyn Density1d, samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::param(format!(
            "need at least 100 samples, got {}",
            samples.len()
        )));
    }
    let kde = Kde::new(samples)?;
    Ok(l1_accuracy(q, &kde))
}
