//! Batch non-conjugate variational message passing.
//!
//! The approximation is `q(β,u) q(σ²) q(a)` for the Poisson model and
//! additionally `q(g) q(κ)` for the Negative Binomial model (written as a
//! Poisson–Gamma mixture), where `q(β,u)` is constrained to be Gaussian.
//! One cycle of [`fit`] performs, in order:
//!
//! 1. `M ← blockdiag(σ_β⁻² I_p, μ_{q(1/σ²_1)} I_{K_1}, …)`;
//! 2. the family-specific updates of `w` and `μ` (plus `q(g)` and `q(κ)` for
//!    the Negative Binomial model);
//! 3. `Σ ← (μ_{q(κ)} Cᵀ diag(μ_{q(g)} ⊙ w) C + M)⁻¹`;
//! 4. the `q(a_ℓ)` and `q(σ²_ℓ)` updates for each variance block;
//!
//! and the lower bound on `log p(y)` is evaluated after every cycle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::linalg::{cholesky, row_quadratic_forms, symmetrize, weighted_gram};
use crate::model::{DesignBlocks, Family, Hyperparameters};
use crate::quadrature::{kappa_expectation, kappa_posterior_mean, log_h, HArgs};
use crate::{Error, Result};

/// Exponents of `w` are capped here to keep every quantity finite.
pub const EXP_CLAMP: f64 = 700.0;
/// A fit only counts as converged if this many trailing cycles were
/// clamp-free.
pub const CLAMP_FREE_TAIL: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianQ {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// `q(a_ℓ) = IG(a_shape, a_rate)` and `q(σ²_ℓ) = IG(sigma2_shape, sigma2_rate)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceBlockQ {
    pub recip_sigma2: f64,
    pub recip_a: f64,
    pub sigma2_shape: f64,
    pub sigma2_rate: f64,
    pub a_shape: f64,
    pub a_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceQ {
    pub blocks: Vec<VarianceBlockQ>,
}

impl VarianceQ {
    pub fn recip_sigma2(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.recip_sigma2).collect()
    }
}

/// `q(g)` and `q(κ)` summaries. For the Poisson model the cycle pins
/// `mu_g = 1` and `mu_kappa = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegBinAux {
    pub mu_g: DVector<f64>,
    pub mu_log_g: DVector<f64>,
    pub mu_kappa: f64,
    pub c1: f64,
}

/// Everything the cycle reads and writes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    pub iteration: usize,
    pub gaussian: GaussianQ,
    pub variances: VarianceQ,
    pub aux: NegBinAux,
    pub w: DVector<f64>,
    /// `ln |Σ|`, kept in step with `gaussian.sigma`.
    pub log_det_sigma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// `μ = 0`, `Σ = I`, `μ_{q(1/σ²)} = 1`, `μ_{q(κ)} = 1`, `μ_{q(g)} = 1`.
    #[default]
    Literal,
    /// As `Literal`, except the intercept starts at `ln(ȳ + 0.1)` and `Σ` is
    /// one covariance update at that mean.
    Informed,
}

/// How the mean step of each cycle is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepControl {
    /// The listed update, taken in full.
    Full,
    /// The listed step, halved until it does not decrease the part of `S`
    /// that depends on `μ`. Near the fixed point the full step always
    /// qualifies, so the two coincide there.
    #[default]
    Halving,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Relative ELBO change below which the cycle stops.
    pub tol: f64,
    /// The change between successive states (see [`state_change`]) must also
    /// fall below this.
    #[serde(default = "default_state_tol")]
    pub state_tol: f64,
    pub max_iter: usize,
    pub init: Init,
    #[serde(default)]
    pub step: StepControl,
}

fn default_state_tol() -> f64 {
    1e-10
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-10,
            state_tol: default_state_tol(),
            max_iter: 500,
            init: Init::default(),
            step: StepControl::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub hyper: Hyperparameters,
    pub gaussian: GaussianQ,
    pub variances: VarianceQ,
    pub negbin: Option<NegBinAux>,
    pub elbo_trace: Vec<f64>,
    /// Whether the exponent clamp fired in each cycle.
    pub clamp_trace: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub w: DVector<f64>,
    pub log_det_sigma: f64,
}

impl FitResult {
    pub fn final_elbo(&self) -> f64 {
        self.elbo_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// The cycle state this result was taken from.
    pub fn state(&self) -> FitState {
        let n = self.w.len();
        FitState {
            iteration: self.iterations,
            gaussian: self.gaussian.clone(),
            variances: self.variances.clone(),
            aux: self.negbin.clone().unwrap_or_else(|| NegBinAux {
                mu_g: DVector::from_element(n, 1.0),
                mu_log_g: DVector::zeros(n),
                mu_kappa: 1.0,
                c1: 0.0,
            }),
            w: self.w.clone(),
            log_det_sigma: self.log_det_sigma,
        }
    }

    /// Fitted means and pointwise 95% credible bands at the rows of `c`.
    pub fn predict(&self, c: &DMatrix<f64>) -> Prediction {
        predict(&self.gaussian, c)
    }
}

/// A fitting problem: family, design, response and priors.
#[derive(Clone, Debug)]
pub struct Problem<'a> {
    pub family: Family,
    pub design: &'a DesignBlocks,
    pub hyper: &'a Hyperparameters,
    pub y: DVector<f64>,
    sum_ln_y_factorial: f64,
}

impl<'a> Problem<'a> {
    pub fn new(
        family: Family,
        design: &'a DesignBlocks,
        y: &[u64],
        hyper: &'a Hyperparameters,
    ) -> Result<Self> {
        if y.len() != design.n() {
            return Err(Error::Design(format!(
                "response has length {}, design has {} rows",
                y.len(),
                design.n()
            )));
        }
        hyper.validate(design.r())?;
        let sum_ln_y_factorial = y.iter().map(|&v| ln_gamma(v as f64 + 1.0)).sum();
        Ok(Problem {
            family,
            design,
            hyper,
            y: DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64)),
            sum_ln_y_factorial,
        })
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn c(&self) -> &DMatrix<f64> {
        &self.design.c
    }

    /// Diagonal of `M_{q(1/σ²)}` for the given state.
    pub fn prior_precision(&self, state: &FitState) -> DVector<f64> {
        self.design
            .prior_precision_diag(self.hyper.sigma_beta, &state.variances.recip_sigma2())
    }

    fn unit_aux(&self) -> NegBinAux {
        NegBinAux {
            mu_g: DVector::from_element(self.n(), 1.0),
            mu_log_g: DVector::zeros(self.n()),
            mu_kappa: 1.0,
            c1: 0.0,
        }
    }

    fn unit_variances(&self) -> VarianceQ {
        VarianceQ {
            blocks: self
                .design
                .block_sizes
                .iter()
                .zip(&self.hyper.a)
                .map(|(&k, &a)| {
                    let shape = 0.5 * (k as f64 + 1.0);
                    let a_rate = 1.0 + a.powi(-2);
                    VarianceBlockQ {
                        recip_sigma2: 1.0,
                        recip_a: 1.0 / a_rate,
                        sigma2_shape: shape,
                        sigma2_rate: shape,
                        a_shape: 1.0,
                        a_rate,
                    }
                })
                .collect(),
        }
    }

    /// Starting state for the cycle.
    pub fn initial_state(&self, init: Init) -> Result<FitState> {
        let p_total = self.design.ncols();
        let mut state = FitState {
            iteration: 0,
            gaussian: GaussianQ {
                mu: DVector::zeros(p_total),
                sigma: DMatrix::identity(p_total, p_total),
            },
            variances: self.unit_variances(),
            aux: self.unit_aux(),
            w: DVector::from_element(self.n(), 1.0),
            log_det_sigma: 0.0,
        };
        if init == Init::Informed {
            let ybar = self.y.mean();
            let intercept = (ybar + 0.1).ln();
            state.gaussian.mu[0] = intercept;
            let m = self.prior_precision(&state);
            let weights = DVector::from_element(self.n(), intercept.exp());
            set_covariance(&mut state, self.c(), &weights, &m)?;
        }
        Ok(state)
    }
}

/// `±Cμ + ½ diag(CΣCᵀ)` exponentiated with the clamp applied. Returns the
/// vector and whether any entry was clamped.
fn clamped_w(c: &DMatrix<f64>, g: &GaussianQ, sign: f64) -> (DVector<f64>, bool) {
    let half_var = row_quadratic_forms(c, &g.sigma) * 0.5;
    let mut clamped = false;
    let w = (c * &g.mu * sign + half_var).map(|e| {
        if e > EXP_CLAMP {
            clamped = true;
            EXP_CLAMP.exp()
        } else {
            e.exp()
        }
    });
    (w, clamped)
}

fn set_covariance(
    state: &mut FitState,
    c: &DMatrix<f64>,
    weights: &DVector<f64>,
    m: &DVector<f64>,
) -> Result<()> {
    let mut bracket = weighted_gram(c, weights);
    for j in 0..m.len() {
        bracket[(j, j)] += m[j];
    }
    let chol = cholesky(&bracket, "covariance update")?;
    let log_det = -2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    state.gaussian.sigma = symmetrize(chol.inverse());
    state.log_det_sigma = log_det;
    Ok(())
}

/// Largest number of halvings tried by [`StepControl::Halving`].
const STEP_SLACK: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;

/// `μ`-dependent part of `S` with `Σ` and the auxiliary moments held fixed.
fn mean_objective(
    pb: &Problem,
    aux: &NegBinAux,
    mu: &DVector<f64>,
    m: &DVector<f64>,
    half_var: &DVector<f64>,
) -> f64 {
    let eta = pb.c() * mu;
    let prior = 0.5
        * mu.iter()
            .zip(m.iter())
            .map(|(u, mj)| mj * u * u)
            .sum::<f64>();
    let value = match pb.family {
        Family::Poisson => pb.y.dot(&eta) - eta.zip_map(half_var, |e, h| (e + h).exp()).sum(),
        Family::NegativeBinomial => {
            let w = eta.zip_map(half_var, |e, h| (h - e).exp());
            -aux.mu_kappa * (eta.sum() + aux.mu_g.dot(&w))
        }
    } - prior;
    if value.is_finite() {
        value
    } else {
        f64::NEG_INFINITY
    }
}

fn apply_mean_step(
    pb: &Problem,
    state: &mut FitState,
    step: DVector<f64>,
    m: &DVector<f64>,
    control: StepControl,
) {
    if control == StepControl::Full {
        state.gaussian.mu += step;
        return;
    }
    if !step.iter().all(|v| v.is_finite()) {
        return;
    }
    let half_var = row_quadratic_forms(pb.c(), &state.gaussian.sigma) * 0.5;
    let base = mean_objective(pb, &state.aux, &state.gaussian.mu, m, &half_var);
    // Near the fixed point the change is at roundoff level; do not halve on noise.
    let floor = base - STEP_SLACK * (base.abs() + 1.0);
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let trial = &state.gaussian.mu + &step * t;
        if mean_objective(pb, &state.aux, &trial, m, &half_var) >= floor {
            state.gaussian.mu = trial;
            return;
        }
        t *= 0.5;
    }
}

/// Poisson branch: `w ← exp(Cμ + ½ diag(CΣCᵀ))`,
/// `μ ← μ + Σ{Cᵀ(y − w) − Mμ}`, `μ_{q(g)} ← 1`, `μ_{q(κ)} ← 1`.
/// Returns whether the exponent clamp fired.
pub fn poisson_mean_update(
    pb: &Problem,
    state: &mut FitState,
    m: &DVector<f64>,
    control: StepControl,
) -> bool {
    let c = pb.c();
    let (w, clamped) = clamped_w(c, &state.gaussian, 1.0);
    let g = &state.gaussian;
    let step = &g.sigma * (c.tr_mul(&(&pb.y - &w)) - m.component_mul(&g.mu));
    state.aux.mu_g.fill(1.0);
    state.aux.mu_kappa = 1.0;
    apply_mean_step(pb, state, step, m, control);
    state.w = w;
    clamped
}

/// Negative Binomial branch, in order: `w`, `μ_{q(g)}`, `μ`,
/// `μ_{q(log g)}`, `C₁`, `μ_{q(κ)}`.
pub fn negbin_updates(
    pb: &Problem,
    state: &mut FitState,
    m: &DVector<f64>,
    control: StepControl,
) -> Result<bool> {
    let c = pb.c();
    let (w, clamped) = clamped_w(c, &state.gaussian, -1.0);
    let kappa = state.aux.mu_kappa;
    let mu_g = DVector::from_fn(pb.n(), |i, _| (kappa + pb.y[i]) / (1.0 + kappa * w[i]));
    let resid = mu_g.component_mul(&w).add_scalar(-1.0);
    let g = &state.gaussian;
    let step = &g.sigma * (c.tr_mul(&resid) * kappa - m.component_mul(&g.mu));
    state.aux.mu_g = mu_g.clone();
    apply_mean_step(pb, state, step, m, control);
    let mu_log_g = DVector::from_fn(pb.n(), |i, _| {
        digamma(kappa + pb.y[i]) - (kappa * w[i]).ln_1p()
    });
    let c1 = (c * &state.gaussian.mu).sum() - mu_log_g.sum() + mu_g.dot(&w);
    let mu_kappa = kappa_posterior_mean(pb.n() as f64, c1, pb.hyper.kappa_min, pb.hyper.kappa_max)?;
    state.w = w;
    state.aux = NegBinAux {
        mu_g,
        mu_log_g,
        mu_kappa,
        c1,
    };
    Ok(clamped)
}

/// `Σ ← (μ_{q(κ)} Cᵀ diag(μ_{q(g)} ⊙ w) C + M)⁻¹`.
pub fn covariance_update(pb: &Problem, state: &mut FitState, m: &DVector<f64>) -> Result<()> {
    let weights = state.aux.mu_g.component_mul(&state.w) * state.aux.mu_kappa;
    set_covariance(state, pb.c(), &weights, m)
}

/// `μ_{q(1/a_ℓ)} ← 1/(μ_{q(1/σ²_ℓ)} + A_ℓ⁻²)`, then
/// `μ_{q(1/σ²_ℓ)} ← (K_ℓ + 1)/(2μ_{q(1/a_ℓ)} + ‖μ_{q(u_ℓ)}‖² + tr Σ_{q(u_ℓ)})`.
pub fn variance_param_update(pb: &Problem, state: &mut FitState) {
    let g = &state.gaussian;
    for (ell, block) in state.variances.blocks.iter_mut().enumerate() {
        let range = pb.design.block_range(ell);
        let k = range.len() as f64;
        let sq: f64 = range
            .clone()
            .map(|j| g.mu[j] * g.mu[j] + g.sigma[(j, j)])
            .sum();
        block.a_shape = 1.0;
        block.a_rate = block.recip_sigma2 + pb.hyper.a[ell].powi(-2);
        block.recip_a = 1.0 / block.a_rate;
        block.sigma2_shape = 0.5 * (k + 1.0);
        block.sigma2_rate = block.recip_a + 0.5 * sq;
        block.recip_sigma2 = block.sigma2_shape / block.sigma2_rate;
    }
}

/// One full cycle. Returns whether the exponent clamp fired.
pub fn cycle(pb: &Problem, state: &mut FitState, control: StepControl) -> Result<bool> {
    let m = pb.prior_precision(state);
    let clamped = match pb.family {
        Family::Poisson => poisson_mean_update(pb, state, &m, control),
        Family::NegativeBinomial => negbin_updates(pb, state, &m, control)?,
    };
    covariance_update(pb, state, &m)?;
    variance_param_update(pb, state);
    state.iteration += 1;
    Ok(clamped)
}

fn gaussian_and_variance_terms(pb: &Problem, state: &FitState) -> f64 {
    let d = pb.design;
    let g = &state.gaussian;
    let p = d.p();
    let p_total = d.ncols() as f64;
    let r = d.r() as f64;
    let sb2 = pb.hyper.sigma_beta.powi(2);
    let beta_sq: f64 = (0..p).map(|j| g.mu[j] * g.mu[j] + g.sigma[(j, j)]).sum();
    let mut total = 0.5 * p_total - r * std::f64::consts::PI.ln() - 0.5 * p as f64 * sb2.ln()
        + 0.5 * state.log_det_sigma
        - pb.sum_ln_y_factorial
        - beta_sq / (2.0 * sb2);
    for (ell, block) in state.variances.blocks.iter().enumerate() {
        let range = d.block_range(ell);
        let k = range.len() as f64;
        let sq: f64 = range.map(|j| g.mu[j] * g.mu[j] + g.sigma[(j, j)]).sum();
        let a = pb.hyper.a[ell];
        total +=
            block.recip_a * block.recip_sigma2 - a.ln() - (block.recip_sigma2 + a.powi(-2)).ln()
                + ln_gamma(0.5 * (k + 1.0))
                - 0.5 * (k + 1.0) * (block.recip_a + 0.5 * sq).ln();
    }
    total
}

/// Lower bound on `log p(y)` at the current state.
pub fn elbo(pb: &Problem, state: &FitState) -> f64 {
    let c = pb.c();
    let g = &state.gaussian;
    let base = gaussian_and_variance_terms(pb, state);
    match pb.family {
        Family::Poisson => {
            let (w, _) = clamped_w(c, g, 1.0);
            base + pb.y.dot(&(c * &g.mu)) - w.sum()
        }
        Family::NegativeBinomial => {
            let (w, _) = clamped_w(c, g, -1.0);
            let aux = &state.aux;
            let kappa = aux.mu_kappa;
            let h = &pb.hyper;
            let log_h0 = HArgs::new(0.0, pb.n() as f64, aux.c1, h.kappa_min, h.kappa_max)
                .and_then(|a| log_h(&a))
                .unwrap_or(f64::NAN);
            let mut total = base - kappa * aux.mu_log_g.sum() + kappa * aux.mu_g.dot(&w)
                - (h.kappa_max - h.kappa_min).ln()
                + log_h0;
            for i in 0..pb.n() {
                total += ln_gamma(kappa + pb.y[i]) - (pb.y[i] + kappa) * (kappa * w[i]).ln_1p();
            }
            total
        }
    }
}

/// The part `S` of `E_q[log p(y, β, u, …)]` that depends on `(μ, Σ)`,
/// evaluated at `(mu, sigma)` with the other q-densities taken from
/// `state`.
pub fn expected_log_joint_s(
    pb: &Problem,
    state: &FitState,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> f64 {
    let d = pb.design;
    let c = pb.c();
    let m = pb.prior_precision(state);
    let p_total = d.ncols() as f64;
    let quad = mu
        .iter()
        .zip(m.iter())
        .map(|(u, mj)| mj * u * u)
        .sum::<f64>()
        + (0..d.ncols()).map(|j| m[j] * sigma[(j, j)]).sum::<f64>();
    let e_log_sigma2: f64 = state
        .variances
        .blocks
        .iter()
        .zip(&d.block_sizes)
        .map(|(b, &k)| k as f64 * (b.sigma2_rate.ln() - digamma(b.sigma2_shape)))
        .sum();
    let common = -0.5 * quad
        - 0.5 * p_total * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * d.p() as f64 * pb.hyper.sigma_beta.powi(2).ln()
        - 0.5 * e_log_sigma2;
    let eta = c * mu;
    let half_var = row_quadratic_forms(c, sigma) * 0.5;
    match pb.family {
        Family::Poisson => {
            let w = (&eta + &half_var).map(f64::exp);
            pb.y.dot(&eta) - w.sum() + common - pb.sum_ln_y_factorial
        }
        Family::NegativeBinomial => {
            let aux = &state.aux;
            let n = pb.n() as f64;
            let h = &pb.hyper;
            let kappa_terms = kappa_expectation(n, aux.c1, h.kappa_min, h.kappa_max, |k| {
                k * k.ln() - ln_gamma(k)
            })
            .unwrap_or(f64::NAN);
            let w = (-&eta + &half_var).map(f64::exp);
            n * kappa_terms - aux.mu_kappa * eta.sum() + (aux.mu_kappa - 1.0) * aux.mu_log_g.sum()
                - aux.mu_kappa * aux.mu_g.dot(&w)
                + common
        }
    }
}

/// Closed-form `∇_μ S` at `(mu, sigma)`.
pub fn s_gradient_mu(
    pb: &Problem,
    state: &FitState,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> DVector<f64> {
    let c = pb.c();
    let m = pb.prior_precision(state);
    let half_var = row_quadratic_forms(c, sigma) * 0.5;
    let prior = m.component_mul(mu);
    match pb.family {
        Family::Poisson => {
            let w = (c * mu + half_var).map(f64::exp);
            c.tr_mul(&(&pb.y - w)) - prior
        }
        Family::NegativeBinomial => {
            let w = (-(c * mu) + half_var).map(f64::exp);
            let resid = state.aux.mu_g.component_mul(&w).add_scalar(-1.0);
            c.tr_mul(&resid) * state.aux.mu_kappa - prior
        }
    }
}

/// Closed-form `∂S/∂Σ` at `(mu, sigma)`: `−½(Cᵀ diag(v) C + M)` with
/// `v = w` (Poisson) or `v = μ_{q(κ)} μ_{q(g)} ⊙ w` (Negative Binomial).
pub fn s_gradient_sigma(
    pb: &Problem,
    state: &FitState,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> DMatrix<f64> {
    let c = pb.c();
    let half_var = row_quadratic_forms(c, sigma) * 0.5;
    let weights = match pb.family {
        Family::Poisson => (c * mu + half_var).map(f64::exp),
        Family::NegativeBinomial => {
            let w = (-(c * mu) + half_var).map(f64::exp);
            state.aux.mu_g.component_mul(&w) * state.aux.mu_kappa
        }
    };
    let mut grad = weighted_gram(c, &weights);
    let m = pb.prior_precision(state);
    for j in 0..m.len() {
        grad[(j, j)] += m[j];
    }
    grad * -0.5
}

/// Run the cycle to convergence.
pub fn fit(
    family: Family,
    design: &DesignBlocks,
    y: &[u64],
    hyper: &Hyperparameters,
    config: &FitConfig,
) -> Result<FitResult> {
    let pb = Problem::new(family, design, y, hyper)?;
    let state = pb.initial_state(config.init)?;
    fit_from(&pb, state, config)
}

/// Run the cycle to convergence from a given state.
pub fn fit_from(pb: &Problem, mut state: FitState, config: &FitConfig) -> Result<FitResult> {
    if !(config.tol > 0.0) || !(config.state_tol > 0.0) || config.max_iter == 0 {
        return Err(Error::param(
            "tol and state_tol must be positive and max_iter at least 1",
        ));
    }
    let mut elbo_trace = Vec::new();
    let mut clamp_trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let before = state.clone();
        let clamped = cycle(pb, &mut state, config.step)?;
        let value = elbo(pb, &state);
        if !value.is_finite() {
            return Err(Error::NumericalFailure {
                iteration: state.iteration,
                state: Box::new(state),
            });
        }
        clamp_trace.push(clamped);
        let previous = elbo_trace.last().copied();
        elbo_trace.push(value);
        let clean_tail = clamp_trace.len() >= CLAMP_FREE_TAIL
            && clamp_trace[clamp_trace.len() - CLAMP_FREE_TAIL..]
                .iter()
                .all(|c| !c);
        if let Some(prev) = previous {
            if (value - prev).abs() / (value.abs() + 1.0) < config.tol
                && clean_tail
                && state_change(pb.family, &before, &state) < config.state_tol
            {
                converged = true;
                break;
            }
        }
    }
    Ok(FitResult {
        family: pb.family,
        hyper: pb.hyper.clone(),
        iterations: elbo_trace.len(),
        negbin: (pb.family == Family::NegativeBinomial).then(|| state.aux.clone()),
        gaussian: state.gaussian,
        variances: state.variances,
        elbo_trace,
        clamp_trace,
        converged,
        w: state.w,
        log_det_sigma: state.log_det_sigma,
    })
}

/// Largest relative change produced by applying one more cycle to a state,
/// over `μ`, `Σ`, the variance moments and (Negative Binomial) `μ_{q(g)}`
/// and `μ_{q(κ)}`. Each object is measured as `‖new − old‖_∞ / ‖old‖_∞`.
pub fn fixed_point_change(pb: &Problem, state: &FitState) -> Result<f64> {
    let mut next = state.clone();
    cycle(pb, &mut next, StepControl::Full)?;
    Ok(state_change(pb.family, state, &next))
}

/// `max ‖b − a‖_∞ / ‖a‖_∞` over the quantities listed for
/// [`fixed_point_change`].
pub fn state_change(family: Family, a: &FitState, b: &FitState) -> f64 {
    let rel = |x: &[f64], y: &[f64]| {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = x
            .iter()
            .zip(y)
            .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    };
    let mut worst = rel(a.gaussian.mu.as_slice(), b.gaussian.mu.as_slice()).max(rel(
        a.gaussian.sigma.as_slice(),
        b.gaussian.sigma.as_slice(),
    ));
    let rs = |s: &FitState| {
        s.variances
            .blocks
            .iter()
            .map(|v| v.recip_sigma2)
            .collect::<Vec<_>>()
    };
    let ra = |s: &FitState| {
        s.variances
            .blocks
            .iter()
            .map(|v| v.recip_a)
            .collect::<Vec<_>>()
    };
    worst = worst.max(rel(&rs(a), &rs(b))).max(rel(&ra(a), &ra(b)));
    if family == Family::NegativeBinomial {
        worst = worst
            .max(rel(a.aux.mu_g.as_slice(), b.aux.mu_g.as_slice()))
            .max(rel(&[a.aux.mu_kappa], &[b.aux.mu_kappa]));
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

/// Response-scale summaries under `η ~ N(cᵀμ, cᵀΣc)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// Linear predictor mean and standard deviation.
    pub eta_mean: DVector<f64>,
    pub eta_sd: DVector<f64>,
}

/// `E[exp η] = exp(cᵀμ + ½cᵀΣc)` with bands `exp(cᵀμ ± 1.96 √(cᵀΣc))`.
pub fn predict(g: &GaussianQ, c: &DMatrix<f64>) -> Prediction {
    let eta = c * &g.mu;
    let var = row_quadratic_forms(c, &g.sigma).map(|v| v.max(0.0));
    let sd = var.map(f64::sqrt);
    Prediction {
        mean: eta.zip_map(&var, |e, v| (e + 0.5 * v).exp()),
        lower: eta.zip_map(&sd, |e, s| (e - 1.96 * s).exp()),
        upper: eta.zip_map(&sd, |e, s| (e + 1.96 * s).exp()),
        eta_mean: eta,
        eta_sd: sd,
    }
}
