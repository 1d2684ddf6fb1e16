//! One-observation-at-a-time Poisson fitting.
//!
//! A batch fit on a warm-up sample seeds the moments and the accumulated
//! statistics `Cᵀy`, `Cᵀw` and `Cᵀ diag(w) C`. Each new observation adds its
//! rank-one contribution and applies a single update of every factor:
//!
//! ```text
//! w_new ← exp(cᵀμ + ½ cᵀΣc)
//! Cᵀy += c y_new;  Cᵀw += c w_new;  CᵀWC += w_new c cᵀ
//! μ ← μ_prev + Σ (Cᵀy − Cᵀw − Mμ)
//! μ_prev ← μ            every F_update observations
//! Σ ← (CᵀWC + M)⁻¹
//! ```
//!
//! followed by the variance-block updates. The factor of `CᵀWC + M` is kept
//! and updated in place, so the cost per observation does not depend on how
//! many observations have been seen.

use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{chol_rank_one, cholesky, inverse_from_lower, weighted_gram};
use crate::model::{DesignBlocks, Family, Hyperparameters, RawRecord, RowEncoder};
use crate::vmp::{fit, FitConfig, GaussianQ, VarianceQ, EXP_CLAMP};
use crate::{Error, Result};

pub const DEFAULT_F_UPDATE: usize = 100;

/// How `Σ` is recomputed after each observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceUpdate {
    /// Rank-one updates of the stored Cholesky factor.
    #[default]
    Incremental,
    /// Refactorize `CᵀWC + M` from scratch.
    Refactor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub n: usize,
    pub cty: DVector<f64>,
    pub ctw: DVector<f64>,
    pub ctwc: DMatrix<f64>,
    pub gaussian: GaussianQ,
    pub variances: VarianceQ,
    pub mu_prev: DVector<f64>,
    pub f_update: usize,
    pub covariance_update: CovarianceUpdate,
    pub hyper: Hyperparameters,
    pub p: usize,
    pub block_sizes: Vec<usize>,
    pub encoder: Option<RowEncoder>,
    /// Lower factor of `CᵀWC + diag(factor_m)`.
    factor: DMatrix<f64>,
    factor_m: DVector<f64>,
    pub rejected: usize,
    pub clamped: usize,
    pub refactorizations: usize,
}

/// Outcome of offering one observation to [`StreamState::ingest`].
#[derive(Clone, Debug, PartialEq)]
pub enum Ingest {
    Accepted {
        w: f64,
        /// The predictor was outside the training range of a spline.
        clamped: bool,
    },
    /// The state is unchanged.
    Rejected(String),
}

/// Immutable copy of the current moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: usize,
    pub gaussian: GaussianQ,
    pub variances: VarianceQ,
    pub rejected: usize,
    pub clamped: usize,
}

/// Single-writer, many-reader publication point for snapshots. Readers get
/// an `Arc` to a snapshot that never changes underneath them.
#[derive(Debug)]
pub struct SnapshotCell {
    inner: RwLock<Arc<Snapshot>>,
}

impl SnapshotCell {
    pub fn new(snapshot: Snapshot) -> Self {
        SnapshotCell {
            inner: RwLock::new(Arc::new(snapshot)),
        }
    }

    pub fn publish(&self, snapshot: Snapshot) {
        *self.inner.write().expect("snapshot lock poisoned") = Arc::new(snapshot);
    }

    pub fn load(&self) -> Arc<Snapshot> {
        Arc::clone(&self.inner.read().expect("snapshot lock poisoned"))
    }
}

fn prior_diag(
    p: usize,
    block_sizes: &[usize],
    sigma_beta: f64,
    variances: &VarianceQ,
) -> DVector<f64> {
    let total = p + block_sizes.iter().sum::<usize>();
    let mut m = DVector::from_element(total, sigma_beta.powi(-2));
    let mut start = p;
    for (k, b) in block_sizes.iter().zip(&variances.blocks) {
        m.rows_mut(start, *k).fill(b.recip_sigma2);
        start += k;
    }
    m
}

/// Batch-fit the warm-up sample and seed the streaming state from it.
pub fn warmup(
    design: &DesignBlocks,
    y: &[u64],
    hyper: &Hyperparameters,
    config: &FitConfig,
    f_update: usize,
) -> Result<StreamState> {
    if f_update == 0 {
        return Err(Error::param("F_update must be at least 1"));
    }
    let res = fit(Family::Poisson, design, y, hyper, config)?;
    if !res.converged {
        return Err(Error::WarmupNotConverged {
            n_warm: y.len(),
            iterations: res.iterations,
        });
    }
    let c = &design.c;
    let yv = DVector::from_iterator(y.len(), y.iter().map(|&v| v as f64));
    let ctwc = weighted_gram(c, &res.w);
    let mut state = StreamState {
        n: y.len(),
        cty: c.tr_mul(&yv),
        ctw: c.tr_mul(&res.w),
        ctwc,
        mu_prev: res.gaussian.mu.clone(),
        gaussian: res.gaussian,
        variances: res.variances,
        f_update,
        covariance_update: CovarianceUpdate::default(),
        hyper: hyper.clone(),
        p: design.p(),
        block_sizes: design.block_sizes.clone(),
        encoder: design.encoder.clone(),
        factor: DMatrix::zeros(0, 0),
        factor_m: DVector::zeros(0),
        rejected: 0,
        clamped: 0,
        refactorizations: 0,
    };
    state.refactor()?;
    Ok(state)
}

impl StreamState {
    pub fn ncols(&self) -> usize {
        self.cty.len()
    }

    fn prior_diag(&self) -> DVector<f64> {
        prior_diag(
            self.p,
            &self.block_sizes,
            self.hyper.sigma_beta,
            &self.variances,
        )
    }

    fn refactor(&mut self) -> Result<()> {
        let m = self.prior_diag();
        let mut bracket = self.ctwc.clone();
        for j in 0..m.len() {
            bracket[(j, j)] += m[j];
        }
        self.factor = cholesky(&bracket, "streaming covariance update")?.l();
        self.factor_m = m;
        self.refactorizations += 1;
        Ok(())
    }

    /// Bring the stored factor to `CᵀWC + diag(m)` after `CᵀWC` gained
    /// `w c cᵀ`. Falls back to refactorization if a downdate fails.
    fn update_factor(&mut self, c: &DVector<f64>, w: f64, m: &DVector<f64>) -> Result<()> {
        if self.covariance_update == CovarianceUpdate::Refactor {
            return self.refactor();
        }
        let mut l = self.factor.clone();
        let mut ok = chol_rank_one(&mut l, c * w.sqrt(), 1.0).is_ok();
        let total = m.len();
        for j in 0..total {
            if !ok {
                break;
            }
            let delta = m[j] - self.factor_m[j];
            if delta == 0.0 {
                continue;
            }
            let mut e = DVector::zeros(total);
            e[j] = delta.abs().sqrt();
            ok = chol_rank_one(&mut l, e, delta.signum()).is_ok();
        }
        if ok {
            self.factor = l;
            self.factor_m = m.clone();
            Ok(())
        } else {
            self.refactor()
        }
    }

    /// Encode a raw record and ingest it.
    pub fn ingest(&mut self, y_new: u64, record: &RawRecord) -> Result<Ingest> {
        let encoder = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Design("stream has no raw-record encoder".into()))?;
        match encoder.encode(record) {
            Ok(row) => {
                let out = self.ingest_row(y_new, &row.c)?;
                if row.clamped {
                    if let Ingest::Accepted { w, .. } = out {
                        self.clamped += 1;
                        return Ok(Ingest::Accepted { w, clamped: true });
                    }
                }
                Ok(out)
            }
            Err(e) => {
                self.rejected += 1;
                Ok(Ingest::Rejected(e.to_string()))
            }
        }
    }

    /// Ingest an already encoded design row.
    pub fn ingest_row(&mut self, y_new: u64, c: &DVector<f64>) -> Result<Ingest> {
        if c.len() != self.ncols() {
            return Err(Error::Design(format!(
                "row has {} entries, expected {}",
                c.len(),
                self.ncols()
            )));
        }
        let m = self.prior_diag();
        let sigma_c = &self.gaussian.sigma * c;
        let exponent = c.dot(&self.gaussian.mu) + 0.5 * c.dot(&sigma_c);
        if !(exponent <= EXP_CLAMP) {
            self.rejected += 1;
            return Ok(Ingest::Rejected(format!(
                "exponent {exponent} out of range"
            )));
        }
        let w = exponent.exp();
        let y = y_new as f64;
        self.n += 1;
        self.cty.axpy(y, c, 1.0);
        self.ctw.axpy(w, c, 1.0);
        self.ctwc.ger(w, c, c, 1.0);

        let grad = &self.cty - &self.ctw - m.component_mul(&self.gaussian.mu);
        self.gaussian.mu = &self.mu_prev + &self.gaussian.sigma * grad;
        if self.n.is_multiple_of(self.f_update) {
            self.mu_prev.copy_from(&self.gaussian.mu);
        }

        self.update_factor(c, w, &m)?;
        self.gaussian.sigma = inverse_from_lower(&self.factor);

        let mut start = self.p;
        for (ell, (&k, block)) in self
            .block_sizes
            .iter()
            .zip(self.variances.blocks.iter_mut())
            .enumerate()
        {
            let sq: f64 = (start..start + k)
                .map(|j| self.gaussian.mu[j].powi(2) + self.gaussian.sigma[(j, j)])
                .sum();
            block.a_rate = block.recip_sigma2 + self.hyper.a[ell].powi(-2);
            block.recip_a = 1.0 / block.a_rate;
            block.sigma2_rate = block.recip_a + 0.5 * sq;
            block.recip_sigma2 = block.sigma2_shape / block.sigma2_rate;
            start += k;
        }
        Ok(Ingest::Accepted { w, clamped: false })
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            n: self.n,
            gaussian: self.gaussian.clone(),
            variances: self.variances.clone(),
            rejected: self.rejected,
            clamped: self.clamped,
        }
    }

    /// `Σ` recomputed from scratch from the accumulated statistics and the
    /// prior precision the last update used.
    pub fn reference_sigma(&self) -> Result<DMatrix<f64>> {
        let mut bracket = self.ctwc.clone();
        for j in 0..self.factor_m.len() {
            bracket[(j, j)] += self.factor_m[j];
        }
        crate::linalg::spd_inverse(&bracket, "streaming covariance check")
    }
}
