//! Design assembly and hyperparameters.
//!
//! The linear predictor is `η = Xβ + Zu` with `X = [1, x₁, …, x_d]` (every
//! predictor standardized) and `Z` made of one block per smooth term plus an
//! optional block of group indicators. Each block of `Z` has its own
//! variance component, so `C = [X Z]` has `P = p + Σ K_ℓ` columns.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::spline::{build_basis, SplineBasis, Standardization};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    #[serde(rename = "negbin")]
    NegativeBinomial,
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Family::Poisson),
            "negbin" | "negative-binomial" => Ok(Family::NegativeBinomial),
            other => Err(Error::param(format!("unknown family '{other}'"))),
        }
    }
}

/// Prior settings: `β ~ N(0, σ_β² I)`, Half-Cauchy(`A_ℓ`) standard
/// deviations for the random-effect blocks, and `κ ~ Uniform(κ_min, κ_max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub sigma_beta: f64,
    pub a: Vec<f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
}

pub const DEFAULT_SCALE: f64 = 1e5;
pub const DEFAULT_KAPPA_MIN: f64 = 0.01;
pub const DEFAULT_KAPPA_MAX: f64 = 100.0;

impl Hyperparameters {
    /// Defaults for `r` variance blocks.
    pub fn default_for(r: usize) -> Self {
        Hyperparameters {
            sigma_beta: DEFAULT_SCALE,
            a: vec![DEFAULT_SCALE; r],
            kappa_min: DEFAULT_KAPPA_MIN,
            kappa_max: DEFAULT_KAPPA_MAX,
        }
    }

    pub fn validate(&self, r: usize) -> Result<()> {
        if !(self.sigma_beta > 0.0 && self.sigma_beta.is_finite()) {
            return Err(Error::param(format!(
                "sigma_beta must be positive, got {}",
                self.sigma_beta
            )));
        }
        if self.a.len() != r {
            return Err(Error::param(format!(
                "expected {r} Half-Cauchy scales, got {}",
                self.a.len()
            )));
        }
        if let Some(bad) = self.a.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::param(format!(
                "Half-Cauchy scale must be positive, got {bad}"
            )));
        }
        if !(self.kappa_min > 0.0 && self.kappa_max.is_finite()) {
            return Err(Error::param("kappa bounds must be positive and finite"));
        }
        if self.kappa_min >= self.kappa_max {
            return Err(Error::param(format!(
                "kappa_min ({}) must be below kappa_max ({})",
                self.kappa_min, self.kappa_max
            )));
        }
        Ok(())
    }
}

/// Optional overrides applied on top of [`Hyperparameters::default_for`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperOverrides {
    #[serde(default)]
    pub sigma_beta: Option<f64>,
    #[serde(default)]
    pub a: Option<Vec<f64>>,
    #[serde(default)]
    pub kappa_min: Option<f64>,
    #[serde(default)]
    pub kappa_max: Option<f64>,
}

impl HyperOverrides {
    pub fn resolve(&self, r: usize) -> Result<Hyperparameters> {
        let mut h = Hyperparameters::default_for(r);
        if let Some(v) = self.sigma_beta {
            h.sigma_beta = v;
        }
        if let Some(a) = &self.a {
            h.a = if a.len() == 1 {
                vec![a[0]; r]
            } else {
                a.clone()
            };
        }
        if let Some(v) = self.kappa_min {
            h.kappa_min = v;
        }
        if let Some(v) = self.kappa_max {
            h.kappa_max = v;
        }
        h.validate(r)?;
        Ok(h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothTerm {
    pub column: String,
    pub k: usize,
}

/// Column-level description of a model, as read from a JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub response: String,
    #[serde(default)]
    pub predictors: Vec<String>,
    #[serde(default)]
    pub smooths: Vec<SmoothTerm>,
    #[serde(default)]
    pub group: Option<String>,
    #[serde(default)]
    pub family: Option<Family>,
    #[serde(default)]
    pub hyper: HyperOverrides,
}

impl ModelSpec {
    /// Two-predictor additive model with a smooth of each, the layout used
    /// by the simulation study.
    pub fn additive(predictors: &[&str], k: usize) -> Self {
        ModelSpec {
            response: "y".into(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            smooths: predictors
                .iter()
                .map(|s| SmoothTerm {
                    column: s.to_string(),
                    k,
                })
                .collect(),
            group: None,
            family: None,
            hyper: HyperOverrides::default(),
        }
    }

    /// `(predictor index, K)` pairs for [`assemble_design`].
    pub fn smooth_indices(&self) -> Result<Vec<(usize, usize)>> {
        self.smooths
            .iter()
            .map(|s| {
                self.predictors
                    .iter()
                    .position(|p| p == &s.column)
                    .map(|j| (j, s.k))
                    .ok_or_else(|| {
                        Error::Design(format!(
                            "smooth column '{}' is not a listed predictor",
                            s.column
                        ))
                    })
            })
            .collect()
    }
}

/// One observation's covariates in original units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub x: Vec<f64>,
    pub group: Option<String>,
}

/// Maps raw covariates to a row of `C` using the training-time
/// standardizations, spline bases and group levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowEncoder {
    pub linear: Vec<Standardization>,
    pub smooths: Vec<(usize, SplineBasis)>,
    pub group_levels: Option<Vec<String>>,
}

/// Result of encoding a raw record.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRow {
    pub c: DVector<f64>,
    /// Some predictor fell outside its spline's training range.
    pub clamped: bool,
}

impl RowEncoder {
    pub fn p(&self) -> usize {
        1 + self.linear.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.smooths.iter().map(|(_, b)| b.k).collect();
        if let Some(levels) = &self.group_levels {
            sizes.push(levels.len());
        }
        sizes
    }

    pub fn ncols(&self) -> usize {
        self.p() + self.block_sizes().iter().sum::<usize>()
    }

    /// Encode one record. Fails on a wrong predictor count, a non-finite
    /// value, or a group label not seen at training time.
    pub fn encode(&self, rec: &RawRecord) -> Result<EncodedRow> {
        if rec.x.len() != self.linear.len() {
            return Err(Error::Design(format!(
                "expected {} predictor values, got {}",
                self.linear.len(),
                rec.x.len()
            )));
        }
        if let Some(bad) = rec.x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Design(format!("non-finite predictor value {bad}")));
        }
        let mut c = DVector::zeros(self.ncols());
        c[0] = 1.0;
        for (j, s) in self.linear.iter().enumerate() {
            c[1 + j] = s.apply(rec.x[j]);
        }
        let mut offset = self.p();
        let mut clamped = false;
        for (j, basis) in &self.smooths {
            let (row, flag) = basis.eval(rec.x[*j]);
            clamped |= flag;
            c.rows_mut(offset, basis.k).copy_from(&row);
            offset += basis.k;
        }
        match (&self.group_levels, &rec.group) {
            (Some(levels), Some(g)) => {
                let idx = levels
                    .binary_search(g)
                    .map_err(|_| Error::Design(format!("unseen group label '{g}'")))?;
                c[offset + idx] = 1.0;
            }
            (Some(_), None) => {
                return Err(Error::Design("record is missing its group label".into()))
            }
            (None, Some(_)) => {
                return Err(Error::Design(
                    "model has no grouping but record has a group".into(),
                ))
            }
            (None, None) => {}
        }
        Ok(EncodedRow { c, clamped })
    }
}

/// Design matrices and block structure of a fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignBlocks {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub block_sizes: Vec<usize>,
    /// Present when the design was assembled from raw predictors.
    pub encoder: Option<RowEncoder>,
}

impl DesignBlocks {
    /// A design from explicit matrices, with no raw-record encoder.
    pub fn from_parts(x: DMatrix<f64>, z: DMatrix<f64>, block_sizes: Vec<usize>) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::Design(format!(
                "X has {} rows but Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::Design("X needs at least one column".into()));
        }
        if block_sizes.contains(&0) || block_sizes.iter().sum::<usize>() != z.ncols() {
            return Err(Error::Design(format!(
                "block sizes {block_sizes:?} do not partition the {} columns of Z",
                z.ncols()
            )));
        }
        let (n, p, q) = (x.nrows(), x.ncols(), z.ncols());
        let mut c = DMatrix::zeros(n, p + q);
        c.columns_mut(0, p).copy_from(&x);
        c.columns_mut(p, q).copy_from(&z);
        Ok(DesignBlocks {
            x,
            z,
            c,
            block_sizes,
            encoder: None,
        })
    }

    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Number of fixed-effect columns.
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Total number of columns of `C`.
    pub fn ncols(&self) -> usize {
        self.c.ncols()
    }

    /// Number of variance blocks.
    pub fn r(&self) -> usize {
        self.block_sizes.len()
    }

    /// Column indices of block `ell` within `C`.
    pub fn block_range(&self, ell: usize) -> Range<usize> {
        let start = self.p() + self.block_sizes[..ell].iter().sum::<usize>();
        start..start + self.block_sizes[ell]
    }

    /// Diagonal of `blockdiag(σ_β⁻² I_p, m_1 I_{K_1}, …, m_r I_{K_r})`.
    pub fn prior_precision_diag(&self, sigma_beta: f64, recip_sigma2: &[f64]) -> DVector<f64> {
        let mut d = DVector::from_element(self.ncols(), sigma_beta.powi(-2));
        for (ell, &m) in recip_sigma2.iter().enumerate() {
            for j in self.block_range(ell) {
                d[j] = m;
            }
        }
        d
    }

    /// A design with the same encoder built from the given rows of `C`.
    pub fn subset_rows(&self, rows: Range<usize>) -> DesignBlocks {
        let n = rows.len();
        DesignBlocks {
            x: self.x.rows(rows.start, n).into_owned(),
            z: self.z.rows(rows.start, n).into_owned(),
            c: self.c.rows(rows.start, n).into_owned(),
            block_sizes: self.block_sizes.clone(),
            encoder: self.encoder.clone(),
        }
    }
}

/// Build `X`, `Z` and `C` from predictor columns.
///
/// `smooths` lists `(predictor index, K)`; `groups`, when given, adds a
/// random intercept block with one indicator column per distinct label
/// (labels sorted).
pub fn assemble_design(
    predictors: &[Vec<f64>],
    smooths: &[(usize, usize)],
    groups: Option<&[String]>,
) -> Result<DesignBlocks> {
    let n = match (predictors.first(), groups) {
        (Some(col), _) => col.len(),
        (None, Some(g)) => g.len(),
        (None, None) => {
            return Err(Error::Design(
                "model has no predictors and no grouping".into(),
            ))
        }
    };
    if n == 0 {
        return Err(Error::Design("no observations".into()));
    }
    if let Some(j) = predictors.iter().position(|col| col.len() != n) {
        return Err(Error::Design(format!(
            "predictor {j} has length {}, expected {n}",
            predictors[j].len()
        )));
    }
    if smooths.is_empty() && groups.is_none() {
        return Err(Error::Design(
            "model needs at least one smooth term or a grouping".into(),
        ));
    }

    let linear = predictors
        .iter()
        .map(|col| Standardization::fit(col))
        .collect::<Result<Vec<_>>>()?;
    let p = 1 + predictors.len();
    let mut x = DMatrix::zeros(n, p);
    x.column_mut(0).fill(1.0);
    for (j, s) in linear.iter().enumerate() {
        for i in 0..n {
            x[(i, 1 + j)] = s.apply(predictors[j][i]);
        }
    }

    let mut z_blocks = Vec::new();
    let mut smooth_bases = Vec::new();
    for &(j, k) in smooths {
        let col = predictors
            .get(j)
            .ok_or_else(|| Error::Design(format!("smooth refers to missing predictor {j}")))?;
        let (basis, z) = build_basis(col, k)?;
        smooth_bases.push((j, basis));
        z_blocks.push(z);
    }

    let group_levels = match groups {
        Some(labels) => {
            if labels.len() != n {
                return Err(Error::Design(format!(
                    "grouping has length {}, expected {n}",
                    labels.len()
                )));
            }
            let mut index = BTreeMap::new();
            for l in labels {
                index.entry(l.clone()).or_insert(());
            }
            if index.len() < 2 {
                return Err(Error::Design("grouping has a single level".into()));
            }
            let levels: Vec<String> = index.into_keys().collect();
            let mut ind = DMatrix::zeros(n, levels.len());
            for (i, l) in labels.iter().enumerate() {
                ind[(i, levels.binary_search(l).unwrap())] = 1.0;
            }
            z_blocks.push(ind);
            Some(levels)
        }
        None => None,
    };

    let block_sizes: Vec<usize> = z_blocks.iter().map(|b| b.ncols()).collect();
    let q: usize = block_sizes.iter().sum();
    let mut z = DMatrix::zeros(n, q);
    let mut offset = 0;
    for b in &z_blocks {
        z.columns_mut(offset, b.ncols()).copy_from(b);
        offset += b.ncols();
    }
    let mut c = DMatrix::zeros(n, p + q);
    c.columns_mut(0, p).copy_from(&x);
    c.columns_mut(p, q).copy_from(&z);

    Ok(DesignBlocks {
        x,
        z,
        c,
        block_sizes,
        encoder: Some(RowEncoder {
            linear,
            smooths: smooth_bases,
            group_levels,
        }),
    })
}
