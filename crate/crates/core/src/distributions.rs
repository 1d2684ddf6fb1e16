//! Log densities and samplers for the distribution families used by the
//! count regression models.
//!
//! Parametrizations:
//!
//! | family | density / pmf |
//! |---|---|
//! | `Poisson(λ)` | `λ^x e^{-λ} / x!` |
//! | `NegativeBinomial(μ, κ)` | `Γ(x+κ)/(Γ(κ) x!) · (κ/(κ+μ))^κ · (μ/(κ+μ))^x` |
//! | `Uniform(a, b)` | `1/(b-a)` on `a < x < b` |
//! | `MultivariateNormal(μ, Σ)` | `|2πΣ|^{-1/2} exp{-½(x-μ)ᵀΣ⁻¹(x-μ)}` |
//! | `Gamma(A, B)` | `B^A x^{A-1} e^{-Bx} / Γ(A)` (rate `B`) |
//! | `InverseGamma(A, B)` | `B^A x^{-A-1} e^{-B/x} / Γ(A)` |
//! | `HalfCauchy(σ)` | `2σ / (π(x²+σ²))` on `x > 0` |
//!
//! The Negative Binomial pmf is written with the full `(κ+μ)^{x+κ}`
//! denominator. It is the only normalization under which a Poisson whose
//! rate is `Gamma(κ, κ/μ)` distributed has that marginal, which is what
//! [`sample_negbin_poisson_gamma`] relies on; the mean is `μ` and the
//! variance `μ + μ²/κ`.
//!
//! All densities are evaluated in the log domain through `ln Γ`.

use std::f64::consts::{LN_2, PI};

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::{Error, Result};

/// A fully parametrized member of one of the supported families.
#[derive(Clone, Debug, PartialEq)]
pub enum DistSpec {
    Poisson {
        rate: f64,
    },
    NegativeBinomial {
        mean: f64,
        shape: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    MultivariateNormal {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    InverseGamma {
        shape: f64,
        scale: f64,
    },
    HalfCauchy {
        scale: f64,
    },
}

/// An observation or draw of the arity matching its [`DistSpec`].
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Count(u64),
    Real(f64),
    Vector(DVector<f64>),
}

impl Value {
    pub fn as_count(&self) -> Option<u64> {
        match self {
            Value::Count(k) => Some(*k),
            _ => None,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Value::Real(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl DistSpec {
    pub fn name(&self) -> &'static str {
        match self {
            DistSpec::Poisson { .. } => "Poisson",
            DistSpec::NegativeBinomial { .. } => "Negative-Binomial",
            DistSpec::Uniform { .. } => "Uniform",
            DistSpec::MultivariateNormal { .. } => "Multivariate Normal",
            DistSpec::Gamma { .. } => "Gamma",
            DistSpec::InverseGamma { .. } => "Inverse-Gamma",
            DistSpec::HalfCauchy { .. } => "Half-Cauchy",
        }
    }

    /// Check the parameter constraints of the family.
    pub fn validate(&self) -> Result<()> {
        match self {
            DistSpec::Poisson { rate } => positive("Poisson rate", *rate),
            DistSpec::NegativeBinomial { mean, shape } => {
                positive("Negative-Binomial mean", *mean)?;
                positive("Negative-Binomial shape", *shape)
            }
            DistSpec::Uniform { lo, hi } => {
                if lo.is_finite() && hi.is_finite() && lo < hi {
                    Ok(())
                } else {
                    Err(Error::param(format!(
                        "Uniform requires finite a < b, got ({lo}, {hi})"
                    )))
                }
            }
            DistSpec::MultivariateNormal { mean, cov } => {
                mvn_factor(mean, cov)?;
                Ok(())
            }
            DistSpec::Gamma { shape, rate } => {
                positive("Gamma shape", *shape)?;
                positive("Gamma rate", *rate)
            }
            DistSpec::InverseGamma { shape, scale } => {
                positive("Inverse-Gamma shape", *shape)?;
                positive("Inverse-Gamma scale", *scale)
            }
            DistSpec::HalfCauchy { scale } => positive("Half-Cauchy scale", *scale),
        }
    }

    /// Log density (continuous families) or log probability (count families).
    pub fn log_prob(&self, x: &Value) -> Result<f64> {
        self.validate()?;
        let name = self.name();
        match (self, x) {
            (DistSpec::Poisson { rate }, Value::Count(k)) => {
                Ok(*k as f64 * rate.ln() - rate - ln_factorial(*k))
            }
            (DistSpec::NegativeBinomial { mean, shape }, Value::Count(k)) => {
                Ok(negbin_ln_pmf(*k, *mean, *shape))
            }
            (DistSpec::Uniform { lo, hi }, Value::Real(v)) => {
                if *v > *lo && *v < *hi {
                    Ok(-(hi - lo).ln())
                } else {
                    Err(Error::domain(name, v))
                }
            }
            (DistSpec::MultivariateNormal { mean, cov }, Value::Vector(v)) => {
                if v.len() != mean.len() || v.iter().any(|e| !e.is_finite()) {
                    return Err(Error::domain(name, format!("{v:?}")));
                }
                let chol = mvn_factor(mean, cov)?;
                let d = mean.len() as f64;
                let resid = v - mean;
                let z = chol
                    .l()
                    .solve_lower_triangular(&resid)
                    .expect("nonsingular factor");
                let log_det: f64 = chol.l().diagonal().iter().map(|l| 2.0 * l.ln()).sum();
                Ok(-0.5 * (d * (2.0 * PI).ln() + log_det + z.norm_squared()))
            }
            (DistSpec::Gamma { shape, rate }, Value::Real(v)) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::domain(name, v));
                }
                Ok(shape * rate.ln() + (shape - 1.0) * v.ln() - rate * v - ln_gamma(*shape))
            }
            (DistSpec::InverseGamma { shape, scale }, Value::Real(v)) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::domain(name, v));
                }
                Ok(shape * scale.ln() - (shape + 1.0) * v.ln() - scale / v - ln_gamma(*shape))
            }
            (DistSpec::HalfCauchy { scale }, Value::Real(v)) => {
                if !(*v > 0.0 && v.is_finite()) {
                    return Err(Error::domain(name, v));
                }
                Ok(LN_2 + scale.ln() - PI.ln() - (v * v + scale * scale).ln())
            }
            (_, other) => Err(Error::domain(
                name,
                format!("{other:?} has the wrong arity"),
            )),
        }
    }

    /// Draw one value. Deterministic for a fixed generator state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Value> {
        self.validate()?;
        Ok(match self {
            DistSpec::Poisson { rate } => Value::Count(poisson_draw(*rate, rng)),
            DistSpec::NegativeBinomial { mean, shape } => {
                Value::Count(sample_negbin_poisson_gamma(*mean, *shape, rng)?)
            }
            DistSpec::Uniform { lo, hi } => {
                // open interval: reject the (measure-zero) endpoint draws
                loop {
                    let u: f64 = rng.random();
                    let v = lo + (hi - lo) * u;
                    if v > *lo && v < *hi {
                        break Value::Real(v);
                    }
                }
            }
            DistSpec::MultivariateNormal { mean, cov } => {
                let chol = mvn_factor(mean, cov)?;
                let z = DVector::from_iterator(
                    mean.len(),
                    (0..mean.len()).map(|_| StandardNormal.sample(rng)),
                );
                Value::Vector(mean + chol.l() * z)
            }
            DistSpec::Gamma { shape, rate } => Value::Real(gamma_draw(*shape, *rate, rng)),
            DistSpec::InverseGamma { shape, scale } => {
                Value::Real(inverse_gamma_draw(*shape, *scale, rng))
            }
            DistSpec::HalfCauchy { scale } => Value::Real(sample_halfcauchy_ig(*scale, rng)?),
        })
    }
}

fn mvn_factor(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let d = mean.len();
    if d == 0 || cov.nrows() != d || cov.ncols() != d {
        return Err(Error::param(format!(
            "Multivariate Normal dimension mismatch: mean {d}, covariance {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::param(
            "Multivariate Normal parameters must be finite",
        ));
    }
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-12 * scale {
        return Err(Error::NotSpd(
            "Multivariate Normal covariance is not symmetric",
        ));
    }
    Cholesky::new(cov.clone()).ok_or(Error::NotSpd("Multivariate Normal covariance"))
}

/// `ln k!`, exactly zero for `k ≤ 1`.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        0.0
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// `ln P(X = k)` for `X ~ Negative-Binomial(mean, shape)`; parameters are
/// assumed valid.
pub fn negbin_ln_pmf(k: u64, mean: f64, shape: f64) -> f64 {
    let k = k as f64;
    let ln_p_shape = -(mean / shape).ln_1p(); // ln(κ/(κ+μ))
    let ln_p_count = -(shape / mean).ln_1p(); // ln(μ/(κ+μ))
    ln_gamma(k + shape) - ln_gamma(shape) - ln_factorial(k as u64)
        + shape * ln_p_shape
        + k * ln_p_count
}

/// `Gamma(shape, rate)` draw.
pub(crate) fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("validated gamma parameters")
        .sample(rng)
}

/// `Inverse-Gamma(shape, scale)` draw, as the reciprocal of a Gamma draw.
pub(crate) fn inverse_gamma_draw<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    1.0 / gamma_draw(shape, scale, rng)
}

pub(crate) fn poisson_draw<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let d = Poisson::new(rate).expect("finite positive Poisson rate");
    let v: f64 = d.sample(rng);
    v as u64
}

/// Negative Binomial draw through its Poisson–Gamma mixture: a rate
/// `a ~ Gamma(κ, κ/μ)`, then a count `x | a ~ Poisson(a)`.
pub fn sample_negbin_poisson_gamma<R: Rng + ?Sized>(
    mean: f64,
    shape: f64,
    rng: &mut R,
) -> Result<u64> {
    positive("Negative-Binomial mean", mean)?;
    positive("Negative-Binomial shape", shape)?;
    let rate = gamma_draw(shape, shape / mean, rng);
    Ok(poisson_draw(rate, rng))
}

/// Half-Cauchy draw through nested Inverse-Gamma variables:
/// `a ~ Inverse-Gamma(½, 1/A²)`, `x | a ~ Inverse-Gamma(½, 1/a)`, return `√x`.
pub fn sample_halfcauchy_ig<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    positive("Half-Cauchy scale", scale)?;
    let a = inverse_gamma_draw(0.5, 1.0 / (scale * scale), rng);
    let x = inverse_gamma_draw(0.5, 1.0 / a, rng);
    Ok(x.sqrt())
}

/// Half-Cauchy draw by inverting its CDF `(2/π) arctan(x/σ)`.
pub fn sample_halfcauchy_inverse_cdf<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    positive("Half-Cauchy scale", scale)?;
    let u: f64 = rng.random();
    Ok(scale * (0.5 * PI * u).tan())
}

/// Closed-form Half-Cauchy CDF.
pub fn halfcauchy_cdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        2.0 / PI * (x / scale).atan()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gof::{chi_square_gof, ks_statistic};
    use crate::seeded_rng;

    fn real(spec: &DistSpec, x: f64) -> f64 {
        spec.log_prob(&Value::Real(x)).unwrap()
    }

    #[test]
    fn poisson_at_zero_with_unit_rate() {
        let lp = DistSpec::Poisson { rate: 1.0 }
            .log_prob(&Value::Count(0))
            .unwrap();
        assert_eq!(lp, -1.0);
    }

    #[test]
    fn uniform_is_constant() {
        let spec = DistSpec::Uniform { lo: 0.0, hi: 2.0 };
        assert!((real(&spec, 1.0) - 0.5f64.ln()).abs() < 1e-15);
        assert!(spec.log_prob(&Value::Real(2.0)).is_err());
        assert!(spec.log_prob(&Value::Real(0.0)).is_err());
    }

    /// Mixture oracle: integrate Poisson(5 | g) Gamma(g; κ, κ/μ) over g with
    /// Simpson's rule in `ln g`, using the closed-form densities directly.
    #[test]
    fn negbin_pmf_matches_poisson_gamma_mixture_integral() {
        let (mu, kappa, k) = (2.0f64, 3.8f64, 5u64);
        let kf = k as f64;
        let integrand = |t: f64| {
            let g = t.exp();
            let log_pois = kf * g.ln() - g - ln_gamma(kf + 1.0);
            let rate = kappa / mu;
            let log_gamma = kappa * rate.ln() + (kappa - 1.0) * g.ln() - rate * g - ln_gamma(kappa);
            (log_pois + log_gamma).exp() * g
        };
        let (a, b, m) = (-40.0, 5.0, 200_000usize);
        let h = (b - a) / m as f64;
        let mut sum = integrand(a) + integrand(b);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * integrand(a + i as f64 * h);
        }
        let oracle = sum * h / 3.0;
        let lp = DistSpec::NegativeBinomial {
            mean: mu,
            shape: kappa,
        }
        .log_prob(&Value::Count(k))
        .unwrap();
        assert!(
            (lp.exp() - oracle).abs() < 1e-12,
            "{} vs {}",
            lp.exp(),
            oracle
        );
    }

    #[test]
    fn count_pmfs_sum_to_one() {
        for spec in [
            DistSpec::Poisson { rate: 3.3 },
            DistSpec::NegativeBinomial {
                mean: 2.0,
                shape: 3.8,
            },
            DistSpec::NegativeBinomial {
                mean: 40.0,
                shape: 0.5,
            },
        ] {
            let total: f64 = (0..20_000u64)
                .map(|k| spec.log_prob(&Value::Count(k)).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-6, "{spec:?}: {total}");
        }
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn positive_densities_integrate_to_one() {
        for spec in [
            DistSpec::Gamma {
                shape: 2.0,
                rate: 1.0,
            },
            DistSpec::Gamma {
                shape: 0.7,
                rate: 3.0,
            },
            DistSpec::InverseGamma {
                shape: 0.5,
                scale: 2.0,
            },
            DistSpec::InverseGamma {
                shape: 9.0,
                scale: 4.0,
            },
            DistSpec::HalfCauchy { scale: 1.0 },
            DistSpec::HalfCauchy { scale: 1e5 },
        ] {
            // substitute x = e^t so heavy tails are covered
            let total = simpson(|t| (real(&spec, t.exp()) + t).exp(), -60.0, 60.0, 400_000);
            assert!((total - 1.0).abs() < 1e-6, "{spec:?}: {total}");
        }
        let uni = DistSpec::Uniform { lo: -1.0, hi: 3.0 };
        let total = simpson(
            |x| real(&uni, x.clamp(-1.0 + 1e-12, 3.0 - 1e-12)).exp(),
            -1.0,
            3.0,
            1000,
        );
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bivariate_normal_integrates_to_one() {
        let spec = DistSpec::MultivariateNormal {
            mean: DVector::from_vec(vec![0.3, -1.0]),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.5]),
        };
        let m = 800;
        let (a, b) = (-10.0, 10.0);
        let h = (b - a) / m as f64;
        let w = |i: usize| {
            if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut total = 0.0;
        for i in 0..=m {
            for j in 0..=m {
                let x = DVector::from_vec(vec![a + i as f64 * h, a + j as f64 * h]);
                total += w(i) * w(j) * spec.log_prob(&Value::Vector(x)).unwrap().exp();
            }
        }
        total *= h * h / 9.0;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn invalid_parameters_and_support() {
        assert!(DistSpec::Poisson { rate: 0.0 }.validate().is_err());
        assert!(DistSpec::Uniform { lo: 1.0, hi: 1.0 }.validate().is_err());
        assert!(DistSpec::Gamma {
            shape: -1.0,
            rate: 1.0
        }
        .validate()
        .is_err());
        assert!(DistSpec::HalfCauchy { scale: 1.0 }
            .log_prob(&Value::Real(-1.0))
            .is_err());
        assert!(DistSpec::Gamma {
            shape: 1.0,
            rate: 1.0
        }
        .log_prob(&Value::Count(1))
        .is_err());
        let not_spd = DistSpec::MultivariateNormal {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
        };
        assert!(matches!(not_spd.validate(), Err(Error::NotSpd(_))));
        let mut rng = seeded_rng(1);
        assert!(sample_negbin_poisson_gamma(0.0, 1.0, &mut rng).is_err());
        assert!(sample_halfcauchy_ig(-2.0, &mut rng).is_err());
    }

    #[test]
    fn uniform_draws_stay_inside() {
        let spec = DistSpec::Uniform { lo: 0.0, hi: 1.0 };
        let mut rng = seeded_rng(7);
        for _ in 0..10_000 {
            let v = spec.sample(&mut rng).unwrap().as_real().unwrap();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn gamma_sample_mean() {
        let spec = DistSpec::Gamma {
            shape: 2.0,
            rate: 1.0,
        };
        let mut rng = seeded_rng(11);
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| spec.sample(&mut rng).unwrap().as_real().unwrap())
            .sum::<f64>()
            / n as f64;
        let se = (2.0f64 / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn mvn_sample_covariance() {
        let spec = DistSpec::MultivariateNormal {
            mean: DVector::zeros(2),
            cov: DMatrix::identity(2, 2),
        };
        let mut rng = seeded_rng(3);
        let n = 100_000;
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let v = spec.sample(&mut rng).unwrap();
            let v = v.as_vector().unwrap();
            acc += v * v.transpose();
        }
        acc /= n as f64;
        assert!((&acc - DMatrix::identity(2, 2)).amax() < 0.02, "{acc}");
    }

    #[test]
    fn poisson_gamma_mixture_matches_negbin_pmf() {
        let mut rng = seeded_rng(2024);
        for (mu, kappa) in [
            (2.0, 3.8),
            (0.5, 1.0),
            (10.0, 0.7),
            (25.0, 12.0),
            (4.0, 100.0),
        ] {
            let draws: Vec<u64> = (0..100_000)
                .map(|_| sample_negbin_poisson_gamma(mu, kappa, &mut rng).unwrap())
                .collect();
            let p = chi_square_gof(&draws, |k| negbin_ln_pmf(k, mu, kappa).exp());
            assert!(p > 0.01, "mu={mu} kappa={kappa}: p={p}");
        }
    }

    #[test]
    fn negbin_moments() {
        let mut rng = seeded_rng(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_negbin_poisson_gamma(2.0, 3.8, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 2.0 + 4.0 / 3.8;
        // sd of the sample variance is about sqrt(μ4/n) ≈ 0.03 here
        assert!((var - target).abs() < 0.1, "{var} vs {target}");
        assert!((mean - 2.0).abs() < 0.02);

        let draws: Vec<f64> = (0..n)
            .map(|_| sample_negbin_poisson_gamma(2.0, 1e6, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(
            (mean - 2.0).abs() < 0.02 && (var - 2.0).abs() < 0.06,
            "{mean} {var}"
        );
    }

    fn ks_pass(draws: &mut [f64], scale: f64) -> f64 {
        let (d, p) = ks_statistic(draws, |x| halfcauchy_cdf(x, scale));
        assert!(d < 0.01, "KS distance {d}");
        p
    }

    #[test]
    fn nested_inverse_gamma_gives_half_cauchy() {
        let mut rng = seeded_rng(5);
        for scale in [0.5, 1.0, 2.0, 1e5] {
            let mut draws: Vec<f64> = (0..100_000)
                .map(|_| sample_halfcauchy_ig(scale, &mut rng).unwrap())
                .collect();
            let p = ks_pass(&mut draws, scale);
            assert!(p > 0.01, "scale={scale}: p={p}");
        }
        // inverse-CDF sampler cross-check
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| sample_halfcauchy_inverse_cdf(2.0, &mut rng).unwrap())
            .collect();
        assert!(ks_pass(&mut draws, 2.0) > 0.01);
    }

    #[test]
    fn half_cauchy_median_and_quartile() {
        let mut rng = seeded_rng(8);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| sample_halfcauchy_ig(1.0, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let median = draws[50_000];
        let q1 = draws[25_000];
        assert!((median - 1.0).abs() < 0.03, "{median}");
        assert!((q1 - (PI / 8.0).tan()).abs() < 0.01, "{q1}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = DistSpec::NegativeBinomial {
            mean: 3.0,
            shape: 2.0,
        };
        let a: Vec<_> = {
            let mut rng = seeded_rng(42);
            (0..100).map(|_| spec.sample(&mut rng).unwrap()).collect()
        };
        let b: Vec<_> = {
            let mut rng = seeded_rng(42);
            (0..100).map(|_| spec.sample(&mut rng).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
