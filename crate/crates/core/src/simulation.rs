//! Data generators for the simulation study and the streaming demo.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{poisson_draw, sample_negbin_poisson_gamma};
use crate::model::Family;

/// Shape of the Negative Binomial response in the additive simulation.
pub const TRUE_KAPPA: f64 = 3.8;

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// `g₁(x) = cos(4πx) + 2x`.
pub fn g1(x: f64) -> f64 {
    (4.0 * std::f64::consts::PI * x).cos() + 2.0 * x
}

/// `g₂(x) = 0.4 φ(x; 0.38, 0.08) − 1.02x + 0.018x² + 0.08 φ(x; 0.75, 0.03)`.
pub fn g2(x: f64) -> f64 {
    0.4 * normal_pdf(x, 0.38, 0.08) - 1.02 * x + 0.018 * x * x + 0.08 * normal_pdf(x, 0.75, 0.03)
}

/// True mean `exp{g₁(x₁) + g₂(x₂)}`.
pub fn true_mean(x1: f64, x2: f64) -> f64 {
    (g1(x1) + g2(x2)).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveData {
    pub y: Vec<u64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

/// `x₁, x₂ ~ Uniform(0, 1)` and `y ~ Poisson(μ)` or
/// `Negative-Binomial(μ, 3.8)` with `μ = exp{g₁(x₁) + g₂(x₂)}`.
pub fn simulate_additive(n: usize, family: Family, seed: u64) -> AdditiveData {
    let mut rng = crate::seeded_rng(seed);
    let mut data = AdditiveData {
        y: Vec::with_capacity(n),
        x1: Vec::with_capacity(n),
        x2: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let x1: f64 = rng.random();
        let x2: f64 = rng.random();
        let mean = true_mean(x1, x2);
        let y = match family {
            Family::Poisson => poisson_draw(mean, &mut rng),
            Family::NegativeBinomial => {
                sample_negbin_poisson_gamma(mean, TRUE_KAPPA, &mut rng).expect("positive mean")
            }
        };
        data.y.push(y);
        data.x1.push(x1);
        data.x2.push(x2);
    }
    data
}

/// Mean function of the streaming demo, `exp{cos(4πx) + 2x}`.
pub fn movie_mean(x: f64) -> f64 {
    g1(x).exp()
}

/// `x ~ Uniform(0, 1)`, `y ~ Poisson(exp{cos(4πx) + 2x})`.
pub fn simulate_movie(n: usize, seed: u64) -> (Vec<u64>, Vec<f64>) {
    let mut rng = crate::seeded_rng(seed);
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let v: f64 = rng.random();
        y.push(poisson_draw(movie_mean(v), &mut rng));
        x.push(v);
    }
    (y, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_functions() {
        assert!((g1(0.0) - 1.0).abs() < 1e-15);
        assert!((g1(0.5) - 2.0).abs() < 1e-14);
        let peak = 0.4 / (0.08 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((peak - 1.994_711_4).abs() < 1e-6);
        let expected =
            peak - 1.02 * 0.38 + 0.018 * 0.38 * 0.38 + 0.08 * normal_pdf(0.38, 0.75, 0.03);
        assert!((g2(0.38) - expected).abs() < 1e-14);
    }

    #[test]
    fn generators_are_deterministic() {
        let a = simulate_additive(50, Family::NegativeBinomial, 3);
        let b = simulate_additive(50, Family::NegativeBinomial, 3);
        assert_eq!(a, b);
        assert_ne!(a, simulate_additive(50, Family::NegativeBinomial, 4));
        assert_eq!(simulate_movie(20, 1), simulate_movie(20, 1));
        assert!(a.x1.iter().chain(&a.x2).all(|v| (0.0..1.0).contains(v)));
    }

    #[test]
    fn poisson_counts_track_the_mean() {
        let d = simulate_additive(20_000, Family::Poisson, 5);
        let observed: f64 = d.y.iter().map(|&v| v as f64).sum::<f64>() / 20_000.0;
        let expected: f64 =
            d.x1.iter()
                .zip(&d.x2)
                .map(|(&a, &b)| true_mean(a, b))
                .sum::<f64>()
                / 20_000.0;
        assert!((observed - expected).abs() < 0.05 * expected);
    }
}
