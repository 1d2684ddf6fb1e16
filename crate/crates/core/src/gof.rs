//! Goodness-of-fit statistics used to check samplers against closed forms.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Pearson chi-square test of integer draws against a pmf.
///
/// Adjacent counts are pooled until every bin expects at least five draws;
/// the last bin absorbs the whole upper tail. Returns the p-value.
pub fn chi_square_gof(draws: &[u64], pmf: impl Fn(u64) -> f64) -> f64 {
    let n = draws.len() as f64;
    let max_draw = draws.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0usize; max_draw as usize + 1];
    for &d in draws {
        observed[d as usize] += 1;
    }

    // (expected, observed) per pooled bin
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut cum = 0.0;
    let mut cur = (0.0, 0.0);
    let mut k = 0u64;
    while n * (1.0 - cum) >= 5.0 && k <= max_draw {
        let p = pmf(k);
        cum += p;
        cur.0 += n * p;
        cur.1 += observed[k as usize] as f64;
        if cur.0 >= 5.0 {
            bins.push(cur);
            cur = (0.0, 0.0);
        }
        k += 1;
    }
    // tail: everything from k upward
    let tail_obs: usize = observed.iter().skip(k as usize).sum();
    cur.0 += n * (1.0 - cum).max(0.0);
    cur.1 += tail_obs as f64;
    if cur.0 >= 5.0 || bins.is_empty() {
        bins.push(cur);
    } else {
        let last = bins.last_mut().unwrap();
        last.0 += cur.0;
        last.1 += cur.1;
    }
    if bins.len() < 2 {
        return 1.0;
    }
    let stat: f64 = bins.iter().map(|(e, o)| (o - e).powi(2) / e).sum();
    let df = (bins.len() - 1) as f64;
    1.0 - ChiSquared::new(df).expect("positive df").cdf(stat)
}

/// One-sample Kolmogorov–Smirnov statistic and its asymptotic p-value.
/// Sorts `draws` in place.
pub fn ks_statistic(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            ((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max);
    let sqrt_n = n.sqrt();
    (d, kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
