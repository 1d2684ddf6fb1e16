//! The integral
//!
//! ```text
//! H(p, q, r, s, t) = ∫ₛᵗ x^p exp{q [x ln x − ln Γ(x)] − r x} dx
//! ```
//!
//! whose ratios give the moments of the optimal `q(κ)` density of the
//! Negative Binomial shape parameter. For `q` in the thousands the
//! integrand is an extremely narrow spike, so everything is done in the log
//! domain: the exponent `h(x)` is strictly concave, its maximizer is found by
//! bisection on `h'`, and adaptive Gauss–Kronrod quadrature is applied to
//! `exp(h − h_max)` on the region where `h` is within [`LOG_CUTOFF`] of its
//! maximum, split at the mode.

use statrs::function::gamma::{digamma, ln_gamma};

use crate::{Error, Result};

/// Integrand values below `exp(−LOG_CUTOFF)` relative to the peak are dropped.
const LOG_CUTOFF: f64 = 60.0;
const REL_TOL: f64 = 1e-12;
const MAX_INTERVALS: usize = 2000;
const BISECT_TOL: f64 = 1e-12;

/// Arguments of `H`, validated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HArgs {
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub s: f64,
    pub t: f64,
}

impl HArgs {
    /// `p ≥ 0`, `q > 0`, `0 < s ≤ t`. `r` only needs to be finite: the
    /// interval is bounded, so the integral exists for any `r`.
    pub fn new(p: f64, q: f64, r: f64, s: f64, t: f64) -> Result<Self> {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::param(format!("H: p must be nonnegative, got {p}")));
        }
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::param(format!("H: q must be positive, got {q}")));
        }
        if !r.is_finite() {
            return Err(Error::param(format!("H: r must be finite, got {r}")));
        }
        if !(s > 0.0 && t.is_finite()) {
            return Err(Error::param(format!(
                "H: need 0 < s and finite t, got s={s}, t={t}"
            )));
        }
        if s > t {
            return Err(Error::domain(
                "H integration interval",
                format!("[{s}, {t}]"),
            ));
        }
        Ok(HArgs { p, q, r, s, t })
    }

    /// Log of the integrand.
    pub fn exponent(&self, x: f64) -> f64 {
        let power = if self.p == 0.0 { 0.0 } else { self.p * x.ln() };
        power + self.q * (x * x.ln() - ln_gamma(x)) - self.r * x
    }

    fn exponent_slope(&self, x: f64) -> f64 {
        self.p / x + self.q * (x.ln() + 1.0 - digamma(x)) - self.r
    }

    /// Maximizer of the exponent over `[s, t]`.
    pub fn mode(&self) -> f64 {
        if self.exponent_slope(self.s) <= 0.0 {
            return self.s;
        }
        if self.exponent_slope(self.t) >= 0.0 {
            return self.t;
        }
        let (mut lo, mut hi) = (self.s, self.t);
        while hi - lo > BISECT_TOL * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.exponent_slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// The effective support of an `H`-type integrand: mode, peak log value and
/// the interval where the integrand is non-negligible.
#[derive(Clone, Copy, Debug)]
struct Peak {
    mode: f64,
    log_max: f64,
    left: f64,
    right: f64,
}

fn locate_peak(args: &HArgs) -> Peak {
    let mode = args.mode();
    let log_max = args.exponent(mode);
    let floor = log_max - LOG_CUTOFF;
    // h is concave, so it is monotone on either side of the mode
    let cut = |mut inside: f64, mut outside: f64| {
        if args.exponent(outside) >= floor {
            return outside;
        }
        for _ in 0..200 {
            let mid = 0.5 * (inside + outside);
            if (outside - inside).abs() <= 1e-15 * mid.abs() {
                break;
            }
            if args.exponent(mid) >= floor {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        outside
    };
    Peak {
        mode,
        log_max,
        left: cut(mode, args.s),
        right: cut(mode, args.t),
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, (kronrod - gauss).abs() * half)
}

/// Globally adaptive Gauss–Kronrod: repeatedly bisects the subinterval with
/// the largest error estimate until the summed error drops below `abs_tol`
/// or [`MAX_INTERVALS`] is reached.
fn adaptive(f: &impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64) -> f64 {
    let (est, err) = gauss_kronrod(f, a, b);
    let mut parts = vec![(a, b, est, err)];
    let mut total_err = err;
    while total_err > abs_tol && parts.len() < MAX_INTERVALS {
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("nonempty");
        let (lo, hi, _, e) = parts[worst];
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (l_est, l_err) = gauss_kronrod(f, lo, mid);
        let (r_est, r_err) = gauss_kronrod(f, mid, hi);
        parts[worst] = (lo, mid, l_est, l_err);
        parts.push((mid, hi, r_est, r_err));
        total_err += l_err + r_err - e;
        if total_err < 0.0 {
            total_err = parts.iter().map(|p| p.3).sum();
        }
    }
    parts.iter().map(|p| p.2).sum()
}

/// `∫ g(x) exp{h(x) − h_max} dx` over the effective support, where `g` is a
/// bounded weight. Returns `(integral, h_max)`.
fn scaled_integral(args: &HArgs, peak: &Peak, weight: impl Fn(f64) -> f64) -> f64 {
    let f = |x: f64| weight(x) * (args.exponent(x) - peak.log_max).exp();
    // rough magnitude of the whole integral to set an absolute tolerance
    let mut pieces = Vec::with_capacity(2);
    if peak.mode > peak.left {
        pieces.push((peak.left, peak.mode));
    }
    if peak.right > peak.mode {
        pieces.push((peak.mode, peak.right));
    }
    let rough: f64 = pieces
        .iter()
        .map(|&(a, b)| gauss_kronrod(&|x| f(x).abs(), a, b).0)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    pieces
        .iter()
        .map(|&(a, b)| adaptive(&f, a, b, REL_TOL * rough))
        .sum()
}

/// `ln H(p, q, r, s, t)`; `−∞` for an empty interval.
pub fn log_h(args: &HArgs) -> Result<f64> {
    if args.s == args.t {
        return Ok(f64::NEG_INFINITY);
    }
    let peak = locate_peak(args);
    let integral = scaled_integral(args, &peak, |_| 1.0);
    let value = peak.log_max + integral.ln();
    if value.is_nan() {
        return Err(Error::param(format!("H evaluation failed for {args:?}")));
    }
    Ok(value)
}

/// Mean of the density proportional to `exp{n[κ ln κ − ln Γ(κ)] − C₁ κ}` on
/// `[κ_min, κ_max]`, i.e. `H(1, n, C₁, ·) / H(0, n, C₁, ·)`.
pub fn kappa_posterior_mean(n: f64, c1: f64, kappa_min: f64, kappa_max: f64) -> Result<f64> {
    if !(kappa_min < kappa_max) {
        return Err(Error::param(format!(
            "kappa bounds must satisfy min < max, got [{kappa_min}, {kappa_max}]"
        )));
    }
    let h1 = log_h(&HArgs::new(1.0, n, c1, kappa_min, kappa_max)?)?;
    let h0 = log_h(&HArgs::new(0.0, n, c1, kappa_min, kappa_max)?)?;
    Ok((h1 - h0).exp().clamp(kappa_min, kappa_max))
}

/// `E[f(κ)]` under the same density as [`kappa_posterior_mean`], for a
/// bounded function `f` on the interval.
pub fn kappa_expectation(
    n: f64,
    c1: f64,
    kappa_min: f64,
    kappa_max: f64,
    f: impl Fn(f64) -> f64,
) -> Result<f64> {
    let args = HArgs::new(0.0, n, c1, kappa_min, kappa_max)?;
    if kappa_min == kappa_max {
        return Ok(f(kappa_min));
    }
    let peak = locate_peak(&args);
    let norm = scaled_integral(&args, &peak, |_| 1.0);
    let num = scaled_integral(&args, &peak, f);
    Ok(num / norm)
}

/// The normalized `q(κ)` density on `[κ_min, κ_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KappaDensity {
    pub n: f64,
    pub c1: f64,
    pub kappa_min: f64,
    pub kappa_max: f64,
    log_norm: f64,
}

impl KappaDensity {
    pub fn new(n: f64, c1: f64, kappa_min: f64, kappa_max: f64) -> Result<Self> {
        let log_norm = log_h(&HArgs::new(0.0, n, c1, kappa_min, kappa_max)?)?;
        Ok(KappaDensity {
            n,
            c1,
            kappa_min,
            kappa_max,
            log_norm,
        })
    }

    /// `ln H(0, n, C₁, κ_min, κ_max)`.
    pub fn log_normalizer(&self) -> f64 {
        self.log_norm
    }

    pub fn pdf(&self, kappa: f64) -> f64 {
        if kappa < self.kappa_min || kappa > self.kappa_max {
            return 0.0;
        }
        let args = HArgs {
            p: 0.0,
            q: self.n,
            r: self.c1,
            s: self.kappa_min,
            t: self.kappa_max,
        };
        (args.exponent(kappa) - self.log_norm).exp()
    }

    /// Mode of the density.
    pub fn mode(&self) -> f64 {
        HArgs {
            p: 0.0,
            q: self.n,
            r: self.c1,
            s: self.kappa_min,
            t: self.kappa_max,
        }
        .mode()
    }

    /// Effective support `[left, right]` outside of which the density is
    /// below `e^{-60}` of its peak.
    pub fn support(&self) -> (f64, f64) {
        let args = HArgs {
            p: 0.0,
            q: self.n,
            r: self.c1,
            s: self.kappa_min,
            t: self.kappa_max,
        };
        let peak = locate_peak(&args);
        (peak.left, peak.right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Brute-force oracle: trapezoid rule with `points` nodes on a grid that
    /// is geometrically graded toward both ends of `[s, t]`, accumulated in
    /// the log domain.
    pub(crate) fn trapezoid_log_h(args: &HArgs, points: usize) -> f64 {
        let h = |x: f64| {
            let power = if args.p == 0.0 { 0.0 } else { args.p * x.ln() };
            power + args.q * (x * x.ln() - ln_gamma(x)) - args.r * x
        };
        let (s, t) = (args.s, args.t);
        let mid = 0.5 * (s + t);
        let half = points / 2;
        let alpha = 30.0f64;
        let denom = alpha.exp_m1();
        // nodes from s to mid (clustered at s), then mid to t (clustered at t)
        let mut xs = Vec::with_capacity(2 * half + 1);
        for i in 0..=half {
            let v = i as f64 / half as f64;
            xs.push(s + (mid - s) * (alpha * v).exp_m1() / denom);
        }
        for i in (0..half).rev() {
            let v = i as f64 / half as f64;
            xs.push(t - (t - mid) * (alpha * v).exp_m1() / denom);
        }
        let logs: Vec<f64> = xs.iter().map(|&x| h(x)).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut acc = 0.0;
        for i in 0..xs.len() - 1 {
            acc += 0.5 * (xs[i + 1] - xs[i]) * ((logs[i] - m).exp() + (logs[i + 1] - m).exp());
        }
        m + acc.ln()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn empty_interval() {
        let a = HArgs::new(0.0, 5.0, 5.0, 2.0, 2.0).unwrap();
        assert_eq!(log_h(&a).unwrap(), f64::NEG_INFINITY);
        assert!(HArgs::new(0.0, 5.0, 5.0, 3.0, 2.0).is_err());
    }

    #[test]
    fn matches_trapezoid_on_reference_arguments() {
        for p in [0.0, 1.0] {
            let a = HArgs::new(p, 5.0, 5.0, 0.01, 100.0).unwrap();
            let ours = log_h(&a).unwrap();
            let oracle = trapezoid_log_h(&a, 1_000_000);
            assert!(
                rel(ours.exp(), oracle.exp()) < 1e-8,
                "p={p}: {ours} vs {oracle}"
            );
        }
        let h0 = log_h(&HArgs::new(0.0, 5.0, 5.0, 0.01, 100.0).unwrap()).unwrap();
        let h1 = log_h(&HArgs::new(1.0, 5.0, 5.0, 0.01, 100.0).unwrap()).unwrap();
        let mean = (h1 - h0).exp();
        assert!((0.01..=100.0).contains(&mean));
    }

    #[test]
    fn endpoint_dominated_integrand() {
        let a = HArgs::new(0.0, 1.0, 1e6, 0.01, 100.0).unwrap();
        assert_eq!(a.mode(), 0.01);
        let ours = log_h(&a).unwrap();
        let oracle = trapezoid_log_h(&a, 1_000_000);
        assert!(rel(ours, oracle) < 1e-6, "{ours} vs {oracle}");
        // mass concentrates at the left endpoint: H ≈ e^{h(s)} / |h'(s)|
        let approx = a.exponent(0.01) - (-a.exponent_slope(0.01)).ln();
        assert!((ours - approx).abs() < 1e-3);
    }

    #[test]
    fn randomized_arguments_against_trapezoid() {
        let mut rng = crate::seeded_rng(314);
        for _ in 0..50 {
            let q = 1.0 + 999.0 * rng.random::<f64>();
            let p = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let s: f64 = 0.01;
            let t: f64 = 100.0;
            let mode = (s.ln() + (t / s).ln() * (0.05 + 0.9 * rng.random::<f64>())).exp();
            let r = p / mode + q * (mode.ln() + 1.0 - digamma(mode));
            let a = HArgs::new(p, q, r, s, t).unwrap();
            let ours = log_h(&a).unwrap();
            let oracle = trapezoid_log_h(&a, 1_000_000);
            assert!((ours - oracle).abs() < 1e-6, "{a:?}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn monotone_in_r_and_t() {
        let mut rng = crate::seeded_rng(2);
        for _ in 0..30 {
            let q = 1.0 + 200.0 * rng.random::<f64>();
            let r = q * (1.0 + 2.0 * rng.random::<f64>());
            let p = rng.random::<f64>() * 2.0;
            let base = log_h(&HArgs::new(p, q, r, 0.01, 50.0).unwrap()).unwrap();
            let more_r = log_h(&HArgs::new(p, q, r * 1.01, 0.01, 50.0).unwrap()).unwrap();
            let more_t = log_h(&HArgs::new(p, q, r, 0.01, 60.0).unwrap()).unwrap();
            assert!(more_r <= base + 1e-10);
            assert!(more_t >= base - 1e-10);
        }
    }

    #[test]
    fn large_counts_do_not_overflow() {
        for n in [1e3, 1e4, 1e5] {
            // C1 placing the mode at 3.8
            let c1 = n * (3.8f64.ln() + 1.0 - digamma(3.8));
            let m = kappa_posterior_mean(n, c1, 0.01, 100.0).unwrap();
            assert!(m.is_finite() && (m - 3.8).abs() < 0.05, "n={n}: {m}");
            let h = log_h(&HArgs::new(0.0, n, c1, 0.01, 100.0).unwrap()).unwrap();
            assert!(h.is_finite());
        }
    }

    #[test]
    fn kappa_mean_near_mode_for_large_n() {
        let n = 500.0;
        let c1 = n * (3.8f64.ln() + 1.0 - digamma(3.8));
        let m = kappa_posterior_mean(n, c1, 0.01, 100.0).unwrap();
        // posterior sd ≈ sqrt(1/(n(ψ'(κ) − 1/κ))) ≈ 0.27 at κ = 3.8, the mean
        // sits slightly right of the mode
        assert!((m - 3.8).abs() < 0.1, "{m}");
        let d = KappaDensity::new(n, c1, 0.01, 100.0).unwrap();
        assert!((d.mode() - 3.8).abs() < 1e-9);
    }

    #[test]
    fn kappa_mean_stays_inside_bounds() {
        let mut rng = crate::seeded_rng(3);
        for _ in 0..200 {
            let n = 10f64.powf(4.0 * rng.random::<f64>());
            let c1 = n * (0.5 + 3.0 * rng.random::<f64>());
            let lo = 0.01 + rng.random::<f64>();
            let hi = lo + 100.0 * rng.random::<f64>() + 1e-3;
            let m = kappa_posterior_mean(n, c1, lo, hi).unwrap();
            assert!(m >= lo && m <= hi);
        }
        let eps = 1e-6;
        let m = kappa_posterior_mean(500.0, 900.0, 100.0 - eps, 100.0).unwrap();
        assert!((m - (100.0 - eps)).abs() <= eps);
    }

    #[test]
    fn density_normalizes_and_expectation_matches_mean() {
        let n = 50.0;
        let c1 = n * (2.0f64.ln() + 1.0 - digamma(2.0));
        let d = KappaDensity::new(n, c1, 0.01, 100.0).unwrap();
        let (a, b) = d.support();
        let m = 200_000;
        let h = (b - a) / m as f64;
        let mut total = 0.0;
        for i in 0..=m {
            let w = if i == 0 || i == m { 0.5 } else { 1.0 };
            total += w * d.pdf(a + i as f64 * h);
        }
        assert!((total * h - 1.0).abs() < 1e-8);
        let mean = kappa_posterior_mean(n, c1, 0.01, 100.0).unwrap();
        let e = kappa_expectation(n, c1, 0.01, 100.0, |k| k).unwrap();
        assert!((mean - e).abs() < 1e-10 * mean);
    }
}
