//! O'Sullivan penalized splines in mixed-model form.
//!
//! For a predictor `x` and a basis size `K`:
//!
//! 1. `x` is standardized to zero mean and unit standard deviation.
//! 2. `K − 2` interior knots are placed at equally spaced quantiles of the
//!    unique standardized values, with boundary knots at their min and max,
//!    giving `K + 2` cubic B-splines `B(x)`.
//! 3. The penalty `Ω = ∫ B''(x) B''(x)ᵀ dx` over the boundary range has a
//!    two-dimensional null space (the linear functions, carried by the fixed
//!    effects). Its positive eigenpairs `(d_k, U_k)` give the transform
//!    `T = U diag(d^{-1/2})`, so that `Tᵀ Ω T = I_K`.
//! 4. The random-effect design columns are `Z = B(x) T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const ORDER: usize = 4;
const EIGEN_CUTOFF: f64 = 1e-10;

/// Affine map to zero mean and unit (sample) standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    pub fn fit(x: &[f64]) -> Result<Self> {
        if x.len() < 2 || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Design(
                "standardization needs at least two finite values".into(),
            ));
        }
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Design("predictor has zero variance".into()));
        }
        Ok(Standardization { mean, sd })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// A fitted mixed-model spline basis for one predictor. Knots and boundary
/// are on the standardized scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub interior_knots: Vec<f64>,
    pub boundary: (f64, f64),
    /// `(K + 2) × K` map from B-spline coefficients to the mixed-model basis.
    pub transform: DMatrix<f64>,
    pub k: usize,
    pub standardization: Standardization,
}

/// Build the basis for training values `x` and return it with the `n × K`
/// design block evaluated at `x`.
pub fn build_basis(x: &[f64], k: usize) -> Result<(SplineBasis, DMatrix<f64>)> {
    if k < 2 {
        return Err(Error::Design(format!(
            "spline basis size must be at least 2, got {k}"
        )));
    }
    if x.len() <= k + 4 {
        return Err(Error::Design(format!(
            "spline basis of size {k} needs more than {} observations, got {}",
            k + 4,
            x.len()
        )));
    }
    let standardization = Standardization::fit(x)?;
    let xs: Vec<f64> = x.iter().map(|&v| standardization.apply(v)).collect();
    let mut unique = xs.clone();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    if unique.len() < k {
        return Err(Error::Design(format!(
            "spline basis of size {k} needs at least {k} distinct predictor values, got {}",
            unique.len()
        )));
    }
    let lo = unique[0];
    let hi = *unique.last().unwrap();
    let interior_knots: Vec<f64> = (1..k - 1)
        .map(|j| quantile_sorted(&unique, j as f64 / (k - 1) as f64))
        .collect();

    let knots = full_knots(&interior_knots, lo, hi);
    let omega = penalty_gram(&knots);
    let transform = spectral_transform(&omega, k)?;

    let basis = SplineBasis {
        interior_knots,
        boundary: (lo, hi),
        transform,
        k,
        standardization,
    };
    let mut z = DMatrix::zeros(x.len(), k);
    for (i, &v) in xs.iter().enumerate() {
        let row = basis.eval_standardized(v).0;
        z.row_mut(i).copy_from(&row.transpose());
    }
    Ok((basis, z))
}

/// Linear-interpolation quantile (type 7) of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn full_knots(interior: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut t = vec![lo; ORDER];
    t.extend_from_slice(interior);
    t.extend(std::iter::repeat_n(hi, ORDER));
    t
}

/// Index `i` with `t_i ≤ x < t_{i+1}` and `t_i < t_{i+1}`; the right
/// boundary belongs to the last non-empty span.
fn span_index(knots: &[f64], x: f64) -> usize {
    let last = (0..knots.len() - 1)
        .rev()
        .find(|&i| knots[i] < knots[i + 1])
        .expect("knot vector has a non-empty span");
    if x >= knots[last] {
        return last;
    }
    (0..last)
        .rev()
        .find(|&i| knots[i] <= x && knots[i] < knots[i + 1])
        .unwrap_or(0)
}

/// Values of the `deriv`-th derivative of all B-splines of the given order
/// at `x` (`knots.len() − order` functions).
pub(crate) fn bspline_values(knots: &[f64], order: usize, x: f64, deriv: usize) -> Vec<f64> {
    let count = knots.len() - order;
    if deriv > 0 {
        let lower = bspline_values(knots, order - 1, x, deriv - 1);
        let scale = (order - 1) as f64;
        return (0..count)
            .map(|i| {
                let left = knots[i + order - 1] - knots[i];
                let right = knots[i + order] - knots[i + 1];
                let a = if left > 0.0 { lower[i] / left } else { 0.0 };
                let b = if right > 0.0 {
                    lower[i + 1] / right
                } else {
                    0.0
                };
                scale * (a - b)
            })
            .collect();
    }
    let mut vals = vec![0.0; knots.len() - 1];
    vals[span_index(knots, x)] = 1.0;
    for k in 2..=order {
        let next: Vec<f64> = (0..knots.len() - k)
            .map(|i| {
                let left = knots[i + k - 1] - knots[i];
                let right = knots[i + k] - knots[i + 1];
                let a = if left > 0.0 {
                    (x - knots[i]) / left * vals[i]
                } else {
                    0.0
                };
                let b = if right > 0.0 {
                    (knots[i + k] - x) / right * vals[i + 1]
                } else {
                    0.0
                };
                a + b
            })
            .collect();
        vals = next;
    }
    vals
}

/// `∫ B''(x) B''(x)ᵀ dx` over the knot range. Second derivatives of cubic
/// B-splines are linear on each span, so Simpson's rule per span is exact.
fn penalty_gram(knots: &[f64]) -> DMatrix<f64> {
    let m = knots.len() - ORDER;
    let mut omega = DMatrix::zeros(m, m);
    for j in 0..knots.len() - 1 {
        let (a, b) = (knots[j], knots[j + 1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let w = (b - a) / 6.0;
        for (x, wt) in [(a, w), (mid, 4.0 * w), (b, w)] {
            let d2 = DVector::from_vec(bspline_values(knots, ORDER, x, 2));
            omega += wt * &d2 * d2.transpose();
        }
    }
    omega
}

fn spectral_transform(omega: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(omega.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max = eig.eigenvalues[order[0]];
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > EIGEN_CUTOFF * max)
        .collect();
    if kept.len() != k {
        return Err(Error::Design(format!(
            "penalty matrix has numerical rank {} but {k} was expected",
            kept.len()
        )));
    }
    let mut t = DMatrix::zeros(omega.nrows(), k);
    for (col, &i) in kept.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v = -v;
        }
        t.set_column(col, &(v / eig.eigenvalues[i].sqrt()));
    }
    Ok(t)
}

impl SplineBasis {
    pub fn knot_vector(&self) -> Vec<f64> {
        full_knots(&self.interior_knots, self.boundary.0, self.boundary.1)
    }

    /// Basis row for a raw (original units) predictor value. Values outside
    /// the training range are clamped to the boundary and flagged.
    pub fn eval(&self, x_new: f64) -> (DVector<f64>, bool) {
        self.eval_standardized(self.standardization.apply(x_new))
    }

    fn eval_standardized(&self, z: f64) -> (DVector<f64>, bool) {
        let (lo, hi) = self.boundary;
        let clamped = !(lo..=hi).contains(&z);
        let z = z.clamp(lo, hi);
        let b = DVector::from_vec(bspline_values(&self.knot_vector(), ORDER, z, 0));
        (self.transform.transpose() * b, clamped)
    }

    /// Raw B-spline penalty matrix (`(K + 2) × (K + 2)`).
    pub fn penalty(&self) -> DMatrix<f64> {
        penalty_gram(&self.knot_vector())
    }

    /// Training range in original units.
    pub fn range(&self) -> (f64, f64) {
        (
            self.standardization.invert(self.boundary.0),
            self.standardization.invert(self.boundary.1),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform_x(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = crate::seeded_rng(seed);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn design_shape() {
        let x = uniform_x(500, 1);
        let (basis, z) = build_basis(&x, 17).unwrap();
        assert_eq!(z.shape(), (500, 17));
        assert_eq!(basis.transform.shape(), (19, 17));
        assert_eq!(basis.interior_knots.len(), 15);
        let (lo, hi) = basis.boundary;
        assert!(lo < basis.interior_knots[0] && *basis.interior_knots.last().unwrap() < hi);
    }

    #[test]
    fn deterministic_and_consistent_with_eval() {
        let x = uniform_x(300, 2);
        let (b1, z1) = build_basis(&x, 10).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + 0.0).collect();
        let (b2, z2) = build_basis(&shifted, 10).unwrap();
        assert_eq!(z1, z2);
        assert_eq!(b1, b2);
        for i in [0, 17, 150, 299] {
            let (row, clamped) = b1.eval(x[i]);
            assert!(!clamped);
            assert!((row.transpose() - z1.row(i)).amax() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_is_clamped() {
        let x = uniform_x(200, 3);
        let (basis, _) = build_basis(&x, 8).unwrap();
        let (lo, hi) = basis.range();
        let (at_lo, f0) = basis.eval(lo);
        let (below, f1) = basis.eval(lo - 5.0);
        let (above, f2) = basis.eval(hi + 1.0);
        let (at_hi, _) = basis.eval(hi);
        assert!(!f0 && f1 && f2);
        assert!((at_lo - below).amax() < 1e-12);
        assert!((at_hi - above).amax() < 1e-12);
    }

    #[test]
    fn full_rank_design() {
        let x = uniform_x(500, 4);
        let (_, z) = build_basis(&x, 17).unwrap();
        let sv = z.clone().svd(false, false).singular_values;
        let max = sv.max();
        assert!(sv.iter().all(|&s| s > 1e-8 * max), "{sv}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_basis(&uniform_x(50, 5), 1).is_err());
        assert!(build_basis(&uniform_x(10, 5), 8).is_err());
        let few: Vec<f64> = (0..100).map(|i| (i % 3) as f64).collect();
        assert!(build_basis(&few, 5).is_err());
    }

    // Independent penalty oracle: B-splines as explicit cubic polynomials
    // on each span, differentiated and integrated symbolically.
    type Poly = Vec<f64>;

    fn poly_mul(a: &Poly, b: &Poly) -> Poly {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    fn poly_add(a: &Poly, b: &Poly) -> Poly {
        let n = a.len().max(b.len());
        (0..n)
            .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
            .collect()
    }

    fn poly_deriv(a: &Poly) -> Poly {
        if a.len() <= 1 {
            return vec![0.0];
        }
        (1..a.len()).map(|i| i as f64 * a[i]).collect()
    }

    fn poly_integral(a: &Poly, lo: f64, hi: f64) -> f64 {
        a.iter()
            .enumerate()
            .map(|(i, c)| c * (hi.powi(i as i32 + 1) - lo.powi(i as i32 + 1)) / (i as f64 + 1.0))
            .sum()
    }

    fn oracle_gram(knots: &[f64]) -> DMatrix<f64> {
        let m = knots.len() - ORDER;
        let mut omega = DMatrix::zeros(m, m);
        for span in 0..knots.len() - 1 {
            let (a, b) = (knots[span], knots[span + 1]);
            if b <= a {
                continue;
            }
            // order-1 pieces on this span
            let mut polys: Vec<Poly> = (0..knots.len() - 1)
                .map(|i| if i == span { vec![1.0] } else { vec![0.0] })
                .collect();
            for k in 2..=ORDER {
                polys = (0..knots.len() - k)
                    .map(|i| {
                        let left = knots[i + k - 1] - knots[i];
                        let right = knots[i + k] - knots[i + 1];
                        let mut p = vec![0.0];
                        if left > 0.0 {
                            p = poly_add(
                                &p,
                                &poly_mul(&vec![-knots[i] / left, 1.0 / left], &polys[i]),
                            );
                        }
                        if right > 0.0 {
                            p = poly_add(
                                &p,
                                &poly_mul(&vec![knots[i + k] / right, -1.0 / right], &polys[i + 1]),
                            );
                        }
                        p
                    })
                    .collect();
            }
            let d2: Vec<Poly> = polys.iter().map(|p| poly_deriv(&poly_deriv(p))).collect();
            for i in 0..m {
                for j in 0..m {
                    omega[(i, j)] += poly_integral(&poly_mul(&d2[i], &d2[j]), a, b);
                }
            }
        }
        omega
    }

    #[test]
    fn transformed_penalty_is_identity() {
        for (seed, k) in [(6u64, 17usize), (7, 5), (8, 2), (9, 25)] {
            let x = uniform_x(400, seed);
            let (basis, _) = build_basis(&x, k).unwrap();
            let omega = oracle_gram(&basis.knot_vector());
            assert!((&omega - basis.penalty()).amax() < 1e-8 * omega.amax());
            let t = &basis.transform;
            let id = t.transpose() * omega * t;
            assert!((id - DMatrix::identity(k, k)).amax() < 1e-8, "k={k}");
        }
    }

    #[test]
    fn fitted_smooth_is_twice_continuously_differentiable() {
        let x = uniform_x(500, 10);
        let (basis, _) = build_basis(&x, 17).unwrap();
        let mut rng = crate::seeded_rng(11);
        let u = DVector::from_fn(17, |_, _| rng.random::<f64>() - 0.5);
        let (lo, hi) = basis.range();
        let m = 1000;
        let h = (hi - lo) / (m - 1) as f64;
        let f: Vec<f64> = (0..m)
            .map(|i| basis.eval(lo + i as f64 * h).0.dot(&u))
            .collect();
        let d2: Vec<f64> = (1..m - 1)
            .map(|i| (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h))
            .collect();
        let scale = d2.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        // the second derivative is piecewise linear: consecutive finite
        // differences move by O(h·|f'''|), never by a jump
        let max_jump = d2
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        assert!(max_jump < 0.05 * scale, "jump {max_jump} vs scale {scale}");
        assert!(d2.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn standardization_round_trip(
            xs in proptest::collection::vec(-1e6f64..1e6, 2..50),
            probe in -1e6f64..1e6,
        ) {
            prop_assume!(xs.iter().any(|v| (v - xs[0]).abs() > 1e-3));
            let s = Standardization::fit(&xs).unwrap();
            let back = s.invert(s.apply(probe));
            prop_assert!((back - probe).abs() <= 1e-12 * probe.abs().max(s.mean.abs()).max(1.0));
        }
    }
}
