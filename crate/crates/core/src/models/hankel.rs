//! Hankel transforms of order one.
//!
//! Two evaluators share the convention
//! `∫₀^∞ f(λ) J₁(rλ) dλ`:
//!
//! * a log-spaced digital linear filter, `(1/r) Σ_k w_k f(b_k / r)`;
//! * zero-to-zero Gauss–Legendre quadrature with the oscillating tail
//!   summed by repeated averaging of partial sums.
//!
//! The filter weights are designed at first use by a truncated-SVD least
//! squares fit to two closed-form transform pairs,
//! `λe^{-λ} ↦ r/(1+r²)^{3/2}` and `e^{-λ} ↦ (1 - 1/√(1+r²))/r`,
//! over `r ∈ [1e-4, 1e4]`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the Hankel integral of the resistivity transform is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HankelMethod {
    #[default]
    Filter,
    Quadrature,
}

const FILTER_LEN: usize = 61;
const PER_DECADE: f64 = 10.0;
const FIRST_EXPONENT: f64 = -3.0;
const FIT_POINTS: usize = 400;
const FIT_R_MIN: f64 = 1e-4;
const FIT_R_MAX: f64 = 1e4;
const SVD_CUTOFF: f64 = 1e-13;

/// Abscissae `b_k` and weights `w_k` of the J₁ filter.
#[derive(Debug, Clone)]
pub struct J1Filter {
    pub abscissae: Vec<f64>,
    pub weights: Vec<f64>,
    /// Largest scaled residual of the design fit.
    pub fit_residual: f64,
}

impl J1Filter {
    /// The shared filter instance.
    pub fn get() -> &'static J1Filter {
        static FILTER: OnceLock<J1Filter> = OnceLock::new();
        FILTER.get_or_init(design_filter)
    }

    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    /// `∫₀^∞ f(λ) J₁(rλ) dλ ≈ (1/r) Σ w_k f(b_k / r)`.
    pub fn transform(&self, r: f64, f: impl Fn(f64) -> f64) -> f64 {
        let sum: f64 = self
            .abscissae
            .iter()
            .zip(&self.weights)
            .map(|(b, w)| w * f(b / r))
            .sum();
        sum / r
    }
}

fn design_filter() -> J1Filter {
    let step = std::f64::consts::LN_10 / PER_DECADE;
    let b: Vec<f64> = (0..FILTER_LEN)
        .map(|k| (FIRST_EXPONENT * std::f64::consts::LN_10 + step * k as f64).exp())
        .collect();
    let (lo, hi) = (FIT_R_MIN.ln(), FIT_R_MAX.ln());
    let rgrid: Vec<f64> = (0..FIT_POINTS)
        .map(|i| (lo + (hi - lo) * i as f64 / (FIT_POINTS - 1) as f64).exp())
        .collect();

    type Pair = (fn(f64) -> f64, fn(f64) -> f64);
    let pairs: [Pair; 2] = [
        (|l| l * (-l).exp(), |r| r / (1.0 + r * r).powf(1.5)),
        (|l| (-l).exp(), |r| {
            let q = (1.0 + r * r).sqrt();
            r / (q * (q + 1.0))
        }),
    ];

    let rows = pairs.len() * FIT_POINTS;
    let mut a = DMatrix::zeros(rows, FILTER_LEN);
    let mut y = DVector::zeros(rows);
    for (p, (f, g)) in pairs.iter().enumerate() {
        let peak = rgrid.iter().map(|&r| (r * r * g(r)).abs()).fold(0.0, f64::max);
        for (i, &r) in rgrid.iter().enumerate() {
            let row = p * FIT_POINTS + i;
            let scale = r * r / peak;
            for (k, &bk) in b.iter().enumerate() {
                a[(row, k)] = f(bk / r) / r * scale;
            }
            y[row] = g(r) * scale;
        }
    }

    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let s_max = svd.singular_values.max();
    let mut w = DVector::zeros(FILTER_LEN);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > SVD_CUTOFF * s_max {
            let coef = u.column(i).dot(&y) / s;
            w += v_t.row(i).transpose() * coef;
        }
    }
    let fit_residual = (&a * &w - &y).amax();
    J1Filter {
        abscissae: b,
        weights: w.iter().copied().collect(),
        fit_residual,
    }
}

/// Bessel functions `(J₀(x), J₁(x))` for `x ≥ 0`.
///
/// Miller's backward recurrence normalized by `J₀ + 2ΣJ_{2k} = 1` below
/// `x = 25`, Hankel's asymptotic expansion above.
pub fn bessel_j01(x: f64) -> (f64, f64) {
    if x == 0.0 {
        return (1.0, 0.0);
    }
    if x < 25.0 {
        miller_j01(x)
    } else {
        asymptotic_j01(x)
    }
}

pub fn bessel_j1(x: f64) -> f64 {
    if x < 0.0 {
        -bessel_j01(-x).1
    } else {
        bessel_j01(x).1
    }
}

fn miller_j01(x: f64) -> (f64, f64) {
    let start = 2 * ((x as usize + 60) / 2);
    let (mut above, mut cur) = (0.0_f64, 1e-30_f64);
    let mut norm = 0.0;
    let mut j1 = 0.0;
    for k in (1..=start).rev() {
        let below = 2.0 * k as f64 / x * cur - above;
        above = cur;
        cur = below;
        // `cur` now holds J_{k-1}
        if k - 1 == 1 {
            j1 = cur;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            norm += 2.0 * cur;
        }
        if cur.abs() > 1e250 {
            above *= 1e-250;
            cur *= 1e-250;
            norm *= 1e-250;
            j1 *= 1e-250;
        }
    }
    norm += cur;
    (cur / norm, j1 / norm)
}

fn asymptotic_j01(x: f64) -> (f64, f64) {
    let series = |mu: f64| {
        let z = 8.0 * x;
        let (mut p, mut q) = (1.0, 0.0);
        let mut term = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            term *= (mu - odd * odd) / (kf * z);
            if term.abs() >= prev || term.abs() < 1e-18 {
                break;
            }
            prev = term.abs();
            match k % 4 {
                1 => q += term,
                2 => p -= term,
                3 => q -= term,
                _ => p += term,
            }
        }
        (p, q)
    };
    let amp = (2.0 / (PI * x)).sqrt();
    let (p0, q0) = series(0.0);
    let (p1, q1) = series(4.0);
    let c0 = x - PI / 4.0;
    let c1 = x - 3.0 * PI / 4.0;
    (
        amp * (p0 * c0.cos() - q0 * c0.sin()),
        amp * (p1 * c1.cos() - q1 * c1.sin()),
    )
}

/// Approximate `k`-th positive zero of J₁ (`k ≥ 1`), refined by Newton steps.
pub fn j1_zero(k: usize) -> f64 {
    let beta = (k as f64 + 0.25) * PI;
    let e = 8.0 * beta;
    let mut x = beta - 3.0 / e + 12.0 / (e * e * e);
    for _ in 0..3 {
        let (j0, j1) = bessel_j01(x);
        let deriv = j0 - j1 / x;
        x -= j1 / deriv;
    }
    x
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

fn gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (x, w) = gl_rule();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    x.iter().zip(w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> f64 {
    let m = 0.5 * (a + b);
    let left = gl(f, a, m);
    let right = gl(f, m, b);
    let sum = left + right;
    if depth == 0 || (sum - whole).abs() <= tol.max(1e-14 * sum.abs()) {
        return sum;
    }
    adaptive(f, a, m, left, 0.5 * tol, depth - 1) + adaptive(f, m, b, right, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss–Legendre integral of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive(f, a, b, gl(f, a, b), tol, 16)
}

const QUAD_INTERVALS: usize = 4000;
const AVERAGE_WINDOW: usize = 60;
const AVERAGE_LEVELS: usize = 20;

fn averaged_tail(partial: &[f64]) -> f64 {
    let mut x = partial[partial.len() - AVERAGE_WINDOW..].to_vec();
    for _ in 0..AVERAGE_LEVELS {
        x = x.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    }
    *x.last().unwrap()
}

/// `∫₀^∞ f(λ) J₁(rλ) dλ` integrated between consecutive zeros of `J₁(rλ)`.
///
/// `scale` sets the absolute tolerance of the convergence check; a numeric
/// error is returned when two tail estimates disagree by more than it.
pub fn quadrature_transform(r: f64, f: impl Fn(f64) -> f64, scale: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain(format!("Hankel radius must be positive, got {r}")));
    }
    let g = |l: f64| f(l) * bessel_j1(r * l);
    let piece_tol = 1e-14 * scale.abs().max(f64::MIN_POSITIVE);
    let mut partial = Vec::with_capacity(QUAD_INTERVALS);
    let mut acc = 0.0;
    let mut left = 0.0;
    for k in 1..=QUAD_INTERVALS {
        let right = j1_zero(k) / r;
        acc += integrate(&g, left, right, piece_tol);
        partial.push(acc);
        left = right;
    }
    let value = averaged_tail(&partial);
    let earlier = averaged_tail(&partial[..QUAD_INTERVALS - 500]);
    if !value.is_finite() || (value - earlier).abs() > 1e-9 * scale.abs() {
        return Err(Error::numeric(format!(
            "Hankel quadrature did not converge at r = {r}: {value} vs {earlier}"
        )));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bessel_reference_values() {
        // Abramowitz & Stegun Table 9.1
        assert_relative_eq!(bessel_j1(1.0), 0.440_050_585_744_933_5, max_relative = 1e-13);
        assert_relative_eq!(bessel_j1(10.0), 0.043_472_746_168_861_44, max_relative = 1e-11);
        assert_relative_eq!(bessel_j01(1.0).0, 0.765_197_686_557_966_6, max_relative = 1e-13);
        assert_relative_eq!(bessel_j01(10.0).0, -0.245_935_764_451_348_3, max_relative = 1e-12);
        assert_eq!(bessel_j1(0.0), 0.0);
        assert_eq!(bessel_j1(-1.0), -bessel_j1(1.0));
    }

    #[test]
    fn bessel_branches_agree() {
        for x in [25.0, 30.0, 40.0] {
            let (a0, a1) = miller_j01(x);
            let (b0, b1) = asymptotic_j01(x);
            assert!((a0 - b0).abs() < 1e-13, "J0({x}) {a0} vs {b0}");
            assert!((a1 - b1).abs() < 1e-13, "J1({x}) {a1} vs {b1}");
        }
    }

    #[test]
    fn bessel_small_argument_series() {
        for x in [1e-3_f64, 0.1, 0.5] {
            let mut term = x / 2.0;
            let mut series = term;
            for m in 1..12 {
                term *= -(x * x / 4.0) / (m as f64 * (m as f64 + 1.0));
                series += term;
            }
            assert_relative_eq!(bessel_j1(x), series, max_relative = 1e-12);
        }
    }

    #[test]
    fn zeros_of_j1() {
        assert_relative_eq!(j1_zero(1), 3.831_705_970_207_512, epsilon = 1e-12);
        assert_relative_eq!(j1_zero(2), 7.015_586_669_815_619, epsilon = 1e-12);
        for k in [5, 50, 500] {
            assert!(bessel_j1(j1_zero(k)).abs() < 1e-13);
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-14);
        for deg in 0..20 {
            let got: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - exact).abs() < 1e-13, "degree {deg}");
        }
    }

    #[test]
    fn filter_shape_and_moment() {
        let f = J1Filter::get();
        assert_eq!(f.len(), 61);
        assert!(f.fit_residual < 1e-5, "fit residual {}", f.fit_residual);
        // Σ w b is the filter image of a constant resistivity
        let moment: f64 = f.abscissae.iter().zip(&f.weights).map(|(b, w)| b * w).sum();
        assert!((moment - 1.0).abs() < 1e-7, "moment {moment}");
    }

    #[test]
    fn filter_reproduces_closed_form_pairs() {
        let f = J1Filter::get();
        for r in [0.01, 0.3, 1.0, 7.0, 100.0] {
            let got = f.transform(r, |l| l * (-l).exp());
            let exact = r / (1.0 + r * r).powf(1.5);
            assert!((got - exact).abs() * r * r < 1e-5 * 0.385, "r = {r}");
        }
    }

    #[test]
    fn quadrature_reproduces_closed_form_pair() {
        for r in [0.5, 2.0] {
            let got = quadrature_transform(r, |l| l * (-l).exp(), 1.0).unwrap();
            assert_relative_eq!(got, r / (1.0 + r * r).powf(1.5), max_relative = 1e-9);
        }
        assert!(quadrature_transform(0.0, |l| l, 1.0).is_err());
    }
}
