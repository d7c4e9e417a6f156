//! Run metrics and theory instrumentation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{max_abs, EnsembleStats};
use crate::error::{Error, Result};
use crate::localization::{localize_cup, LocalizationScheme};

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iter: usize,
    pub t: f64,
    pub misfit: f64,
    pub max_error: f64,
    pub rmse: Option<f64>,
    pub scaled_misfit: Option<f64>,
    pub trace_cuu: f64,
    pub max_diag: f64,
    pub min_diag: f64,
    pub r_opnorm: Option<f64>,
    pub r_onenorm: Option<f64>,
    pub obs_ratio: Option<f64>,
    pub reg_ratio: Option<f64>,
}

impl MetricsRow {
    pub const COLUMNS: [&'static str; 13] = [
        "iter",
        "t",
        "misfit",
        "max_error",
        "rmse",
        "scaled_misfit",
        "trace_cuu",
        "max_diag",
        "min_diag",
        "r_opnorm",
        "r_onenorm",
        "obs_ratio",
        "reg_ratio",
    ];
}

fn residual(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != yhat.len() {
        return Err(Error::config(format!(
            "data has {} entries, prediction has {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::config("empty data vector"));
    }
    Ok(y - yhat)
}

fn rms(v: &DVector<f64>) -> f64 {
    (v.norm_squared() / v.len() as f64).sqrt()
}

/// Root mean square of `y - ŷ`.
pub fn misfit(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    Ok(rms(&residual(y, yhat)?))
}

/// `max_i |y_i - ŷ_i|`.
pub fn max_error(y: &DVector<f64>, yhat: &DVector<f64>) -> Result<f64> {
    Ok(residual(y, yhat)?.amax())
}

/// Parameter-space root mean square error.
pub fn rmse(truth: &DVector<f64>, mean: &DVector<f64>) -> Result<f64> {
    misfit(truth, mean)
}

/// Root mean square of `(y_i - ŷ_i) / s_i`.
pub fn scaled_misfit(y: &DVector<f64>, yhat: &DVector<f64>, stds: &DVector<f64>) -> Result<f64> {
    let r = residual(y, yhat)?;
    if stds.len() != r.len() {
        return Err(Error::config(format!(
            "{} standard deviations for {} data",
            stds.len(),
            r.len()
        )));
    }
    if let Some(s) = stds.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::config(format!("standard deviations must be positive, got {s}")));
    }
    Ok(rms(&r.component_div(stds)))
}

/// Localized `(C̃^uu, C̃^up)`, or the raw pair without a scheme.
pub fn localized_pair(
    stats: &EnsembleStats,
    scheme: Option<&LocalizationScheme>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match scheme {
        Some(s) => Ok((s.localize_cuu(stats)?, localize_cup(stats, s)?)),
        None => Ok((stats.cuu.clone(), stats.cup.clone())),
    }
}

/// `R = ∇G C̃^up - ∇G C̃^uu ∇Gᵀ`.
pub fn error_matrix_r(
    stats: &EnsembleStats,
    scheme: Option<&LocalizationScheme>,
    jacobian: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if jacobian.shape() != (stats.output_dim(), stats.param_dim()) {
        return Err(Error::config(format!(
            "Jacobian is {:?}, expected {}x{}",
            jacobian.shape(),
            stats.output_dim(),
            stats.param_dim()
        )));
    }
    let (cuu, cup) = localized_pair(stats, scheme)?;
    Ok(jacobian * cup - jacobian * cuu * jacobian.transpose())
}

fn degenerate(denominator: f64, numerator: f64) -> bool {
    !(denominator > 1e-14 * (1.0 + numerator.abs()))
}

/// `[C̃^up C^pu]_{i*,i*} / (C^uu_{i*,i*})²` at the largest diagonal entry of `C^uu`.
pub fn obs_ratio(stats: &EnsembleStats, localized_cup: &DMatrix<f64>) -> Result<f64> {
    check_cup(stats, localized_cup)?;
    let d = stats.cuu.diagonal();
    let i = d.imax();
    let num = localized_cup.row(i).dot(&stats.cup.row(i));
    let den = d[i] * d[i];
    if degenerate(den, num) {
        return Ok(0.0);
    }
    Ok((num / den).max(0.0))
}

/// `max_i Σ_j C̃^up_ij C^up_ij / (C^uu_ii ‖C^uu‖_max)`.
pub fn reg_ratio(stats: &EnsembleStats, localized_cup: &DMatrix<f64>) -> Result<f64> {
    check_cup(stats, localized_cup)?;
    let cmax = max_abs(&stats.cuu);
    let mut best: f64 = 0.0;
    for i in 0..stats.param_dim() {
        let num = localized_cup.row(i).dot(&stats.cup.row(i));
        let den = stats.cuu[(i, i)] * cmax;
        if !degenerate(den, num) {
            best = best.max(num / den);
        }
    }
    Ok(best)
}

fn check_cup(stats: &EnsembleStats, cup: &DMatrix<f64>) -> Result<()> {
    if cup.shape() != stats.cup.shape() {
        return Err(Error::config(format!(
            "localized cross-covariance is {:?}, expected {:?}",
            cup.shape(),
            stats.cup.shape()
        )));
    }
    Ok(())
}

/// Coefficients of `y' = -a y² - b y/(t+1) + σ/(t+1)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub y0: f64,
}

impl RiccatiParams {
    /// Roots `c₋ ≤ c₊` of `c² + c - bc = aσ`.
    pub fn roots(&self) -> (f64, f64) {
        let p = 1.0 - self.b;
        let disc = (p * p + 4.0 * self.a * self.sigma).sqrt();
        // the product of the roots is -aσ; dividing avoids cancellation
        if p >= 0.0 {
            let lo = (-p - disc) / 2.0;
            let hi = if lo != 0.0 { -self.a * self.sigma / lo } else { 0.0 };
            (lo, hi)
        } else {
            let hi = (-p + disc) / 2.0;
            let lo = if hi != 0.0 { -self.a * self.sigma / hi } else { 0.0 };
            (lo, hi)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(Error::domain(format!("Riccati coefficient a must be positive, got {}", self.a)));
        }
        if !(self.b >= 0.0) || !(self.sigma >= 0.0) {
            return Err(Error::domain("Riccati coefficients b and sigma must be nonnegative"));
        }
        if !(self.y0 >= 0.0) {
            return Err(Error::domain(format!("initial value must be nonnegative, got {}", self.y0)));
        }
        Ok(())
    }
}

/// Closed-form solution `y_t` of the Riccati comparison equation.
pub fn riccati_solution(p: &RiccatiParams, t: f64) -> Result<f64> {
    p.validate()?;
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be nonnegative, got {t}")));
    }
    let (cm, cp) = p.roots();
    let a = p.a;
    let ay0 = a * p.y0;
    let tp1 = t + 1.0;
    if ay0 + cp == 0.0 {
        return Ok(0.0);
    }
    if cm == cp {
        // double root at zero: z' = -z² in log time
        let z = ay0 / (1.0 + ay0 * tp1.ln());
        return Ok(z / (a * tp1));
    }
    let big_b = -(cm + ay0) / (ay0 + cp);
    let s = tp1.powf(cm - cp);
    Ok((cm + big_b * cp * s) / (-a * tp1 * (1.0 + big_b * s)))
}

/// Solves `(φ₀ + Σ_{l≠j} φ_jl) v_j - Σ_{l≠j} φ_jl v_l = φ₀ 1_{j=i}`.
pub fn v_vector(phi: &DMatrix<f64>, phi0: f64, i: usize) -> Result<DVector<f64>> {
    let d = phi.nrows();
    if !phi.is_square() || d == 0 {
        return Err(Error::domain("phi must be a nonempty square matrix"));
    }
    if i >= d {
        return Err(Error::domain(format!("index {i} out of range for dimension {d}")));
    }
    if !(phi0 > 0.0 && phi0 <= 1.0) {
        return Err(Error::domain(format!("phi0 must lie in (0, 1], got {phi0}")));
    }
    let mut max_row: f64 = 0.0;
    for r in 0..d {
        if phi[(r, r)] != 0.0 {
            return Err(Error::domain("phi must have a zero diagonal"));
        }
        let mut sum = 0.0;
        for c in 0..d {
            let v = phi[(r, c)];
            if !(v >= 0.0) || (v - phi[(c, r)]).abs() > 1e-12 {
                return Err(Error::domain("phi must be symmetric and nonnegative"));
            }
            sum += v;
        }
        max_row = max_row.max(sum);
    }
    if phi0 > 1.0 - max_row + 1e-12 {
        return Err(Error::domain(format!(
            "phi0 = {phi0} exceeds 1 - max row sum = {}",
            1.0 - max_row
        )));
    }
    let mut m = -phi.clone();
    for r in 0..d {
        m[(r, r)] = phi0 + phi.row(r).sum();
    }
    let mut rhs = DVector::zeros(d);
    rhs[i] = phi0;
    m.lu()
        .solve(&rhs)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::numeric("v-vector system is singular"))
}

/// Least-squares slope of `log(value)` against `log(1 + t)` over `t ∈ [lo, hi]`.
pub fn collapse_rate(series: &[(f64, f64)], window: (f64, f64)) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, v)| *t >= window.0 && *t <= window.1 && *v > 0.0 && v.is_finite())
        .map(|(t, v)| ((1.0 + t).ln(), v.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::domain(format!(
            "collapse rate needs at least 5 positive points in the window, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::domain("collapse-rate window spans a single time"));
    }
    Ok(sxy / sxx)
}
