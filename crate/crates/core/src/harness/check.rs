//! Property suites behind `solve check`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rng::{normal_matrix, normal_vector};
use crate::diagnostics::{error_matrix_r, riccati_solution, v_vector, RiccatiParams};
use crate::dynamics::inflation_vectors;
use crate::ensemble::{compute_stats, max_abs, norms, Ensemble};
use crate::localization::{build_psi, DistanceMetric, FixedJacobian, LocalizationKernel, LocalizationScheme};
use crate::models::{
    finite_difference_jacobian, DcModel, DcResistivityConfig, ForwardModel, LinearModel, LocalCubicModel,
    Lorenz96Config, Lorenz96Model,
};
use crate::teki::{tikhonov_loss, PriorCovariance, TikhonovExtension};
use crate::error::Result;

/// The outcome of one property suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Largest violation measure seen, in the units of `tolerance`.
    pub worst: f64,
    pub tolerance: f64,
    pub cases: usize,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} worst {:.3e} (tol {:.1e}, {} cases)",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.worst,
            self.tolerance,
            self.cases
        )
    }
}

fn outcome(name: &'static str, worst: f64, tolerance: f64, cases: usize) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tolerance,
        worst,
        tolerance,
        cases,
    }
}

fn random_ensemble(rng: &mut ChaCha8Rng, d: usize, j: usize) -> Ensemble {
    Ensemble::new(normal_matrix(rng, d, j)).expect("finite")
}

/// `‖A‖_max ≤ ‖A‖` and `‖A‖² ≤ ‖A‖₁‖Aᵀ‖₁`, as relative excess over the bound.
pub fn norm_inequalities(cases: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.random_range(1..12);
        let a = normal_matrix(&mut rng, n, n) * rng.random_range(0.1..10.0);
        let r = norms(&a);
        let rt = norms(&a.transpose());
        worst = worst.max((r.max_norm - r.op_norm) / r.op_norm.max(1e-300));
        let bound = r.one_norm * rt.one_norm;
        worst = worst.max((r.op_norm.powi(2) - bound) / bound.max(1e-300));
    }
    outcome("norm inequalities", worst, 1e-12, cases)
}

/// The three claims on the `v` vector, on random admissible inputs.
pub fn v_vector_claims(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..9);
        let mut phi = DMatrix::zeros(d, d);
        for r in 0..d {
            for c in r + 1..d {
                let x = rng.random::<f64>() / d as f64;
                phi[(r, c)] = x;
                phi[(c, r)] = x;
            }
        }
        let max_row = (0..d).map(|r| phi.row(r).sum()).fold(0.0, f64::max);
        let phi0 = (1.0 - max_row) * rng.random_range(0.05..1.0);
        let i = rng.random_range(0..d);
        let v = v_vector(&phi, phi0, i)?;
        for j in 0..d {
            worst = worst.max(-v[j]);
            let s: f64 = (0..d).filter(|l| *l != j).map(|l| phi[(j, l)] * v[l]).sum();
            worst = worst.max(s - v[j]);
        }
        worst = worst.max(phi0 - v[i]);
        worst = worst.max(v.sum() - 1.0);
    }
    Ok(outcome("v-vector claims", worst, 1e-10, cases))
}

/// Relative residual of the Riccati closed form in its ODE, by central differences.
pub fn riccati_residual() -> Result<CheckOutcome> {
    let params = [
        (1.0, 0.0, 1.0, 0.5),
        (2.0, 0.0, 0.1, 1.0),
        (2.0, 0.0, 0.0, 3.0),
        (0.5, 0.5, 0.3, 2.0),
        (1.0, 1.0, 0.0, 1.0),
        (3.0, 2.0, 0.5, 0.01),
    ];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (a, b, sigma, y0) in params {
        let p = RiccatiParams { a, b, sigma, y0 };
        for k in 0..60 {
            let t = 0.05 + 0.25 * k as f64;
            let h = 1e-4 * (1.0 + t);
            let y = riccati_solution(&p, t)?;
            let dy = (riccati_solution(&p, t + h)? - riccati_solution(&p, t - h)?) / (2.0 * h);
            let rhs = -a * y * y - b * y / (t + 1.0) + sigma / (t + 1.0).powi(2);
            let scale = (a * y * y).abs() + (b * y / (t + 1.0)).abs() + sigma / (t + 1.0).powi(2);
            worst = worst.max((dy - rhs).abs() / scale.max(1e-300));
            cases += 1;
        }
    }
    Ok(outcome("riccati ode residual", worst, 1e-4, cases))
}

/// Extended least squares against the Tikhonov loss, relative difference.
pub fn teki_loss_identity(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let du = rng.random_range(1..8);
        let model: Arc<dyn ForwardModel> = if k % 2 == 0 {
            let dy = rng.random_range(1..8);
            Arc::new(LinearModel::new(normal_matrix(&mut rng, dy, du)))
        } else {
            Arc::new(LocalCubicModel::new(du))
        };
        let y = normal_vector(&mut rng, model.output_dim());
        let c0 = if k % 3 == 0 {
            PriorCovariance::Diagonal(DVector::from_fn(du, |_, _| rng.random_range(0.1..5.0)))
        } else {
            let a = normal_matrix(&mut rng, du, du);
            PriorCovariance::Dense(&a * a.transpose() + DMatrix::identity(du, du) * 0.5)
        };
        let ext = TikhonovExtension::new(model.clone(), &c0)?;
        let y_ext = ext.extend_data(&y)?;
        let u = normal_vector(&mut rng, du);
        let extended = (ext.evaluate(&u)? - &y_ext).norm_squared();
        let direct = tikhonov_loss(model.as_ref(), &y, &c0.to_matrix(), &u)?;
        worst = worst.max((extended - direct).abs() / direct.abs().max(1e-300));
    }
    Ok(outcome("extended loss identity", worst, 1e-12, cases))
}

/// Zero-sum perturbations, as an absolute bound.
pub fn inflation_zero_sum(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..10);
        let j = rng.random_range(2..15);
        let ens = random_ensemble(&mut rng, d, j);
        let stats = compute_stats(&ens, ens.members())?;
        let xi = inflation_vectors(&ens, &stats);
        worst = worst.max(xi.column_sum().amax());
    }
    Ok(outcome("inflation zero sum", worst, 1e-12, cases))
}

/// Diagonal of the induced perturbation covariance `Σ = (ξ Δᵀ + Δ ξᵀ)/(J-1)`.
pub fn inflation_unit_diagonal(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.random_range(1..10);
        let j = rng.random_range(2..15);
        let ens = random_ensemble(&mut rng, d, j);
        let stats = compute_stats(&ens, ens.members())?;
        let xi = inflation_vectors(&ens, &stats);
        let mut dev = ens.members().clone();
        for mut c in dev.column_iter_mut() {
            c -= &stats.mean_u;
        }
        let half = &xi * dev.transpose() / (j as f64 - 1.0);
        let sigma = &half + half.transpose();
        for i in 0..d {
            worst = worst.max((sigma[(i, i)] - 1.0).abs());
        }
    }
    Ok(outcome("inflation unit diagonal", worst, 1e-10, cases))
}

/// `R` for a linear model under linearized localization with the exact `H`.
pub fn error_matrix_vanishes(cases: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let du = rng.random_range(1..12);
        let dy = rng.random_range(1..12);
        let j = rng.random_range(2..15);
        let h = normal_matrix(&mut rng, dy, du);
        let ens = random_ensemble(&mut rng, du, j);
        let outputs = &h * ens.members();
        let stats = compute_stats(&ens, &outputs)?;
        let kernel = LocalizationKernel::gaussian(rng.random_range(0.5..4.0))?;
        let psi = build_psi(&DistanceMetric::Lattice, &kernel, du)?;
        let scheme = LocalizationScheme::linearized(psi, Arc::new(FixedJacobian(h.clone())))?;
        let r = error_matrix_r(&stats, Some(&scheme), &h)?;
        let scale = max_abs(&(&h * scheme.localize_cuu(&stats)? * h.transpose())).max(1.0);
        worst = worst.max(max_abs(&r) / scale);
    }
    Ok(outcome("error matrix vanishes", worst, 1e-12, cases))
}

fn jacobian_gap(model: &dyn ForwardModel, u: &DVector<f64>) -> Result<f64> {
    let analytic = model.jacobian(u).expect("analytic Jacobian");
    let fd = finite_difference_jacobian(model, u, 1e-6 * (1.0 + u.amax()))?;
    Ok(max_abs(&(&analytic - &fd)) / max_abs(&analytic).max(1e-8))
}

/// Every analytic Jacobian against central differences at random points.
pub fn jacobians(points: usize, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l96: Arc<dyn ForwardModel> = Arc::new(Lorenz96Model::new(Lorenz96Config::with_dim(10))?);
    let cubic: Arc<dyn ForwardModel> = Arc::new(LocalCubicModel::new(15));
    let linear: Arc<dyn ForwardModel> = Arc::new(LinearModel::new(normal_matrix(&mut rng, 6, 9)));
    let c0 = PriorCovariance::Diagonal(DVector::from_fn(10, |i, _| 0.5 + i as f64 * 0.1));
    let teki: Arc<dyn ForwardModel> = Arc::new(TikhonovExtension::new(l96.clone(), &c0)?);
    let models: [(Arc<dyn ForwardModel>, f64); 4] = [(l96, 8.0), (cubic, 0.0), (linear, 0.0), (teki, 8.0)];
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (model, shift) in &models {
        for _ in 0..points {
            let u = normal_vector(&mut rng, model.param_dim()).add_scalar(*shift);
            worst = worst.max(jacobian_gap(model.as_ref(), &u)?);
            cases += 1;
        }
    }
    Ok(outcome("analytic jacobians", worst, 1e-4, cases))
}

/// Homogeneous half-space: relative error of the apparent resistivity.
pub fn dc_homogeneous() -> Result<CheckOutcome> {
    let cfg = DcResistivityConfig {
        half_spacings: (0..=40).map(|k| 10f64.powf(k as f64 / 10.0)).collect(),
        ..DcResistivityConfig::default()
    };
    let model = DcModel::new(cfg.clone())?;
    let mut worst: f64 = 0.0;
    for rho in [0.3, 1.0, 10.0, 250.0] {
        let y = model.evaluate(&DVector::from_element(cfg.layer_count, rho))?;
        worst = worst.max(y.iter().map(|v| (v / rho - 1.0).abs()).fold(0.0, f64::max));
    }
    Ok(outcome("dc homogeneous half-space", worst, 1e-3, 4 * cfg.half_spacings.len()))
}

/// Two-layer section on the default grid: the shortest spread sees the top
/// layer, the longest the basement. Returns (shallow, deep) relative errors.
pub fn dc_two_layer_limits() -> Result<(f64, f64)> {
    let cfg = DcResistivityConfig {
        half_spacings: vec![1.0, 1e4],
        ..DcResistivityConfig::default()
    };
    let model = DcModel::new(cfg.clone())?;
    let mut shallow: f64 = 0.0;
    let mut deep: f64 = 0.0;
    for (top, bottom) in [(10.0, 100.0), (100.0, 10.0), (5.0, 50.0)] {
        let u = DVector::from_fn(cfg.layer_count, |i, _| if i < 8 { top } else { bottom });
        let y = model.evaluate(&u)?;
        shallow = shallow.max((y[0] / top - 1.0).abs());
        deep = deep.max((y[1] / bottom - 1.0).abs());
    }
    Ok((shallow, deep))
}

/// All suites with their default sizes.
pub fn self_check() -> Result<Vec<CheckOutcome>> {
    let (shallow, deep) = dc_two_layer_limits()?;
    Ok(vec![
        norm_inequalities(100, 1),
        v_vector_claims(100, 2)?,
        riccati_residual()?,
        teki_loss_identity(100, 3)?,
        inflation_zero_sum(100, 4)?,
        inflation_unit_diagonal(100, 5)?,
        error_matrix_vanishes(100, 6)?,
        jacobians(20, 7)?,
        dc_homogeneous()?,
        outcome("dc shallow limit", shallow, 0.01, 3),
        outcome("dc deep limit", deep, 0.02, 3),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass() {
        for c in self_check().unwrap() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn outcome_display() {
        let c = outcome("x", 2.0, 1.0, 3);
        assert!(!c.passed);
        assert!(c.to_string().starts_with("FAIL x"));
    }
}
