//! Forward models `G: R^{d_u} → R^{d_y}`.

mod dc;
pub mod hankel;
mod local_cubic;
mod lorenz96;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use dc::{
    apparent_resistivity, dc_forward, koefoed_transform, read_sounding_csv, DcModel,
    DcResistivityConfig, LayeredEarth, SoundingData,
};
pub use hankel::HankelMethod;
pub use local_cubic::{local_cubic_eval, LocalCubicModel};
pub use lorenz96::{l96_forward, l96_rhs, l96_spinup, Lorenz96Config, Lorenz96Model};

/// Which parameters each output depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct Locality {
    /// `i(j)`: the parameter index output `j` is centered on.
    pub centers: Vec<usize>,
    /// `I_j`: indices output `j` depends on, when known.
    pub footprints: Option<Vec<Vec<usize>>>,
}

/// The forward-model contract.
///
/// `evaluate` must be deterministic. Implementations are shared across
/// threads, so they hold no mutable state.
pub trait ForwardModel: Send + Sync {
    fn param_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobian, when the model has one.
    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn locality(&self) -> Option<Locality> {
        None
    }
}

impl<M: ForwardModel + ?Sized> ForwardModel for Arc<M> {
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        (**self).evaluate(u)
    }
    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        (**self).jacobian(u)
    }
    fn locality(&self) -> Option<Locality> {
        (**self).locality()
    }
}

pub(crate) fn check_input(model: &dyn ForwardModel, u: &DVector<f64>) -> Result<()> {
    if u.len() != model.param_dim() {
        return Err(Error::config(format!(
            "model expects {} parameters, got {}",
            model.param_dim(),
            u.len()
        )));
    }
    Ok(())
}

/// `G(u) = H u`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    h: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(h: DMatrix<f64>) -> Self {
        Self { h }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }
}

/// `H u`.
pub fn linear_eval(h: &DMatrix<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    if h.ncols() != u.len() {
        return Err(Error::config(format!(
            "matrix has {} columns, vector has {} entries",
            h.ncols(),
            u.len()
        )));
    }
    Ok(h * u)
}

impl ForwardModel for LinearModel {
    fn param_dim(&self) -> usize {
        self.h.ncols()
    }

    fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        linear_eval(&self.h, u)
    }

    fn jacobian(&self, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.h.clone())
    }

    fn locality(&self) -> Option<Locality> {
        if !self.h.is_square() {
            return None;
        }
        let footprints = self
            .h
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        Some(Locality {
            centers: (0..self.h.nrows()).collect(),
            footprints: Some(footprints),
        })
    }
}

/// Wraps a closure as a model. Useful for toy problems and tests.
pub struct FnModel<F> {
    param_dim: usize,
    output_dim: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(param_dim: usize, output_dim: usize, f: F) -> Self {
        Self {
            param_dim,
            output_dim,
            f,
        }
    }
}

impl<F> ForwardModel for FnModel<F>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync,
{
    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self, u)?;
        let y = (self.f)(u);
        if y.len() != self.output_dim {
            return Err(Error::config(format!(
                "closure returned {} outputs, declared {}",
                y.len(),
                self.output_dim
            )));
        }
        Ok(y)
    }
}

/// Central-difference Jacobian, one column per parameter.
pub fn finite_difference_jacobian(
    model: &dyn ForwardModel,
    u: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::config(format!("finite-difference step must be positive, got {h}")));
    }
    check_input(model, u)?;
    let mut jac = DMatrix::zeros(model.output_dim(), model.param_dim());
    let mut probe = u.clone();
    for k in 0..u.len() {
        probe[k] = u[k] + h;
        let plus = model.evaluate(&probe)?;
        probe[k] = u[k] - h;
        let minus = model.evaluate(&probe)?;
        probe[k] = u[k];
        let col = (plus - minus) / (2.0 * h);
        if !col.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite finite difference in column {k}"
            )));
        }
        jac.set_column(k, &col);
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn linear_cases() {
        let id = LinearModel::identity(2);
        let u = DVector::from_vec(vec![3.0, -1.0]);
        assert_eq!(id.evaluate(&u).unwrap(), u);
        let zero = LinearModel::new(DMatrix::zeros(3, 2));
        assert_eq!(zero.evaluate(&u).unwrap(), DVector::zeros(3));
        let row = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(
            linear_eval(&row, &DVector::from_vec(vec![1.0, 1.0])).unwrap()[0],
            3.0
        );
    }

    #[test]
    fn fd_jacobian_of_linear_model_is_exact() {
        let h = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 0.0, 3.0, 1.0]);
        let m = LinearModel::new(h.clone());
        let u = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        for step in [1e-1, 1e-4, 1.0] {
            let j = finite_difference_jacobian(&m, &u, step).unwrap();
            assert!((j - &h).amax() < 1e-10);
        }
    }

    #[test]
    fn fd_jacobian_of_square() {
        let m = FnModel::new(1, 1, |u: &DVector<f64>| u.map(|v| v * v));
        let j = finite_difference_jacobian(&m, &DVector::from_element(1, 3.0), 1e-4).unwrap();
        assert_relative_eq!(j[(0, 0)], 6.0, epsilon = 1e-6);
    }

    #[test]
    fn fd_jacobian_rejects_bad_step_and_nan() {
        let m = LinearModel::identity(1);
        let u = DVector::from_element(1, 1.0);
        assert!(matches!(finite_difference_jacobian(&m, &u, 0.0), Err(Error::Config(_))));
        let nan = FnModel::new(1, 1, |u: &DVector<f64>| u.map(|v| if v > 1.0 { f64::NAN } else { v }));
        assert!(matches!(finite_difference_jacobian(&nan, &u, 0.1), Err(Error::Numeric(_))));
    }
}
