use nalgebra::{DMatrix, DVector};

use super::{check_input, ForwardModel, Locality};
use crate::error::Result;

/// Neighborhood half-width of the local average.
const HALF_WIDTH: usize = 5;
/// The window holds up to eleven terms but the sum is divided by ten.
const DIVISOR: f64 = 10.0;

/// `y_i = u_i - √3 û_i² + û_i³` with `û_i = (1/10) Σ_{|k-i| ≤ 5} u_k`;
/// indices outside `[0, d)` are dropped.
#[derive(Debug, Clone, Copy)]
pub struct LocalCubicModel {
    dim: usize,
}

impl LocalCubicModel {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn window(&self, i: usize) -> std::ops::RangeInclusive<usize> {
        i.saturating_sub(HALF_WIDTH)..=(i + HALF_WIDTH).min(self.dim - 1)
    }

    fn local_means(&self, u: &DVector<f64>) -> Vec<f64> {
        (0..u.len())
            .map(|i| self.window(i).map(|k| u[k]).sum::<f64>() / DIVISOR)
            .collect()
    }
}

/// Evaluates the local-average cubic model.
pub fn local_cubic_eval(u: &DVector<f64>) -> DVector<f64> {
    if u.is_empty() {
        return DVector::zeros(0);
    }
    let model = LocalCubicModel::new(u.len());
    let sqrt3 = 3.0_f64.sqrt();
    let means = model.local_means(u);
    DVector::from_fn(u.len(), |i, _| {
        let m = means[i];
        u[i] - sqrt3 * m * m + m * m * m
    })
}

impl ForwardModel for LocalCubicModel {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self, u)?;
        Ok(local_cubic_eval(u))
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        if u.len() != self.dim {
            return None;
        }
        let sqrt3 = 3.0_f64.sqrt();
        let means = self.local_means(u);
        let mut jac = DMatrix::identity(self.dim, self.dim);
        for i in 0..self.dim {
            let m = means[i];
            let slope = (-2.0 * sqrt3 * m + 3.0 * m * m) / DIVISOR;
            for k in self.window(i) {
                jac[(i, k)] += slope;
            }
        }
        Some(jac)
    }

    fn locality(&self) -> Option<Locality> {
        Some(Locality {
            centers: (0..self.dim).collect(),
            footprints: Some((0..self.dim).map(|i| self.window(i).collect()).collect()),
        })
    }
}
