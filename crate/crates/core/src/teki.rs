//! Tikhonov regularization by problem extension.
//!
//! Running EKI on `G̃(u) = (C₀^{-1/2} u, G(u))` with data `ỹ = (0, y)`
//! minimizes `‖G(u) - y‖² + ‖u‖²_{C₀⁻¹}`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::is_symmetric;
use crate::error::{Error, Result};
use crate::localization::read_dense_csv;
use crate::models::{check_input, ForwardModel, Locality};

/// `C₀` as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum C0Spec {
    /// Only `"identity"` is accepted.
    Named(String),
    Scalar(f64),
    Diagonal(Vec<f64>),
    Csv { csv: PathBuf },
}

impl Default for C0Spec {
    fn default() -> Self {
        C0Spec::Named("identity".into())
    }
}

/// A prior covariance `C₀`.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorCovariance {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl PriorCovariance {
    pub fn identity(dim: usize) -> Self {
        PriorCovariance::Diagonal(DVector::from_element(dim, 1.0))
    }

    /// Builds `C₀` for `dim` parameters; relative CSV paths resolve against `base`.
    pub fn from_spec(spec: &C0Spec, dim: usize, base: Option<&Path>) -> Result<Self> {
        let c0 = match spec {
            C0Spec::Named(name) if name.eq_ignore_ascii_case("identity") => Self::identity(dim),
            C0Spec::Named(name) => {
                return Err(Error::config(format!(
                    "unknown C0 descriptor {name:?}; use \"identity\", a number, a list or {{ csv = \"path\" }}"
                )))
            }
            C0Spec::Scalar(c) => PriorCovariance::Diagonal(DVector::from_element(dim, *c)),
            C0Spec::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::config(format!("C0 diagonal has {} entries, expected {dim}", d.len())));
                }
                PriorCovariance::Diagonal(DVector::from_column_slice(d))
            }
            C0Spec::Csv { csv } => {
                let path = match base {
                    Some(b) if csv.is_relative() => b.join(csv),
                    _ => csv.clone(),
                };
                let file = std::fs::File::open(&path)
                    .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
                let m = read_dense_csv(file)?;
                if m.shape() != (dim, dim) {
                    return Err(Error::config(format!(
                        "C0 matrix in {} is {:?}, expected {dim}x{dim}",
                        path.display(),
                        m.shape()
                    )));
                }
                PriorCovariance::Dense(m)
            }
        };
        c0.validate()?;
        Ok(c0)
    }

    pub fn dim(&self) -> usize {
        match self {
            PriorCovariance::Diagonal(d) => d.len(),
            PriorCovariance::Dense(m) => m.nrows(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self, PriorCovariance::Diagonal(_))
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            PriorCovariance::Diagonal(d) => DMatrix::from_diagonal(d),
            PriorCovariance::Dense(m) => m.clone(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            PriorCovariance::Diagonal(d) => {
                if d.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                    return Err(Error::config("C0 must be positive definite"));
                }
            }
            PriorCovariance::Dense(m) => {
                if !m.is_square() || !is_symmetric(m) {
                    return Err(Error::config("C0 must be a symmetric square matrix"));
                }
            }
        }
        Ok(())
    }

    /// `C₀^{-1/2}` by symmetric eigendecomposition, or elementwise for a
    /// diagonal `C₀`.
    pub fn inv_sqrt(&self) -> Result<InvSqrt> {
        self.validate()?;
        match self {
            PriorCovariance::Diagonal(d) => Ok(InvSqrt::Diagonal(d.map(|v| 1.0 / v.sqrt()))),
            PriorCovariance::Dense(m) => {
                let eig = m.clone().symmetric_eigen();
                let top = eig.eigenvalues.amax();
                if eig.eigenvalues.iter().any(|l| !(*l > 1e-14 * top)) {
                    return Err(Error::config("C0 is not positive definite"));
                }
                let v = &eig.eigenvectors;
                let scaled = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
                Ok(InvSqrt::Dense(v * scaled * v.transpose()))
            }
        }
    }
}

/// A cached `C₀^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub enum InvSqrt {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl InvSqrt {
    pub fn apply(&self, u: &DVector<f64>) -> DVector<f64> {
        match self {
            InvSqrt::Diagonal(d) => d.component_mul(u),
            InvSqrt::Dense(m) => m * u,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        match self {
            InvSqrt::Diagonal(d) => DMatrix::from_diagonal(d),
            InvSqrt::Dense(m) => m.clone(),
        }
    }
}

/// The extended model `G̃(u) = (C₀^{-1/2} u, G(u))`.
#[derive(Clone)]
pub struct TikhonovExtension {
    base: Arc<dyn ForwardModel>,
    inv_sqrt: InvSqrt,
}

impl std::fmt::Debug for TikhonovExtension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TikhonovExtension")
            .field("param_dim", &self.base.param_dim())
            .field("base_output_dim", &self.base.output_dim())
            .field("inv_sqrt", &self.inv_sqrt)
            .finish()
    }
}

impl TikhonovExtension {
    pub fn new(base: Arc<dyn ForwardModel>, c0: &PriorCovariance) -> Result<Self> {
        if c0.dim() != base.param_dim() {
            return Err(Error::config(format!(
                "C0 is {}x{} but the model has {} parameters",
                c0.dim(),
                c0.dim(),
                base.param_dim()
            )));
        }
        Ok(Self {
            base,
            inv_sqrt: c0.inv_sqrt()?,
        })
    }

    pub fn base(&self) -> &Arc<dyn ForwardModel> {
        &self.base
    }

    pub fn inv_sqrt(&self) -> &InvSqrt {
        &self.inv_sqrt
    }

    /// `(0, y)`.
    pub fn extend_data(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if y.len() != self.base.output_dim() {
            return Err(Error::config(format!(
                "data has {} entries, model has {} outputs",
                y.len(),
                self.base.output_dim()
            )));
        }
        let du = self.base.param_dim();
        let mut out = DVector::zeros(du + y.len());
        out.rows_mut(du, y.len()).copy_from(y);
        Ok(out)
    }
}

/// Builds the extended model and data for a dense `C₀`.
pub fn extend(
    model: Arc<dyn ForwardModel>,
    y: &DVector<f64>,
    c0: &DMatrix<f64>,
) -> Result<(TikhonovExtension, DVector<f64>)> {
    let ext = TikhonovExtension::new(model, &PriorCovariance::Dense(c0.clone()))?;
    let y_ext = ext.extend_data(y)?;
    Ok((ext, y_ext))
}

impl ForwardModel for TikhonovExtension {
    fn param_dim(&self) -> usize {
        self.base.param_dim()
    }

    fn output_dim(&self) -> usize {
        self.base.param_dim() + self.base.output_dim()
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self, u)?;
        let g = self.base.evaluate(u)?;
        let du = u.len();
        let mut out = DVector::zeros(du + g.len());
        out.rows_mut(0, du).copy_from(&self.inv_sqrt.apply(u));
        out.rows_mut(du, g.len()).copy_from(&g);
        Ok(out)
    }

    fn jacobian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let jg = self.base.jacobian(u)?;
        let du = self.base.param_dim();
        let mut out = DMatrix::zeros(du + jg.nrows(), du);
        out.rows_mut(0, du).copy_from(&self.inv_sqrt.to_matrix());
        out.rows_mut(du, jg.nrows()).copy_from(&jg);
        Some(out)
    }

    /// The regularization block is centered on its own parameter when `C₀`
    /// is diagonal.
    fn locality(&self) -> Option<Locality> {
        let base = self.base.locality()?;
        if !matches!(self.inv_sqrt, InvSqrt::Diagonal(_)) {
            return None;
        }
        let du = self.base.param_dim();
        let mut centers: Vec<usize> = (0..du).collect();
        centers.extend(base.centers);
        let footprints = base.footprints.map(|fp| {
            let mut all: Vec<Vec<usize>> = (0..du).map(|i| vec![i]).collect();
            all.extend(fp);
            all
        });
        Some(Locality { centers, footprints })
    }
}

/// `‖G(u) - y‖² + uᵀ C₀⁻¹ u`, with the prior term from a Cholesky solve.
pub fn tikhonov_loss(
    model: &dyn ForwardModel,
    y: &DVector<f64>,
    c0: &DMatrix<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let g = model.evaluate(u)?;
    if g.len() != y.len() {
        return Err(Error::config("data length does not match the model"));
    }
    let chol = c0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::config("C0 is not positive definite"))?;
    let prior = u.dot(&chol.solve(u));
    Ok((g - y).norm_squared() + prior)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FnModel, LinearModel, LocalCubicModel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identity_prior_example() {
        let (ext, y) = extend(Arc::new(LinearModel::identity(1)), &DVector::from_element(1, 2.0), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 2.0]);
        let u = DVector::from_element(1, 1.5);
        assert_eq!(ext.evaluate(&u).unwrap().as_slice(), &[1.5, 1.5]);
        let loss = (ext.evaluate(&u).unwrap() - &y).norm_squared();
        assert_relative_eq!(loss, 1.5f64.powi(2) + 0.5f64.powi(2));
    }

    #[test]
    fn scaled_prior_halves_first_block() {
        let (ext, _) = extend(Arc::new(LinearModel::identity(3)), &DVector::zeros(3), &(DMatrix::identity(3, 3) * 4.0)).unwrap();
        let u = DVector::from_vec(vec![2.0, -4.0, 1.0]);
        let out = ext.evaluate(&u).unwrap();
        for i in 0..3 {
            assert_relative_eq!(out[i], u[i] / 2.0, epsilon = 1e-14);
        }
        let zero = ext.evaluate(&DVector::zeros(3)).unwrap();
        assert!(zero.rows(0, 3).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn loss_examples() {
        let m = LinearModel::identity(1);
        let c0 = DMatrix::identity(1, 1);
        assert_eq!(tikhonov_loss(&m, &DVector::zeros(1), &c0, &DVector::zeros(1)).unwrap(), 0.0);
        assert_relative_eq!(
            tikhonov_loss(&m, &DVector::from_element(1, 2.0), &c0, &DVector::from_element(1, 1.0)).unwrap(),
            2.0
        );
    }

    #[test]
    fn non_spd_prior_is_rejected() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            extend(Arc::new(LinearModel::identity(2)), &DVector::zeros(2), &bad),
            Err(Error::Config(_))
        ));
        assert!(PriorCovariance::from_spec(&C0Spec::Scalar(-1.0), 2, None).is_err());
        assert!(PriorCovariance::from_spec(&C0Spec::Named("diag".into()), 2, None).is_err());
    }

    #[test]
    fn spec_parsing() {
        #[derive(Deserialize)]
        struct W {
            c0: C0Spec,
        }
        let p = |s: &str| toml::from_str::<W>(s).unwrap().c0;
        assert_eq!(p("c0 = \"identity\""), C0Spec::Named("identity".into()));
        assert_eq!(p("c0 = 2.5"), C0Spec::Scalar(2.5));
        assert_eq!(p("c0 = [1.0, 2.0]"), C0Spec::Diagonal(vec![1.0, 2.0]));
        assert_eq!(p("c0 = { csv = \"c0.csv\" }"), C0Spec::Csv { csv: "c0.csv".into() });

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c0.csv"), "0,1\n2,0.5\n0.5,1\n").unwrap();
        let c0 = PriorCovariance::from_spec(&p("c0 = { csv = \"c0.csv\" }"), 2, Some(dir.path())).unwrap();
        assert_eq!(c0.to_matrix(), DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]));
        let d = PriorCovariance::from_spec(&C0Spec::Diagonal(vec![4.0, 9.0]), 2, None).unwrap();
        assert_eq!(d.inv_sqrt().unwrap(), InvSqrt::Diagonal(DVector::from_vec(vec![0.5, 1.0 / 3.0])));
    }

    #[test]
    fn dense_inv_sqrt_squares_to_inverse() {
        let a = DMatrix::from_fn(4, 4, |i, j| ((i * 4 + j) as f64 * 0.61).sin());
        let c0 = &a * a.transpose() + DMatrix::identity(4, 4);
        let s = PriorCovariance::Dense(c0.clone()).inv_sqrt().unwrap().to_matrix();
        assert!((&s * &s * &c0 - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn extension_jacobian_and_locality() {
        let base: Arc<dyn ForwardModel> = Arc::new(LocalCubicModel::new(8));
        let ext = TikhonovExtension::new(base, &PriorCovariance::identity(8)).unwrap();
        let u = DVector::from_fn(8, |i, _| (i as f64).sin());
        let j = ext.jacobian(&u).unwrap();
        let fd = crate::models::finite_difference_jacobian(&ext, &u, 1e-5).unwrap();
        assert!((j - fd).amax() < 1e-8);
        let loc = ext.locality().unwrap();
        assert_eq!(loc.centers, [(0..8).collect::<Vec<_>>(), (0..8).collect()].concat());
    }

    proptest! {
        #[test]
        fn loss_matches_extended_loss(
            vals in prop::collection::vec(-3.0..3.0f64, 3 + 9 + 3),
            du in 1usize..4,
        ) {
            let u = DVector::from_column_slice(&vals[..du]);
            let a = DMatrix::from_fn(du, du, |i, j| vals[3 + i * 3 + j]);
            let c0 = &a * a.transpose() + DMatrix::identity(du, du) * 0.5;
            let y = DVector::from_column_slice(&vals[12..12 + du]);
            let m: Arc<dyn ForwardModel> = Arc::new(FnModel::new(du, du, |u: &DVector<f64>| u.map(|v| v.sin() + v * v)));
            let (ext, ye) = extend(m.clone(), &y, &c0).unwrap();
            let extended = (ext.evaluate(&u).unwrap() - ye).norm_squared();
            let direct = tikhonov_loss(m.as_ref(), &y, &c0, &u).unwrap();
            prop_assert!((extended - direct).abs() <= 1e-12 * direct.max(1e-300));
        }
    }
}
