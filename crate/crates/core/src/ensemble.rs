//! Ensemble storage, sample statistics and the matrix norms used by the
//! collapse and convergence diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated before a matrix is treated as non-symmetric.
const SYMMETRY_TOL: f64 = 1e-12;

/// A `d_u × J` matrix whose columns are the ensemble members.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: DMatrix<f64>,
}

impl Ensemble {
    /// Wraps a member matrix. Requires at least two members and finite entries.
    pub fn new(members: DMatrix<f64>) -> Result<Self> {
        if members.ncols() < 2 {
            return Err(Error::config(format!(
                "an ensemble needs at least two members, got {}",
                members.ncols()
            )));
        }
        if members.nrows() == 0 {
            return Err(Error::config("ensemble members must have positive dimension"));
        }
        if !all_finite(&members) {
            return Err(Error::numeric("ensemble contains non-finite entries"));
        }
        Ok(Self { members })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::config("an ensemble needs at least two members, got 0"));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn param_dim(&self) -> usize {
        self.members.nrows()
    }

    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn members(&self) -> &DMatrix<f64> {
        &self.members
    }

    pub fn member(&self, j: usize) -> DVector<f64> {
        self.members.column(j).into_owned()
    }

    pub fn into_members(self) -> DMatrix<f64> {
        self.members
    }

    pub fn mean(&self) -> DVector<f64> {
        column_mean(&self.members)
    }
}

/// One iteration's sufficient statistics.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub mean_u: DVector<f64>,
    pub mean_g: DVector<f64>,
    pub cuu: DMatrix<f64>,
    pub cup: DMatrix<f64>,
    pub cpp: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
}

impl EnsembleStats {
    pub fn param_dim(&self) -> usize {
        self.mean_u.len()
    }

    pub fn output_dim(&self) -> usize {
        self.mean_g.len()
    }
}

/// Sample means and (cross) covariances with the `1/(J-1)` normalization.
///
/// `outputs` holds `G(u^j)` in column `j`.
pub fn compute_stats(ensemble: &Ensemble, outputs: &DMatrix<f64>) -> Result<EnsembleStats> {
    let j = ensemble.size();
    if outputs.ncols() != j {
        return Err(Error::config(format!(
            "outputs have {} columns but the ensemble has {} members",
            outputs.ncols(),
            j
        )));
    }
    if !all_finite(outputs) {
        return Err(Error::numeric("model outputs contain non-finite entries"));
    }

    let mean_u = column_mean(ensemble.members());
    let mean_g = column_mean(outputs);
    let du = centered(ensemble.members(), &mean_u);
    let dg = centered(outputs, &mean_g);

    let scale = 1.0 / (j as f64 - 1.0);
    let cuu = symmetrize(&du * du.transpose() * scale);
    let cup = &du * dg.transpose() * scale;
    let cpp = symmetrize(&dg * dg.transpose() * scale);

    Ok(EnsembleStats {
        mean_u,
        mean_g,
        cuu,
        cup,
        cpp,
        outputs: outputs.clone(),
    })
}

/// `‖A‖_max`, `‖A‖_1`, `‖A‖` and (for symmetric input) `λ_min(A)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatrixNormReport {
    pub max_norm: f64,
    pub one_norm: f64,
    pub op_norm: f64,
    /// `None` when the input is not symmetric.
    pub min_eig: Option<f64>,
}

/// Computes every norm in [`MatrixNormReport`]. `min_eig` is filled only
/// for symmetric input; use [`symmetric_min_eig`] to insist on it.
pub fn norms(a: &DMatrix<f64>) -> MatrixNormReport {
    let max_norm = max_abs(a);
    let one_norm = row_sum_norm(a);
    if is_symmetric(a) {
        let eig = SymmetricEigen::new(a.clone());
        let op_norm = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        MatrixNormReport {
            max_norm,
            one_norm,
            op_norm,
            min_eig: Some(min_eig),
        }
    } else {
        MatrixNormReport {
            max_norm,
            one_norm,
            op_norm: spectral_norm(a),
            min_eig: None,
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn symmetric_min_eig(a: &DMatrix<f64>) -> Result<f64> {
    if !is_symmetric(a) {
        return Err(Error::usage("minimum eigenvalue requested for a non-symmetric matrix"));
    }
    let eig = SymmetricEigen::new(a.clone());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Largest singular value. Symmetric input goes through an eigendecomposition,
/// everything else through power iteration on `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if is_symmetric(a) {
        let eig = SymmetricEigen::new(a.clone());
        return eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    power_iteration_norm(a).unwrap_or_else(|| a.clone().svd(false, false).singular_values.max())
}

fn power_iteration_norm(a: &DMatrix<f64>) -> Option<f64> {
    const TOL: f64 = 1e-10;
    const MAX_ITER: usize = 1000;

    let ata = a.transpose() * a;
    let n = ata.nrows();
    // A start vector with distinct entries; all-ones is orthogonal to too many
    // structured singular vectors.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0).sqrt() * 0.1);
    v.normalize_mut();
    let mut estimate = 0.0;
    for _ in 0..MAX_ITER {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return None;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= TOL * next.abs() {
            return Some(next.max(0.0).sqrt());
        }
        estimate = next;
    }
    None
}

/// Largest relative distance of a member from the column span of `basis`.
///
/// Zero members contribute 0.
pub fn subspace_residual(ensemble: &Ensemble, basis: &Ensemble) -> Result<f64> {
    if ensemble.param_dim() != basis.param_dim() {
        return Err(Error::config(format!(
            "parameter dimensions differ: {} vs {}",
            ensemble.param_dim(),
            basis.param_dim()
        )));
    }
    let q = orthonormal_span(basis.members());
    let mut worst = 0.0_f64;
    for member in ensemble.members().column_iter() {
        let norm = member.norm();
        if norm == 0.0 {
            continue;
        }
        let projected = &q * (q.transpose() * member);
        let residual = (member - projected).norm() / norm;
        worst = worst.max(residual);
    }
    Ok(worst)
}

fn orthonormal_span(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let largest = svd.singular_values.max();
    let tol = largest * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s > tol)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(a.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let largest = sv.max();
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * largest).count()
}

pub(crate) fn column_mean(m: &DMatrix<f64>) -> DVector<f64> {
    m.column_mean()
}

pub(crate) fn centered(m: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        col -= mean;
    }
    out
}

pub(crate) fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub(crate) fn is_symmetric(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return false;
            }
        }
    }
    true
}

pub(crate) fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn row_sum_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ens(rows: usize, cols: usize, data: &[f64]) -> Ensemble {
        Ensemble::new(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    /// `(1/(2J(J-1))) Σ_{m,n} (u^m-u^n)(u^m-u^n)ᵀ`, independent of the mean.
    fn pairwise_cuu(m: &DMatrix<f64>) -> DMatrix<f64> {
        let (d, j) = m.shape();
        let mut acc = DMatrix::zeros(d, d);
        for a in 0..j {
            for b in 0..j {
                let diff = m.column(a) - m.column(b);
                acc += &diff * diff.transpose();
            }
        }
        acc / (2.0 * j as f64 * (j as f64 - 1.0))
    }

    #[test]
    fn rejects_single_member() {
        assert!(matches!(
            Ensemble::new(DMatrix::zeros(3, 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn rejects_non_finite_members() {
        let m = DMatrix::from_row_slice(1, 2, &[0.0, f64::NAN]);
        assert!(matches!(Ensemble::new(m), Err(Error::Numeric(_))));
    }

    #[test]
    fn two_member_scalar_stats() {
        let e = ens(1, 2, &[0.0, 2.0]);
        let s = compute_stats(&e, e.members()).unwrap();
        assert_eq!(s.mean_u[0], 1.0);
        assert_eq!(s.mean_g[0], 1.0);
        assert_eq!(s.cuu[(0, 0)], 2.0);
        assert_eq!(s.cup[(0, 0)], 2.0);
        assert_eq!(s.cpp[(0, 0)], 2.0);
    }

    #[test]
    fn constant_ensemble_has_zero_covariances() {
        let e = ens(2, 3, &[1.5, 1.5, 1.5, -2.0, -2.0, -2.0]);
        let s = compute_stats(&e, e.members()).unwrap();
        assert!(s.cuu.iter().all(|v| *v == 0.0));
        assert!(s.cup.iter().all(|v| *v == 0.0));
        assert!(s.cpp.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rank_one_covariance() {
        let e = ens(2, 3, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        let s = compute_stats(&e, e.members()).unwrap();
        assert_eq!(s.cuu, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(numerical_rank(&s.cuu, 1e-10), 1);
    }

    #[test]
    fn stats_dimension_mismatch() {
        let e = ens(1, 2, &[0.0, 2.0]);
        let outputs = DMatrix::zeros(1, 3);
        assert!(matches!(compute_stats(&e, &outputs), Err(Error::Config(_))));
    }

    #[test]
    fn stats_reject_nan_outputs() {
        let e = ens(1, 2, &[0.0, 2.0]);
        let outputs = DMatrix::from_row_slice(1, 2, &[0.0, f64::INFINITY]);
        assert!(matches!(compute_stats(&e, &outputs), Err(Error::Numeric(_))));
    }

    #[test]
    fn identity_norms() {
        let r = norms(&DMatrix::identity(3, 3));
        assert_eq!(r.max_norm, 1.0);
        assert_eq!(r.one_norm, 1.0);
        assert_relative_eq!(r.op_norm, 1.0, epsilon = 1e-14);
        assert_relative_eq!(r.min_eig.unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn nilpotent_norms() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let r = norms(&a);
        assert_eq!(r.max_norm, 2.0);
        assert_eq!(r.one_norm, 2.0);
        assert_relative_eq!(r.op_norm, 2.0, epsilon = 1e-10);
        assert!(r.min_eig.is_none());
        assert!(r.op_norm <= (r.one_norm * row_sum_norm(&a.transpose())).sqrt() + 1e-12);
    }

    #[test]
    fn all_ones_norms() {
        let r = norms(&DMatrix::from_element(2, 2, 1.0));
        assert_relative_eq!(r.op_norm, 2.0, epsilon = 1e-14);
        assert_eq!(r.max_norm, 1.0);
        assert_eq!(r.one_norm, 2.0);
    }

    #[test]
    fn min_eig_needs_symmetry() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        assert!(matches!(symmetric_min_eig(&a), Err(Error::Usage(_))));
    }

    #[test]
    fn subspace_residual_cases() {
        let basis = ens(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(subspace_residual(&basis, &basis).unwrap() < 1e-12);
        let scaled = Ensemble::new(basis.members() * 3.0).unwrap();
        assert!(subspace_residual(&scaled, &basis).unwrap() < 1e-12);

        let line = ens(2, 2, &[1.0, 2.0, 0.0, 0.0]);
        let off = ens(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        // second member is the zero vector
        assert_relative_eq!(subspace_residual(&off, &line).unwrap(), 1.0, epsilon = 1e-14);
    }

    fn matrix_strategy(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
        (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
            prop::collection::vec(-10.0..10.0_f64, r * c)
                .prop_map(move |v| DMatrix::from_vec(r, c, v))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn norm_inequalities_hold(a in matrix_strategy(8)) {
            let n = a.nrows().max(a.ncols());
            // square up so both inequalities are in their stated form
            let mut sq = DMatrix::zeros(n, n);
            sq.view_mut((0, 0), a.shape()).copy_from(&a);
            let r = norms(&sq);
            let rt = norms(&sq.transpose());
            prop_assert!(r.max_norm <= r.op_norm * (1.0 + 1e-9) + 1e-12);
            prop_assert!(r.op_norm <= (r.one_norm * rt.one_norm).sqrt() * (1.0 + 1e-9) + 1e-12);
        }

        #[test]
        fn cuu_matches_pairwise_sum(a in matrix_strategy(5).prop_filter("J >= 2", |m| m.ncols() >= 2)) {
            let e = Ensemble::new(a.clone()).unwrap();
            let s = compute_stats(&e, &a).unwrap();
            let brute = pairwise_cuu(&a);
            prop_assert!((&s.cuu - &brute).amax() <= 1e-10 * (1.0 + brute.amax()));
        }

        #[test]
        fn covariances_ignore_member_order_and_shift(
            a in matrix_strategy(5).prop_filter("J >= 2", |m| m.ncols() >= 2),
            shift in -5.0..5.0_f64,
        ) {
            let e = Ensemble::new(a.clone()).unwrap();
            let base = compute_stats(&e, &a).unwrap();

            let j = a.ncols();
            let perm: Vec<usize> = (0..j).rev().collect();
            let permuted = a.select_columns(&perm);
            let p = compute_stats(&Ensemble::new(permuted.clone()).unwrap(), &permuted).unwrap();
            prop_assert!((&p.cuu - &base.cuu).amax() <= 1e-10 * (1.0 + base.cuu.amax()));

            let shifted = a.add_scalar(shift);
            let s = compute_stats(&Ensemble::new(shifted.clone()).unwrap(), &a).unwrap();
            prop_assert!((&s.cuu - &base.cuu).amax() <= 1e-9 * (1.0 + base.cuu.amax()));
            prop_assert!((&s.cup - &base.cup).amax() <= 1e-9 * (1.0 + base.cup.amax()));
            let expected_mean = base.mean_u.add_scalar(shift);
            prop_assert!((&s.mean_u - expected_mean).amax() <= 1e-12 * (1.0 + shift.abs() + base.mean_u.amax()));
        }
    }
}
