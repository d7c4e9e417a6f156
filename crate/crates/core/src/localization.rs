//! Localization matrices and localized (cross) covariances.
//!
//! A taper matrix `Ψ` is built from a distance metric and a kernel,
//! `Ψ_ij = ψ(d(i,j)/R)`, and applied through Schur products. The
//! cross-covariance `C̃^up` is formed by one of four schemes.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{symmetric_min_eig, EnsembleStats};
use crate::error::{Error, Result};
use crate::models::{finite_difference_jacobian, ForwardModel};

/// Distance between parameter indices.
#[derive(Debug, Clone, PartialEq)]
pub enum DistanceMetric {
    /// `|i - j|`.
    Lattice,
    /// `min(|i - j|, period - |i - j|)`.
    PeriodicLattice { period: usize },
    /// `|x_i - x_j|` for scalar coordinates, e.g. log10 of layer-center depth.
    Coordinates(Vec<f64>),
    /// A user-supplied symmetric distance matrix.
    Explicit(DMatrix<f64>),
}

impl DistanceMetric {
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        match self {
            DistanceMetric::Lattice => i.abs_diff(j) as f64,
            DistanceMetric::PeriodicLattice { period } => {
                let d = i.abs_diff(j) % period;
                d.min(period - d) as f64
            }
            DistanceMetric::Coordinates(x) => (x[i] - x[j]).abs(),
            DistanceMetric::Explicit(m) => m[(i, j)],
        }
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            DistanceMetric::PeriodicLattice { period } if *period == 0 => {
                Err(Error::config("periodic lattice needs a positive period"))
            }
            DistanceMetric::Coordinates(x) if x.len() < dim => Err(Error::config(format!(
                "{} coordinates supplied for dimension {}",
                x.len(),
                dim
            ))),
            DistanceMetric::Explicit(m) if m.nrows() < dim || m.ncols() < dim => Err(
                Error::config(format!("distance matrix is {:?}, need {dim}x{dim}", m.shape())),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelKind {
    /// `exp(-r²/2)`.
    Gaussian,
    /// Fifth-order compactly supported taper, zero for `r ≥ 2`.
    GaspariCohn,
    /// 1 for `r ≤ 1`, 0 beyond.
    HardCutoff,
    /// 1 at `r = 0`, 0 elsewhere.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationKernel {
    pub kind: KernelKind,
    pub radius: f64,
}

impl LocalizationKernel {
    pub fn new(kind: KernelKind, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::config(format!("localization radius must be positive, got {radius}")));
        }
        Ok(Self { kind, radius })
    }

    pub fn gaussian(radius: f64) -> Result<Self> {
        Self::new(KernelKind::Gaussian, radius)
    }

    pub fn identity() -> Self {
        Self {
            kind: KernelKind::Identity,
            radius: 1.0,
        }
    }

    /// `ψ(r)` at an already scaled distance.
    pub fn taper(&self, r: f64) -> f64 {
        match self.kind {
            KernelKind::Gaussian => (-0.5 * r * r).exp(),
            KernelKind::GaspariCohn => gaspari_cohn(r),
            KernelKind::HardCutoff => {
                if r <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            KernelKind::Identity => {
                if r == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `ψ(d / R)`.
    pub fn weight(&self, distance: f64) -> f64 {
        self.taper(distance / self.radius)
    }
}

/// Gaspari–Cohn correlation function with support `[0, 2)`.
pub fn gaspari_cohn(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        -0.25 * r3 * r2 + 0.5 * r2 * r2 + 0.625 * r3 - 5.0 / 3.0 * r2 + 1.0
    } else if r < 2.0 {
        let r2 = r * r;
        let r3 = r2 * r;
        r3 * r2 / 12.0 - 0.5 * r2 * r2 + 0.625 * r3 + 5.0 / 3.0 * r2 - 5.0 * r + 4.0
            - 2.0 / (3.0 * r)
    } else {
        0.0
    }
}

/// `Ψ_ij = ψ(d(i,j)/R)` for `i, j < dim`.
pub fn build_psi(metric: &DistanceMetric, kernel: &LocalizationKernel, dim: usize) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(Error::config("localization dimension must be at least 1"));
    }
    metric.check_dim(dim)?;
    let mut psi = DMatrix::identity(dim, dim);
    for i in 0..dim {
        for j in (i + 1)..dim {
            let w = kernel.weight(metric.distance(i, j));
            psi[(i, j)] = w;
            psi[(j, i)] = w;
        }
    }
    Ok(psi)
}

/// Schur product `C^uu ∘ Ψ`.
pub fn localize_cuu(cuu: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cuu.shape() != psi.shape() {
        return Err(Error::config(format!(
            "covariance is {:?} but the taper is {:?}",
            cuu.shape(),
            psi.shape()
        )));
    }
    Ok(cuu.component_mul(psi))
}

/// `λ_min(Ψ)`, the `ψ₀` of the regularity assumption.
pub fn psi_min_eig(psi: &DMatrix<f64>) -> Result<f64> {
    symmetric_min_eig(psi)
}

/// Source of the approximate Jacobian `H(t)` used by linearized localization.
pub trait JacobianProvider: Send + Sync {
    /// Jacobian approximation at the ensemble mean.
    fn jacobian_at(&self, mean_u: &DVector<f64>) -> Result<DMatrix<f64>>;
}

/// A constant `H`, e.g. the exact matrix of a linear model.
#[derive(Debug, Clone)]
pub struct FixedJacobian(pub DMatrix<f64>);

impl JacobianProvider for FixedJacobian {
    fn jacobian_at(&self, _mean_u: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.0.clone())
    }
}

/// The model's analytic Jacobian at `ū`, falling back to central differences.
#[derive(Clone)]
pub struct ModelJacobian {
    model: Arc<dyn ForwardModel>,
}

impl ModelJacobian {
    pub fn new(model: Arc<dyn ForwardModel>) -> Self {
        Self { model }
    }
}

impl JacobianProvider for ModelJacobian {
    fn jacobian_at(&self, mean_u: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self.model.jacobian(mean_u) {
            Some(j) => Ok(j),
            None => finite_difference_jacobian(self.model.as_ref(), mean_u, default_fd_step(mean_u)),
        }
    }
}

/// `max(1e-6, 1e-6·‖u‖∞)`.
pub fn default_fd_step(u: &DVector<f64>) -> f64 {
    1e-6_f64.max(1e-6 * u.amax())
}

/// How `C̃^up` is formed from the raw statistics.
#[derive(Clone)]
pub enum CrossLocalization {
    /// `Ψ ∘ C^up`, treating output `j` as co-located with parameter `j`
    /// (requires `d_y = d_u`).
    ParamParamOnly,
    /// `C̃^up_ij = C^up_ij Ψ_{i,i(j)}`.
    Centralized { center_map: Vec<usize> },
    /// `C̃^up = C̃^uu Hᵀ`.
    Linearized { jacobian: Arc<dyn JacobianProvider> },
    /// Columns `j < split` centralized, the rest linearized. The provider may
    /// return either the full `d_y × d_u` Jacobian or only its last
    /// `d_y - split` rows.
    Mixed {
        center_map: Vec<usize>,
        split: usize,
        jacobian: Arc<dyn JacobianProvider>,
    },
}

impl std::fmt::Debug for CrossLocalization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CrossLocalization::ParamParamOnly => write!(f, "ParamParamOnly"),
            CrossLocalization::Centralized { center_map } => {
                f.debug_struct("Centralized").field("center_map", center_map).finish()
            }
            CrossLocalization::Linearized { .. } => write!(f, "Linearized"),
            CrossLocalization::Mixed { center_map, split, .. } => f
                .debug_struct("Mixed")
                .field("center_map", center_map)
                .field("split", split)
                .finish(),
        }
    }
}

/// A taper matrix plus the cross-covariance rule.
#[derive(Debug, Clone)]
pub struct LocalizationScheme {
    pub psi: DMatrix<f64>,
    pub cross: CrossLocalization,
}

impl LocalizationScheme {
    pub fn new(psi: DMatrix<f64>, cross: CrossLocalization) -> Result<Self> {
        if !psi.is_square() {
            return Err(Error::config("taper matrix must be square"));
        }
        for i in 0..psi.nrows() {
            if psi[(i, i)] != 1.0 {
                return Err(Error::config("taper matrix must have a unit diagonal"));
            }
            for j in 0..psi.ncols() {
                let v = psi[(i, j)];
                if !(0.0..=1.0).contains(&v) || (v - psi[(j, i)]).abs() > 1e-12 {
                    return Err(Error::config("taper entries must be symmetric and lie in [0, 1]"));
                }
            }
        }
        match &cross {
            CrossLocalization::Centralized { center_map } | CrossLocalization::Mixed { center_map, .. } => {
                if let Some(bad) = center_map.iter().find(|&&c| c >= psi.nrows()) {
                    return Err(Error::config(format!(
                        "center index {bad} out of range for {} parameters",
                        psi.nrows()
                    )));
                }
            }
            _ => {}
        }
        if let CrossLocalization::Mixed { center_map, split, .. } = &cross {
            if center_map.len() != *split {
                return Err(Error::config(format!(
                    "mixed scheme has {} centers for split {}",
                    center_map.len(),
                    split
                )));
            }
        }
        Ok(Self { psi, cross })
    }

    pub fn centralized(psi: DMatrix<f64>, center_map: Vec<usize>) -> Result<Self> {
        Self::new(psi, CrossLocalization::Centralized { center_map })
    }

    pub fn linearized(psi: DMatrix<f64>, jacobian: Arc<dyn JacobianProvider>) -> Result<Self> {
        Self::new(psi, CrossLocalization::Linearized { jacobian })
    }

    pub fn param_param_only(psi: DMatrix<f64>) -> Result<Self> {
        Self::new(psi, CrossLocalization::ParamParamOnly)
    }

    pub fn localize_cuu(&self, stats: &EnsembleStats) -> Result<DMatrix<f64>> {
        localize_cuu(&stats.cuu, &self.psi)
    }

    /// Smallest eigenvalue of the taper; positive definiteness is checked on demand.
    pub fn psi_min_eig(&self) -> Result<f64> {
        psi_min_eig(&self.psi)
    }
}

/// The localized cross-covariance `C̃^up` under `scheme`.
pub fn localize_cup(stats: &EnsembleStats, scheme: &LocalizationScheme) -> Result<DMatrix<f64>> {
    let du = stats.param_dim();
    let dy = stats.output_dim();
    if scheme.psi.nrows() != du {
        return Err(Error::config(format!(
            "taper is {}x{} but the parameter dimension is {}",
            scheme.psi.nrows(),
            scheme.psi.ncols(),
            du
        )));
    }
    match &scheme.cross {
        CrossLocalization::ParamParamOnly => {
            if du != dy {
                return Err(Error::config(
                    "param-param-only localization needs as many outputs as parameters",
                ));
            }
            Ok(stats.cup.component_mul(&scheme.psi))
        }
        CrossLocalization::Centralized { center_map } => {
            if center_map.len() != dy {
                return Err(Error::config(format!(
                    "centralized scheme has {} centers for {} outputs",
                    center_map.len(),
                    dy
                )));
            }
            Ok(centralized_taper(&stats.cup, &scheme.psi, center_map, 0..dy))
        }
        CrossLocalization::Linearized { jacobian } => {
            let h = jacobian.jacobian_at(&stats.mean_u)?;
            check_jacobian(&h, dy, du)?;
            let cuu = localize_cuu(&stats.cuu, &scheme.psi)?;
            Ok(cuu * h.transpose())
        }
        CrossLocalization::Mixed {
            center_map,
            split,
            jacobian,
        } => {
            let split = *split;
            if split > dy {
                return Err(Error::config(format!("split {split} exceeds {dy} outputs")));
            }
            let mut out = centralized_taper(&stats.cup, &scheme.psi, center_map, 0..split);
            if split < dy {
                let h = jacobian.jacobian_at(&stats.mean_u)?;
                let h = if h.nrows() == dy {
                    h.rows(split, dy - split).into_owned()
                } else {
                    h
                };
                check_jacobian(&h, dy - split, du)?;
                let cuu = localize_cuu(&stats.cuu, &scheme.psi)?;
                let lin = cuu * h.transpose();
                out.columns_mut(split, dy - split).copy_from(&lin);
            }
            Ok(out)
        }
    }
}

fn centralized_taper(
    cup: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    center_map: &[usize],
    cols: std::ops::Range<usize>,
) -> DMatrix<f64> {
    let mut out = cup.clone();
    for j in cols {
        let c = center_map[j];
        for i in 0..cup.nrows() {
            out[(i, j)] *= psi[(i, c)];
        }
    }
    out
}

fn check_jacobian(h: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if h.shape() != (rows, cols) {
        return Err(Error::config(format!(
            "Jacobian approximation is {:?}, expected {rows}x{cols}",
            h.shape()
        )));
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("Jacobian approximation contains non-finite entries"));
    }
    Ok(())
}

/// Writes `Ψ` as CSV with a header row of column indices.
pub fn write_psi_csv<W: Write>(psi: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..psi.ncols()).map(|j| j.to_string()))?;
    for row in psi.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dense CSV matrix written by [`write_psi_csv`].
pub fn read_psi_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    read_dense_csv(reader)
}

pub(crate) fn read_dense_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let ncols = rdr.headers()?.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for record in rdr.records() {
        let record = record?;
        if record.len() != ncols {
            return Err(Error::config(format!(
                "row {} has {} fields, expected {}",
                nrows + 1,
                record.len(),
                ncols
            )));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("not a number: {field:?}")))?;
            data.push(v);
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{compute_stats, numerical_rank, Ensemble};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn stats_with(cuu: DMatrix<f64>, cup: DMatrix<f64>) -> EnsembleStats {
        let du = cuu.nrows();
        let dy = cup.ncols();
        EnsembleStats {
            mean_u: DVector::zeros(du),
            mean_g: DVector::zeros(dy),
            cpp: DMatrix::zeros(dy, dy),
            outputs: DMatrix::zeros(dy, 2),
            cuu,
            cup,
        }
    }

    #[test]
    fn hard_cutoff_below_spacing_is_identity() {
        let k = LocalizationKernel::new(KernelKind::HardCutoff, 0.5).unwrap();
        let psi = build_psi(&DistanceMetric::Lattice, &k, 5).unwrap();
        assert_eq!(psi, DMatrix::identity(5, 5));
    }

    #[test]
    fn gaussian_two_point_psi() {
        let psi = build_psi(&DistanceMetric::Lattice, &LocalizationKernel::gaussian(1.0).unwrap(), 2).unwrap();
        let off = (-0.5_f64).exp();
        assert_eq!(psi, DMatrix::from_row_slice(2, 2, &[1.0, off, off, 1.0]));
    }

    #[test]
    fn gaspari_cohn_values() {
        assert_eq!(gaspari_cohn(0.0), 1.0);
        assert_eq!(gaspari_cohn(2.0), 0.0);
        assert_eq!(gaspari_cohn(2.5), 0.0);
        assert_relative_eq!(gaspari_cohn(1.0), 5.0 / 24.0, epsilon = 1e-14);
        // continuous at the breakpoints and nonincreasing
        assert_relative_eq!(gaspari_cohn(1.0 - 1e-9), gaspari_cohn(1.0 + 1e-9), epsilon = 1e-8);
        assert!(gaspari_cohn(2.0 - 1e-6) < 1e-12);
        let mut prev = 1.0;
        for k in 1..=400 {
            let v = gaspari_cohn(k as f64 * 0.005);
            assert!(v <= prev + 1e-15 && v >= 0.0);
            prev = v;
        }
    }

    #[test]
    fn periodic_distance_wraps() {
        let m = DistanceMetric::PeriodicLattice { period: 10 };
        assert_eq!(m.distance(0, 9), 1.0);
        assert_eq!(m.distance(2, 7), 5.0);
    }

    #[test]
    fn schur_with_identity_and_ones() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(
            localize_cuu(&c, &DMatrix::identity(2, 2)).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0])
        );
        assert_eq!(localize_cuu(&c, &DMatrix::from_element(2, 2, 1.0)).unwrap(), c);
    }

    #[test]
    fn schur_enriches_rank() {
        let c = DMatrix::from_element(2, 2, 2.0);
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let out = localize_cuu(&c, &psi).unwrap();
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert_eq!(numerical_rank(&c, 1e-10), 1);
        assert_eq!(numerical_rank(&out, 1e-10), 2);
    }

    #[test]
    fn centralized_identity_taper() {
        let cup = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 4.0]);
        let s = stats_with(DMatrix::identity(2, 2), cup.clone());
        let scheme = LocalizationScheme::centralized(DMatrix::identity(2, 2), vec![0, 1]).unwrap();
        assert_eq!(
            localize_cup(&s, &scheme).unwrap(),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 4.0])
        );

        let ones = LocalizationScheme::centralized(DMatrix::from_element(2, 2, 1.0), vec![0, 1]).unwrap();
        assert_eq!(localize_cup(&s, &ones).unwrap(), cup);
    }

    #[test]
    fn linearized_identity_matches_localized_cuu() {
        let members = DMatrix::from_row_slice(3, 4, &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0, 3.0, -2.0, 1.0, 1.0, 0.0, 0.0]);
        let e = Ensemble::new(members.clone()).unwrap();
        let s = compute_stats(&e, &members).unwrap();
        let psi = build_psi(&DistanceMetric::Lattice, &LocalizationKernel::gaussian(1.0).unwrap(), 3).unwrap();
        let scheme =
            LocalizationScheme::linearized(psi.clone(), Arc::new(FixedJacobian(DMatrix::identity(3, 3)))).unwrap();
        let cup = localize_cup(&s, &scheme).unwrap();
        assert!((cup - localize_cuu(&s.cuu, &psi).unwrap()).amax() < 1e-14);
    }

    #[test]
    fn mixed_scheme_splits_columns() {
        let members = DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.5, 0.0, 2.0, -1.0]);
        let e = Ensemble::new(members.clone()).unwrap();
        // outputs: (u_1, u_2, u_1 + u_2)
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = compute_stats(&e, &(&h * &members)).unwrap();
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 1.0]);
        let scheme = LocalizationScheme::new(
            psi.clone(),
            CrossLocalization::Mixed {
                center_map: vec![0, 1],
                split: 2,
                jacobian: Arc::new(FixedJacobian(h.clone())),
            },
        )
        .unwrap();
        let out = localize_cup(&s, &scheme).unwrap();
        let central = LocalizationScheme::centralized(psi.clone(), vec![0, 1, 0]).unwrap();
        let c = localize_cup(&s, &central).unwrap();
        let lin = localize_cuu(&s.cuu, &psi).unwrap() * h.transpose();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(out[(i, j)], c[(i, j)]);
            }
            assert!((out[(i, 2)] - lin[(i, 2)]).abs() < 1e-14);
        }
    }

    #[test]
    fn missing_center_map_is_config_error() {
        let s = stats_with(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let scheme = LocalizationScheme::centralized(DMatrix::identity(2, 2), vec![0]).unwrap();
        assert!(matches!(localize_cup(&s, &scheme), Err(Error::Config(_))));
    }

    struct FailingJacobian;
    impl JacobianProvider for FailingJacobian {
        fn jacobian_at(&self, _: &DVector<f64>) -> Result<DMatrix<f64>> {
            Err(Error::numeric("adjoint diverged"))
        }
    }

    #[test]
    fn jacobian_failure_propagates() {
        let s = stats_with(DMatrix::identity(2, 2), DMatrix::identity(2, 2));
        let scheme = LocalizationScheme::linearized(DMatrix::identity(2, 2), Arc::new(FailingJacobian)).unwrap();
        assert!(matches!(localize_cup(&s, &scheme), Err(Error::Numeric(_))));
    }

    #[test]
    fn psi_min_eig_cases() {
        assert_relative_eq!(psi_min_eig(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        assert!(psi_min_eig(&DMatrix::from_element(2, 2, 1.0)).unwrap().abs() < 1e-14);
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        assert_relative_eq!(psi_min_eig(&psi).unwrap(), 0.5, epsilon = 1e-14);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(psi_min_eig(&asym), Err(Error::Usage(_))));
    }

    #[test]
    fn psi_csv_round_trip() {
        let psi = build_psi(&DistanceMetric::Lattice, &LocalizationKernel::gaussian(2.0).unwrap(), 4).unwrap();
        let mut buf = Vec::new();
        write_psi_csv(&psi, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("0,1,2,3\n"));
        assert_eq!(read_psi_csv(buf.as_slice()).unwrap(), psi);
    }

    #[test]
    fn centralized_identity_zeroes_off_center_entries() {
        // G_j depends only on u_j, so C^up entries with i != j are generally nonzero
        // but the identity taper removes exactly those.
        let members = DMatrix::from_row_slice(3, 4, &[1.0, -1.0, 0.5, 2.0, 0.0, 1.0, 3.0, -2.0, 1.0, 1.0, 0.0, 0.3]);
        let outputs = members.map(|v| v * v * v + v);
        let e = Ensemble::new(members).unwrap();
        let s = compute_stats(&e, &outputs).unwrap();
        let scheme = LocalizationScheme::centralized(DMatrix::identity(3, 3), vec![0, 1, 2]).unwrap();
        let c = localize_cup(&s, &scheme).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert_eq!(c[(i, j)], s.cup[(i, j)]);
                } else {
                    assert_eq!(c[(i, j)], 0.0);
                }
            }
        }
    }

    fn psd_strategy(n: usize, k: usize) -> impl Strategy<Value = DMatrix<f64>> {
        prop::collection::vec(-3.0..3.0_f64, n * k).prop_map(move |v| {
            let a = DMatrix::from_vec(n, k, v);
            &a * a.transpose()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn schur_product_of_psd_is_psd(
            c in psd_strategy(6, 3),
            radius in 0.3..5.0_f64,
            gc in any::<bool>(),
        ) {
            let kind = if gc { KernelKind::GaspariCohn } else { KernelKind::Gaussian };
            let psi = build_psi(&DistanceMetric::Lattice, &LocalizationKernel::new(kind, radius).unwrap(), 6).unwrap();
            let out = localize_cuu(&c, &psi).unwrap();
            let min = symmetric_min_eig(&crate::ensemble::symmetrize(out)).unwrap();
            prop_assert!(min >= -1e-10 * (1.0 + c.amax()));
        }

        #[test]
        fn psi_is_permutation_equivariant(
            coords in prop::collection::vec(-5.0..5.0_f64, 6),
            seed in any::<u64>(),
        ) {
            let n = coords.len();
            let mut perm: Vec<usize> = (0..n).collect();
            // deterministic shuffle from the seed
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (s >> 33) as usize % (i + 1));
            }
            let kernel = LocalizationKernel::gaussian(1.5).unwrap();
            let psi = build_psi(&DistanceMetric::Coordinates(coords.clone()), &kernel, n).unwrap();
            let permuted: Vec<f64> = perm.iter().map(|&p| coords[p]).collect();
            let psi_p = build_psi(&DistanceMetric::Coordinates(permuted), &kernel, n).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(psi_p[(i, j)], psi[(perm[i], perm[j])]);
                }
            }
        }
    }
}
