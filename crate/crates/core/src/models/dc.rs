use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::hankel::{quadrature_transform, HankelMethod, J1Filter};
use super::{check_input, ForwardModel, Locality};
use crate::error::{Error, Result};

/// 1D Schlumberger sounding over a stack of horizontal layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcResistivityConfig {
    pub layer_count: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// AB/2 electrode half-spacings in meters.
    pub half_spacings: Vec<f64>,
    pub method: HankelMethod,
}

impl Default for DcResistivityConfig {
    fn default() -> Self {
        Self {
            layer_count: 20,
            depth_min: 1e-1,
            depth_max: 1e5,
            half_spacings: log_space(0.0, 4.0, 29),
            method: HankelMethod::Filter,
        }
    }
}

pub(crate) fn log_space(lo_exp: f64, hi_exp: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo_exp)];
    }
    (0..n)
        .map(|i| 10f64.powf(lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64))
        .collect()
}

impl DcResistivityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_count < 2 {
            return Err(Error::config("DC model needs at least two layers"));
        }
        if !(self.depth_min > 0.0) || !(self.depth_max > self.depth_min) || !self.depth_max.is_finite() {
            return Err(Error::config(format!(
                "depths must satisfy 0 < depth_min < depth_max, got {} and {}",
                self.depth_min, self.depth_max
            )));
        }
        if self.half_spacings.is_empty() {
            return Err(Error::config("no half-spacings configured"));
        }
        if let Some(s) = self.half_spacings.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(Error::config(format!("half-spacing {s} is not a positive number")));
        }
        Ok(())
    }

    /// `layer_count` log-spaced boundaries from `depth_min` to `depth_max`.
    pub fn boundaries(&self) -> Vec<f64> {
        log_space(self.depth_min.log10(), self.depth_max.log10(), self.layer_count)
    }

    /// Thicknesses of the `layer_count - 1` finite layers; the last layer is
    /// a half-space.
    pub fn thicknesses(&self) -> Result<Vec<f64>> {
        self.validate()?;
        Ok(self.boundaries().windows(2).map(|z| z[1] - z[0]).collect())
    }

    /// Representative log10 depth of each layer: the log-midpoint of its
    /// boundaries, and half a log step below the last boundary for the
    /// half-space.
    pub fn layer_log_centers(&self) -> Vec<f64> {
        let logs: Vec<f64> = self.boundaries().iter().map(|z| z.log10()).collect();
        let step = logs[1] - logs[0];
        let mut centers: Vec<f64> = logs.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
        centers.push(logs[logs.len() - 1] + 0.5 * step);
        centers
    }

    /// `i(j)`: the layer whose log depth is nearest to `log10(s_j)`.
    pub fn center_map(&self) -> Vec<usize> {
        let centers = self.layer_log_centers();
        self.half_spacings
            .iter()
            .map(|s| {
                let ls = s.log10();
                let mut best = 0;
                for (i, c) in centers.iter().enumerate() {
                    if (c - ls).abs() < (centers[best] - ls).abs() {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}

/// Resistivities with layer thicknesses.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredEarth {
    pub resistivities: Vec<f64>,
    pub thicknesses: Vec<f64>,
}

impl LayeredEarth {
    pub fn new(resistivities: Vec<f64>, thicknesses: Vec<f64>) -> Result<Self> {
        if resistivities.is_empty() || thicknesses.len() + 1 != resistivities.len() {
            return Err(Error::config(format!(
                "{} resistivities need {} thicknesses, got {}",
                resistivities.len(),
                resistivities.len().saturating_sub(1),
                thicknesses.len()
            )));
        }
        check_positive(&resistivities)?;
        if thicknesses.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::domain("layer thicknesses must be positive"));
        }
        Ok(Self {
            resistivities,
            thicknesses,
        })
    }

    pub fn koefoed(&self, lambda: f64) -> Result<f64> {
        koefoed_transform(&self.resistivities, &self.thicknesses, lambda)
    }

    /// Apparent resistivity at half-spacing `s`, for arbitrary thicknesses.
    pub fn apparent_resistivity(&self, s: f64, method: HankelMethod) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::domain(format!("half-spacing must be positive, got {s}")));
        }
        layered_apparent(&self.resistivities, &self.thicknesses, s, method)
    }
}

fn check_positive(u: &[f64]) -> Result<()> {
    match u.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        Some(i) => Err(Error::domain(format!(
            "resistivity {i} is {}; resistivities must be positive",
            u[i]
        ))),
        None => Ok(()),
    }
}

fn recursion(u: &[f64], tanh_of: impl Fn(usize) -> f64) -> f64 {
    let n = u.len();
    let mut t = u[n - 1];
    for i in (0..n - 1).rev() {
        let th = tanh_of(i);
        t = u[i] * (t + u[i] * th) / (u[i] + t * th);
    }
    t
}

/// Koefoed resistivity transform `T₁(λ)` by the upward recursion from
/// `T_N = u_N`.
pub fn koefoed_transform(u: &[f64], t: &[f64], lambda: f64) -> Result<f64> {
    if u.is_empty() || t.len() + 1 != u.len() {
        return Err(Error::config(format!(
            "{} resistivities need {} thicknesses, got {}",
            u.len(),
            u.len().saturating_sub(1),
            t.len()
        )));
    }
    check_positive(u)?;
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("lambda must be positive, got {lambda}")));
    }
    Ok(recursion(u, |i| (lambda * t[i]).tanh()))
}

/// Apparent resistivity `s² ∫ T₁(λ) J₁(sλ) λ dλ` at half-spacing `s`.
///
/// The transform is evaluated on `T₁ - u₁`, which decays as `λ → ∞`;
/// the constant `u₁` integrates to itself.
pub fn apparent_resistivity(u: &[f64], cfg: &DcResistivityConfig, s: f64) -> Result<f64> {
    if u.len() != cfg.layer_count {
        return Err(Error::config(format!(
            "expected {} resistivities, got {}",
            cfg.layer_count,
            u.len()
        )));
    }
    if !(s > 0.0) {
        return Err(Error::domain(format!("half-spacing must be positive, got {s}")));
    }
    let thick = cfg.thicknesses()?;
    check_positive(u)?;
    layered_apparent(u, &thick, s, cfg.method)
}

fn layered_apparent(u: &[f64], thick: &[f64], s: f64, method: HankelMethod) -> Result<f64> {
    let u1 = u[0];
    match method {
        HankelMethod::Filter => {
            let filter = J1Filter::get();
            let sum: f64 = filter
                .abscissae
                .iter()
                .zip(&filter.weights)
                .map(|(b, w)| {
                    let lam = b / s;
                    w * b * (recursion(u, |i| (lam * thick[i]).tanh()) - u1)
                })
                .sum();
            finite(u1 + sum)
        }
        HankelMethod::Quadrature => {
            let scale = u.iter().copied().fold(0.0, f64::max) / (s * s);
            let integral = quadrature_transform(
                s,
                |lam| (recursion(u, |i| (lam * thick[i]).tanh()) - u1) * lam,
                scale,
            )?;
            finite(u1 + s * s * integral)
        }
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::numeric("apparent resistivity is not finite"))
    }
}

/// Apparent resistivities at every configured half-spacing.
pub fn dc_forward(u: &DVector<f64>, cfg: &DcResistivityConfig) -> Result<DVector<f64>> {
    let values = cfg
        .half_spacings
        .iter()
        .map(|&s| apparent_resistivity(u.as_slice(), cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

/// Forward model with `tanh(λ t_i)` tabulated for every filter abscissa.
#[derive(Debug, Clone)]
pub struct DcModel {
    cfg: DcResistivityConfig,
    /// `tanh[j][i·K + k]` for half-spacing `j`, layer `i`, abscissa `k`.
    tanh: Vec<Vec<f64>>,
}

impl DcModel {
    pub fn new(cfg: DcResistivityConfig) -> Result<Self> {
        let thick = cfg.thicknesses()?;
        let tanh = match cfg.method {
            HankelMethod::Filter => {
                let filter = J1Filter::get();
                cfg.half_spacings
                    .iter()
                    .map(|s| {
                        thick
                            .iter()
                            .flat_map(|t| filter.abscissae.iter().map(move |b| (b / s * t).tanh()))
                            .collect()
                    })
                    .collect()
            }
            HankelMethod::Quadrature => Vec::new(),
        };
        Ok(Self { cfg, tanh })
    }

    pub fn config(&self) -> &DcResistivityConfig {
        &self.cfg
    }
}

impl ForwardModel for DcModel {
    fn param_dim(&self) -> usize {
        self.cfg.layer_count
    }

    fn output_dim(&self) -> usize {
        self.cfg.half_spacings.len()
    }

    fn evaluate(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(self, u)?;
        if self.tanh.is_empty() {
            return dc_forward(u, &self.cfg);
        }
        let u = u.as_slice();
        check_positive(u)?;
        let filter = J1Filter::get();
        let nk = filter.len();
        let n = u.len();
        let u1 = u[0];
        // one recursion chain per abscissa, advanced together layer by layer
        let mut t = vec![0.0; nk];
        let values = self
            .tanh
            .iter()
            .map(|table| {
                t.fill(u[n - 1]);
                for i in (0..n - 1).rev() {
                    let ui = u[i];
                    let row = &table[i * nk..(i + 1) * nk];
                    for (tk, th) in t.iter_mut().zip(row) {
                        *tk = ui * (*tk + ui * th) / (ui + *tk * th);
                    }
                }
                let sum: f64 = t
                    .iter()
                    .zip(filter.abscissae.iter().zip(&filter.weights))
                    .map(|(tk, (b, w))| w * b * (tk - u1))
                    .sum();
                finite(u1 + sum)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    }

    fn locality(&self) -> Option<Locality> {
        Some(Locality {
            centers: self.cfg.center_map(),
            footprints: None,
        })
    }
}

/// One Schlumberger sounding curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SoundingData {
    pub half_spacings: Vec<f64>,
    pub apparent_resistivity: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SoundingRow {
    ab_over_2_m: f64,
    apparent_resistivity_ohm_m: f64,
    std_ohm_m: f64,
}

impl SoundingData {
    pub fn len(&self) -> usize {
        self.half_spacings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.half_spacings.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for i in 0..self.len() {
            w.serialize(SoundingRow {
                ab_over_2_m: self.half_spacings[i],
                apparent_resistivity_ohm_m: self.apparent_resistivity[i],
                std_ohm_m: self.std[i],
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `ab_over_2_m, apparent_resistivity_ohm_m, std_ohm_m` rows.
pub fn read_sounding_csv(path: &Path) -> Result<SoundingData> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut data = SoundingData {
        half_spacings: Vec::new(),
        apparent_resistivity: Vec::new(),
        std: Vec::new(),
    };
    for (line, row) in r.deserialize::<SoundingRow>().enumerate() {
        let row = row?;
        if !(row.ab_over_2_m > 0.0) || !(row.apparent_resistivity_ohm_m > 0.0) || !(row.std_ohm_m > 0.0) {
            return Err(Error::config(format!(
                "{}: row {} must hold positive values",
                path.display(),
                line + 1
            )));
        }
        data.half_spacings.push(row.ab_over_2_m);
        data.apparent_resistivity.push(row.apparent_resistivity_ohm_m);
        data.std.push(row.std_ohm_m);
    }
    if data.is_empty() {
        return Err(Error::config(format!("{} holds no soundings", path.display())));
    }
    Ok(data)
}
