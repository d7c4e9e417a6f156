use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{DiagnosticsLevel, StepPolicy, StoppingRule};
use crate::error::{Error, Result};
use crate::localization::KernelKind;
use crate::models::HankelMethod;
use crate::teki::C0Spec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Linear,
    Nonlinear,
    Lorenz96,
    DcResistivity,
    Custom,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Linear => "linear",
            ExperimentKind::Nonlinear => "nonlinear",
            ExperimentKind::Lorenz96 => "lorenz96",
            ExperimentKind::DcResistivity => "dc-resistivity",
            ExperimentKind::Custom => "custom",
        }
    }

    /// The final-row quantity summarized across trials.
    pub fn metric(&self) -> &'static str {
        match self {
            ExperimentKind::Lorenz96 => "rmse",
            ExperimentKind::DcResistivity => "scaled_misfit",
            _ => "misfit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossScheme {
    Centralized,
    Linearized,
    ParamParamOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// `|i - j|`.
    Lattice,
    /// Ring distance.
    Periodic,
    /// Distance between log10 layer depths (DC only).
    Log10Depth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizationConfig {
    pub enabled: bool,
    pub kernel: KernelKind,
    pub radius: f64,
    pub scheme: CrossScheme,
    /// Defaults to the experiment's natural geometry.
    pub metric: Option<MetricKind>,
}

impl Default for LocalizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kernel: KernelKind::Gaussian,
            radius: 1.0,
            scheme: CrossScheme::Centralized,
            metric: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TekiConfig {
    pub c0: C0Spec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthInit {
    /// `F + N(0, I)` spun up onto the attractor.
    Random,
    /// `F·1`, the fixed point.
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lorenz96Section {
    pub forcing: f64,
    pub obs_time: f64,
    pub inner_dt: f64,
    pub spinup_time: f64,
    pub spinup_dt: f64,
    pub truth_init: TruthInit,
}

impl Default for Lorenz96Section {
    fn default() -> Self {
        Self {
            forcing: 8.0,
            obs_time: 0.2,
            inner_dt: 0.05,
            spinup_time: 1000.0,
            spinup_dt: 0.01,
            truth_init: TruthInit::Random,
        }
    }
}

/// A blocky synthetic resistivity section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticEarth {
    /// One value per block, top to bottom.
    pub resistivities: Vec<f64>,
    /// Depths in meters of the block interfaces.
    #[serde(default)]
    pub boundaries: Vec<f64>,
    /// Data standard deviations as a fraction of the clean data.
    #[serde(default = "default_noise_fraction")]
    pub noise_fraction: f64,
    #[serde(default = "default_true")]
    pub add_noise: bool,
}

fn default_noise_fraction() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcSection {
    pub depth_min: f64,
    pub depth_max: f64,
    /// Taken from the data file when absent.
    pub half_spacings: Option<Vec<f64>>,
    pub method: HankelMethod,
    pub init_low: f64,
    pub init_high: f64,
    pub clamp_floor: f64,
    pub synthetic: Option<SyntheticEarth>,
}

impl Default for DcSection {
    fn default() -> Self {
        Self {
            depth_min: 1e-1,
            depth_max: 1e5,
            half_spacings: None,
            method: HankelMethod::Filter,
            init_low: 0.5,
            init_high: 5.0,
            clamp_floor: 0.1,
            synthetic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomSection {
    /// Dense `H` as CSV with a header row.
    pub matrix_csv: Option<PathBuf>,
}

/// One batch experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub dims: Vec<usize>,
    pub ensemble_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub localization: LocalizationConfig,
    #[serde(default)]
    pub inflation_sigma: f64,
    #[serde(default)]
    pub teki: Option<TekiConfig>,
    pub step_policy: StepPolicy,
    pub stopping: StoppingRule,
    #[serde(default)]
    pub diagnostics_level: DiagnosticsLevel,
    #[serde(default)]
    pub data_file: Option<PathBuf>,
    /// Standard deviation of the synthetic observation noise.
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    #[serde(default)]
    pub lorenz96: Lorenz96Section,
    #[serde(default)]
    pub dc: DcSection,
    #[serde(default)]
    pub custom: CustomSection,
    /// Directory that relative paths resolve against; set by the loader.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn default_noise_std() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(b) if p.is_relative() => b.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.dims.is_empty() || self.ensemble_sizes.is_empty() {
            return Err(Error::config("dims and ensemble_sizes must be nonempty"));
        }
        if self.dims.contains(&0) {
            return Err(Error::config("dimensions must be positive"));
        }
        if self.ensemble_sizes.iter().any(|&j| j < 2) {
            return Err(Error::config("ensemble sizes must be at least 2"));
        }
        if !(self.inflation_sigma >= 0.0) {
            return Err(Error::config("inflation_sigma must be nonnegative"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std must be nonnegative"));
        }
        if self.localization.enabled && !(self.localization.radius > 0.0) {
            return Err(Error::config("localization radius must be positive"));
        }
        self.step_policy.validate()?;
        self.stopping.validate()?;
        match self.experiment {
            ExperimentKind::Lorenz96 if self.dims.iter().any(|&d| d < 4) => {
                Err(Error::config("Lorenz'96 dimensions must be at least 4"))
            }
            ExperimentKind::DcResistivity => {
                if self.data_file.is_none() && self.dc.synthetic.is_none() {
                    return Err(Error::config("dc-resistivity needs data_file or [dc.synthetic]"));
                }
                if !(self.dc.init_low > 0.0 && self.dc.init_high > self.dc.init_low) {
                    return Err(Error::config("dc init range must satisfy 0 < init_low < init_high"));
                }
                if let Some(s) = &self.dc.synthetic {
                    if s.resistivities.is_empty() || s.boundaries.len() + 1 != s.resistivities.len() {
                        return Err(Error::config(
                            "synthetic earth needs one more resistivity than boundaries",
                        ));
                    }
                    if s.boundaries.windows(2).any(|w| !(w[1] > w[0])) {
                        return Err(Error::config("synthetic boundaries must increase"));
                    }
                    if !(s.noise_fraction > 0.0) {
                        return Err(Error::config("noise_fraction must be positive"));
                    }
                }
                Ok(())
            }
            ExperimentKind::Custom if self.custom.matrix_csv.is_none() => {
                Err(Error::config("custom experiment needs custom.matrix_csv"))
            }
            _ => Ok(()),
        }
    }
}

/// Built-in experiment presets.
pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "linear" => Some(include_str!("../../presets/linear.toml")),
        "nonlinear" => Some(include_str!("../../presets/nonlinear.toml")),
        "lorenz96" => Some(include_str!("../../presets/lorenz96.toml")),
        "dc" | "dc-resistivity" => Some(include_str!("../../presets/dc.toml")),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 4] = ["linear", "nonlinear", "lorenz96", "dc"];

/// Merges `overlay` into `base`, table by table.
pub fn merge_toml(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_toml(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// A preset with an optional config file layered on top.
pub fn load_with_preset(preset_name: Option<&str>, path: Option<&Path>) -> Result<ExperimentConfig> {
    let mut table = toml::Table::new();
    if let Some(name) = preset_name {
        let text = preset(name).ok_or_else(|| {
            Error::config(format!("unknown preset {name:?}; expected one of {PRESET_NAMES:?}"))
        })?;
        table = text.parse::<toml::Table>().map_err(|e| Error::config(e.to_string()))?;
    }
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", p.display())))?;
        let overlay = text
            .parse::<toml::Table>()
            .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
        merge_toml(&mut table, overlay);
    }
    if preset_name.is_none() && path.is_none() {
        return Err(Error::config("either a config file or a preset is required"));
    }
    let mut cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
    cfg.base_dir = path.and_then(Path::parent).map(Path::to_path_buf);
    cfg.validate()?;
    Ok(cfg)
}
