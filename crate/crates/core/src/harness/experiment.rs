use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CrossScheme, ExperimentConfig, ExperimentKind, MetricKind, TruthInit};
use super::report::{aggregate, AggregateReport};
use super::rng::{self, Role};
use crate::diagnostics::MetricsRow;
use crate::dynamics::{self, clamp_below, ExitCondition, InflationConfig, RunConfig, RunHooks, RunRecord};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::localization::{
    build_psi, DistanceMetric, LocalizationKernel, LocalizationScheme, ModelJacobian,
};
use crate::localization::read_dense_csv;
use crate::models::{
    l96_spinup, read_sounding_csv, DcModel, DcResistivityConfig, ForwardModel, LayeredEarth,
    LinearModel, LocalCubicModel, Lorenz96Config, Lorenz96Model, SoundingData,
};
use crate::teki::{PriorCovariance, TikhonovExtension};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Unlocalized.
    Eki,
    /// Localized.
    Leki,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Eki => "eki",
            Method::Leki => "leki",
        }
    }
}

/// One run of one method on one trial's draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub experiment: ExperimentKind,
    pub dim: usize,
    pub ensemble_size: usize,
    pub method: Method,
    pub trial: usize,
    pub seed: u64,
    /// Stream id of the initial ensemble draw.
    pub stream: u64,
    pub exit: ExitCondition,
    pub final_row: Option<MetricsRow>,
    pub record: RunRecord,
    /// Digest of truth, data and initial ensemble; equal for paired runs.
    pub input_digest: u64,
}

impl TrialResult {
    /// The quantity aggregated for this experiment, from the final row.
    pub fn final_value(&self) -> Option<f64> {
        let row = self.final_row.as_ref()?;
        match self.experiment.metric() {
            "rmse" => row.rmse,
            "scaled_misfit" => row.scaled_misfit,
            _ => Some(row.misfit),
        }
    }
}

/// Results of a whole batch, in (dim, J, trial, method) order.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub results: Vec<TrialResult>,
    pub reports: Vec<AggregateReport>,
}

/// Data for one trial, shared by both methods.
struct TrialInputs {
    truth: Option<DVector<f64>>,
    y: DVector<f64>,
    stds: Option<DVector<f64>>,
}

enum DataSource {
    /// Truth from `N(0, I)`, unit-variance noise.
    PerTrial,
    /// Chained attractor truths, one per trial.
    Chained(Vec<std::result::Result<DVector<f64>, String>>),
    /// Fixed data set.
    Fixed {
        truth: Option<DVector<f64>>,
        y: DVector<f64>,
        stds: DVector<f64>,
    },
}

/// Everything fixed for one dimension.
struct Setup {
    dim: usize,
    base: Arc<dyn ForwardModel>,
    model: Arc<dyn ForwardModel>,
    extension: Option<Arc<TikhonovExtension>>,
    scheme: Option<LocalizationScheme>,
    source: DataSource,
}

impl Setup {
    fn inputs(&self, cfg: &ExperimentConfig, trial: usize) -> std::result::Result<TrialInputs, Error> {
        let noisy = |truth: &DVector<f64>| -> Result<DVector<f64>> {
            let mut y = self.base.evaluate(truth)?;
            let mut r = rng::stream(cfg.seed, rng::stream_id(self.dim, 0, trial, Role::Noise));
            y += rng::normal_vector(&mut r, y.len()) * cfg.noise_std;
            Ok(y)
        };
        match &self.source {
            DataSource::PerTrial => {
                let mut r = rng::stream(cfg.seed, rng::stream_id(self.dim, 0, trial, Role::Truth));
                let truth = rng::normal_vector(&mut r, self.dim);
                let y = noisy(&truth)?;
                Ok(TrialInputs {
                    truth: Some(truth),
                    y,
                    stds: None,
                })
            }
            DataSource::Chained(truths) => {
                let truth = truths[trial].clone().map_err(Error::Numeric)?;
                let y = noisy(&truth)?;
                Ok(TrialInputs {
                    truth: Some(truth),
                    y,
                    stds: None,
                })
            }
            DataSource::Fixed { truth, y, stds } => Ok(TrialInputs {
                truth: truth.clone(),
                y: y.clone(),
                stds: Some(stds.clone()),
            }),
        }
    }

    fn initial(&self, cfg: &ExperimentConfig, j: usize, trial: usize) -> (u64, DMatrix<f64>) {
        let id = rng::stream_id(self.dim, j, trial, Role::Init);
        let mut r = rng::stream(cfg.seed, id);
        let m = match cfg.experiment {
            ExperimentKind::DcResistivity => {
                rng::uniform_matrix(&mut r, self.dim, j, cfg.dc.init_low, cfg.dc.init_high)
            }
            _ => rng::normal_matrix(&mut r, self.dim, j),
        };
        (id, m)
    }
}

fn base_model(cfg: &ExperimentConfig, dim: usize) -> Result<Arc<dyn ForwardModel>> {
    Ok(match cfg.experiment {
        ExperimentKind::Linear => Arc::new(LinearModel::identity(dim)),
        ExperimentKind::Nonlinear => Arc::new(LocalCubicModel::new(dim)),
        ExperimentKind::Lorenz96 => Arc::new(Lorenz96Model::new(l96_config(cfg, dim))?),
        ExperimentKind::DcResistivity => Arc::new(DcModel::new(dc_config(cfg, dim)?)?),
        ExperimentKind::Custom => {
            let path = cfg.resolve(cfg.custom.matrix_csv.as_deref().expect("validated"));
            let file = std::fs::File::open(&path)
                .map_err(|e| Error::config(format!("cannot open {}: {e}", path.display())))?;
            let h = read_dense_csv(file)?;
            if h.ncols() != dim {
                return Err(Error::config(format!(
                    "{} has {} columns but dims lists {dim}",
                    path.display(),
                    h.ncols()
                )));
            }
            Arc::new(LinearModel::new(h))
        }
    })
}

fn l96_config(cfg: &ExperimentConfig, dim: usize) -> Lorenz96Config {
    Lorenz96Config {
        dim,
        forcing: cfg.lorenz96.forcing,
        obs_time: cfg.lorenz96.obs_time,
        inner_dt: cfg.lorenz96.inner_dt,
    }
}

fn read_data(cfg: &ExperimentConfig, path: &std::path::Path) -> Result<SoundingData> {
    let path = cfg.resolve(path);
    read_sounding_csv(&path).map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::config(format!("cannot read {}: {other}", path.display())),
    })
}

fn dc_config(cfg: &ExperimentConfig, dim: usize) -> Result<DcResistivityConfig> {
    let half_spacings = match (&cfg.data_file, &cfg.dc.half_spacings) {
        (Some(path), configured) => {
            let data = read_data(cfg, path)?;
            if let Some(s) = configured {
                if s.len() != data.len() {
                    return Err(Error::config(format!(
                        "data file has {} rows but {} half-spacings are configured",
                        data.len(),
                        s.len()
                    )));
                }
                if s.iter().zip(&data.half_spacings).any(|(a, b)| (a - b).abs() > 1e-9 * a.abs()) {
                    return Err(Error::config("data half-spacings differ from the configured ones"));
                }
            }
            data.half_spacings
        }
        (None, Some(s)) => s.clone(),
        (None, None) => DcResistivityConfig::default().half_spacings,
    };
    let dc = DcResistivityConfig {
        layer_count: dim,
        depth_min: cfg.dc.depth_min,
        depth_max: cfg.dc.depth_max,
        half_spacings,
        method: cfg.dc.method,
    };
    dc.validate()?;
    Ok(dc)
}

fn chained_truths(cfg: &ExperimentConfig, dim: usize) -> Vec<std::result::Result<DVector<f64>, String>> {
    let l = &cfg.lorenz96;
    let mut seed_state = match l.truth_init {
        TruthInit::FixedPoint => DVector::from_element(dim, l.forcing),
        TruthInit::Random => {
            let mut r = rng::stream(cfg.seed, rng::stream_id(dim, 0, 0, Role::Truth));
            rng::normal_vector(&mut r, dim).add_scalar(l.forcing)
        }
    };
    let mut out = Vec::with_capacity(cfg.trials);
    let mut broken: Option<String> = None;
    for _ in 0..cfg.trials {
        if let Some(msg) = &broken {
            out.push(Err(msg.clone()));
            continue;
        }
        match l96_spinup(&seed_state, l.forcing, l.spinup_dt, l.spinup_time) {
            Ok(x) => {
                seed_state = x.clone();
                out.push(Ok(x));
            }
            Err(e) => {
                let msg = format!("truth spin-up failed: {e}");
                broken = Some(msg.clone());
                out.push(Err(msg));
            }
        }
    }
    out
}

fn dc_source(cfg: &ExperimentConfig, dim: usize, model: &DcModel) -> Result<DataSource> {
    let dc = model.config();
    if let Some(path) = &cfg.data_file {
        let data = read_data(cfg, path)?;
        return Ok(DataSource::Fixed {
            truth: None,
            y: DVector::from_vec(data.apparent_resistivity),
            stds: DVector::from_vec(data.std),
        });
    }
    let syn = cfg.dc.synthetic.as_ref().expect("validated");
    let thick: Vec<f64> = std::iter::once(syn.boundaries.first().copied())
        .flatten()
        .chain(syn.boundaries.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let earth = LayeredEarth::new(syn.resistivities.clone(), thick)?;
    let clean = dc
        .half_spacings
        .iter()
        .map(|&s| earth.apparent_resistivity(s, dc.method))
        .collect::<Result<Vec<_>>>()?;
    let clean = DVector::from_vec(clean);
    let stds = clean.map(|v| syn.noise_fraction * v);
    let mut y = clean;
    if syn.add_noise {
        let mut r = rng::stream(cfg.seed, rng::stream_id(dim, 0, 0, Role::Data));
        y += rng::normal_vector(&mut r, y.len()).component_mul(&stds);
    }
    // the blocky truth sampled at each layer's representative depth
    let truth = dc
        .layer_log_centers()
        .iter()
        .map(|c| {
            let z = 10f64.powf(*c);
            let block = syn.boundaries.iter().filter(|b| **b <= z).count();
            syn.resistivities[block]
        })
        .collect::<Vec<_>>();
    Ok(DataSource::Fixed {
        truth: Some(DVector::from_vec(truth)),
        y,
        stds,
    })
}

fn build_scheme(
    cfg: &ExperimentConfig,
    dim: usize,
    model: &Arc<dyn ForwardModel>,
    dc: Option<&DcResistivityConfig>,
) -> Result<Option<LocalizationScheme>> {
    let loc = &cfg.localization;
    if !loc.enabled {
        return Ok(None);
    }
    let metric = match loc.metric {
        Some(m) => m,
        None if cfg.experiment == ExperimentKind::Lorenz96 => MetricKind::Periodic,
        None => MetricKind::Lattice,
    };
    let metric = match metric {
        MetricKind::Lattice => DistanceMetric::Lattice,
        MetricKind::Periodic => DistanceMetric::PeriodicLattice { period: dim },
        MetricKind::Log10Depth => match dc {
            Some(dc) => DistanceMetric::Coordinates(dc.layer_log_centers()),
            None => return Err(Error::config("log10-depth metric applies only to dc-resistivity")),
        },
    };
    let kernel = LocalizationKernel::new(loc.kernel, loc.radius)?;
    let psi = build_psi(&metric, &kernel, dim)?;
    let scheme = match loc.scheme {
        CrossScheme::Centralized => {
            let centers = match model.locality() {
                Some(l) => l.centers,
                None if model.output_dim() == dim => (0..dim).collect(),
                None => {
                    return Err(Error::config(
                        "centralized localization needs a model with known output centers",
                    ))
                }
            };
            LocalizationScheme::centralized(psi, centers)?
        }
        CrossScheme::Linearized => {
            LocalizationScheme::linearized(psi, Arc::new(ModelJacobian::new(model.clone())))?
        }
        CrossScheme::ParamParamOnly => {
            if model.output_dim() != dim {
                return Err(Error::config(
                    "param-param-only localization needs as many outputs as parameters",
                ));
            }
            LocalizationScheme::param_param_only(psi)?
        }
    };
    Ok(Some(scheme))
}

fn setup(cfg: &ExperimentConfig, dim: usize) -> Result<Setup> {
    let base = base_model(cfg, dim)?;
    let mut dc_cfg = None;
    let source = match cfg.experiment {
        ExperimentKind::Lorenz96 => DataSource::Chained(chained_truths(cfg, dim)),
        ExperimentKind::DcResistivity => {
            let model = DcModel::new(dc_config(cfg, dim)?)?;
            let src = dc_source(cfg, dim, &model)?;
            dc_cfg = Some(model.config().clone());
            src
        }
        _ => DataSource::PerTrial,
    };
    let (model, extension): (Arc<dyn ForwardModel>, _) = match &cfg.teki {
        Some(t) => {
            let c0 = PriorCovariance::from_spec(&t.c0, dim, cfg.base_dir.as_deref())?;
            let ext = Arc::new(TikhonovExtension::new(base.clone(), &c0)?);
            (ext.clone(), Some(ext))
        }
        None => (base.clone(), None),
    };
    let scheme = build_scheme(cfg, dim, &model, dc_cfg.as_ref())?;
    Ok(Setup {
        dim,
        base,
        model,
        extension,
        scheme,
        source,
    })
}

fn failed_result(
    cfg: &ExperimentConfig,
    setup: &Setup,
    j: usize,
    trial: usize,
    stream: u64,
    msg: &str,
) -> Vec<TrialResult> {
    [Method::Eki, Method::Leki]
        .into_iter()
        .map(|method| TrialResult {
            experiment: cfg.experiment,
            dim: setup.dim,
            ensemble_size: j,
            method,
            trial,
            seed: cfg.seed,
            stream,
            exit: ExitCondition::Failed,
            final_row: None,
            record: RunRecord {
                rows: Vec::new(),
                exit: ExitCondition::Failed,
                failure: Some(msg.to_string()),
            },
            input_digest: 0,
        })
        .collect()
}

fn run_trial(cfg: &ExperimentConfig, setup: &Setup, j: usize, trial: usize) -> Result<Vec<TrialResult>> {
    let (stream, members) = setup.initial(cfg, j, trial);
    let inputs = match setup.inputs(cfg, trial) {
        Ok(i) => i,
        Err(e @ Error::Config(_)) => return Err(e),
        Err(e) => return Ok(failed_result(cfg, setup, j, trial, stream, &e.to_string())),
    };
    let (y, data_offset) = match &setup.extension {
        Some(ext) => (ext.extend_data(&inputs.y)?, setup.dim),
        None => (inputs.y.clone(), 0),
    };
    let digest = rng::digest(&[
        inputs.truth.as_ref().map(|t| t.as_slice()).unwrap_or(&[]),
        y.as_slice(),
        members.as_slice(),
    ]);
    let mut rc = RunConfig::new(cfg.step_policy.clone(), cfg.stopping);
    rc.inflation = InflationConfig::new(cfg.inflation_sigma)?;
    rc.diagnostics = cfg.diagnostics_level;
    rc.truth = inputs.truth.clone();
    rc.stds = inputs.stds.clone();
    rc.data_offset = data_offset;
    let clamp = clamp_below(cfg.dc.clamp_floor);
    let mut out = Vec::with_capacity(2);
    for method in [Method::Eki, Method::Leki] {
        let scheme = match method {
            Method::Eki => None,
            Method::Leki => setup.scheme.as_ref(),
        };
        let hooks = RunHooks {
            projection: match cfg.experiment {
                ExperimentKind::DcResistivity => Some(&clamp),
                _ => None,
            },
            recorder: None,
        };
        let initial = Ensemble::new(members.clone())?;
        let (state, record) = dynamics::run(initial, setup.model.as_ref(), scheme, &y, &rc, hooks)?;
        out.push(TrialResult {
            experiment: cfg.experiment,
            dim: setup.dim,
            ensemble_size: j,
            method,
            trial,
            seed: cfg.seed,
            stream,
            exit: state.exit,
            final_row: record.last().cloned(),
            record,
            input_digest: digest,
        });
    }
    Ok(out)
}

/// Runs every (dim, J, trial) cell of `cfg` on a pool of `workers` threads.
///
/// Results do not depend on `workers`.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        let setups = cfg.dims.iter().map(|&d| setup(cfg, d)).collect::<Result<Vec<_>>>()?;
        let jobs: Vec<(usize, usize, usize)> = (0..setups.len())
            .flat_map(|s| {
                cfg.ensemble_sizes
                    .iter()
                    .flat_map(move |&j| (0..cfg.trials).map(move |t| (s, j, t)))
            })
            .collect();
        let nested = jobs
            .par_iter()
            .map(|&(s, j, t)| run_trial(cfg, &setups[s], j, t))
            .collect::<Result<Vec<_>>>()?;
        let results: Vec<TrialResult> = nested.into_iter().flatten().collect();
        let reports = aggregate(&results);
        Ok(ExperimentOutput {
            config: cfg.clone(),
            results,
            reports,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::preset;

    fn small(kind: &str, edits: &[(&str, &str)]) -> ExperimentConfig {
        let mut text = preset(kind).unwrap().to_string();
        for (a, b) in edits {
            assert!(text.contains(a), "{a}");
            text = text.replacen(a, b, 1);
        }
        ExperimentConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn loop_contract_one_pair() {
        let cfg = small(
            "linear",
            &[
                ("dims = [5, 50, 100]", "dims = [1]"),
                ("ensemble_sizes = [50]", "ensemble_sizes = [2]"),
                ("trials = 20", "trials = 1"),
                ("max_iterations = 500", "max_iterations = 1"),
            ],
        );
        let out = run_experiment(&cfg, 1).unwrap();
        assert_eq!(out.results.len(), 2);
        assert_eq!(out.results[0].method, Method::Eki);
        assert_eq!(out.results[1].method, Method::Leki);
        assert_eq!(out.results[0].input_digest, out.results[1].input_digest);
        assert_eq!(out.results[0].record.rows.len(), 2);
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = small(
            "nonlinear",
            &[("trials = 20", "trials = 3"), ("dims = [50]", "dims = [12]"), ("max_iterations = 100", "max_iterations = 10")],
        );
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a.results, b.results);
    }

    #[test]
    fn noiseless_linear_misfit_decreases() {
        let mut cfg = small(
            "linear",
            &[("dims = [5, 50, 100]", "dims = [5]"), ("trials = 20", "trials = 2")],
        );
        cfg.noise_std = 0.0;
        let out = run_experiment(&cfg, 1).unwrap();
        for r in out.results.iter().filter(|r| r.method == Method::Leki) {
            let rows = &r.record.rows;
            assert!(rows.last().unwrap().misfit < rows[0].misfit);
        }
    }

    #[test]
    fn l96_truth_chain() {
        let mut cfg = small(
            "lorenz96",
            &[("dims = [40]", "dims = [8]"), ("trials = 20", "trials = 2")],
        );
        cfg.lorenz96.spinup_time = 5.0;
        let t = chained_truths(&cfg, 8);
        let second = l96_spinup(t[0].as_ref().unwrap(), 8.0, cfg.lorenz96.spinup_dt, 5.0).unwrap();
        assert_eq!(t[1].as_ref().unwrap(), &second);
        cfg.lorenz96.truth_init = TruthInit::FixedPoint;
        let t = chained_truths(&cfg, 8);
        for x in t {
            assert!(x.unwrap().iter().all(|v| (v - 8.0).abs() < 1e-12));
        }
    }

    #[test]
    fn dc_rows_must_match_half_spacings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.csv");
        std::fs::write(
            &path,
            "ab_over_2_m,apparent_resistivity_ohm_m,std_ohm_m\n1,10,0.5\n10,12,0.6\n100,9,0.5\n",
        )
        .unwrap();
        let mut cfg = small("dc", &[("trials = 20", "trials = 1")]);
        cfg.data_file = Some(path);
        cfg.dc.half_spacings = Some(vec![1.0, 10.0]);
        assert!(matches!(run_experiment(&cfg, 1), Err(Error::Config(_))));
        cfg.dc.half_spacings = None;
        cfg.stopping.max_iterations = 2;
        let out = run_experiment(&cfg, 1).unwrap();
        assert!(out.results[0].record.rows[0].scaled_misfit.is_some());
    }

    #[test]
    fn unreadable_data_file_is_config_error() {
        let mut cfg = small("dc", &[("trials = 20", "trials = 1")]);
        cfg.data_file = Some("/nonexistent/field.csv".into());
        assert!(matches!(run_experiment(&cfg, 1), Err(Error::Config(_))));
    }
}
