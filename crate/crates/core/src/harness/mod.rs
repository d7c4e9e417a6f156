//! Batch experiments: configs, seeded trial loops, aggregation and output files.

pub mod check;
mod config;
mod experiment;
mod report;
pub mod rng;

pub use config::{
    load_with_preset, merge_toml, preset, CrossScheme, CustomSection, DcSection, ExperimentConfig,
    ExperimentKind, LocalizationConfig, Lorenz96Section, MetricKind, SyntheticEarth, TekiConfig,
    TruthInit, PRESET_NAMES,
};
pub use experiment::{run_experiment, ExperimentOutput, Method, TrialResult};
pub use report::{
    aggregate, aggregate_summaries, format_reports, read_record_csv, read_trials_csv, record_file_name,
    summarize, write_outputs, write_record_csv, write_summary_csv, AggregateReport, Summary,
    TrialSummary, WrittenFiles,
};
