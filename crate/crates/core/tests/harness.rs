use std::path::Path;

use leki_core::dynamics::ExitCondition;
use leki_core::harness::{
    aggregate_summaries, load_with_preset, read_record_csv, read_trials_csv, run_experiment, write_outputs,
    Method,
};

fn overlay(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("overlay.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn written_outputs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = overlay(dir.path(), "dims = [8, 12]\nensemble_sizes = [6]\ntrials = 3\n[stopping]\nmax_iterations = 20\n");
    let cfg = load_with_preset(Some("nonlinear"), Some(&p)).unwrap();
    let out = run_experiment(&cfg, 2).unwrap();
    assert_eq!(out.results.len(), 2 * 3 * 2);
    let files = write_outputs(&out, dir.path(), false).unwrap();

    let trials = read_trials_csv(&files.trials).unwrap();
    assert_eq!(trials.len(), out.results.len());
    assert_eq!(aggregate_summaries(&trials), out.reports);

    for (path, r) in files.records.iter().zip(&out.results) {
        let rows = read_record_csv(path).unwrap();
        assert_eq!(rows, r.record.rows);
        assert_eq!(rows.len(), 21);
    }
    let again = leki_core::harness::ExperimentConfig::load(&files.dir.join("config.toml")).unwrap();
    assert_eq!(run_experiment(&again, 1).unwrap().reports, out.reports);
}

#[test]
fn dc_field_data_is_ingested_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let spacings = [1.0, 3.0, 10.0, 30.0, 100.0, 300.0];
    let mut csv = String::from("ab_over_2_m,apparent_resistivity_ohm_m,std_ohm_m\n");
    for (k, s) in spacings.iter().enumerate() {
        let rho = 20.0 + 5.0 * k as f64;
        csv += &format!("{s},{rho},{}\n", 0.05 * rho);
    }
    std::fs::write(dir.path().join("field.csv"), csv).unwrap();
    let list = spacings.map(|s| s.to_string()).join(", ");
    let p = overlay(
        dir.path(),
        &format!(
            "dims = [8]\ntrials = 2\ndata_file = \"field.csv\"\n[stopping]\nmax_iterations = 30\n\
             target_scaled_misfit = 1.1\n[dc]\nhalf_spacings = [{list}]\n"
        ),
    );
    let cfg = load_with_preset(Some("dc"), Some(&p)).unwrap();
    let out = run_experiment(&cfg, 1).unwrap();
    assert_eq!(out.results.len(), 4);
    for r in &out.results {
        assert_ne!(r.exit, ExitCondition::Failed, "{:?}", r.record.failure);
        assert!(r.final_value().unwrap().is_finite());
    }
    let digests: Vec<u64> = out.results.iter().map(|r| r.input_digest).collect();
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[2], digests[3]);
    assert_ne!(digests[0], digests[2]);
    assert!(out.reports.iter().any(|r| r.method == Method::Leki));
}
