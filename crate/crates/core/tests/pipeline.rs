use beamlab::beamforming::Method;
use beamlab::experiment::{preset, read_csv, run_sweep, verify_aggregates, CorrelationRow, ExperimentConfig, RawRow, SweepOutput};

fn small(name: &str, dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        trials: 10,
        output_dir: dir.join(name),
        ..preset(name).unwrap()
    }
}

#[test]
fn monte_carlo_files_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_values: vec![0.0, 20.0],
        ..small("gain-phase-snr", dir.path())
    };
    let report = run_sweep(&cfg).unwrap();
    let out = &cfg.output_dir;
    assert!(verify_aggregates(&out.join("raw.csv"), &out.join("aggregate.csv")).unwrap());

    let raw: Vec<RawRow> = read_csv(&out.join("raw.csv")).unwrap();
    assert_eq!(raw.len(), 2 * 10 * Method::ALL.len());
    let SweepOutput::MonteCarlo { raw: in_memory, .. } = report.output else {
        panic!("expected Monte Carlo output");
    };
    assert_eq!(raw, in_memory);
    for row in raw.iter().filter(|r| r.succeeded()) {
        assert!(row.sinr_db.unwrap() <= row.optimal_sinr_db.unwrap() + 1e-9);
    }

    let reloaded = ExperimentConfig::from_file(&out.join("config.toml")).unwrap();
    assert_eq!(reloaded, cfg);
}

#[test]
fn correlation_outputs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("correlation", dir.path());
    run_sweep(&cfg).unwrap();
    let rows: Vec<CorrelationRow> = read_csv(&cfg.output_dir.join("correlation_trials.csv")).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.mean_correlation.is_some_and(|c| (-1.0..=1.0).contains(&c))));
    let joint = std::fs::read_to_string(cfg.output_dir.join("correlation_joint.csv")).unwrap();
    assert_eq!(joint.lines().count(), 2 * cfg.elements);
}

#[test]
fn snapshot_sweep_uses_requested_sample_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        sweep_values: vec![20.0, 60.0],
        methods: vec![Method::Smi, Method::Optimal],
        ..small("look-snapshots", dir.path())
    };
    let report = run_sweep(&cfg).unwrap();
    let SweepOutput::MonteCarlo { aggregates, .. } = report.output else {
        panic!("expected Monte Carlo output");
    };
    let smi: Vec<f64> = aggregates
        .iter()
        .filter(|a| a.method == Method::Smi)
        .map(|a| a.mean_sinr_db.unwrap())
        .collect();
    // Sample matrix inversion improves with more snapshots.
    assert!(smi[1] > smi[0]);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let cfg = ExperimentConfig {
        output_dir: file.path().join("nested"),
        ..preset("look-snr").unwrap()
    };
    let err = run_sweep(&cfg).unwrap_err();
    assert_eq!(err.code(), "io");
}
