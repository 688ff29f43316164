use super::*;
use crate::dgp::DgpSpec;
use tempfile::tempdir;

fn oracle_config(n: usize, reps: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        dgp: DgpSpec::example1(2, 1.0),
        sample_sizes: vec![n],
        replications: reps,
        learner: LearnerKind::Oracle {
            mu_const: None,
            pi_const: None,
        },
        k_folds: 2,
        split_fraction: None,
        clip: (0.01, 0.99),
        ci_level: 0.95,
        residual_center: ResidualCenter::OutcomeModel,
        master_seed: seed,
        output_dir: PathBuf::from("unused"),
        histogram_bins: 30,
    }
}

#[test]
fn single_replication_gives_degenerate_coverage() {
    let outcome = run_experiment(&oracle_config(100, 1, 1), 0).unwrap();
    let cell = &outcome.report.cells[0];
    assert_eq!(cell.estimates.len(), 1);
    assert!(cell.coverage_pct == 0.0 || cell.coverage_pct == 100.0);
}

#[test]
fn identical_configs_produce_identical_report_bytes() {
    let config = oracle_config(120, 6, 7);
    let a = run_experiment(&config, 0).unwrap();
    let b = run_experiment(&config, 0).unwrap();
    let ja = serde_json::to_string(&a.report).unwrap();
    let jb = serde_json::to_string(&b.report).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn parallelism_level_does_not_change_outputs() {
    let config = oracle_config(150, 10, 9);
    let serial = run_experiment(&config, 1).unwrap();
    let parallel = run_experiment(&config, 4).unwrap();
    assert_eq!(
        serde_json::to_string(&serial.report).unwrap(),
        serde_json::to_string(&parallel.report).unwrap()
    );
}

#[test]
fn replication_streams_nest_under_larger_runs() {
    // The first R replications of a 2R-replication run reproduce the
    // R-replication run exactly, which is what makes doubling replications a
    // pure variance-halving operation.
    let small = run_experiment(&oracle_config(100, 12, 3), 0).unwrap();
    let large = run_experiment(&oracle_config(100, 24, 3), 0).unwrap();
    assert_eq!(
        small.report.cells[0].estimates[..],
        large.report.cells[0].estimates[..12]
    );
    assert_eq!(
        small.report.cells[0].ci_lo[..],
        large.report.cells[0].ci_lo[..12]
    );
}

#[test]
fn stored_coverage_agrees_with_brute_recount() {
    let outcome = run_experiment(&oracle_config(200, 40, 11), 0).unwrap();
    let cell = &outcome.report.cells[0];
    let cis: Vec<(f64, f64)> = cell
        .ci_lo
        .iter()
        .zip(&cell.ci_hi)
        .map(|(&lo, &hi)| (lo, hi))
        .collect();
    let recount = coverage(&cis, cell.true_ate).unwrap();
    assert_eq!(recount, cell.coverage_pct);
}

#[test]
fn report_files_round_trip_and_recompute() {
    let dir = tempdir().unwrap();
    let mut config = oracle_config(150, 25, 13);
    config.sample_sizes = vec![100, 150];
    config.output_dir = dir.path().to_path_buf();
    let outcome = run_experiment(&config, 0).unwrap();
    let files = write_report(&outcome.report, dir.path()).unwrap();
    assert!(files.iter().any(|f| f.ends_with("summary.csv")));
    assert!(files.iter().any(|f| f.ends_with("report.json")));

    // JSON round trip reproduces the in-memory report exactly.
    let loaded = read_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(loaded, outcome.report);

    // summary.csv has one row per cell and parses under RFC 4180.
    let mut reader = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), outcome.report.cells.len());

    // Raw errors file reproduces every aggregate bit for bit.
    for cell in &outcome.report.cells {
        let path = dir.path().join(format!("errors_{}_{}.csv", cell.n, cell.p));
        let mut reader = csv::Reader::from_path(&path).unwrap();
        let mut errors = Vec::new();
        let mut covered = Vec::new();
        for record in reader.records() {
            let record = record.unwrap();
            errors.push(record[2].parse::<f64>().unwrap());
            covered.push(record[6].parse::<bool>().unwrap());
        }
        assert_eq!(errors, cell.errors);
        let coverage_recount =
            100.0 * covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64;
        assert_eq!(coverage_recount, cell.coverage_pct);
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(
            crate::numeric::quantile_sorted(&sorted, 0.5),
            cell.median_error
        );
        let (mean, sd) = crate::numeric::mean_sd(&errors);
        assert_eq!(mean, cell.mean_error);
        assert_eq!(sd, cell.sd_error);
    }
}

#[test]
fn failures_are_recorded_not_dropped() {
    // Tiny per-arm training sets make the parametric learner fail whenever a
    // fold's arm has too few rows; those replications must be listed.
    let config = ExperimentConfig {
        dgp: DgpSpec::example2(4, 1.0),
        sample_sizes: vec![26],
        replications: 40,
        learner: LearnerKind::Glm { intercept: true },
        ..oracle_config(26, 40, 17)
    };
    let outcome = run_experiment(&config, 0).unwrap();
    let cell = &outcome.report.cells[0];
    assert_eq!(
        cell.estimates.len() + cell.failures.len(),
        config.replications,
        "every replication is accounted for"
    );
    assert!(
        !cell.failures.is_empty(),
        "this configuration is chosen to produce some failures"
    );
    assert!(!cell.estimates.is_empty());
    for f in &cell.failures {
        assert!(!f.reason.is_empty());
    }
}

#[test]
fn presets_are_valid_configs() {
    for name in PRESET_NAMES {
        let config = preset(name).unwrap_or_else(|| panic!("missing preset {name}"));
        config.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    assert!(preset("nope").is_none());
}

#[test]
fn config_json_round_trip_with_defaults() {
    let config = oracle_config(100, 5, 2);
    let text = serde_json::to_string(&config).unwrap();
    let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(config, back);

    // Minimal document relies on serde defaults.
    let minimal = serde_json::json!({
        "dgp": config.dgp,
        "sample_sizes": [50],
        "replications": 2,
        "learner": {"kind": "glm"},
        "master_seed": 1,
        "output_dir": "out",
    });
    let parsed: ExperimentConfig = serde_json::from_value(minimal).unwrap();
    assert_eq!(parsed.k_folds, 2);
    assert_eq!(parsed.clip, (0.01, 0.99));
    assert_eq!(parsed.ci_level, 0.95);
    assert_eq!(parsed.histogram_bins, 30);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let bad = serde_json::json!({
        "dgp": DgpSpec::example1(2, 1.0),
        "sample_sizes": [50],
        "replications": 2,
        "learner": {"kind": "glm"},
        "master_seed": 1,
        "output_dir": "out",
        "replicactions": 5,
    });
    let err = serde_json::from_value::<ExperimentConfig>(bad).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("unknown field"), "{msg}");
    assert!(msg.contains("replications"), "lists valid keys: {msg}");
}

#[test]
fn zero_replications_rejected() {
    let mut config = oracle_config(100, 1, 1);
    config.replications = 0;
    assert!(config.validate().is_err());
}
