use std::fs;

use hsi_ae::harness::{read_records, run_experiment, write_records};
use hsi_ae::lmm::{generate_endmembers, load_bundle, sample_abundances, save_bundle, synthesize};
use hsi_ae::report::{emit_report, ReportOptions, HISTOGRAM_FILE, SUMMARY_FILE, TRIALS_FILE};
use hsi_ae::stats::{analyze, analyze_records, AnalysisOptions, MATRIX_FILE, REPORT_FILE};
use hsi_ae::{Error, ExperimentConfig, GroupedScores, InitScheme, MetricSelector, NoiseSpec};

fn small_experiment() -> (ExperimentConfig, Vec<hsi_ae::RunRecord>) {
    let w = generate_endmembers(12, 3, 2, 40).unwrap();
    let a = sample_abundances(3, 60, &[1.0; 3], 0.1, 41).unwrap();
    let data = synthesize(&w, &a, NoiseSpec::new(0.01).unwrap(), 42).unwrap();
    let mut cfg = ExperimentConfig::table1(4, InitScheme::HeNormal, 3, 3).unwrap();
    cfg.dataset = "synthetic".into();
    cfg.endmembers = Some(3);
    cfg.batch_size = 10;
    cfg.epochs = Some(4);
    cfg.master_seed = 8;
    let records = run_experiment(&cfg, &data).unwrap();
    (cfg, records)
}

#[test]
fn bundle_round_trip_keeps_f32_precision() {
    let dir = tempfile::tempdir().unwrap();
    let w = generate_endmembers(9, 2, 1, 3).unwrap();
    let a = sample_abundances(2, 12, &[1.0; 2], 0.2, 4).unwrap();
    let bundle = synthesize(&w, &a, NoiseSpec::none(), 5)
        .unwrap()
        .with_spatial(4, 3)
        .unwrap();
    let path = dir.path().join("scene.toml");
    save_bundle(&bundle, &path).unwrap();
    let back = load_bundle(&path).unwrap();
    assert_eq!(back, bundle.to_f32_precision());
    assert_eq!(back.width(), Some(4));
    assert_eq!(back.ground_truth().unwrap().endmember_count(), 2);
}

#[test]
fn corrupted_payload_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let w = generate_endmembers(9, 2, 1, 3).unwrap();
    let a = sample_abundances(2, 12, &[1.0; 2], 0.2, 4).unwrap();
    let bundle = synthesize(&w, &a, NoiseSpec::none(), 5).unwrap();
    let path = dir.path().join("scene.toml");
    save_bundle(&bundle, &path).unwrap();
    let payload = dir.path().join("scene.pixels.f32");
    let mut bytes = fs::read(&payload).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&payload, bytes).unwrap();
    assert!(load_bundle(&path).is_err());
}

#[test]
fn records_round_trip_through_jsonl() {
    let (cfg, records) = small_experiment();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.jsonl");
    write_records(&path, &records, Some(&cfg)).unwrap();
    let (meta, back) = read_records(&path).unwrap();
    assert_eq!(meta.unwrap().config.as_ref(), Some(&cfg));
    assert_eq!(back.len(), records.len());
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(
            serde_json::to_string(a).unwrap(),
            serde_json::to_string(b).unwrap()
        );
    }
}

#[test]
fn hand_example_rejects_and_runs_posthoc() {
    let g = GroupedScores::new(vec![
        vec![1.0, 2.0, 3.0],
        vec![4.0, 5.0, 6.0],
        vec![7.0, 8.0, 9.0],
    ])
    .unwrap();
    let report = analyze(&g, AnalysisOptions::default()).unwrap();
    assert!((report.kruskal.h - 7.2).abs() < 1e-9);
    assert!(report.rejected);
    let p = report.posthoc_matrix().unwrap();
    assert_eq!(p.dim(), (3, 3));
    assert!(p[[0, 2]] < p[[0, 1]]);
    assert!((0.0..=1.0).contains(&report.ph_ratio));
}

#[test]
fn identical_groups_do_not_reject() {
    let g = GroupedScores::new(vec![vec![1.0, 2.0, 3.0]; 3]).unwrap();
    let report = analyze(&g, AnalysisOptions::default()).unwrap();
    assert!(!report.rejected);
    assert!(report.posthoc.is_none());
    assert_eq!(report.ph_ratio, 0.0);
}

#[test]
fn grouped_scores_reject_bad_input() {
    assert!(matches!(
        GroupedScores::new(vec![vec![1.0, 2.0]]),
        Err(Error::InvalidInput(_))
    ));
    assert!(GroupedScores::new(vec![vec![1.0], vec![f64::NAN]]).is_err());
}

#[test]
fn analysis_and_report_files_are_written() {
    let (cfg, records) = small_experiment();
    let dir = tempfile::tempdir().unwrap();
    let stats = analyze_records(
        &records,
        MetricSelector::ReconRmse,
        AnalysisOptions::default(),
    )
    .unwrap();
    stats.write_files(dir.path()).unwrap();
    assert!(dir.path().join(REPORT_FILE).exists());
    assert_eq!(dir.path().join(MATRIX_FILE).exists(), stats.rejected);

    let opts = ReportOptions::for_loss(cfg.loss, MetricSelector::ReconRmse);
    emit_report(&records, Some(&stats), dir.path(), &opts).unwrap();
    let trials = fs::read_to_string(dir.path().join(TRIALS_FILE)).unwrap();
    let mut lines = trials.lines();
    assert_eq!(lines.next(), Some("threshold,p_hat,n_req,status"));
    assert_eq!(lines.count(), opts.thresholds.len());
    let hist = fs::read_to_string(dir.path().join(HISTOGRAM_FILE)).unwrap();
    assert!(hist.lines().count() >= 2);
    assert!(dir.path().join(SUMMARY_FILE).exists());
}
