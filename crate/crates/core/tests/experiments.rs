//! End-to-end runs of the experiment grid on small synthetic suites.

use hfd_core::experiment::*;
use hfd_core::modality::Modalities;
use hfd_core::segmentation::MstcnVariant;
use hfd_core::synthetic::{generate_suite, write_suite, SuiteConfig, PSEUDO_BACKBONE_VERSION};

fn suite(n: usize, seed: u64) -> ExperimentData {
    let (trials, spec) = generate_suite(&SuiteConfig::balanced(n, seed)).unwrap();
    ExperimentData::from_sequences(trials.into_iter().map(|t| t.features).collect(), &spec).unwrap()
}

fn tiny(mut c: ExperimentConfig) -> ExperimentConfig {
    c.hyper.max_epochs = 2;
    c.hyper.layers = 3;
    c.hyper.channels = 8;
    c.hyper.hidden = 8;
    c.hyper.signal_channels = 4;
    c.hyper.resample_len = 20;
    c.hyper.clip_len = 16;
    c
}

#[test]
fn mstcn_a_smoke_emits_five_seed_stats() {
    let data = suite(2, 1);
    let config = tiny(ExperimentConfig::new(ModelId::Mstcn(MstcnVariant::A), Modalities::ALL, LossHeads::CLS_SEG_H));
    let row = run_experiment(&config, &data).unwrap();
    assert!(row.complete);
    assert_eq!(row.report.n_runs, 5);
    assert!(row.report.outcome_accuracy.unwrap().std.is_some());
    assert_eq!(row.report.f1_at.len(), 3);
    assert_eq!(row.curves.len(), 5);
}

#[test]
fn reruns_reproduce_metrics_exactly() {
    let data = suite(2, 2);
    for model in ["mstcn-b", "i3d-d", "correlation"] {
        let heads = if model == "mstcn-b" { LossHeads::ALL } else { LossHeads::CLS };
        let mut config = tiny(ExperimentConfig::new(model.parse().unwrap(), Modalities::ALL, heads));
        config.seeds = vec![7, 8];
        let a = run_experiment(&config, &data).unwrap();
        let b = run_experiment(&config, &data).unwrap();
        assert_eq!(a.report, b.report, "{model}");
        assert_eq!(a.runs, b.runs, "{model}");
        assert_eq!(a.curves, b.curves, "{model}");
    }
}

#[test]
fn table_three_runs_every_row() {
    let data = suite(1, 3);
    let mut base = tiny(ExperimentConfig::new(ModelId::Correlation, Modalities::VIDEO, LossHeads::CLS));
    base.hyper.max_epochs = 1;
    let dir = tempfile::tempdir().unwrap();
    let store = ResultStore::new(dir.path()).unwrap();
    let out = reproduce_table(3, &data, &base, Some(&store)).unwrap();
    assert_eq!(out.rows.len(), 23);
    for row in &out.rows {
        let stat = row.cells[0].stat.expect("accuracy present");
        assert!(stat.std.is_some(), "row {} lacks 5-seed spread", row.id);
    }
    // rows 7 and 12 share one stored run
    assert_eq!(store.load_all().unwrap().len(), 22);
    let csv = out.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 24);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,i3d-a,x,,,x,,,"));

    std::fs::write(dir.path().join("table_3.json"), serde_json::to_string(&out).unwrap()).unwrap();
    let report_dir = dir.path().join("report");
    let files = render_report(dir.path(), &report_dir).unwrap();
    assert!(files.iter().any(|p| p.ends_with("table_3.svg")));
    assert!(files.iter().any(|p| p.file_name().unwrap().to_str().unwrap().starts_with("curves_")));
}

#[test]
fn generalization_tables_on_written_suite() {
    let dir = tempfile::tempdir().unwrap();
    let layout = write_suite(&SuiteConfig::balanced(3, 4), dir.path()).unwrap();
    let data = ExperimentData::load(&layout.cache_root, PSEUDO_BACKBONE_VERSION, &layout.split_path).unwrap();
    let mut base = tiny(ExperimentConfig::new(ModelId::Correlation, Modalities::VIDEO, LossHeads::CLS));
    base.seeds = vec![0, 1];
    base.hyper.max_epochs = 1;
    for table in [5, 6] {
        let out = reproduce_table(table, &data, &base, None).unwrap();
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows.iter().flat_map(|r| &r.cells).all(|c| c.stat.is_some()));
    }
    let out = reproduce_table(4, &data, &base, None).unwrap();
    assert_eq!(out.rows[0].cells.len(), 4);
    // correlation has no training randomness
    assert_eq!(out.rows[0].cells[0].stat.unwrap().std, Some(0.0));
}
