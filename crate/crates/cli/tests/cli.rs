use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
model = "mstcn-b"
modalities = "v,ft,g"
heads = "cls,seg_h,seg_r"
seeds = [0, 1]

[hyper]
max_epochs = 2
patience = 2
layers = 3
channels = 8
hidden = 16
clip_len = 16
signal_channels = 8
"#;

fn hfd(args: &[&str], data_root: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_hfd"))
        .args(args)
        .env("HFD_DATA_ROOT", data_root)
        .env_remove("HFD_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("hfd runs");
    assert!(
        out.status.success(),
        "hfd {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn synthetic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let work = dir.path();
    let p = |name: &str| work.join(name).to_string_lossy().into_owned();

    let out = hfd(&["synth", "--total", "24", "--seed", "5"], &data);
    assert!(stdout(&out).contains("wrote 24 trials"));

    let out = hfd(&["ingest", "--summary", &p("summary.csv")], &data);
    let text = stdout(&out);
    assert!(text.contains("24 trials loaded, 24 valid"), "{text}");
    assert!(text.contains("split: "), "{text}");
    let summary = fs::read_to_string(work.join("summary.csv")).unwrap();
    let total: usize = summary.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 24);

    hfd(&["fit-baseline", "--out", &p("table.json")], &data);
    hfd(&["eval-baseline", "--table", &p("table.json"), "--out", &p("baseline.csv")], &data);
    let csv = fs::read_to_string(work.join("baseline.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "f1_10,f1_25,f1_50,frame_accuracy");
    for v in lines.next().unwrap().split(',') {
        let (_, frac) = v.split_once('.').expect("one decimal place");
        assert_eq!(frac.len(), 1, "{v}");
    }

    fs::write(work.join("tiny.toml"), TINY).unwrap();
    let out = hfd(&["train", "--config", &p("tiny.toml"), "--seed", "1", "--out", &p("model.json")], &data);
    assert!(stdout(&out).contains("outcome_accuracy"));
    let out = hfd(&["score", "--checkpoint", &p("model.json"), "--set", "all", "--out", &p("preds")], &data);
    assert!(stdout(&out).contains("scored 24 trials"));
    assert!(work.join("preds/metrics.json").is_file());
    let pred: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(
            fs::read_dir(work.join("preds"))
                .unwrap()
                .find_map(|e| {
                    let path = e.unwrap().path();
                    (path.file_name().unwrap() != "metrics.json").then_some(path)
                })
                .unwrap(),
        )
        .unwrap(),
    )
    .unwrap();
    assert!(pred["outcome"].is_string() && pred["human_track"].is_array() && pred["robot_track"].is_array());

    let results = p("results");
    hfd(&["run", "--config", &p("tiny.toml"), "--results", &results], &data);
    let out =
        hfd(&["reproduce", "--table", "4", "--base", &p("tiny.toml"), "--seeds", "0,1", "--results", &results], &data);
    let table = fs::read_to_string(work.join("results/table_4.csv")).unwrap();
    assert_eq!(table.lines().count(), 8);
    assert!(stdout(&out).starts_with("id,"));
    assert!(work.join("results/table_4.json").is_file());

    hfd(&["report", "--results", &results, "--out", &p("report")], &data);
    assert!(work.join("report/results.csv").is_file());
    assert!(work.join("report/table_4.svg").is_file());
}

#[test]
fn feature_extraction_fills_an_empty_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    hfd(&["synth", "--total", "2", "--seed", "9"], &data);
    let cache = dir.path().join("fresh_cache");
    let cache_s = cache.to_string_lossy().into_owned();
    let out = hfd(&["extract-features", "--cache-dir", &cache_s], &data);
    assert!(stdout(&out).contains("features for 2 trials"));
    let versions: Vec<_> = fs::read_dir(&cache).unwrap().collect();
    assert_eq!(versions.len(), 1);
    // A second pass finds everything cached.
    let out = hfd(&["extract-features", "--cache-dir", &cache_s], &data);
    assert!(!stdout(&out).contains("features for"));
}

#[test]
fn missing_data_root_is_an_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_hfd")).args(["ingest"]).env_remove("HFD_DATA_ROOT").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("data-root"));
}
