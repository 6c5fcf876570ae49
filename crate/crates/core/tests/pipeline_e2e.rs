use std::fs;
use std::path::{Path, PathBuf};

use medcomm_core::pipeline::{run_pipeline, PipelineConfig, Stage};
use medcomm_core::SystemId;
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/e2e")
        .join(name)
}

fn config(out: &Path) -> PipelineConfig {
    let mut c = PipelineConfig::new(fixture("corpus.jsonl"), out);
    c.responses = vec![fixture("responses_atlas.jsonl"), fixture("responses_birch.jsonl")];
    c.vectors = Some(fixture("vectors.jsonl"));
    c.labels = Some(fixture("labels.jsonl"));
    c.ratings = Some(fixture("ratings.csv"));
    c
}

#[derive(Deserialize)]
struct FidelityGolden {
    id: String,
    system: String,
    cosine: f64,
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run_pipeline(&config(dir.path()), Stage::Report).unwrap();
    assert_eq!(outcome.records, 12);
    assert_eq!(
        outcome.systems,
        vec!["Physician Answer", "Atlas_Base", "Atlas_Empathy", "Birch_Rephrase"]
    );
    for name in [
        "alignment.json",
        "corpus.jsonl",
        "scores.csv",
        "sentiment_table.csv",
        "top_emotions.csv",
        "readability_summary.csv",
        "fidelity_summary.csv",
        "likert.csv",
        "heatmap_fkgl.csv",
        "heatmap_gfi.json",
        "heatmap_fidelity.json",
        "heatmap_sentiment.json",
        "heatmap_emotion.json",
        "violin_fkgl.json",
        "violin_gfi.json",
        "violin_fidelity.json",
    ] {
        assert!(outcome.manifest.get(name).is_some(), "missing {name}");
        assert!(dir.path().join(name).exists(), "not written: {name}");
    }
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn fidelity_matches_numpy_oracle() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(dir.path()), Stage::Score).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("scores.csv")).unwrap();
    let mut got = std::collections::BTreeMap::new();
    for row in rdr.records() {
        let row = row.unwrap();
        if !row[4].is_empty() {
            got.insert((row[0].to_string(), row[1].to_string()), row[4].parse::<f64>().unwrap());
        }
    }
    let goldens: Vec<FidelityGolden> = fs::read_to_string(fixture("fidelity_golden.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(goldens.len(), 36);
    assert_eq!(got.len(), 36);
    for g in goldens {
        let v = got[&(g.id.clone(), g.system.clone())];
        assert!((v - g.cosine).abs() <= 1e-9, "{} {}: {v} vs {}", g.id, g.system, g.cosine);
    }
}

#[test]
fn manifests_identical_across_runs_and_threads() {
    let mut digests = Vec::new();
    for threads in [Some(1), Some(4), None] {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path());
        c.threads = threads;
        digests.push(run_pipeline(&c, Stage::Report).unwrap().manifest.digest());
    }
    assert!(digests.windows(2).all(|w| w[0] == w[1]), "{digests:?}");
}

#[test]
fn report_matches_frozen_goldens() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&config(dir.path()), Stage::Report).unwrap();
    let golden_dir = fixture("golden_report");
    let mut checked = 0;
    for entry in fs::read_dir(&golden_dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let expected = fs::read(&path).unwrap();
        let actual = fs::read(dir.path().join(&name)).unwrap();
        assert!(expected == actual, "{name} differs from golden");
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn sample_k_restricts_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.sample_k = Some(4);
    let outcome = run_pipeline(&c, Stage::Report).unwrap();
    assert_eq!(outcome.records, 4);
    let selection: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["chosen"].as_array().unwrap().len(), 4);
    let violin: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("violin_fkgl.json")).unwrap()).unwrap();
    assert_eq!(violin["values"]["Atlas_Base"].as_array().unwrap().len(), 4);
}

#[test]
fn stratified_sampling_takes_quota_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.stratified = true;
    c.sampler.per_class_quota = 2;
    let outcome = run_pipeline(&c, Stage::Sample).unwrap();
    assert_eq!(outcome.records, 10);

    c.sampler.per_class_quota = 3;
    let err = run_pipeline(&c, Stage::Sample).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("Yellow"), "{err}");
}

#[test]
fn missing_store_entry_names_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("vectors.jsonl");
    let text = fs::read_to_string(fixture("vectors.jsonl")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let dropped = lines.remove(5);
    fs::write(&store, lines.join("\n")).unwrap();
    let hash = serde_json::from_str::<serde_json::Value>(dropped).unwrap()["sha256"]
        .as_str()
        .unwrap()
        .to_string();

    let mut c = config(&dir.path().join("out"));
    c.vectors = Some(store);
    let err = run_pipeline(&c, Stage::Report).unwrap_err();
    assert_eq!(err.exit_code(), 4);
    assert!(err.to_string().contains(&hash), "{err}");
}

#[test]
fn partial_coverage_needs_opt_in() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("partial.jsonl");
    let text = fs::read_to_string(fixture("responses_birch.jsonl")).unwrap();
    fs::write(&partial, text.lines().skip(2).collect::<Vec<_>>().join("\n")).unwrap();
    let mut c = config(&dir.path().join("out"));
    c.responses = vec![fixture("responses_atlas.jsonl"), partial];
    let err = run_pipeline(&c, Stage::Report).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("Birch_Rephrase"), "{err}");

    c.allow_partial = true;
    assert_eq!(run_pipeline(&c, Stage::Report).unwrap().records, 10);
}

#[test]
fn system_filter_limits_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.systems = vec!["Atlas_Base".parse::<SystemId>().unwrap()];
    c.ratings = None;
    let outcome = run_pipeline(&c, Stage::Report).unwrap();
    assert_eq!(outcome.systems, vec!["Physician Answer", "Atlas_Base"]);
    // one model system leaves nothing to compare for fidelity
    assert!(outcome.manifest.get("heatmap_fidelity.json").is_none());
    assert!(outcome.manifest.get("heatmap_fkgl.json").is_some());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.vectors = None;
    assert_eq!(run_pipeline(&c, Stage::Report).unwrap_err().exit_code(), 2);

    let mut c = config(dir.path());
    c.threads = Some(0);
    assert_eq!(run_pipeline(&c, Stage::Report).unwrap_err().exit_code(), 2);

    let c = config(dir.path());
    assert_eq!(run_pipeline(&c, Stage::Sample).unwrap_err().exit_code(), 2);
}

#[test]
fn ingest_stage_needs_no_providers() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path());
    c.vectors = None;
    c.labels = None;
    let outcome = run_pipeline(&c, Stage::Ingest).unwrap();
    let names: Vec<&str> = outcome.manifest.files.iter().map(|f| f.path.as_str()).collect();
    assert_eq!(names, vec!["alignment.json", "corpus.jsonl"]);
}
