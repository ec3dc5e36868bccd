use nori::eval::Metrics;
use nori::pipeline::{Pipeline, RunConfig, Stage, StageCache};

#[test]
fn report_covers_default_measures_and_echoes_config() {
    let d = tempfile::tempdir().unwrap();
    let mut c = RunConfig::from_toml(
        r#"
vocab_sizes = [4, 4, 4, 8, 6, 4]
snr_grid = [-14.0, -10.0, -6.0, -2.0, 2.0, 40.0]

[corpus]
utterances = 150

[mapping]
group_size = 5
"#,
    )
    .unwrap();
    c.out_dir = d.path().join("out");
    let p = Pipeline::with_cache(c, StageCache::at(d.path().join("cache"))).unwrap();
    let s = p.run_all().unwrap();
    assert_eq!(s.ran.len(), Stage::ALL.len());

    let table = std::fs::read_to_string(p.report_dir().join("tables/accuracy.csv")).unwrap();
    let measures: Vec<&str> = table.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    for m in ["D", "H", "L", "SNRhat", "STOI", "NORI"] {
        assert!(measures.contains(&m), "{m} missing from {measures:?}");
    }
    for f in ["accuracy_vs_snr.csv", "macroscopic.csv", "srt.csv", "significance.csv"] {
        assert!(p.report_dir().join("tables").join(f).is_file());
    }

    let summary: Metrics = serde_json::from_str(&std::fs::read_to_string(p.report_dir().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.config["corpus"]["utterances"], 150);
    assert_eq!(summary.config["vocab_sizes"][3], 8);
    assert!(summary.config.get("out_dir").is_none());
    assert!(summary.srt.iter().any(|r| r.source == "human" && r.srt_db.is_some()));
    // accuracies are percentages
    assert!(summary.accuracy.iter().all(|r| (0.0..=100.0).contains(&r.accuracy)));
}
