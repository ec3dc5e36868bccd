use std::path::Path;
use std::process::{Command, Output};

fn nori(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nori"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("NORI_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: &str = r#"
vocab_sizes = [2, 2, 2, 2, 2, 2]
snr_grid = [-6.0, 0.0]

[corpus]
utterances = 8
"#;

#[test]
fn unknown_measure_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.toml"), "[measures]\nlist = [\"D\", \"XYZ\"]\n").unwrap();
    let o = nori(d.path(), &["run-all", "--config", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("measures.list"), "{}", stderr(&o));
    assert!(stderr(&o).contains("XYZ"));
}

#[test]
fn other_config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("typo.toml"), "snr_gird = [0.0]\n").unwrap();
    let o = nori(d.path(), &["corpus-synth", "--config", "typo.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("snr_gird"), "{}", stderr(&o));

    let o = nori(d.path(), &["corpus-synth", "--config", "missing.toml"]);
    assert_eq!(o.status.code(), Some(2));

    let o = nori(d.path(), &["run-all", "--stage", "nope"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));

    std::fs::write(d.path().join("empty.toml"), "snr_grid = []\n").unwrap();
    let o = nori(d.path(), &["corpus-synth", "--config", "empty.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn stages_are_cached_by_content() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.toml"), TINY).unwrap();
    let args = ["corpus-mix", "--config", "tiny.toml", "--out", "out"];
    let first = nori(d.path(), &args);
    assert!(first.status.success(), "{}", stderr(&first));
    assert!(stdout(&first).contains("ran      corpus-synth"));
    assert!(stdout(&first).contains("ran      corpus-mix"));

    let again = nori(d.path(), &args);
    assert!(again.status.success());
    assert!(stdout(&again).contains("cached   corpus-synth"));
    assert!(stdout(&again).contains("cached   corpus-mix"));

    // --stage picks the target regardless of the subcommand
    let only = nori(
        d.path(),
        &["run-all", "--stage", "corpus-synth", "--config", "tiny.toml", "--out", "out"],
    );
    assert!(stdout(&only).contains("cached   corpus-synth"));
    assert!(!stdout(&only).contains("corpus-mix"));

    let reseeded = nori(d.path(), &["corpus-synth", "--config", "tiny.toml", "--out", "out", "--seed", "99"]);
    assert!(stdout(&reseeded).contains("ran      corpus-synth"));
    assert!(d.path().join("out/cache").is_dir());
}

#[test]
fn cache_root_from_environment() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.toml"), TINY).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_nori"))
        .args(["corpus-synth", "--config", "tiny.toml", "--out", "out", "--jobs", "1"])
        .current_dir(d.path())
        .env("NORI_CACHE_DIR", d.path().join("shared"))
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let entries: Vec<_> = std::fs::read_dir(d.path().join("shared")).unwrap().collect();
    assert_eq!(entries.len(), 1);
    assert!(!d.path().join("out/cache").exists());
}

#[test]
fn runtime_failure_names_the_stage() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.toml"), TINY).unwrap();
    // a handful of utterances cannot train five recogniser folds
    let o = nori(d.path(), &["asr-train", "--config", "tiny.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("asr-train"), "{}", stderr(&o));
}

#[test]
fn help_lists_subcommands() {
    let d = tempfile::tempdir().unwrap();
    let o = nori(d.path(), &["--help"]);
    assert!(o.status.success());
    for cmd in [
        "corpus-synth",
        "corpus-mix",
        "asr-train",
        "measures-extract",
        "listeners-sim",
        "map-train",
        "evaluate",
        "report",
        "run-all",
    ] {
        assert!(stdout(&o).contains(cmd), "{cmd}");
    }
}
