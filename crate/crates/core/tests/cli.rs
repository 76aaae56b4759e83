use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use asc_lens_core::dataset::{generate_dataset, SentenceSet, SlotVocabulary};
use asc_lens_core::fixtures::{synth_archive, FixtureSpec};

fn asc_lens(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asc-lens"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_owned).collect()
}

fn write_fixture(dir: &Path, n_layers: usize) {
    synth_archive(&FixtureSpec::new(12, 6, n_layers, 2, 1))
        .unwrap()
        .write(&dir.join("archive"))
        .unwrap();
}

#[test]
fn gdv_writes_one_row_per_layer_and_role() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3);
    let out = asc_lens(
        &[
            "gdv",
            "--archive",
            "archive",
            "--roles",
            "CLS,DET,SUBJ,VERB,OBJ",
            "--layers",
            "all",
            "--out",
            "out",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = lines(&dir.path().join("out/gdv.csv"));
    assert_eq!(rows[0], "layer,role,gdv");
    assert_eq!(rows.len() - 1, 5 * (3 + 1));
}

#[test]
fn dataset_generate_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let out = asc_lens(
        &[
            "dataset",
            "generate",
            "--per-class",
            "20",
            "--seed",
            "3",
            "--out",
            "set.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let set = SentenceSet::read(&dir.path().join("set.json")).unwrap();
    assert_eq!(set, generate_dataset(&SlotVocabulary::default(), 20, 3).unwrap());

    let out = asc_lens(&["dataset", "validate", "--in", "set.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("PASS"));
}

#[test]
fn unbalanced_dataset_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut set = generate_dataset(&SlotVocabulary::default(), 10, 0).unwrap();
    set.sentences.pop();
    set.write(&dir.path().join("bad.json")).unwrap();
    let out = asc_lens(&["dataset", "validate", "--in", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = asc_lens(&["dataset", "validate", "--in", "bad.json", "--json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["balanced"], false);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        asc_lens(&["gdv", "--archive", "a", "--nope"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(
        asc_lens(&["project", "--method", "pca"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(asc_lens(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn missing_archive_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = asc_lens(&["gdv", "--archive", "nowhere", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.json"));
}

#[test]
fn synth_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("fixture.json"),
        r#"{"n_per_class": 5, "hidden_size": 4, "n_layers": 2, "n_heads": 2, "seed": 8,
            "separation": {"default": 1.0},
            "attention": {"mode": "softmax", "role_bias": {"OBJ": 2.0}}}"#,
    )
    .unwrap();
    let out = asc_lens(&["synth", "--config", "fixture.json", "--out", "arch"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let archive = asc_lens_core::read_archive(&dir.path().join("arch")).unwrap();
    assert_eq!(archive.sentences().len(), 20);
    assert_eq!(archive.n_layers(), 2);
}

#[test]
fn project_probe_attention_report() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 2);
    let run = |args: &[&str]| {
        let out = asc_lens(args, dir.path());
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "project",
        "--method",
        "mds",
        "--archive",
        "archive",
        "--role",
        "OBJ",
        "--layers",
        "1,2",
        "--out",
        "out",
    ]);
    run(&[
        "project",
        "--method",
        "tsne",
        "--archive",
        "archive",
        "--role",
        "VERB",
        "--layers",
        "0",
        "--out",
        "out",
        "--perplexity",
        "5",
        "--iters",
        "300",
        "--seed",
        "2",
    ]);
    run(&[
        "probe",
        "--archive",
        "archive",
        "--roles",
        "CLS",
        "--layers",
        "2",
        "--folds",
        "3",
        "--out",
        "out",
    ]);
    run(&[
        "attention",
        "--archive",
        "archive",
        "--include-self",
        "--out",
        "out",
        "--threads",
        "2",
    ]);
    run(&["report", "--in", "out", "--out", "figs"]);

    let out = dir.path().join("out");
    assert_eq!(lines(&out.join("mds_OBJ_L1.csv")).len(), 49);
    assert_eq!(lines(&out.join("tsne_VERB_L0.csv"))[0], "sentence_id,x,y,label");
    assert!(lines(&out.join("kl_history.csv")).len() > 2);
    assert_eq!(lines(&out.join("probe_accuracy.csv")).len(), 1 + 3);
    assert_eq!(lines(&out.join("probe_confusion.csv")).len(), 1 + 16);
    assert_eq!(lines(&out.join("attention_stats.csv")).len(), 1 + 2 * 2 * 6);
    for svg in [
        "mds_OBJ_L1.svg",
        "mds_OBJ_L2.svg",
        "tsne_VERB_L0.svg",
        "probe_accuracy.svg",
        "fdr_SEP.svg",
    ] {
        let text = fs::read_to_string(dir.path().join("figs").join(svg)).unwrap();
        assert!(text.starts_with("<?xml"), "{svg}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 2);
    for (threads, out) in [("1", "one"), ("4", "four")] {
        let status = asc_lens(
            &[
                "--threads",
                threads,
                "probe",
                "--archive",
                "archive",
                "--out",
                out,
                "--folds",
                "3",
            ],
            dir.path(),
        )
        .status;
        assert!(status.success());
    }
    for f in ["probe_accuracy.csv", "probe_confusion.csv"] {
        assert_eq!(
            fs::read(dir.path().join("one").join(f)).unwrap(),
            fs::read(dir.path().join("four").join(f)).unwrap()
        );
    }
}

#[test]
fn all_records_run_json_and_replays_from_it() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 1);
    fs::write(
        dir.path().join("run.toml"),
        "archive = \"archive\"\nout = \"first\"\nmethods = [\"mds\"]\nfolds = 3\nseed = 4\n",
    )
    .unwrap();
    let out = asc_lens(&["all", "--config", "run.toml", "--roles", "CLS,OBJ"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let record: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("first/run.json")).unwrap()).unwrap();
    assert_eq!(record["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(record["config"]["roles"], serde_json::json!(["CLS", "OBJ"]));
    assert_eq!(record["seeds"]["probe"], 4);
    assert!(record["started_unix"].as_u64().is_some());

    let out = asc_lens(&["all", "--config", "first/run.json", "--out", "second"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in [
        "gdv.csv",
        "probe_confusion.csv",
        "attention_stats.csv",
        "mds_OBJ_L1.csv",
        "gdv.svg",
    ] {
        assert_eq!(
            fs::read(dir.path().join("first").join(f)).unwrap(),
            fs::read(dir.path().join("second").join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(!dir.path().join("second/tsne_CLS_L0.csv").exists());
}
