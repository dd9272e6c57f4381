//! End-to-end tests that drive the compiled binary: the full synth, train,
//! rank, eval pipeline, reproducibility of output files, the stable exit
//! codes, and the no-partial-output guarantee.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tagrank::eval::EvalReport;
use tagrank::personalize::load_ranked_csv;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout.clone()).expect("stdout is UTF-8")
}

fn exit_of(output: &Output) -> i32 {
    output.status.code().expect("no signal")
}

/// Shared fixture: a synthetic corpus plus a trained model in one tempdir.
fn synth_and_train(dir: &Path) {
    let synth = run_in(
        dir,
        &[
            "synth",
            "--topics", "3",
            "--users", "6",
            "--images", "300",
            "--tags-per-image", "2..4",
            "--vocab-tags", "18",
            "--separation", "0.8",
            "--seed", "21",
            "--out-corpus", "corpus.jsonl",
            "--out-truth", "truth.bin",
        ],
    );
    stdout_of(&synth);
    let train = run_in(
        dir,
        &[
            "train",
            "--corpus", "corpus.jsonl",
            "--topics", "3",
            "--seed", "9",
            "--out", "model.bin",
        ],
    );
    stdout_of(&train);
}

#[test]
fn pipeline_runs_end_to_end_and_round_trips_its_csv() {
    let dir = tempfile::tempdir().expect("tempdir");
    synth_and_train(dir.path());

    let ingest = run_in(dir.path(), &["ingest-check", "--corpus", "corpus.jsonl"]);
    let ingest_out = stdout_of(&ingest);
    assert!(ingest_out.contains("corpus: 300 images, 6 users, 18 tags, 0 groups"));

    let topics = run_in(dir.path(), &["topics", "--model", "model.bin", "--top", "4"]);
    let topics_out = stdout_of(&topics);
    let mut lines = topics_out.lines();
    assert_eq!(lines.next(), Some("topic,rank,tag,probability"));
    // 3 topics times 4 tags, every probability parseable and positive.
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    for row in rows {
        let prob: f64 = row.rsplit(',').next().unwrap().parse().expect("probability");
        assert!(prob > 0.0 && prob <= 1.0);
    }

    let rank = run_in(
        dir.path(),
        &[
            "rank",
            "--model", "model.bin",
            "--corpus", "corpus.jsonl",
            "--user", "user000",
            "--top-n", "10",
            "--out", "ranked.csv",
        ],
    );
    stdout_of(&rank);
    let entries = load_ranked_csv(&dir.path().join("ranked.csv")).expect("own CSV loads");
    assert_eq!(entries.len(), 10);
    assert!(entries.windows(2).all(|w| w[0].score >= w[1].score));

    // Label the head of the ranking so every metric is defined, then check
    // the eval CSV parses back through the library loader.
    let mut labels = String::from("image_id,label\n");
    for (i, entry) in entries.iter().enumerate() {
        let label = if i % 2 == 0 { "relevant" } else { "not_relevant" };
        labels.push_str(&format!("{},{label}\n", entry.image_id));
    }
    fs::write(dir.path().join("labels.csv"), labels).expect("write labels");
    let eval = run_in(
        dir.path(),
        &["eval", "--ranked", "ranked.csv", "--labels", "labels.csv", "--csv"],
    );
    let report = EvalReport::from_csv(&stdout_of(&eval)).expect("own CSV parses");
    assert_eq!(report.relevant, 5);
    assert_eq!(report.not_relevant, 5);
    assert!((report.precision - 0.5).abs() < 1e-12);
}

#[test]
fn repeated_runs_write_identical_files() {
    let dir = tempfile::tempdir().expect("tempdir");
    synth_and_train(dir.path());
    for args in [
        vec!["synth", "--images", "120", "--seed", "7", "--out-corpus", "a.jsonl", "--out-truth", "a.bin"],
        vec!["synth", "--images", "120", "--seed", "7", "--out-corpus", "b.jsonl", "--out-truth", "b.bin"],
    ] {
        stdout_of(&run_in(dir.path(), &args));
    }
    assert_eq!(
        fs::read(dir.path().join("a.jsonl")).unwrap(),
        fs::read(dir.path().join("b.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(dir.path().join("a.bin")).unwrap(),
        fs::read(dir.path().join("b.bin")).unwrap()
    );

    let retrain = run_in(
        dir.path(),
        &[
            "train",
            "--corpus", "corpus.jsonl",
            "--topics", "3",
            "--seed", "9",
            "--threads", "2",
            "--out", "model2.bin",
        ],
    );
    stdout_of(&retrain);
    let first = fs::read(dir.path().join("model.bin")).unwrap();
    let second = fs::read(dir.path().join("model2.bin")).unwrap();
    // The stored thread count differs; the learned parameters must not.
    let first_model = tagrank::model_file::load_model(&dir.path().join("model.bin")).unwrap();
    let second_model = tagrank::model_file::load_model(&dir.path().join("model2.bin")).unwrap();
    assert_eq!(first_model.tag_emissions(), second_model.tag_emissions());
    assert_eq!(first_model.user_mixtures(), second_model.user_mixtures());
    assert_eq!(first.len(), second.len());
}

#[test]
fn exit_codes_separate_usage_config_and_user_errors() {
    let dir = tempfile::tempdir().expect("tempdir");
    synth_and_train(dir.path());
    fs::write(dir.path().join("broken.jsonl"), "{\"id\": \"img\", nope\n").unwrap();

    // Usage errors: unknown subcommand, unknown flag, missing eval input.
    assert_eq!(exit_of(&run_in(dir.path(), &["frobnicate"])), 2);
    assert_eq!(exit_of(&run_in(dir.path(), &["train", "--bogus-flag"])), 2);
    fs::write(dir.path().join("labels.csv"), "image_id,label\nimg000001,relevant\n").unwrap();
    assert_eq!(exit_of(&run_in(dir.path(), &["eval", "--labels", "labels.csv"])), 2);

    // Parse and I/O errors on input files.
    assert_eq!(
        exit_of(&run_in(dir.path(), &["ingest-check", "--corpus", "broken.jsonl"])),
        2
    );
    assert_eq!(
        exit_of(&run_in(dir.path(), &["ingest-check", "--corpus", "missing.jsonl"])),
        2
    );

    // Invalid configuration.
    assert_eq!(
        exit_of(&run_in(
            dir.path(),
            &["train", "--corpus", "corpus.jsonl", "--topics", "0", "--out", "x.bin"],
        )),
        3
    );
    assert_eq!(
        exit_of(&run_in(
            dir.path(),
            &[
                "rank",
                "--model", "model.bin",
                "--corpus", "corpus.jsonl",
                "--user", "user000",
                "--profile-mode", "related",
            ],
        )),
        3
    );

    // Unknown or cold users.
    assert_eq!(
        exit_of(&run_in(
            dir.path(),
            &["rank", "--model", "model.bin", "--corpus", "corpus.jsonl", "--user", "nobody"],
        )),
        4
    );
    let cold = run_in(
        dir.path(),
        &[
            "rank",
            "--model", "model.bin",
            "--corpus", "corpus.jsonl",
            "--user", "user000",
            "--profile-mode", "related",
            "--query-tag", "neverused",
        ],
    );
    assert_eq!(exit_of(&cold), 4);
    assert!(String::from_utf8_lossy(&cold.stderr).contains("cold user"));
}

#[test]
fn failed_runs_leave_no_output_file() {
    let dir = tempfile::tempdir().expect("tempdir");
    synth_and_train(dir.path());

    let bad_train = run_in(
        dir.path(),
        &["train", "--corpus", "corpus.jsonl", "--topics", "0", "--out", "never.bin"],
    );
    assert_eq!(exit_of(&bad_train), 3);
    assert!(!dir.path().join("never.bin").exists());

    let bad_rank = run_in(
        dir.path(),
        &[
            "rank",
            "--model", "model.bin",
            "--corpus", "corpus.jsonl",
            "--user", "nobody",
            "--out", "never.csv",
        ],
    );
    assert_eq!(exit_of(&bad_rank), 4);
    assert!(!dir.path().join("never.csv").exists());
}

#[test]
fn quiet_silences_progress_but_never_results() {
    let dir = tempfile::tempdir().expect("tempdir");
    synth_and_train(dir.path());
    let train = run_in(
        dir.path(),
        &[
            "--quiet",
            "train",
            "--corpus", "corpus.jsonl",
            "--topics", "2",
            "--out", "quiet.bin",
        ],
    );
    assert!(train.stderr.is_empty(), "progress leaked: {}", String::from_utf8_lossy(&train.stderr));
    assert!(stdout_of(&train).starts_with("model quiet.bin:"));

    let rank = run_in(
        dir.path(),
        &[
            "--quiet",
            "rank",
            "--model", "model.bin",
            "--corpus", "corpus.jsonl",
            "--user", "user000",
            "--top-n", "3",
        ],
    );
    assert!(rank.stderr.is_empty());
    assert_eq!(stdout_of(&rank).lines().count(), 4);
}

#[test]
fn filter_contacts_matches_the_contact_level() {
    let dir = tempfile::tempdir().expect("tempdir");
    fs::write(dir.path().join("contacts.csv"), "user,contact\nann,bob\nbob,cid\n").unwrap();
    fs::write(
        dir.path().join("mini.jsonl"),
        concat!(
            "{\"id\":\"i1\",\"owner\":\"bob\",\"tags\":[\"x\"],\"groups\":[]}\n",
            "{\"id\":\"i2\",\"owner\":\"cid\",\"tags\":[\"x\"],\"groups\":[]}\n",
            "{\"id\":\"i3\",\"owner\":\"ann\",\"tags\":[\"x\"],\"groups\":[]}\n",
        ),
    )
    .unwrap();
    let base = [
        "filter-contacts",
        "--contacts", "contacts.csv",
        "--corpus", "mini.jsonl",
        "--user", "ann",
    ];
    let level1 = run_in(dir.path(), &[&base[..], &["--level", "1"]].concat());
    assert_eq!(stdout_of(&level1), "i1\n");
    let level2 = run_in(dir.path(), &[&base[..], &["--level", "2"]].concat());
    assert_eq!(stdout_of(&level2), "i1\ni2\n");
    let with_self = run_in(
        dir.path(),
        &[&base[..], &["--level", "2", "--include-self"]].concat(),
    );
    assert_eq!(stdout_of(&with_self), "i1\ni2\ni3\n");
    assert_eq!(exit_of(&run_in(dir.path(), &[&base[..], &["--level", "3"]].concat())), 2);
}

#[test]
fn eval_reports_the_published_precision_for_the_large_fixture() {
    let dir = tempfile::tempdir().expect("tempdir");
    // 500 retrieved results: 412 relevant, 83 not relevant, 5 undecided.
    let mut results = String::new();
    let mut labels = String::from("image_id,label\n");
    for i in 0..412 {
        results.push_str(&format!("rel{i:04}\n"));
        labels.push_str(&format!("rel{i:04},relevant\n"));
    }
    for i in 0..83 {
        results.push_str(&format!("bad{i:04}\n"));
        labels.push_str(&format!("bad{i:04},not_relevant\n"));
    }
    for i in 0..5 {
        results.push_str(&format!("und{i:04}\n"));
        labels.push_str(&format!("und{i:04},undecided\n"));
    }
    fs::write(dir.path().join("results.txt"), results).unwrap();
    fs::write(dir.path().join("labels.csv"), labels).unwrap();
    let eval = run_in(
        dir.path(),
        &["eval", "--results", "results.txt", "--labels", "labels.csv"],
    );
    let out = stdout_of(&eval);
    assert!(out.contains("0.824"), "expected 412/500 precision in:\n{out}");
}
