//! End-to-end runs of the binary: subcommands compose through files only,
//! and exit codes distinguish validation findings, config errors, and IO
//! errors.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semkit"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("semkit-cli-{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

#[test]
fn synth_then_validate_is_clean() {
    let dir = workdir("synth-validate");
    let corpus = dir.join("corpus.jsonl");
    let output = run(&[
        "synth",
        "--seed",
        "1",
        "--n",
        "100",
        "--budget",
        "72",
        "--out",
        &path_str(&corpus),
    ]);
    assert!(output.status.success());
    assert!(corpus.exists());
    // The meta sidecar embeds the resolved config.
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("corpus.jsonl.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["config"]["synth.seed"], "1");

    let verdicts = dir.join("verdicts.jsonl");
    let output = run(&["validate", &path_str(&corpus), "--out", &path_str(&verdicts)]);
    assert!(output.status.success(), "exit 0 on a fully valid corpus");
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(summary["invalid"], 0);
    assert_eq!(summary["ir_percent"], 0.0);
    assert_eq!(verdicts.exists(), true);

    // Determinism: the same seed writes the same bytes.
    let corpus2 = dir.join("corpus2.jsonl");
    run(&["synth", "--seed", "1", "--n", "100", "--budget", "72", "--out", &path_str(&corpus2)]);
    assert_eq!(
        std::fs::read_to_string(&corpus).unwrap(),
        std::fs::read_to_string(&corpus2).unwrap()
    );
}

#[test]
fn corrupted_corpus_yields_exit_two() {
    let dir = workdir("validate-exit2");
    let corpus = dir.join("corpus.jsonl");
    std::fs::write(
        &corpus,
        concat!(
            "{\"id\": \"good\", \"tokens\": [\"circle\", \"40\", \"31\", \"31\", \"40\", \"22\", \"31\", \"31\", \"22\", \"<curve_end>\", \"<loop_end>\", \"<face_end>\", \"<sketch_end>\", \"add\", \"10\", \"50\", \"31\", \"31\", \"31\", \"1\", \"0\", \"0\", \"0\", \"1\", \"0\", \"0\", \"0\", \"1\", \"31\", \"31\", \"31\", \"<extrusion_end>\"]}\n",
            "{\"id\": \"bad\", \"tokens\": [\"line\", \"3\"]}\n",
        ),
    )
    .unwrap();
    let output = run(&["validate", &path_str(&corpus)]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn missing_file_yields_exit_four_and_bad_flag_exit_three() {
    let output = run(&["validate", "/nonexistent/corpus.jsonl"]);
    assert_eq!(output.status.code(), Some(4));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    let dir = workdir("exit3");
    let corpus = dir.join("c.jsonl");
    run(&["synth", "--seed", "0", "--n", "5", "--out", &path_str(&corpus)]);
    let out = dir.join("s.jsonl");
    let output = run(&[
        "sample",
        "--strategy",
        "fsa",
        "--scorer",
        "ngram:bogus",
        "--out",
        &path_str(&out),
    ]);
    assert_eq!(output.status.code(), Some(3));
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&output.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "config");
}

#[test]
fn tokenize_stats_show_compression_below_identity() {
    let dir = workdir("tokenize");
    let corpus = dir.join("corpus.jsonl");
    run(&["synth", "--seed", "3", "--n", "200", "--budget", "96", "--out", &path_str(&corpus)]);
    let stats = dir.join("stats.json");
    let output = run(&[
        "tokenize",
        "--corpus",
        &path_str(&corpus),
        "--merges",
        "120",
        "--stats",
        "--out",
        &path_str(&stats),
    ]);
    assert!(output.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats).unwrap()).unwrap();
    let ratio = |name: &str| report["compression_percent"][name].as_f64().unwrap();
    assert_eq!(ratio("raw"), 100.0);
    assert!(ratio("single") < ratio("loop"));
    assert!(ratio("loop") <= ratio("curve"));
    assert!(ratio("curve") < ratio("bpe"));
    assert!(ratio("bpe") < 100.0);

    // Segmentation JSONL for one variant.
    let segs = dir.join("segs.jsonl");
    let output = run(&[
        "tokenize",
        "--corpus",
        &path_str(&corpus),
        "--variant",
        "curve",
        "--out",
        &path_str(&segs),
    ]);
    assert!(output.status.success());
    assert_eq!(
        std::fs::read_to_string(&segs).unwrap().lines().count(),
        200
    );
}

#[test]
fn sample_fsa_beats_top_p_on_invalidity() {
    let dir = workdir("sample-eval");
    let corpus = dir.join("corpus.jsonl");
    run(&["synth", "--seed", "5", "--n", "300", "--budget", "64", "--single-pair", "--out", &path_str(&corpus)]);

    let fsa_out = dir.join("fsa.jsonl");
    let output = run(&[
        "sample", "--strategy", "fsa", "--scorer", "ngram:3",
        "--corpus", &path_str(&corpus),
        "--n", "40", "--seed", "0", "--max-len", "128",
        "--out", &path_str(&fsa_out),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let fsa_summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();

    let topp_out = dir.join("topp.jsonl");
    let output = run(&[
        "sample", "--strategy", "top-p", "--scorer", "ngram:3",
        "--corpus", &path_str(&corpus),
        "--n", "40", "--seed", "0", "--max-len", "128", "--p", "0.95",
        "--out", &path_str(&topp_out),
    ]);
    assert!(output.status.success());
    let topp_summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();

    let ir_fsa = fsa_summary["ir_percent"].as_f64().unwrap();
    let ir_topp = topp_summary["ir_percent"].as_f64().unwrap();
    assert!(ir_fsa <= ir_topp, "fsa {ir_fsa} vs top-p {ir_topp}");
    assert_eq!(fsa_summary["syntactic_failure_percent"], 0.0);

    // The records carry per-step mask labels for the automaton strategy.
    let first_record: serde_json::Value = serde_json::from_str(
        std::fs::read_to_string(&fsa_out).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert!(first_record["masks"].as_array().unwrap().len() > 0);
    assert_eq!(first_record["masks"][0], "Init");

    // Evaluate the automaton samples against corpus truth (aligned counts).
    let truth = dir.join("truth.jsonl");
    let corpus_lines: Vec<String> = std::fs::read_to_string(&corpus)
        .unwrap()
        .lines()
        .take(40)
        .map(String::from)
        .collect();
    std::fs::write(&truth, corpus_lines.join("\n")).unwrap();
    let report_path = dir.join("report.json");
    let output = run(&[
        "eval",
        "--generated", &path_str(&fsa_out),
        "--truth", &path_str(&truth),
        "--resolution", "24",
        "--cloud-points", "96",
        "--out", &path_str(&report_path),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let table = stdout_of(&output);
    assert!(table.contains("F1-Skt"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["ir"].as_f64().is_some());
    assert!(report["pairwise_count"].as_u64().is_some());

    // Truth against itself exercises the perfect-score path.
    let self_report = dir.join("self.json");
    let output = run(&[
        "eval",
        "--generated", &path_str(&truth),
        "--truth", &path_str(&truth),
        "--resolution", "24",
        "--cloud-points", "96",
        "--out", &path_str(&self_report),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&self_report).unwrap()).unwrap();
    assert_eq!(report["f1_sketch"].as_f64().unwrap(), 100.0);
    assert_eq!(report["cd"].as_f64().unwrap(), 0.0);
    assert_eq!(report["cov"].as_f64().unwrap(), 100.0);
}

#[test]
fn vq_pipeline_through_checkpoints() {
    let dir = workdir("vq-pipeline");
    let corpus = dir.join("corpus.jsonl");
    run(&["synth", "--seed", "9", "--n", "6", "--budget", "48", "--single-pair", "--out", &path_str(&corpus)]);

    // Config file keeps the run tiny; flags override epochs.
    let conf = dir.join("run.conf");
    std::fs::write(
        &conf,
        "codec.d_model = 16\ncodec.codebook_size = 16\ncodec.epochs = 99\ncodec.batch_size = 3\n",
    )
    .unwrap();
    let ckpt = dir.join("codec.ckpt");
    let curves = dir.join("curves.csv");
    let output = run(&[
        "--config", &path_str(&conf),
        "train-vq",
        "--corpus", &path_str(&corpus),
        "--seed", "0",
        "--epochs", "2",
        "--out", &path_str(&ckpt),
        "--curves", &path_str(&curves),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(summary["config"]["codec.epochs"], "2", "flag overrides file");
    assert_eq!(summary["config"]["codec.d_model"], "16");
    let csv = std::fs::read_to_string(&curves).unwrap();
    assert!(csv.starts_with("epoch,train_loss,val_loss,codebook_utilization"));
    assert_eq!(csv.lines().count(), 3);

    let aligned = dir.join("aligned.ckpt");
    let output = run(&[
        "train-adapters",
        "--codec", &path_str(&ckpt),
        "--seed", "1",
        "--d-tok", "64",
        "--out", &path_str(&aligned),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(summary["collision_rate"], 0.0);

    let ids = dir.join("ids.jsonl");
    let output = run(&[
        "encode",
        "--codec", &path_str(&aligned),
        "--corpus", &path_str(&corpus),
        "--out", &path_str(&ids),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(&ids).unwrap().lines().next().unwrap())
            .unwrap();
    assert!(first["ids"].as_array().unwrap().len() >= 5);

    let decoded = dir.join("decoded.jsonl");
    let output = run(&[
        "decode",
        "--codec", &path_str(&aligned),
        "--ids", &path_str(&ids),
        "--out", &path_str(&decoded),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    // Decoded sequences are grammatical by construction (an undertrained
    // decoder may still emit geometric flags, so only syntax is asserted).
    let verdicts = dir.join("decoded-verdicts.jsonl");
    let output = run(&["validate", &path_str(&decoded), "--out", &path_str(&verdicts)]);
    let summary: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(summary["total"], 6);
    for line in std::fs::read_to_string(&verdicts).unwrap().lines() {
        let verdict: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(verdict["syntactic_error"].is_null(), "{verdict}");
    }
}

#[test]
fn fsa_json_lists_masks() {
    let output = run(&["fsa-json"]);
    assert!(output.status.success());
    let doc: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(doc["masks"].as_object().unwrap().len(), 15);
}
