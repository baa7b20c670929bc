mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::json;

fn pthought(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pthought"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = pthought(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_corpus(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.jsonl");
    fs::write(&path, common::synthetic(5, 1, 3).jsonl).unwrap();
    path
}

fn train(dir: &Path, corpus: &Path, name: &str) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "train",
        "--corpus",
        s(corpus),
        "--out-dir",
        s(&out),
        "--hidden",
        "4",
        "--embed-dim",
        "4",
        "--epochs",
        "1",
        "--batch",
        "16",
        "--lr",
        "0.01",
        "--seed",
        "7",
    ]);
    out
}

fn vectors_tsv(rows: &[(&str, usize, &[f64])]) -> String {
    rows.iter()
        .map(|(g, i, v)| {
            let comps: Vec<String> = v.iter().map(f64::to_string).collect();
            format!("{g}\t{i}\t{}\n", comps.join("\t"))
        })
        .collect()
}

#[test]
fn pairs_counts_ordered_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.jsonl");
    let captions = |w: &str| {
        (0..5)
            .map(|i| format!("{w} number {i}"))
            .collect::<Vec<_>>()
    };
    let lines = [
        json!({"id": "a", "captions": captions("cat")}),
        json!({"id": "b", "captions": captions("dog")}),
    ];
    fs::write(
        &corpus,
        lines.iter().map(|l| format!("{l}\n")).collect::<String>(),
    )
    .unwrap();
    let out = dir.path().join("pairs.tsv");
    let stdout = ok(&["pairs", "--corpus", s(&corpus), "--out", s(&out)]);
    assert!(stdout.contains("groups\t2\n"));
    assert!(stdout.contains("sentences\t10\n"));
    assert!(stdout.contains("pairs\t40\n"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 40);
    assert!(text.lines().all(|l| l.split('\t').count() == 3));
    assert!(dir.path().join("pairs.tsv.manifest.json").exists());
}

#[test]
fn empty_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let out = pthought(&[
        "pairs",
        "--corpus",
        s(&corpus),
        "--out",
        s(&dir.path().join("p.tsv")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no groups"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&pthought(&["train"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let out = pthought(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out-dir",
        s(&dir.path().join("o")),
        "--alpha",
        "0",
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
    let help = pthought(&["--help"]);
    assert_eq!(code(&help), 0);
    assert!(String::from_utf8_lossy(&help.stdout).contains("Exit codes"));
}

#[test]
fn train_embed_evaluate_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let run = train(dir.path(), &corpus, "run");
    let ckpt = run.join("checkpoint.json");
    for f in [
        "checkpoint.json",
        "loss.tsv",
        "epoch-1.json",
        "manifest.json",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let loss = fs::read_to_string(run.join("loss.tsv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "step\tl_auto\tl_para\ttotal");

    // same flags, same bytes
    let again = train(dir.path(), &corpus, "again");
    assert_eq!(
        fs::read(&ckpt).unwrap(),
        fs::read(again.join("checkpoint.json")).unwrap()
    );

    let vectors = dir.path().join("vectors.tsv");
    ok(&[
        "embed",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--out",
        s(&vectors),
    ]);
    let text = fs::read_to_string(&vectors).unwrap();
    assert_eq!(text.lines().count(), 25);
    assert!(text.lines().all(|l| l.split('\t').count() == 2 + 8));
    let vectors_again = dir.path().join("vectors2.tsv");
    ok(&[
        "embed",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&corpus),
        "--out",
        s(&vectors_again),
    ]);
    assert_eq!(text, fs::read_to_string(&vectors_again).unwrap());

    let report = ok(&[
        "eval-pcoherence",
        "--vectors",
        s(&vectors),
        "--out",
        s(&dir.path().join("coh.tsv")),
    ]);
    let total = report.lines().last().unwrap();
    assert!(total.starts_with("total\t5\t"), "{total}");
    let value: f64 = total.split('\t').nth(2).unwrap().parse().unwrap();
    assert!((-1.0..=1.0).contains(&value));

    let scatter = dir.path().join("scatter.tsv");
    ok(&["project", "--vectors", s(&vectors), "--out", s(&scatter)]);
    let scatter_text = fs::read_to_string(&scatter).unwrap();
    assert_eq!(scatter_text.lines().next().unwrap(), "x\ty\tgroup_id");
    assert_eq!(scatter_text.lines().count(), 26);

    let replayed = ok(&[
        "replay",
        "--manifest",
        s(&dir.path().join("vectors.tsv.manifest.json")),
    ]);
    assert!(replayed.contains("1 artifacts identical"), "{replayed}");
    let replayed = ok(&["replay", "--manifest", s(&run.join("manifest.json"))]);
    assert!(
        replayed.contains("replayed train: 3 artifacts identical"),
        "{replayed}"
    );

    fs::write(&corpus, "{\"id\": \"x\", \"captions\": [\"changed\"]}\n").unwrap();
    let out = pthought(&[
        "replay",
        "--manifest",
        s(&dir.path().join("vectors.tsv.manifest.json")),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_words_need_allow_unk() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let run = train(dir.path(), &corpus, "run");
    let ckpt = run.join("checkpoint.json");
    let other = dir.path().join("other.jsonl");
    fs::write(
        &other,
        "{\"id\": \"z\", \"captions\": [\"a zebra is grazing\", \"a dog is running\"]}\n",
    )
    .unwrap();
    let out_path = dir.path().join("v.tsv");
    let out = pthought(&[
        "embed",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&other),
        "--out",
        s(&out_path),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--allow-unk"));
    ok(&[
        "embed",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        s(&other),
        "--out",
        s(&out_path),
        "--allow-unk",
    ]);
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 2);
}

#[test]
fn pcoherence_of_known_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let same = dir.path().join("same.tsv");
    let v: &[f64] = &[0.3, -1.0, 2.0];
    fs::write(
        &same,
        vectors_tsv(&[
            ("a", 0, v),
            ("a", 1, v),
            ("a", 2, v),
            ("b", 0, v),
            ("b", 1, v),
        ]),
    )
    .unwrap();
    let report = ok(&["eval-pcoherence", "--vectors", s(&same)]);
    let total: f64 = report
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 1.0).abs() < 1e-12);

    let mixed = dir.path().join("mixed.tsv");
    let rows: [(&str, usize, &[f64]); 5] = [
        ("low", 0, &[1.0, 0.0]),
        ("low", 1, &[0.4, 0.84f64.sqrt()]),
        ("high", 0, &[1.0, 0.0]),
        ("high", 1, &[0.8, 0.6]),
        ("single", 0, &[1.0, 1.0]),
    ];
    fs::write(&mixed, vectors_tsv(&rows)).unwrap();
    let out = pthought(&["eval-pcoherence", "--vectors", s(&mixed)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("single"));
    let report = String::from_utf8(out.stdout).unwrap();
    let total: f64 = report
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 0.6).abs() < 1e-12, "{report}");
}

#[test]
fn sts_with_constant_scores_fails() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path());
    let run = train(dir.path(), &corpus, "run");
    let sts = dir.path().join("sts.tsv");
    let sentences = [
        "a dog is running in the park",
        "a cat is sleeping in the room",
        "a man is walking in the street",
    ];
    let mut text = String::from("split\tscore\tsentence_1\tsentence_2\n");
    for split in ["train", "test"] {
        for (i, a) in sentences.iter().enumerate() {
            let b = sentences[(i + 1) % 3];
            text.push_str(&format!("{split}\t3\t{a}\t{b}\n"));
        }
    }
    fs::write(&sts, text).unwrap();
    let out = pthought(&[
        "eval-sts",
        "--checkpoint",
        s(&run.join("checkpoint.json")),
        "--sts",
        s(&sts),
        "--allow-unk",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("variance"));
}
