//! Exit-code and wiring checks for the command-line surface:
//! 0 success, 2 configuration error, 3 data error.

use std::process::Command;

fn veracity(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_veracity"))
        .args(args)
        .output()
        .expect("binary runs")
}

#[test]
fn invalid_rho_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"n_articles": 10, "rho": 1.5}"#).unwrap();
    let out = veracity(&[
        "datagen",
        "--spec",
        spec.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("rho"), "stderr should name the field: {stderr}");
}

#[test]
fn unknown_method_exits_2() {
    let out = veracity(&[
        "diagnose",
        "--checkpoint",
        "x.json",
        "--data",
        "d",
        "--method",
        "tsne",
        "--out",
        "o",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = veracity(&[
        "train",
        "--data",
        dir.path().join("nowhere").to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = veracity(&[
        "evaluate",
        "--checkpoint",
        dir.path().join("ghost.json").to_str().unwrap(),
        "--data",
        dir.path().to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn bad_lambda_sum_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = veracity(&[
        "train",
        "--data",
        dir.path().to_str().unwrap(),
        "--lambda",
        "0.33,0.33,0.33",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("sum to 1"), "stderr: {stderr}");
}

#[test]
fn datagen_writes_the_three_corpus_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(
        &spec,
        r#"{"n_articles": 8, "vocab_size": 40, "users_per_article": 2}"#,
    )
    .unwrap();
    let data = dir.path().join("data");
    let out = veracity(&[
        "datagen",
        "--spec",
        spec.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for name in ["articles.jsonl", "users.jsonl", "subsets.jsonl", "manifest.json"] {
        assert!(data.join(name).exists(), "{name} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "datagen");
    assert_eq!(manifest["artifacts"].as_array().unwrap().len(), 3);
}
