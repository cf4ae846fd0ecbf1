use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn claimcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_claimcheck"))
        .args(args)
        .output()
        .unwrap()
}

fn nfl_verify(out: &std::path::Path, extra: &[&str]) -> Output {
    let f = fixture("nfl");
    let p = |n: &str| f.join(n).to_string_lossy().into_owned();
    let mut args = vec![
        "verify".to_string(),
        "--data".into(),
        p("nflsuspensions.csv"),
        "--dict".into(),
        p("dictionary.tsv"),
        "--synonyms".into(),
        p("synonyms.tsv"),
        "--doc".into(),
        p("document.md"),
        "--parses".into(),
        p("parses.json"),
        "--threads".into(),
        "1".into(),
        "--out".into(),
        out.to_string_lossy().into_owned(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    claimcheck(&refs)
}

#[test]
fn verify_writes_report_with_three_claims() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let markup = dir.path().join("doc.html");
    let out = nfl_verify(&report, &["--markup", markup.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["claims"].as_array().unwrap().len(), 3);
    assert!(std::fs::read_to_string(&markup)
        .unwrap()
        .contains("data-claim-id=\"2\""));

    let again = dir.path().join("again.json");
    assert!(nfl_verify(&again, &[]).status.success());
    assert_eq!(std::fs::read(&report).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn metrics_are_monotone_in_k() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    assert!(nfl_verify(&report, &[]).status.success());
    let truth = fixture("nfl").join("truth.json");
    let out = claimcheck(&[
        "metrics",
        "--report",
        report.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--k",
        "1,5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let k1 = m["topk_coverage"]["1"].as_f64().unwrap();
    let k5 = m["topk_coverage"]["5"].as_f64().unwrap();
    assert!(k1 >= 2.0 / 3.0 && k1 <= k5);
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    let csv = fixture("nfl").join("nflsuspensions.csv");
    let missing_doc = claimcheck(&["verify", "--data", csv.to_str().unwrap()]);
    assert_eq!(missing_doc.status.code(), Some(2));
    let missing_file = claimcheck(&[
        "verify",
        "--data",
        "/definitely/missing.csv",
        "--doc",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(missing_file.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad_p = nfl_verify(&dir.path().join("r.json"), &["--p-t", "1.5"]);
    assert_eq!(bad_p.status.code(), Some(2));
    assert_eq!(claimcheck(&["--help"]).status.code(), Some(0));
}

#[test]
fn inspect_fragments_lists_categories() {
    let f = fixture("nfl");
    let out = claimcheck(&[
        "inspect",
        "fragments",
        "--data",
        f.join("nflsuspensions.csv").to_str().unwrap(),
        "--doc",
        f.join("document.md").to_str().unwrap(),
        "--claim",
        "1",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["text"], "three");
    assert!(v["predicate"]
        .as_array()
        .unwrap()
        .iter()
        .any(|p| p["label"].as_str().unwrap().contains("substance abuse")));
    let missing = claimcheck(&[
        "inspect",
        "fragments",
        "--data",
        f.join("nflsuspensions.csv").to_str().unwrap(),
        "--doc",
        f.join("document.md").to_str().unwrap(),
        "--claim",
        "9",
    ]);
    assert_eq!(missing.status.code(), Some(2));
}
