mod common;

use std::process::Command as Proc;

use doclab_core::raster::write_mask_pgm;
use doclab_service::cli::{run, test_ids, AblateArg, Command, ProviderArg, SelectArg, UpdateArg};
use serde_json::Value;

fn doclab() -> Proc {
    Proc::new(env!("CARGO_BIN_EXE_doclab"))
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = doclab().args(["eval", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = doclab()
        .args(["update", "--experiment", "x", "--strategy", "sgd"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failures_print_one_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = doclab()
        .args(["eval", "--experiment"])
        .arg(tmp.path().join("missing"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let v: Value = serde_json::from_str(line).unwrap();
    assert_eq!(v["error"]["kind"], "io");
    assert!(v["error"]["message"]
        .as_str()
        .unwrap()
        .contains("manifest.json"));
}

#[test]
fn binary_synthesizes_and_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = common::write_manifest(tmp.path(), &common::tiny());
    let out = doclab()
        .args(["synth", "--experiment"])
        .arg(tmp.path().join("exp"))
        .arg("--manifest")
        .arg(manifest)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["novel"], serde_json::json!([5, 3]));
}

#[test]
fn perfect_prediction_dump_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, m) = common::synth(tmp.path());
    let preds = tmp.path().join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    let corpora = dir.load_corpora(&m).unwrap();
    assert_eq!(test_ids(&dir, &m).unwrap().len(), corpora.novel_test.len());
    for s in &corpora.novel_test {
        write_mask_pgm(&preds.join(format!("{}.mask.pgm", s.id)), &s.mask).unwrap();
    }
    let v = run(Command::Eval {
        experiment: dir.root().to_path_buf(),
        checkpoint: "main".into(),
        predictions: Some(preds),
    })
    .unwrap();
    assert_eq!(v["acc"], 1.0);
    assert_eq!(v["f1"], 1.0);
}

#[test]
fn stepwise_commands_match_the_oracle_loop() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, m) = common::synth(tmp.path());
    let exp = dir.root().to_path_buf();
    run(Command::InitTrain {
        experiment: exp.clone(),
    })
    .unwrap();
    let scores = run(Command::Score {
        experiment: exp.clone(),
    })
    .unwrap();
    assert_eq!(scores["scored"], m.partitions.novel_pool);
    let sel = run(Command::Select {
        experiment: exp.clone(),
        strategy: None,
        threshold: None,
        budget: None,
    })
    .unwrap();
    assert!(!sel["selected"].as_array().unwrap().is_empty());
    run(Command::Label {
        experiment: exp.clone(),
        oracle: true,
    })
    .unwrap();
    let upd = run(Command::Update {
        experiment: exp.clone(),
        strategy: UpdateArg::Rbsre,
        lambda1: None,
        lambda2: None,
    })
    .unwrap();
    assert_eq!(upd["lambda1"], 0.2);
    assert_eq!(upd["lambda2"], 0.8);
    let eval = run(Command::Eval {
        experiment: exp.clone(),
        checkpoint: "main_rbsre".into(),
        predictions: None,
    })
    .unwrap();
    assert_eq!(eval["f1"], upd["f1"]);

    let other = tempfile::tempdir().unwrap();
    let (odir, _) = common::synth(other.path());
    let lp = run(Command::Loop {
        experiment: odir.root().to_path_buf(),
        provider: ProviderArg::Oracle,
    })
    .unwrap();
    assert_eq!(lp["updated"]["f1"], upd["f1"]);
    assert_eq!(lp["baseline"]["f1"], upd["baseline_f1"]);
}

#[test]
fn label_without_oracle_is_a_contract_error() {
    let tmp = tempfile::tempdir().unwrap();
    let err = run(Command::Label {
        experiment: tmp.path().to_path_buf(),
        oracle: false,
    })
    .unwrap_err();
    assert_eq!(err.kind(), "contract");
}

#[test]
fn random_selection_respects_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = common::synth(tmp.path());
    let exp = dir.root().to_path_buf();
    run(Command::InitTrain {
        experiment: exp.clone(),
    })
    .unwrap();
    let sel = run(Command::Select {
        experiment: exp,
        strategy: Some(SelectArg::Random),
        threshold: None,
        budget: Some(2),
    })
    .unwrap();
    assert_eq!(sel["selected"].as_array().unwrap().len(), 2);
}

#[test]
fn lambda_ablation_writes_a_report() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = common::synth(tmp.path());
    let v = run(Command::Ablate {
        what: AblateArg::Lambdas,
        experiment: dir.root().to_path_buf(),
        budget: None,
        grid: Some("0.2:0.8, 0.5:0.5".into()),
    })
    .unwrap();
    assert!(dir.report_path("ablate-lambdas").exists());
    assert!(v.is_object());
    assert!(run(Command::Ablate {
        what: AblateArg::Lambdas,
        experiment: dir.root().to_path_buf(),
        budget: None,
        grid: Some("0.2".into()),
    })
    .is_err());
}
