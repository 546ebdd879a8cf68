mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use cam_core::pipeline::CamModel;

fn cam(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cam"))
        .args(args)
        .env_remove("CAM_LOG")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            pipe.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_writes_a_valid_model_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let cfg = common::fixture("toy/cam.json");
    let out = cam(&["--config", p(&cfg), "--model", p(&model), "train"], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("seed ")).count(), 5);
    assert!(stdout.contains("mean eval AUC"));
    let cam_model = CamModel::load(&model).unwrap();
    assert!(cam_model.qaf.validate().is_valid());
    let reports: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.reports.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 5);

    let eval = cam(&["--config", p(&cfg), "--model", p(&model), "evaluate"], None);
    assert!(eval.status.success(), "{}", text(&eval.stderr));
    let metrics: serde_json::Value = serde_json::from_str(text(&eval.stdout).trim()).unwrap();
    assert!((metrics["auc"].as_f64().unwrap() - cam_model.eval.auc).abs() <= 1e-12);
}

#[test]
fn missing_embeddings_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::fixture("toy/cam.json");
    let missing = dir.path().join("nope.json");
    let model = dir.path().join("m.json");
    let out = cam(
        &["--config", p(&cfg), "--embeddings", p(&missing), "--model", p(&model), "--seed", "0", "train"],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("missing-meaning"), "{}", text(&out.stderr));
}

#[test]
fn scripted_explain_reproduces_transcript() {
    let model = common::fixture("dialogue/model.json");
    let instance = common::fixture("dialogue/instance.json");
    let out = cam(
        &["--model", p(&model), "explain", "--instance", p(&instance)],
        Some("Risk\nInstallment\nFractionInstall\nFractionInstallBurden\n"),
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let expected = "\
user: Why is Risk evaluated as 0.92?
CAM: Because the supporting argument Installment is 0.69; and the supporting argument TradeRecord is 0.40.
user: Why is Installment evaluated as 0.69?
CAM: Because the supporting argument FractionInstall is 0.54; and the supporting argument InstallTrade is 0.30.
user: Why is FractionInstall evaluated as 0.54?
CAM: Because the supporting argument FractionInstallBurden is 1.0; and the supporting argument PercentInstallTrade is 0.22.
user: Why is FractionInstallBurden evaluated as 1?
CAM: Because in this case, FractionInstallBurden is 471%.
";
    assert_eq!(text(&out.stdout), expected);
}

#[test]
fn explain_handles_eof_and_unknown_nodes() {
    let model = common::fixture("dialogue/model.json");
    let instance = common::fixture("dialogue/instance.json");
    let args = ["--model", p(&model), "explain", "--instance", p(&instance)];

    let out = cam(&args, None);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());

    let out = cam(&args, Some("Nowhere\nRisk\n"));
    assert!(out.status.success());
    assert!(text(&out.stderr).contains("Nowhere"));
    assert!(text(&out.stdout).starts_with("user: Why is Risk evaluated as 0.92?"));
}

#[test]
fn predict_scores_rows_and_preprocess_dumps_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::fixture("toy/cam.json");
    let model = dir.path().join("model.json");
    assert!(cam(&["--config", p(&cfg), "--model", p(&model), "--seed", "1", "train"], None).status.success());

    let data = common::fixture("toy/data.csv");
    let out = cam(&["--model", p(&model), "predict", "--input", p(&data)], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("row,score"));
    assert_eq!(lines.count(), 600);

    let pre = dir.path().join("pre");
    let out = cam(&["--config", p(&cfg), "--seed", "1", "preprocess", "--out", p(&pre)], None);
    assert!(out.status.success(), "{}", text(&out.stderr));
    for f in ["preprocess.json", "train.csv", "eval.csv"] {
        assert!(pre.join(f).is_file(), "{f}");
    }
    let eval_rows = std::fs::read_to_string(pre.join("eval.csv")).unwrap().lines().count() - 1;
    assert_eq!(eval_rows, 120);
}

#[test]
fn bad_port_is_a_config_error() {
    let model = common::fixture("dialogue/model.json");
    let out = cam(&["--model", p(&model), "--port", "80", "serve"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("port"));
}
