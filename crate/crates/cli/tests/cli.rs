use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use retarget_core::analyzer::CompatibilityReport;
use retarget_core::harness::{random_inputs, DiffReport};
use retarget_core::interpreter::run_graph;
use retarget_core::ir::parse_model;
use retarget_core::profiles::builtin;
use retarget_core::rewriter::{defuse, FusionEntry};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(format!("{name}.nng.json"))
}

fn retarget(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retarget"))
        .args(args)
        .env_remove("RETARGET_PROFILE_PATH")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_reports_and_sets_exit_code() {
    let o = retarget(&[
        "analyze",
        s(&fixture("sub_const")),
        "--profile",
        "mobile-strict",
        "--json",
    ]);
    assert_eq!(code(&o), 1);
    let r: CompatibilityReport = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r.unsupported.len(), 1);
    assert_eq!(r.unsupported[0].node_id, "sub_mean");

    let o = retarget(&["analyze", s(&fixture("cast_dropout")), "-p", "mobile-strict"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("deployable as-is"));
}

#[test]
fn analyze_writes_report_file_and_honours_preferences() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let model = fixture("sub_const");
    let o = retarget(&[
        "analyze",
        s(&model),
        "-p",
        "mobile-strict",
        "--prefer",
        "sub_mean=S4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 1);
    let r: CompatibilityReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(r.unsupported[0].scenario.short(), "S4");

    let o = retarget(&["analyze", s(&model), "-p", "mobile-strict", "--prefer", "nosuch=S1"]);
    assert_eq!(code(&o), 2);
    let o = retarget(&["analyze", s(&model), "-p", "mobile-strict", "--prefer", "S7"]);
    assert_eq!(code(&o), 2);
    let o = retarget(&["analyze", s(&model), "-p", "mobile-strict", "--tail-fraction", "1.5"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_inputs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.nng.json");
    std::fs::write(&broken, "{\"format_version\": 1").unwrap();
    assert_eq!(code(&retarget(&["analyze", s(&broken), "-p", "tnn"])), 2);
    assert_eq!(code(&retarget(&["analyze", "/no/such/file.nng.json", "-p", "tnn"])), 2);
    let o = retarget(&["analyze", s(&fixture("sub_const")), "-p", "no-such-profile"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown profile"));
    assert_eq!(code(&retarget(&["analyze"])), 2);
}

#[test]
fn convert_split_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("tail_skip");
    let o = retarget(&[
        "convert",
        s(&model),
        "-p",
        "mobile-strict",
        "--out-dir",
        s(dir.path()),
        "--verify",
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    assert_eq!(m["verification"]["kind"], "numeric");
    assert_eq!(m["verification"]["pass"], true);
    let cut: Vec<&str> = m["cut_tensors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert_eq!(cut, ["logits", "skip"]);
    let on_disk: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tail_skip.manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);

    let prefix = parse_model(&std::fs::read_to_string(dir.path().join("tail_skip.deploy.nng.json")).unwrap()).unwrap();
    let post = parse_model(&std::fs::read_to_string(dir.path().join("tail_skip.post.nng.json")).unwrap()).unwrap();
    let p = builtin("mobile-strict").unwrap();
    assert!(prefix.nodes().iter().all(|n| p.supports(n)));
    let post_ops: Vec<&str> = post.nodes().iter().map(|n| n.op_type.as_str()).collect();
    assert_eq!(post_ops, ["Softmax", "Sub", "Mul"]);
}

#[test]
fn convert_fused_manifest_defuses_prefix_output() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("single.profile.json");
    let mut p = builtin("mobile-strict").unwrap();
    p.name = "single".into();
    p.single_output_only = true;
    std::fs::write(&profile, retarget_core::profiles::serialize_profile(&p)).unwrap();

    let o = retarget(&[
        "convert",
        s(&fixture("tail_skip")),
        "-p",
        s(&profile),
        "--out-dir",
        s(dir.path()),
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = stdout_json(&o);
    let fused = m["fused_output_name"].as_str().unwrap();
    let entries: Vec<FusionEntry> = serde_json::from_value(m["fusion_manifest"].clone()).unwrap();
    let names: Vec<&str> = entries.iter().map(|e| e.value_name.as_str()).collect();
    assert_eq!(names, ["logits", "skip"]);

    let prefix = parse_model(&std::fs::read_to_string(dir.path().join("tail_skip.deploy.nng.json")).unwrap()).unwrap();
    assert_eq!(prefix.outputs(), [fused]);
    let original = retarget_core::fixtures::tail_skip();
    let x = random_inputs(original.inputs(), 5, 0);
    let out = run_graph(&prefix, &x).unwrap();
    let back = defuse(&entries, &out[fused]).unwrap();
    assert_eq!(back["skip"].shape(), [1, 4, 8, 8]);
}

#[test]
fn convert_modes_and_retraining() {
    let dir = tempfile::tempdir().unwrap();
    let d = s(dir.path());
    let k3 = fixture("deconv_k3s2");
    let o = retarget(&[
        "convert",
        s(&k3),
        "-p",
        "mobile-strict",
        "--out-dir",
        d,
        "--verify",
        "--json",
    ]);
    assert_eq!(code(&o), 0);
    let m = stdout_json(&o);
    assert_eq!(m["retraining_required"], true);
    assert_eq!(m["applied"][0]["rule_id"], "convtranspose_structural");
    assert_eq!(m["verification"]["kind"], "shapes");

    let o = retarget(&[
        "convert",
        s(&k3),
        "-p",
        "mobile-strict",
        "--out-dir",
        d,
        "--mode",
        "exact",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stride == kernel"));

    let k2 = fixture("deconv_k2s2");
    let o = retarget(&[
        "convert",
        s(&k2),
        "-p",
        "mobile-strict",
        "--out-dir",
        d,
        "--mode",
        "structural",
        "--json",
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout_json(&o)["applied"][0]["rule_id"], "convtranspose_structural");
    let o = retarget(&[
        "convert",
        s(&k2),
        "-p",
        "mobile-strict",
        "--out-dir",
        d,
        "--verify",
        "--json",
    ]);
    let m = stdout_json(&o);
    assert_eq!(m["retraining_required"], false);
    assert_eq!(m["verification"]["kind"], "numeric");
}

#[test]
fn convert_custom_ops_exit_1_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = retarget(&[
        "convert",
        s(&fixture("custom_warp")),
        "-p",
        "full",
        "--out-dir",
        s(dir.path()),
        "--source-framework",
        "torch",
        "--json",
    ]);
    assert_eq!(code(&o), 1);
    let m = stdout_json(&o);
    assert_eq!(m["custom_ops"][0]["op_type"], "Custom:warp");
    assert_eq!(m["custom_ops"][0]["required_in"], serde_json::json!(["torch", "full"]));
    assert_eq!(m["residual"]["deployable_as_is"], false);
}

#[test]
fn forced_split_of_whole_graph_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("lonely.nng.json");
    std::fs::write(
        &model,
        r#"{"format_version": 1, "initializers": [], "name": "lonely",
            "inputs": [{"dtype": "float32", "name": "x", "shape": [4]}],
            "nodes": [{"attrs": {}, "id": "sm", "inputs": ["x"], "op": "Softmax", "outputs": ["y"]}],
            "outputs": ["y"]}"#,
    )
    .unwrap();
    let o = retarget(&[
        "convert",
        s(&model),
        "-p",
        "mobile-strict",
        "--out-dir",
        s(dir.path()),
        "--prefer",
        "sm=S3",
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("S4"));
}

#[test]
fn run_reads_and_writes_tensor_files() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in.json");
    let out = dir.path().join("out.json");
    let x: Vec<f32> = (0..16).map(|i| i as f32 / 8.0 - 1.0).collect();
    std::fs::write(
        &inputs,
        serde_json::json!({"x": {"dtype": "float32", "shape": [1, 1, 4, 4], "data": x}}).to_string(),
    )
    .unwrap();
    let o = retarget(&[
        "run",
        s(&fixture("conv_bench")),
        "--inputs",
        s(&inputs),
        "--out",
        s(&out),
        "--json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed = stdout_json(&o);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(printed["outputs"], written);
    assert_eq!(written["y"]["shape"], serde_json::json!([1, 1, 2, 2]));

    // the same values through the library
    let g = retarget_core::fixtures::fixture("conv_bench");
    let map = [(
        "x".to_string(),
        retarget_core::TensorValue::f32(vec![1, 1, 4, 4], x).unwrap(),
    )]
    .into();
    let want = run_graph(&g, &map).unwrap()["y"].to_f64_vec();
    let got: Vec<f64> = written["y"]["data"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (a, b) in want.iter().zip(&got) {
        assert!((a - b).abs() < 1e-6);
    }

    std::fs::write(
        &inputs,
        r#"{"x": {"dtype": "float32", "shape": [1, 1, 4, 3], "data": [0,0,0,0,0,0,0,0,0,0,0,0]}}"#,
    )
    .unwrap();
    assert_eq!(
        code(&retarget(&["run", s(&fixture("conv_bench")), "--inputs", s(&inputs)])),
        2
    );
    assert_eq!(code(&retarget(&["run", s(&fixture("conv_bench")), "--bench", "0"])), 2);
}

#[test]
fn diff_exit_codes() {
    let a = fixture("sub_const");
    let o = retarget(&["diff", s(&a), s(&a), "--json"]);
    assert_eq!(code(&o), 0);
    let d: DiffReport = serde_json::from_slice(&o.stdout).unwrap();
    assert!(d.pass);
    assert_eq!(d.trials, 20);
    assert_eq!(d.tolerance, 1e-6);

    let dir = tempfile::tempdir().unwrap();
    let out = retarget(&[
        "convert",
        s(&fixture("deconv_k3s2")),
        "-p",
        "mobile-strict",
        "--out-dir",
        s(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let rewritten = dir.path().join("deconv_k3s2.deploy.nng.json");
    let o = retarget(&["diff", s(&fixture("deconv_k3s2")), s(&rewritten)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));

    let o = retarget(&["diff", s(&a), s(&fixture("conv_bench"))]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("signature"));
}

#[test]
fn profiles_list_show_and_search_path() {
    let o = retarget(&["profiles", "list", "--json"]);
    assert_eq!(code(&o), 0);
    let names: Vec<String> = stdout_json(&o)
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["tnn", "mobile-strict", "full"]);

    let o = retarget(&["profiles", "show", "tnn", "--json"]);
    let shown = retarget_core::profiles::load_profile(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(shown, builtin("tnn").unwrap());

    let dir = tempfile::tempdir().unwrap();
    let mut p = builtin("full").unwrap();
    p.name = "lab-board".into();
    std::fs::write(
        dir.path().join("lab-board.profile.json"),
        retarget_core::profiles::serialize_profile(&p),
    )
    .unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_retarget"))
            .args(args)
            .env("RETARGET_PROFILE_PATH", dir.path())
            .output()
            .unwrap()
    };
    let o = run(&["profiles", "show", "lab-board"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("lab-board"));
    let o = run(&["profiles", "list"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("lab-board"));
    let o = run(&["analyze", s(&fixture("sub_const")), "-p", "lab-board"]);
    assert_eq!(code(&o), 0);

    std::fs::write(dir.path().join("bad.profile.json"), r#"{"name": "bad"}"#).unwrap();
    assert_eq!(code(&run(&["profiles", "show", "bad"])), 2);
}

#[test]
fn composite_converts_into_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = retarget(&[
        "convert",
        s(&fixture("composite")),
        "-p",
        "mobile-strict",
        "--out-dir",
        s(dir.path()),
        "--verify",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut files: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    files.sort();
    assert_eq!(
        files,
        [
            "composite.deploy.nng.json",
            "composite.manifest.json",
            "composite.post.nng.json"
        ]
    );
}

#[test]
fn supported_model_analyzes_clean_under_full() {
    let o = retarget(&["analyze", s(&fixture("tail_skip")), "-p", "full"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn identity_run_echoes_input() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in.json");
    let out = dir.path().join("out.json");
    let x = serde_json::json!({"x": {"data": [0.5, -1.25, 3.0, 0.0, 7.5, -2.0], "dtype": "float32", "shape": [2, 3]}});
    std::fs::write(&inputs, x.to_string()).unwrap();
    let o = retarget(&["run", s(&fixture("identity")), "--inputs", s(&inputs), "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(written, x);
}

#[test]
fn show_tnn_lacks_cast_and_dropout() {
    let o = retarget(&["profiles", "show", "tnn"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    let ops = text.lines().find(|l| l.starts_with("ops")).unwrap();
    assert!(ops.contains("Conv2D"));
    assert!(!ops.contains("Cast") && !ops.contains("Dropout"));
}

#[test]
fn exact_rewrite_diffs_clean_against_original() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("deconv_k2s2");
    assert_eq!(
        code(&retarget(&[
            "convert",
            s(&model),
            "-p",
            "mobile-strict",
            "--out-dir",
            s(dir.path())
        ])),
        0
    );
    let rewritten = dir.path().join("deconv_k2s2.deploy.nng.json");
    let o = retarget(&["diff", s(&model), s(&rewritten), "--seed", "7", "--trials", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    // inputs are never touched
    let before = std::fs::read_to_string(&model).unwrap();
    assert_eq!(before, retarget_core::fixtures::fixture_text("deconv_k2s2").unwrap());
}
