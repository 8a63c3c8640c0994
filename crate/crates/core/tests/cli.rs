mod common;

use std::path::Path;
use std::process::{Command, Output};

fn outfitsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_outfitsynth")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = outfitsynth(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let root = tempfile::tempdir().unwrap();
    let root = root.path();
    let cfg = root.join("tiny.json");
    std::fs::write(&cfg, common::tiny_config().to_json_string()).unwrap();
    let (data, ccm, mg, run) = (root.join("data"), root.join("ccm"), root.join("mg"), root.join("run"));

    ok(&["make-dataset", "--config", s(&cfg), "--out-dir", s(&data), "--n", "60", "--quiet"]);
    assert!(data.join("index.jsonl").exists());
    ok(&["pretrain-ccm", "--config", s(&cfg), "--out-dir", s(&ccm), "--corpus", s(&data), "--epochs", "1", "--quiet"]);
    assert!(ccm.join("ccm.ckpt").exists() && ccm.join("ccm_summary.json").exists());
    ok(&["pretrain-maskgen", "--config", s(&cfg), "--out-dir", s(&mg), "--corpus", s(&data), "--steps", "3", "--quiet"]);
    assert!(mg.join("maskgen.ckpt").exists());
    let ccm_ck = ccm.join("ccm.ckpt");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&run), "--corpus", s(&data), "--ccm", s(&ccm_ck), "--iterations", "100", "--quiet"]);
    let ck = run.join("checkpoints").join("final.ckpt");
    assert!(ck.exists() && run.join("config.json").exists());

    ok(&["evaluate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--corpus", s(&data), "--split", "val", "--quiet"]);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    assert!(report["fcts"].as_f64().is_some());

    let given = data.join("images").join("o00000").join("upper.png");
    let masks: Vec<String> = ["bag", "lower", "shoes"].iter().map(|c| s(&data.join("masks").join("o00001").join(format!("{c}.png"))).to_string()).collect();
    let m: Vec<&str> = masks.iter().map(String::as_str).collect();
    let mut user = vec!["generate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--given", s(&given), "--mask-strategy", "user", "--quiet", "--masks"];
    user.extend(&m);
    ok(&user);
    assert!(run.join("generated").join("bag.png").exists());
    let maskgen = mg.join("maskgen.ckpt");
    ok(&["generate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--given", s(&given), "--mask-strategy", "pix2pix", "--maskgen", s(&maskgen), "--quiet"]);
    ok(&["generate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--given", s(&given), "--mask-strategy", "random", "--corpus", s(&data), "--quiet"]);

    let mut explain = vec!["explain", "--out-dir", s(&run), "--checkpoint", s(&ck), "--given", s(&given), "--quiet", "--masks"];
    explain.extend(&m);
    ok(&explain);
    assert!(run.join("explain").join("bag_mean.png").exists());

    // Two masks for three targets is a validation failure.
    let mut short = vec!["generate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--given", s(&given), "--mask-strategy", "user", "--masks"];
    short.extend(&m[..2]);
    assert_eq!(outfitsynth(&short).status.code(), Some(1));
    // A config that no longer matches the checkpoint is refused unless forced.
    let other = ["evaluate", "--out-dir", s(&run), "--checkpoint", s(&ck), "--corpus", s(&data), "--set", "generator.widths=[4,4,8,16]"];
    assert_eq!(outfitsynth(&other).status.code(), Some(2));
}

#[test]
fn bad_invocations_exit_with_one() {
    assert_eq!(outfitsynth(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(outfitsynth(&["train", "--corpus", "x"]).status.code(), Some(1));
    assert_eq!(outfitsynth(&["make-dataset", "--set", "loss.lambda9=1"]).status.code(), Some(1));
    assert_eq!(outfitsynth(&["--help"]).status.code(), Some(0));
}
