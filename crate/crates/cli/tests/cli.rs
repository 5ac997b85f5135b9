use std::path::Path;
use std::process::{Command, Output};

fn icedual(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icedual"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn icedual")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = icedual(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = icedual(dir.path(), &["eval", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = icedual(dir.path(), &["eval", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = icedual(dir.path(), &["sic", "--mask", "absent.rgf", "--out", "sic.rgf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.rgf"));
}

#[test]
fn bad_value_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = icedual(dir.path(), &["build", "--kind", "unet3000"]);
    assert_eq!(out.status.code(), Some(1));
    let out = icedual(dir.path(), &["build", "--patch", "100"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn smoke_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n", "4", "--size", "96", "--seed", "3", "--out", "corpus"]);
    ok(
        d,
        &["label", "--msi", "corpus/scene_0000/msi.rgf", "--out", "lab/label.rgf", "--cloud-out", "lab/cloud.rgf"],
    );
    ok(d, &["dataset", "pair", "--scenes", "corpus/scenes.csv", "--out", "pairs.csv"]);
    ok(
        d,
        &[
            "dataset", "patches", "--sar", "corpus/scene_0000/sar.rgf", "--msi", "corpus/scene_0000/msi.rgf",
            "--label", "lab/label.rgf", "--patch", "48", "--augment", "five", "--out", "patches",
        ],
    );
    let patches = std::fs::read_to_string(d.join("patches/manifest.jsonl")).unwrap();
    assert_eq!(patches.lines().count(), 4 * 5);
    ok(d, &["dataset", "variant", "--manifest", "corpus/manifest.jsonl", "--train-fraction", "0.75", "--out", "var"]);
    let model = ["--kind", "visual_iced", "--patch", "96", "--width", "8", "--depth", "2"];
    let mut args = vec!["train", "--data", "var/train.jsonl", "--val", "var/val.jsonl", "--epochs", "2"];
    args.extend(model);
    args.extend(["--out", "run"]);
    ok(d, &args);
    for f in ["best.ckpt", "history.csv", "config.json", "run.json"] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    ok(
        d,
        &[
            "predict", "--ckpt", "run/best.ckpt", "--sar", "corpus/scene_0003/sar.rgf", "--msi",
            "corpus/scene_0003/msi.rgf", "--tile", "48", "--overlap", "12", "--crop", "6", "--out", "pred/conf.rgf",
        ],
    );
    ok(
        d,
        &["eval", "--pred", "pred/conf.rgf", "--ref", "corpus/scene_0003/label.rgf", "--sweep", "--out", "ev"],
    );
    let results = std::fs::read_to_string(d.join("ev/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 2);
    let sweep = std::fs::read_to_string(d.join("ev/sweep.csv")).unwrap();
    assert!(sweep.starts_with("image,metric,t0.1"));
}

#[test]
fn manifest_hashes_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--n", "1", "--size", "48", "--out", "c"]);
    ok(d, &["sic", "--mask", "c/scene_0000/label.rgf", "--cell", "1920", "--out", "sic.rgf"]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("sic.rgf.run.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "sic");
    let recorded = m["inputs"][0]["sha256"].as_str().unwrap().to_string();
    let bytes = std::fs::read(d.join("c/scene_0000/label.rgf")).unwrap();
    use sha2::Digest;
    let expected: String = sha2::Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(recorded, expected);
    assert_eq!(m["config"]["cell"], 1920.0);
}

#[test]
fn report_skips_and_repeats() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = icedual(d, &["report", "--out", "empty"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(d.join("empty/metrics.csv").is_file());

    ok(d, &["synth", "--n", "2", "--size", "48", "--out", "c"]);
    for name in ["a", "b"] {
        ok(
            d,
            &[
                "eval", "--pred", "c/scene_0000/label.rgf", "--ref", "c/scene_0000/label.rgf", "--name", name,
                "--out", name,
            ],
        );
    }
    std::fs::create_dir(d.join("half")).unwrap();
    let args = ["report", "a", "half", "b", "--out"];
    ok(d, &[&args[..], &["r1"]].concat());
    ok(d, &[&args[..], &["r2"]].concat());
    let r1 = std::fs::read(d.join("r1/metrics.csv")).unwrap();
    assert_eq!(r1, std::fs::read(d.join("r2/metrics.csv")).unwrap());
    let text = String::from_utf8(r1).unwrap();
    assert!(text.starts_with("network,images,B_A,U_A,P_A,F1"));
    assert_eq!(text.lines().count(), 3);
    let listing = std::fs::read_to_string(d.join("r1/report.json")).unwrap();
    assert!(listing.contains("half"));
}
