use std::path::Path;
use std::process::{Command, Output};

use r3dm::io::read_volume;

const BIN: &str = env!("CARGO_BIN_EXE_r3dm");

fn r3dm(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = r3dm(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn prepare(dir: &Path, mask: &[&str]) {
    ok(dir, &["phantom", "gen", "--kind", "ellipsoids", "--slices", "2", "--n", "16", "--seed", "3", "--out", "gt.raw"]);
    let mut args = vec!["mask", "gen", "--n", "16", "--out", "m.raw"];
    args.extend_from_slice(mask);
    ok(dir, &args);
    ok(dir, &["acquire", "--gt", "gt.raw", "--mask", "m.raw", "--out", "meas.json"]);
}

#[test]
fn full_mask_zero_filled_is_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &["--kind", "full"]);
    ok(d, &["recon", "zero-filled", "--meas", "meas.json", "--out", "zf.raw"]);
    let (gt, _) = read_volume(&d.join("gt.raw")).unwrap();
    let (zf, _) = read_volume(&d.join("zf.raw")).unwrap();
    // stored as f32, so agreement is to single precision
    let err = zf.lin_comb(1.0, &gt, -1.0).unwrap().norm() / gt.norm();
    assert!(err < 1e-6, "rel err {err}");

    let out = ok(d, &["metrics", "--gt", "gt.raw", "--recon", "gt.raw", "--out", "same.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("same.json")).unwrap()).unwrap();
    assert_eq!(report["psnr_3d"], "inf");
    assert_eq!(report["ssim_3d"], 1.0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("SSIM"));
}

#[test]
fn manifest_records_inputs_outputs_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &["--kind", "uniform", "--accel", "2", "--seed", "7"]);
    ok(d, &["recon", "r3dm", "--meas", "meas.json", "--out", "r.raw", "--steps", "3", "--inner", "2", "--seed", "42"]);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.raw.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "recon r3dm");
    assert_eq!(m["seed"], 42);
    let inputs: Vec<&str> = m["inputs"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert!(inputs.iter().any(|p| p.ends_with("meas.json")));
    let outputs = m["outputs"].as_array().unwrap();
    for f in outputs {
        let bytes = std::fs::read(d.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), r3dm::io::sha256_hex(&bytes));
    }
    assert_eq!(m["config"]["resolved"]["schedule"]["steps"], 3);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn exit_codes_and_structured_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // missing input: I/O error
    let out = r3dm(d, &["recon", "zero-filled", "--meas", "nope.json", "--out", "x.raw"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "io");

    // bad parameter: configuration error
    let out = r3dm(d, &["mask", "gen", "--n", "16", "--accel", "0.5", "--out", "m.raw"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("accel"));

    // unknown config key
    std::fs::write(d.join("exp.json"), r#"{"mask":{"kind":"full"},"method":"pgd","out_dir":"o","phantom":{"kind":{"type":"tubes"},"slices":1,"n":8,"seed":0},"typo":1}"#).unwrap();
    let out = r3dm(d, &["run", "--config", "exp.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["message"].as_str().unwrap().contains("typo"));

    // thread count must parse
    let out = Command::new(BIN)
        .args(["spectral", "check", "--n", "8", "--out", "s.json"])
        .env("R3DM_THREADS", "many")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // clap usage errors also exit with 2
    assert_eq!(r3dm(d, &["recon", "pgd"]).status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &["--kind", "gaussian", "--accel", "4", "--center-frac", "0.1", "--seed", "1"]);
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let name = format!("r{threads}.raw");
        let out = Command::new(BIN)
            .args(["recon", "r3dm", "--meas", "meas.json", "--out", &name, "--steps", "3", "--inner", "3"])
            .env("R3DM_THREADS", threads)
            .current_dir(d)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(std::fs::read(d.join(&name)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn external_model_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d, &["--kind", "uniform", "--accel", "2"]);
    let zero_cmd = format!("{BIN} score-loopback --mode zero");
    ok(d, &["recon", "r3dm", "--meas", "meas.json", "--out", "ext.raw", "--steps", "3", "--inner", "2", "--model", "external", "--external-cmd", &zero_cmd]);
    ok(d, &["recon", "r3dm", "--meas", "meas.json", "--out", "zero.raw", "--steps", "3", "--inner", "2", "--model", "zero"]);
    assert_eq!(std::fs::read(d.join("ext.raw")).unwrap(), std::fs::read(d.join("zero.raw")).unwrap());

    let bad_cmd = format!("{BIN} score-loopback --mode garbage");
    let out = r3dm(d, &["recon", "r3dm", "--meas", "meas.json", "--out", "bad.raw", "--steps", "2", "--model", "external", "--external-cmd", &bad_cmd]);
    assert_eq!(out.status.code(), Some(5));
    assert_eq!(error_json(&out)["error"], "external_model");
    assert!(!d.join("bad.raw").exists());
}

#[test]
fn run_writes_the_experiment_tree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.json"),
        r#"{"phantom":{"kind":{"type":"ellipsoids","count":3},"slices":2,"n":16,"seed":0},
            "mask":{"kind":"uniform","accel":2,"center_frac":0.15,"seed":1},
            "method":"pgd","r3dm":{"schedule":{"steps":4}},
            "out_dir":"out","emit":{"trace":true,"png":true}}"#,
    )
    .unwrap();
    ok(d, &["run", "--config", "exp.json"]);
    let out = d.join("out");
    for f in ["gt.raw", "gt.json", "meas.json", "recon.raw", "recon.json", "trace.csv", "metrics.json", "metrics.md", "recon.raw.manifest.json", "png/recon_s000.png", "png/recon_diff_s001.png"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let rc = metrics["recon"]["ssim_3d"].as_f64().unwrap();
    let zf = metrics["zero_filled"]["ssim_3d"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rc) && (0.0..=1.0).contains(&zf));
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    // header plus T * m + 1 loss rows
    assert_eq!(trace.lines().count(), 1 + 4 * 10 + 1);
}

#[test]
fn spectral_check_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["spectral", "check", "--n", "8", "--slices", "1", "--out", "s.json"]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("s.json")).unwrap()).unwrap();
    let ops = r["operators"].as_array().unwrap();
    let a = ops.iter().find(|o| o["operator"].as_str().unwrap().starts_with("A^H A")).unwrap();
    assert!((a["max_eigenvalue"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(r["dhd"]["max_deviation"].as_f64().unwrap() < 1e-9);
    assert_eq!(r["gaussian_pdf_lipschitz"].as_array().unwrap().len(), 6);
    let l = &r["loss_lipschitz"];
    assert!(l["converged"].as_bool().unwrap());
    assert!(l["estimate"].as_f64().unwrap() > 1.0 && l["paper"].as_f64().unwrap() > 5.0);
}
