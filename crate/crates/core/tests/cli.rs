use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use plumegrav::dataset::{self, DatasetManifest};
use plumegrav::par::Exec;
use plumegrav::{FieldKind, VolumeField};
use serde_json::Value;

fn plumegrav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plumegrav"))
        .args(args)
        .env_remove("PLUMEGRAV_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = plumegrav(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn generate(dir: &Path, n: &str, seed: &str) {
    ok(&["generate", "--out", s(dir), "-n", n, "--seed", seed, "--dims", "16,16,16"]);
}

#[test]
fn generate_is_complete_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, "4", "7");
    ok(&["--sequential", "generate", "--out", s(&b), "-n", "4", "--seed", "7", "--dims", "16,16,16"]);

    let (m, records) = dataset::read_dataset(&a, Exec::Sequential).unwrap();
    assert_eq!(records.len(), 4);
    assert!(m.splits.is_none());
    assert_eq!(m.grid.dims, [16, 16, 16]);
    assert_eq!(m.reproducibility.seed, 7);
    assert_eq!(m.reproducibility.format_version, dataset::FORMAT_VERSION);
    assert_eq!(m.reproducibility.config_hash.len(), 64);
    for e in &m.samples {
        let dir = a.join(&e.path);
        let names: Vec<String> = fs::read_dir(&dir).unwrap().map(|d| d.unwrap().file_name().into_string().unwrap()).collect();
        assert_eq!(names.len(), 6);
        for f in ["gravity_raw.f32", "gravity_norm.f32", "density.f32", "saturation.f32", "mask.f32", "manifest.json"] {
            assert_eq!(fs::read(dir.join(f)).unwrap(), fs::read(b.join(&e.path).join(f)).unwrap(), "{f}");
        }
    }
    assert_eq!(DatasetManifest::load(&b).unwrap(), m);
}

#[test]
fn truth_as_prediction_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    generate(&ds, "3", "1");
    let report = tmp.path().join("eval.json");
    let csv = tmp.path().join("eval.csv");
    ok(&[
        "evaluate", "--dataset", s(&ds), "--predictions", s(&ds.join("samples")),
        "--out-json", s(&report), "--out-csv", s(&csv),
    ]);
    let r = json(&report);
    assert_eq!(r["command"], "evaluate");
    assert!(r["reproducibility"]["config_hash"].is_string());
    for row in r["result"]["samples"].as_array().unwrap() {
        assert_eq!(row["mse_model"], 0.0);
        assert_eq!(row["r_squared"], 1.0);
        assert_eq!(row["dice"], 1.0);
        assert!(row["mse_data"].as_f64().unwrap() < 1e-10);
    }
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("id,mse_model,mse_data,r_squared,dice"));
}

#[test]
fn invert_then_evaluate_and_null_refine() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    generate(&ds, "2", "3");
    let inv = tmp.path().join("inv");
    ok(&["invert", "--dataset", s(&ds), "--out", s(&inv)]);

    let report = tmp.path().join("eval.json");
    ok(&[
        "evaluate", "--dataset", s(&ds), "--predictions", s(&inv), "--threshold", "-7",
        "--out-json", s(&report), "--out-csv", s(&tmp.path().join("eval.csv")),
    ]);
    let agg = &json(&report)["result"]["aggregate"];
    assert!(agg["mse_data"]["mean"].as_f64().unwrap() < 1e-4);

    // a null-model prediction written in the exchange format
    let m = DatasetManifest::load(&ds).unwrap();
    let grid = m.build_grid().unwrap();
    let null = tmp.path().join("null");
    for e in &m.samples {
        dataset::write_prediction(&e.id, &VolumeField::zeros(grid.clone(), FieldKind::DensityChange), &null.join(&e.id)).unwrap();
    }
    let refined = tmp.path().join("ref");
    ok(&["refine", "--dataset", s(&ds), "--predictions", s(&null), "--out", s(&refined)]);
    let a = json(&inv.join("invert.json"));
    let b = json(&refined.join("refine.json"));
    let rows = |v: &Value| v["result"].as_array().unwrap().clone();
    for (x, y) in rows(&a).iter().zip(rows(&b).iter()) {
        assert_eq!(x["data_misfit_history"], y["data_misfit_history"]);
        let h: Vec<f64> = x["data_misfit_history"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
        let id = x["id"].as_str().unwrap();
        assert_eq!(fs::read(inv.join(id).join("density.f32")).unwrap(), fs::read(refined.join(id).join("density.f32")).unwrap());
    }
}

#[test]
fn split_forward_and_sequences() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    ok(&["generate", "--out", s(&ds), "-n", "20", "--seed", "2", "--dims", "8,8,8", "--sensor-spacing", "1000", "--export-kernel"]);
    let m = DatasetManifest::load(&ds).unwrap();
    let before = m.splits.clone().unwrap();
    assert!(m.kernel.is_some());
    ok(&["split", "--dataset", s(&ds), "--seed", "99"]);
    let after = DatasetManifest::load(&ds).unwrap().splits.unwrap();
    assert_ne!(before, after);
    assert_eq!((after.train.len(), after.val.len(), after.test.len()), (17, 1, 2));

    let out = tmp.path().join("fwd.json");
    ok(&["forward", "--dataset", s(&ds), "--input", s(&ds.join("samples/s00000")), "--spacing", "2000", "--out", s(&out)]);
    let r = json(&out);
    assert_eq!(r["result"]["counts"], serde_json::json!([3, 3]));
    assert_eq!(r["result"]["gravity_ugal"].as_array().unwrap().len(), 9);
    assert!(plumegrav(&["forward", "--dataset", s(&ds), "--input", s(&ds.join("samples/s00000")), "--spacing", "1500", "--out", s(&out)]).status.code() != Some(0));

    let seq = tmp.path().join("seq");
    ok(&["sequences", "--out", s(&seq), "--steps", "12", "--dims", "8,8,8"]);
    let entries = json(&seq.join("sequences.json"));
    let list = entries["result"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[0]["target"], "s00009");
    assert_eq!(list[2]["ids"].as_array().unwrap().len(), 10);
    assert_eq!(DatasetManifest::load(&seq).unwrap().samples.len(), 12);
}

#[test]
fn failures_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = plumegrav(&["invert", "--dataset", s(&missing), "--out", s(&tmp.path().join("o"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let ds = tmp.path().join("ds");
    generate(&ds, "1", "0");
    let payload = ds.join("samples/s00000/density.f32");
    let mut bytes = fs::read(&payload).unwrap();
    bytes[40] ^= 0x10;
    fs::write(&payload, bytes).unwrap();
    let out = plumegrav(&["invert", "--dataset", s(&ds), "--out", s(&tmp.path().join("o"))]);
    assert_ne!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));

    assert_ne!(plumegrav(&["--threads", "0", "split", "--dataset", s(&ds)]).status.code(), Some(0));
    assert_ne!(plumegrav(&["split", "--dataset", s(&ds)]).status.code(), Some(0));
    assert_ne!(plumegrav(&["generate", "--out", s(&tmp.path().join("z")), "-n", "0"]).status.code(), Some(0));
    assert_ne!(plumegrav(&["bogus"]).status.code(), Some(0));
}

#[test]
fn thread_count_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_plumegrav"))
        .args(["generate", "--out", s(&tmp.path().join("d")), "-n", "1", "--dims", "8,8,8", "--sensor-spacing", "1000"])
        .env("PLUMEGRAV_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_plumegrav"))
        .args(["generate", "--out", s(&tmp.path().join("e")), "-n", "1"])
        .env("PLUMEGRAV_THREADS", "many")
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
