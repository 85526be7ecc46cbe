use std::path::Path;
use std::process::{Command, Output};

use curvekit_core::synthetic::sample_sphere;
use curvekit_core::tensor_io::{load_tensor, save_bundle, save_tensor};
use curvekit_core::{ImageTensor, LayerBundle};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvekit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "curvekit {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn sphere_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("sphere.ltnt");
    let batch = dir.path().join("batch.ltnt");
    let curv = dir.path().join("curv.json");

    ok(&[
        "gen",
        "--shape",
        "sphere",
        "--n",
        "5000",
        "--seed",
        "3",
        "--radius",
        "2",
        "--out",
        s(&cloud),
    ]);
    let t = load_tensor(&cloud).unwrap();
    assert_eq!((t.rows(), t.cols()), (5000, 3));

    let id: Value = serde_json::from_str(&ok(&["id", "--in", s(&cloud)])).unwrap();
    let est = id["twonn"]["id"].as_f64().unwrap();
    assert!((est - 2.0).abs() < 0.3, "{est}");
    assert_eq!(id["pca"]["pc_id"], 3);
    assert!(id["rd"].as_f64().unwrap() >= 0.0);

    ok(&[
        "neighborhoods",
        "--method",
        "knn",
        "--in",
        s(&cloud),
        "--out",
        s(&batch),
        "--k",
        "100",
        "--index",
        "0,10,20,30",
    ]);
    let b = load_tensor(&batch).unwrap();
    assert_eq!(b.rows(), 4 * 101);
    assert_eq!(b.ext.block_size, Some(101));

    ok(&["curvature", "--in", s(&batch), "--d", "auto", "--json", s(&curv)]);
    let c = read_json(&curv);
    let layer = &c["layers"][0];
    assert_eq!(layer["d"], 2);
    assert_eq!(layer["points"].as_array().unwrap().len(), 4);

    for (metric, expect) in [("mapc", 0.5), ("mamc", 0.5), ("masc", 0.25), ("marc", 0.0625)] {
        let m: Value = serde_json::from_str(&ok(&["metrics", "--in", s(&curv), "--metric", metric])).unwrap();
        let v = m["overall"].as_f64().unwrap();
        assert!((v - expect).abs() < 0.2 * expect, "{metric}: {v}");
    }
    let m: Value = serde_json::from_str(&ok(&[
        "metrics",
        "--in",
        s(&curv),
        "--metric",
        "masc",
        "--planes",
        "random:16",
    ]))
    .unwrap();
    assert!((m["overall"].as_f64().unwrap() - 0.25).abs() < 0.05);
}

#[test]
fn sequential_and_parallel_outputs_match() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("e.ltnt");
    ok(&[
        "gen",
        "--shape",
        "ellipsoid",
        "--n",
        "2000",
        "--axes",
        "3,2,1",
        "--out",
        s(&cloud),
    ]);
    let a = ok(&["id", "--in", s(&cloud), "--twonn"]);
    let b = ok(&["--sequential", "id", "--in", s(&cloud), "--twonn"]);
    assert_eq!(a, b);
    assert!(!a.contains("pca"));
}

#[test]
fn patch_generation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.ltnt");
    ok(&[
        "gen",
        "--shape",
        "patch",
        "--n",
        "50",
        "--d",
        "3",
        "--ambient",
        "6",
        "--out",
        s(&p),
    ]);
    assert_eq!(load_tensor(&p).unwrap().cols(), 6);
    ok(&[
        "gen",
        "--shape",
        "patch",
        "--n",
        "50",
        "--curvatures",
        "1,-1",
        "--out",
        s(&p),
    ]);
    assert_eq!(load_tensor(&p).unwrap().cols(), 3);
}

#[test]
fn image_neighborhoods() {
    let dir = tempfile::tempdir().unwrap();
    let img_path = dir.path().join("img.ltnt");
    let img = ImageTensor::from_fn(12, 12, 2, |c, i, j| {
        let h = ((c * 144 + i * 12 + j) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        (h >> 11) as f64 / (1u64 << 53) as f64
    })
    .unwrap();
    save_tensor(&img.to_tensor(), &img_path).unwrap();

    let svd = dir.path().join("svd.ltnt");
    ok(&[
        "neighborhoods",
        "--method",
        "svd",
        "--in",
        s(&img_path),
        "--out",
        s(&svd),
        "--tail",
        "4",
    ]);
    let t = load_tensor(&svd).unwrap();
    assert_eq!(t.rows(), 1 + 16);
    assert_eq!(t.cols(), 2 * 144);

    let aff = dir.path().join("aff.ltnt");
    ok(&[
        "neighborhoods",
        "--method",
        "affine",
        "--in",
        s(&img_path),
        "--out",
        s(&aff),
        "--n",
        "9",
        "--seed",
        "1",
    ]);
    assert_eq!(load_tensor(&aff).unwrap().rows(), 10);

    let out = run(&[
        "neighborhoods",
        "--method",
        "svd",
        "--in",
        s(&dir.path().join("missing.ltnt")),
        "--out",
        s(&aff),
    ]);
    assert!(!out.status.success());
}

#[test]
fn bundle_profile_and_gap() {
    let dir = tempfile::tempdir().unwrap();
    let t = sample_sphere(1.0, 1500, 9).unwrap();
    let layers: Vec<LayerBundle> = [1.0, 2.0, 4.0]
        .iter()
        .enumerate()
        .map(|(i, scale)| LayerBundle {
            layer_name: format!("layer{i}"),
            layer_index: i,
            total_layers: 3,
            tensor: t.map(|v| v * scale),
        })
        .collect();
    let bundle = dir.path().join("layers.lbnd");
    save_bundle(&layers, &bundle).unwrap();

    let profile = dir.path().join("profile.json");
    let csv = dir.path().join("profile.csv");
    ok(&[
        "profile",
        "--bundle",
        s(&bundle),
        "--points",
        "20",
        "--k",
        "60",
        "--json",
        s(&profile),
        "--csv",
        s(&csv),
    ]);
    let p = read_json(&profile);
    let recs = p["layers"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    assert_eq!(recs[0]["relative_depth"], 0.0);
    assert_eq!(recs[2]["relative_depth"], 1.0);
    assert_eq!(p["mapc_std_over"], "base points");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("relative_depth,mapc,mapc_std,id,pc_id,rd,mge"));
    assert_eq!(text.lines().count(), 4);

    let g: Value = serde_json::from_str(&ok(&["gap", "--profile", s(&profile)])).unwrap();
    let m0 = recs[0]["mapc"].as_f64().unwrap();
    let expect_gap = m0 - m0 / 4.0;
    let expect_mean = m0 * (1.0 + 0.5 + 0.25) / 3.0;
    assert!((g["mapc_gap"].as_f64().unwrap() - expect_gap).abs() < 1e-9);
    assert!((g["nmapc_gap"].as_f64().unwrap() - expect_gap / expect_mean).abs() < 1e-9);

    let curv = dir.path().join("curv.json");
    ok(&[
        "curvature",
        "--bundle",
        s(&bundle),
        "--d",
        "2",
        "--points",
        "5",
        "--k",
        "40",
        "--json",
        s(&curv),
    ]);
    let c = read_json(&curv);
    assert_eq!(c["layers"].as_array().unwrap().len(), 3);
    assert_eq!(c["layers"][1]["points"].as_array().unwrap().len(), 5);
}

#[test]
fn rejects_bad_arguments() {
    assert!(!run(&["curvature", "--in", "x.ltnt", "--d", "zero"]).status.success());
    assert!(!run(&["gen", "--shape", "torus", "--n", "5", "--out", "x"])
        .status
        .success());
    assert!(!run(&["id", "--in", "x.ltnt", "--twonn", "--pcid"]).status.success());
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ltnt");
    std::fs::write(&bad, b"LTNT\x01\x00\x04\x00\x00\x00\x04\x00\x00\x00").unwrap();
    let out = run(&["id", "--in", s(&bad)]);
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("declares 4x4"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
