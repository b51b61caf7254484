use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use nonlin_core::{write_array, SampleMatrix, Signature};

fn nonlin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nonlin")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = nonlin(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: u64) {
    ok(&[
        "synth",
        "--widths",
        "12,12,12,12",
        "--act",
        "tanh",
        "--batch",
        "64",
        "--batches",
        "2",
        "--seed",
        &seed.to_string(),
        "--out",
        p(dir),
    ]);
}

#[test]
fn score_reports_csv_and_json() {
    let tmp = tempfile::tempdir().unwrap();
    let x = SampleMatrix::new(DMatrix::from_fn(30, 2, |i, j| ((i * 7 + j * 3) % 11) as f64)).unwrap();
    let y = x.map(|v| 2.0 * v + 1.0).unwrap();
    write_array(&x, tmp.path().join("x.npy")).unwrap();
    write_array(&y, tmp.path().join("y.npy")).unwrap();
    let (xp, yp) = (tmp.path().join("x.npy"), tmp.path().join("y.npy"));

    let csv = ok(&["score", "--x", p(&xp), "--y", p(&yp)]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "score,raw_score,w2_numerator,denominator,shrinkage_used,degenerate");
    let score: f64 = lines.next().unwrap().split(',').next().unwrap().parse().unwrap();
    assert!(score > 0.999, "{score}");

    let json: serde_json::Value =
        serde_json::from_str(&ok(&["score", "--x", p(&xp), "--y", p(&yp), "--format", "json"])).unwrap();
    assert_eq!(json["score"].as_f64().unwrap(), score);
}

#[test]
fn invalid_inputs_exit_2_and_name_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.npy");
    let o = nonlin(&["score", "--x", p(&missing), "--y", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.npy"));

    let bad = tmp.path().join("bad.npy");
    fs::write(&bad, b"not an array").unwrap();
    let o = nonlin(&["score", "--x", p(&bad), "--y", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.npy"));

    assert_eq!(nonlin(&["sweep", "--act", "swish"]).status.code(), Some(2));
    assert_eq!(nonlin(&["sweep", "--act", "relu", "--means", "1:2"]).status.code(), Some(2));
    assert_eq!(nonlin(&["synth", "--widths", "4", "--act", "relu"]).status.code(), Some(2));
}

#[test]
fn singular_input_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    // five points in six dimensions cannot be whitened without shrinkage
    let x =
        SampleMatrix::new(DMatrix::from_fn(5, 6, |i, j| ((i * 5 + j * 3) % 7) as f64 + 0.1 * (i * j) as f64)).unwrap();
    write_array(&x, tmp.path().join("x.npy")).unwrap();
    let xp = tmp.path().join("x.npy");
    let o = nonlin(&["score", "--x", p(&xp), "--y", p(&xp), "--shrinkage", "off"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("x.npy"));
}

#[test]
fn sweep_writes_grid_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    ok(&[
        "sweep",
        "--act",
        "sigmoid",
        "--means",
        "-3:3:3",
        "--stds",
        "1,0.5",
        "--dim",
        "6",
        "--n",
        "80",
        "--out",
        p(&out),
    ]);
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 3 * 2);
    assert!(grid.starts_with("mean,std,score,degenerate\n-3,1,"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    let json: serde_json::Value = serde_json::from_str(&ok(&[
        "sweep", "--act", "sigmoid", "--means", "-3:3:3", "--stds", "1,0.5", "--dim", "6", "--n", "80", "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(json["summary"].as_array().unwrap().len(), 3);
    assert_eq!(json["grid"]["cells"][0].as_array().unwrap().len(), 2);
}

#[test]
fn signature_of_a_synthetic_capture() {
    let tmp = tempfile::tempdir().unwrap();
    let cap = tmp.path().join("cap");
    synth(&cap, 1);
    let csv = ok(&["signature", "--capture", p(&cap)]);
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "order_index,site_id,group_tag,mean,std");
    assert_eq!(rows.len(), 5);
    assert!(rows[1].starts_with("0,layer0,dense,"));

    let out = tmp.path().join("sig");
    ok(&["signature", "--capture", p(&cap), "--out", p(&out), "--literal-definition"]);
    let sig = Signature::read(out.join("signature.json")).unwrap();
    assert_eq!(sig.sites.len(), 4);
    assert!(sig.scores().iter().all(|s| (0.0..=1.0).contains(s)));
    assert!(out.join("signature.csv").exists());
}

#[test]
fn corrupt_capture_lists_the_violation() {
    let tmp = tempfile::tempdir().unwrap();
    let cap = tmp.path().join("cap");
    synth(&cap, 2);
    fs::remove_file(cap.join("layer2_b0001_out.npy")).unwrap();
    let o = nonlin(&["signature", "--capture", p(&cap)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("layer2_b0001_out.npy"), "{}", stderr(&o));
}

#[test]
fn compare_reports_metric_correlations() {
    let tmp = tempfile::tempdir().unwrap();
    let cap = tmp.path().join("cap");
    synth(&cap, 3);
    let csv = ok(&["compare", "--capture", p(&cap)]);
    let metrics: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(metrics, ["affinity", "linear_cka", "delta_sparsity", "delta_entropy", "frob_diff", "r2_linear"]);
}

fn signatures(root: &Path) -> std::path::PathBuf {
    let sigs = root.join("sigs");
    fs::create_dir(&sigs).unwrap();
    for (k, name) in ["alpha", "beta", "gamma"].iter().enumerate() {
        let cap = root.join(format!("cap{k}"));
        synth(&cap, 10 + k as u64);
        let json = ok(&["signature", "--capture", p(&cap), "--format", "json"]);
        fs::write(sigs.join(format!("{name}.json")), json).unwrap();
    }
    sigs
}

#[test]
fn cluster_and_predict() {
    let tmp = tempfile::tempdir().unwrap();
    let sigs = signatures(tmp.path());

    let out = tmp.path().join("tree");
    ok(&["cluster", "--sigs", p(&sigs), "--linkage", "complete", "--out", p(&out)]);
    let d = fs::read_to_string(out.join("distances.csv")).unwrap();
    assert!(d.starts_with("label,alpha,beta,gamma\nalpha,0,"));
    let nwk = fs::read_to_string(out.join("dendrogram.nwk")).unwrap();
    assert!(nwk.ends_with(");\n") && ["alpha", "beta", "gamma"].iter().all(|l| nwk.contains(l)));
    let tree: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("dendrogram.json")).unwrap()).unwrap();
    assert_eq!(tree["linkage"], "complete");
    assert_eq!(tree["merges"].as_array().unwrap().len(), 2);

    let acc = tmp.path().join("acc.csv");
    fs::write(&acc, "label,acc@1\nalpha,0.71\nbeta,0.74\ngamma,0.69\n").unwrap();
    let report = ok(&["predict", "--sigs", p(&sigs), "--acc", p(&acc)]);
    assert!(report.starts_with("statistic,pearson,best\nmean,"));
    assert_eq!(report.lines().filter(|l| l.ends_with(",true")).count(), 1);

    fs::write(&acc, "label,acc@1\nalpha,0.71\ngamma,0.69\n").unwrap();
    let o = nonlin(&["predict", "--sigs", p(&sigs), "--acc", p(&acc)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"));
}
