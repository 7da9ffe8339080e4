//! End-to-end runs of the `freqshot` binary on a tiny synthetic benchmark.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use freqshot::data::SynthConfig;
use freqshot::frequency::{load_image, save_image};
use freqshot::Tensor;
use rand::SeedableRng;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_freqshot"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "freqshot {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success(), "expected failure");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).expect("error line on stderr");
    serde_json::from_str(line).expect("error line is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        image_size: 16,
        source_classes: 6,
        source_images: 6,
        target_train_classes: 5,
        target_train_images: 3,
        target_test_classes: 5,
        target_test_images: 4,
        style_band: 0.25,
        signature_band: (0.5, 1.0),
        ..SynthConfig::default()
    }
}

fn write_synth(dir: &Path) -> PathBuf {
    let p = dir.join("synth.json");
    std::fs::write(&p, serde_json::to_string(&tiny_synth()).unwrap()).unwrap();
    p
}

const TINY_MODEL: [&str; 14] = [
    "--channels", "4,4,4,4", "--input-size", "16", "--head", "proto", "--epochs", "1", "--episodes-per-epoch",
    "3", "--m-query", "2", "--n-tasks", "4",
];

fn train_tiny(synth: &Path, run_dir: &Path, seed: &str) {
    let mut args = vec!["train", "--synth-config", s(synth), "--run-dir", s(run_dir), "--seed", seed];
    args.extend(TINY_MODEL);
    ok(&args);
}

fn csv_header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn train_is_deterministic_and_writes_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_tiny(&synth, &a, "7");
    train_tiny(&synth, &b, "7");
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    assert!(a.join("config.json").is_file());
    assert!(a.join("checkpoints/final.ckpt").is_file());
    assert!(a.join("analysis").is_dir());
    assert_eq!(
        csv_header(&a.join("metrics.csv")),
        ["epoch", "episode", "loss_src", "loss_tar", "loss_pseudo", "total"]
    );
    assert_eq!(csv::Reader::from_path(a.join("metrics.csv")).unwrap().records().count(), 3);

    // The snapshot alone reproduces the run.
    let c = dir.path().join("c");
    ok(&["train", "--config", s(&a.join("config.json")), "--run-dir", s(&c)]);
    assert_eq!(ma, std::fs::read(c.join("metrics.csv")).unwrap());
}

#[test]
fn analysis_commands_on_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let run_dir = dir.path().join("run");
    train_tiny(&synth, &run_dir, "1");
    let ckpt = run_dir.join("checkpoints/final.ckpt");

    let eval_dir = dir.path().join("eval");
    ok(&[
        "eval", "--checkpoint", s(&ckpt), "--synth-config", s(&synth), "--out", s(&eval_dir), "--n-tasks", "5",
        "--m-query", "2",
    ]);
    assert_eq!(csv_header(&eval_dir.join("eval.csv")), ["split", "n_tasks", "mean", "ci95"]);
    let report: Value = serde_json::from_slice(&std::fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
    let mean = report["mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
    assert_eq!(report["accuracies"].as_array().unwrap().len(), 5);
    assert!(eval_dir.join("config.json").is_file());

    // Re-running with more threads gives the same tasks and accuracies.
    let eval2 = dir.path().join("eval2");
    ok(&[
        "--threads", "2", "eval", "--checkpoint", s(&ckpt), "--synth-config", s(&synth), "--out", s(&eval2),
        "--n-tasks", "5", "--m-query", "2",
    ]);
    let report2: Value = serde_json::from_slice(&std::fs::read(eval2.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["accuracies"], report2["accuracies"]);

    let probe_dir = dir.path().join("probe");
    ok(&[
        "probe", "--checkpoint", s(&ckpt), "--synth-config", s(&synth), "--out", s(&probe_dir), "--gamma-probe",
        "0.1", "--n-tasks", "3", "--m-query", "2",
    ]);
    assert_eq!(
        csv_header(&probe_dir.join("probe.csv")),
        ["gamma_probe", "n_tasks", "original_acc", "low_acc", "high_acc", "low_ratio", "high_ratio"]
    );

    let mmd_dir = dir.path().join("mmd");
    ok(&["mmd", "--checkpoint", s(&ckpt), "--synth-config", s(&synth), "--out", s(&mmd_dir), "--count", "10"]);
    let m: Value = serde_json::from_slice(&std::fs::read(mmd_dir.join("mmd.json")).unwrap()).unwrap();
    assert!(m["value"].as_f64().unwrap() >= 0.0);

    let filt = dir.path().join("filters");
    ok(&["export-filters", "--checkpoint", s(&ckpt), "--out", s(&filt)]);
    for l in 0..4 {
        let stem = format!("blocks_{l}_gff");
        assert!(filt.join(format!("{stem}.png")).is_file(), "{stem}.png");
        let grid: Vec<Vec<f64>> = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(filt.join(format!("{stem}.csv")))
            .unwrap()
            .records()
            .map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect())
            .collect();
        assert!(grid.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn ablate_standard_grid_emits_eight_rows() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let out = dir.path().join("ablate");
    let mut args = vec!["ablate", "--synth-config", s(&synth), "--out", s(&out), "--seeds", "0"];
    args.extend(TINY_MODEL);
    ok(&args);
    assert_eq!(
        csv_header(&out.join("ablation.csv")),
        ["config", "n_seeds", "mean_acc", "std_acc", "accs"]
    );
    let rows: Vec<_> = csv::Reader::from_path(out.join("ablation.csv")).unwrap().records().collect();
    assert_eq!(rows.len(), 8);
    let runs: Vec<_> = csv::Reader::from_path(out.join("runs.csv")).unwrap().records().collect();
    assert_eq!(runs.len(), 8);
}

#[test]
fn ablate_reads_a_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let grid = dir.path().join("grid.json");
    std::fs::write(
        &grid,
        r#"[{"name":"lfr","lfr":true,"hfe":false,"gff":false},
            {"name":"hfr","lfr":true,"hfe":false,"gff":false,"mode":"hfr"}]"#,
    )
    .unwrap();
    let out = dir.path().join("ablate");
    let mut args = vec!["ablate", "--synth-config", s(&synth), "--out", s(&out), "--seeds", "0,1", "--grid", s(&grid)];
    args.extend(TINY_MODEL);
    ok(&args);
    let names: Vec<String> = csv::Reader::from_path(out.join("ablation.csv"))
        .unwrap()
        .records()
        .map(|r| r.unwrap()[0].to_string())
        .collect();
    assert_eq!(names, ["lfr", "hfr"]);
}

#[test]
fn gen_data_writes_a_loadable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let out = dir.path().join("data");
    ok(&["gen-data", "--config", s(&synth), "--out", s(&out), "--seed", "3"]);
    let bench = freqshot::data::Benchmark::load(&out.join("manifest.json")).unwrap();
    assert_eq!(bench.source.num_classes(), 6);
    assert_eq!(bench.target_test.num_images(), 20);
}

fn solid(path: &Path, v: f64) {
    save_image(path, &Tensor::full(&[3, 8, 8], v)).unwrap();
}

#[test]
fn decompose_identities() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.png");
    solid(&flat, 0.6);
    let out = dir.path().join("flat_out");
    ok(&["decompose", "--image", s(&flat), "--gamma", "0.1", "--out", s(&out)]);
    let x = load_image(&flat).unwrap();
    assert!(max_abs_diff(&load_image(&out.join("low.png")).unwrap(), &x) <= 1.0 / 255.0 + 1e-12);
    assert!(load_image(&out.join("high.png")).unwrap().data().iter().all(|&v| v == 0.0));
    assert!(out.join("spectrum.png").is_file());

    let mut rng = rand::rngs::StdRng::seed_from_u64(0);
    let noisy = dir.path().join("noisy.png");
    save_image(&noisy, &Tensor::rand_uniform(&[3, 12, 10], 0.0, 1.0, &mut rng)).unwrap();
    let out = dir.path().join("noisy_out");
    ok(&["decompose", "--image", s(&noisy), "--gamma", "0.15", "--out", s(&out)]);
    let meta: Value = serde_json::from_slice(&std::fs::read(out.join("decompose.json")).unwrap()).unwrap();
    assert!(meta["max_recompose_error"].as_f64().unwrap() < 1e-9);

    let out = dir.path().join("full_out");
    ok(&["decompose", "--image", s(&noisy), "--gamma", "1", "--out", s(&out)]);
    let low = load_image(&out.join("low.png")).unwrap();
    assert!(max_abs_diff(&low, &load_image(&noisy).unwrap()) <= 1.0 / 255.0 + 1e-12);
}

#[test]
fn augment_with_zero_gamma_on_itself_reproduces_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", s(&synth), "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    let out = dir.path().join("aug");
    ok(&[
        "augment", "--src-manifest", s(&manifest), "--tar-manifest", s(&manifest), "--gamma", "0", "--out", s(&out),
        "--episodes", "2", "--m-query", "2",
    ]);
    let prov: Value = serde_json::from_slice(&std::fs::read(out.join("provenance.json")).unwrap()).unwrap();
    let eps = prov.as_array().unwrap();
    assert_eq!(eps.len(), 2);
    for ep in eps {
        assert_eq!(ep["gamma"], 0.0);
        let files: Vec<&str> = ep["support"]
            .as_array()
            .unwrap()
            .iter()
            .chain(ep["query"].as_array().unwrap())
            .map(|v| v.as_str().unwrap())
            .collect();
        let pairs = ep["pairs"].as_array().unwrap();
        assert_eq!(files.len(), pairs.len());
        for (f, pair) in files.iter().zip(pairs) {
            assert_eq!(pair[0], pair[1]);
            let original = load_image(&data.join(pair[0].as_str().unwrap())).unwrap();
            let fused = load_image(&out.join(f)).unwrap();
            assert!(max_abs_diff(&original, &fused) <= 1.0 / 255.0 + 1e-12, "{f}");
        }
    }
}

#[test]
fn augment_records_mode_and_gamma_range() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let data = dir.path().join("data");
    ok(&["gen-data", "--config", s(&synth), "--out", s(&data)]);
    let manifest = data.join("manifest.json");
    let out = dir.path().join("aug");
    ok(&[
        "augment", "--src-manifest", s(&manifest), "--tar-manifest", s(&manifest), "--gamma-range", "0", "0.2",
        "--mode", "hfr", "--out", s(&out), "--episodes", "3", "--m-query", "1", "--seed", "5",
    ]);
    let prov: Value = serde_json::from_slice(&std::fs::read(out.join("provenance.json")).unwrap()).unwrap();
    for ep in prov.as_array().unwrap() {
        assert_eq!(ep["mode"], "hfr");
        let g = ep["gamma"].as_f64().unwrap();
        assert!((0.0..=0.2).contains(&g));
        assert!((ep["radius"].as_f64().unwrap() - g * 16.0).abs() < 1e-12);
    }
}

#[test]
fn failures_print_a_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write_synth(dir.path());
    let run_dir = dir.path().join("bad");
    let e = error_json(&run(&["train", "--synth-config", s(&synth), "--run-dir", s(&run_dir), "--lr=-1"]));
    assert_eq!(e["error"]["kind"], "config");
    assert_eq!(e["error"]["field"], "lr");
    assert!(!run_dir.exists(), "validation happens before any output");

    let e = error_json(&run(&["train", "--synth-config", s(&synth), "--run-dir", s(&run_dir), "--input-size", "32"]));
    assert_eq!(e["error"]["field"], "model.backbone.input_size");

    let e = error_json(&run(&[
        "decompose", "--image", s(&dir.path().join("missing.png")), "--gamma", "0.1", "--out", s(&run_dir),
    ]));
    assert_eq!(e["error"]["kind"], "io");

    let e = error_json(&run(&[
        "decompose", "--image", s(&dir.path().join("x.png")), "--gamma", "1.5", "--out", s(&run_dir),
    ]));
    assert_eq!(e["error"]["field"], "gamma");

    let bad_manifest = dir.path().join("m.json");
    std::fs::write(&bad_manifest, "{}").unwrap();
    let e = error_json(&run(&[
        "augment", "--src-manifest", s(&bad_manifest), "--tar-manifest", s(&bad_manifest), "--gamma", "0.1",
        "--out", s(&run_dir),
    ]));
    assert_eq!(e["error"]["kind"], "manifest");
}
