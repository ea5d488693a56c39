//! End-to-end runs of the `colopath` binary over synthetic data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn colopath(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_colopath"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tree_bytes(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn synth_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &str| {
        vec![
            "synth".to_string(),
            "--classes".into(),
            "4".into(),
            "--per-class".into(),
            "10".into(),
            "--seed".into(),
            "7".into(),
            "--out".into(),
            out.to_string(),
        ]
    };
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let argv: Vec<String> = args(out_dir.to_str().unwrap());
        let argv: Vec<&str> = argv.iter().map(|s| s.as_str()).collect();
        assert_ok(&colopath(&argv, &[]), "synth");
    }
    let a = tree_bytes(&dir.path().join("a"));
    let b = tree_bytes(&dir.path().join("b"));
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    for (path, bytes) in &a {
        assert_eq!(bytes, &b[path], "{} differs", path.display());
    }
}

#[test]
fn full_synthetic_flow_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    let data_s = data.to_str().unwrap();

    assert_ok(
        &colopath(
            &[
                "synth", "--classes", "4", "--per-class", "8", "--val-per-class", "3",
                "--test-per-class", "3", "--side", "32", "--seed", "1", "--out", data_s,
            ],
            &[],
        ),
        "synth",
    );
    assert!(data.join("synth.config.json").is_file());
    assert!(data.join("manifest.csv").is_file());
    assert!(data.join("classes.json").is_file());

    let stats_file = dir.path().join("stats.json");
    assert_ok(
        &colopath(
            &["stats", "--manifest", data_s, "--out", stats_file.to_str().unwrap()],
            &[],
        ),
        "stats",
    );
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&stats_file).unwrap()).unwrap();
    assert_eq!(stats["scale"], "unit");
    assert_eq!(stats["mean"].as_array().unwrap().len(), 3);

    // Train through the environment-variable output root.
    let out = colopath(
        &[
            "train", "--manifest", data_s, "--preset", "synthetic", "--run-name", "flow",
            "--seed", "11", "--input-side", "32", "--batch-size", "8", "--max-epochs", "4",
        ],
        &[("COLOPATH_OUTPUT_ROOT", runs.to_str().unwrap())],
    );
    assert_ok(&out, "train");
    let run = runs.join("flow/11");
    for artifact in [
        "config.json",
        "stats.json",
        "epochs.csv",
        "checkpoints/best.ckpt",
        "checkpoints/best.meta.json",
        "logits/val.csv",
        "logits/test.csv",
    ] {
        assert!(run.join(artifact).is_file(), "missing {artifact}");
    }
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(config["config"]["batch_size"], 8);

    let run_s = run.to_str().unwrap();
    assert_ok(&colopath(&["calibrate", "--run", run_s], &[]), "calibrate");
    let calib: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("calibration.json")).unwrap())
            .unwrap();
    for key in ["temperature", "nll_before", "nll_after", "ece_before", "ece_after", "num_bins"] {
        assert!(calib.get(key).is_some(), "calibration.json missing {key}");
    }
    assert!(calib["nll_after"].as_f64().unwrap() <= calib["nll_before"].as_f64().unwrap() + 1e-9);

    assert_ok(&colopath(&["eval", "--run", run_s], &[]), "eval");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap();
    for key in ["accuracy", "macro_f1", "macro_auc", "weighted_ovr_auc", "confusion", "per_class"] {
        assert!(metrics.get(key).is_some(), "metrics.json missing {key}");
    }
    assert_eq!(metrics["confusion"].as_array().unwrap().len(), 4);

    assert_ok(
        &colopath(
            &[
                "explain", "--run", run_s, "--manifest", data_s, "--samples",
                "test/c0_0000.png,test/c1_0001.png", "--csv",
            ],
            &[],
        ),
        "explain",
    );
    let heatmaps: Vec<_> = std::fs::read_dir(run.join("heatmaps"))
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    assert!(heatmaps.iter().any(|f| f.starts_with("test_c0_0000.png_") && f.ends_with(".png")));
    assert!(heatmaps.iter().any(|f| f.ends_with(".csv")));

    assert_ok(
        &colopath(&["report", "--sweep", runs.join("flow").to_str().unwrap()], &[]),
        "report",
    );
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(runs.join("flow/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["metric_name"], "test_accuracy");
    assert_eq!(report["per_seed"].as_array().unwrap().len(), 1);
}

#[test]
fn sweep_report_mean_and_std_recompute() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let runs = dir.path().join("runs");
    assert_ok(
        &colopath(
            &[
                "synth", "--classes", "2", "--per-class", "6", "--val-per-class", "2",
                "--test-per-class", "4", "--side", "32", "--seed", "3", "--out",
                data.to_str().unwrap(),
            ],
            &[],
        ),
        "synth",
    );
    assert_ok(
        &colopath(
            &[
                "sweep", "--manifest", data.to_str().unwrap(), "--preset", "synthetic",
                "--run-name", "sw", "--output-root", runs.to_str().unwrap(), "--input-side",
                "32", "--batch-size", "6", "--max-epochs", "2", "--seeds", "5,6",
            ],
            &[],
        ),
        "sweep",
    );
    for seed in ["5", "6"] {
        assert!(runs.join("sw").join(seed).join("config.json").is_file());
        assert!(runs.join("sw").join(seed).join("logits/test.csv").is_file());
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs.join("sw/report.json")).unwrap())
            .unwrap();
    let per_seed = report["per_seed"].as_array().unwrap();
    assert_eq!(per_seed.len(), 2);
    let values: Vec<f64> = per_seed.iter().map(|m| m["value"].as_f64().unwrap()).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    assert!((report["mean"].as_f64().unwrap() - mean).abs() < 1e-12);
    assert!((report["std"].as_f64().unwrap() - var.sqrt()).abs() < 1e-12);

    // report recomputed from the run directory agrees with the sweep output.
    let before = std::fs::read_to_string(runs.join("sw/report.json")).unwrap();
    assert_ok(
        &colopath(&["report", "--sweep", runs.join("sw").to_str().unwrap()], &[]),
        "report",
    );
    let after = std::fs::read_to_string(runs.join("sw/report.json")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn colonoscopy_video_flow_aggregates_per_video() {
    let dir = tempfile::tempdir().unwrap();
    let videos = dir.path().join("videos");

    // Three tiny clips per class; stems deliberately collide across classes.
    for (class, base_luma) in [("polyp", 60u8), ("colitis", 160u8)] {
        let class_dir = videos.join(class);
        std::fs::create_dir_all(&class_dir).unwrap();
        for v in 0..3 {
            let frames: Vec<Vec<u8>> = (0..8)
                .map(|k| {
                    let luma = base_luma + 5 * v as u8 + k as u8;
                    let mut f = vec![luma; 16 * 12];
                    f.extend(std::iter::repeat_n(128u8, 2 * 16 * 12));
                    f
                })
                .collect();
            colopath::ingest::write_y4m_444(
                &class_dir.join(format!("v{v}.y4m")),
                16,
                12,
                (2, 1),
                &frames,
            )
            .unwrap();
        }
    }

    let data = dir.path().join("data");
    assert_ok(
        &colopath(
            &[
                "ingest", "colonoscopy", "--videos", videos.to_str().unwrap(), "--out",
                data.to_str().unwrap(), "--ratios", "0.34,0.33,0.33", "--seed", "9",
            ],
            &[],
        ),
        "ingest colonoscopy",
    );
    assert!(data.join("ingest.config.json").is_file());
    let manifest = colopath::ingest::DatasetManifest::load_from_dir(&data).unwrap();
    assert_eq!(manifest.class_names, vec!["polyp", "colitis"]);
    assert_eq!(manifest.video_splits().unwrap().len(), 6);
    // 8 frames at 2 fps = 4 seconds per clip.
    assert_eq!(manifest.records.len(), 6 * 4);

    let runs = dir.path().join("runs");
    assert_ok(
        &colopath(
            &[
                "train", "--manifest", data.to_str().unwrap(), "--preset", "colonoscopy",
                "--run-name", "vid", "--output-root", runs.to_str().unwrap(), "--backbone",
                "tiny", "--pretrained", "false", "--input-side", "32", "--batch-size", "8",
                "--max-epochs", "2", "--seed", "42",
            ],
            &[],
        ),
        "train",
    );
    let run = runs.join("vid/42");
    assert_ok(&colopath(&["eval", "--run", run.to_str().unwrap()], &[]), "eval");

    let videos_csv = std::fs::read_to_string(run.join("videos.csv")).unwrap();
    let mut lines = videos_csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "video_id,truth,predicted,vote_fraction,mean_confidence,band,correct"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2, "one test video per class: {rows:?}");
    for row in rows {
        let band = row.split(',').nth(5).unwrap();
        assert!(["low", "moderate", "high"].contains(&band), "bad band in {row}");
    }
}

#[test]
fn config_errors_exit_2() {
    // Unknown flag.
    let out = colopath(&["synth", "--bogus"], &[]);
    assert_eq!(out.status.code(), Some(2));

    // Eval without test logits names the missing file.
    let dir = tempfile::tempdir().unwrap();
    let out = colopath(&["eval", "--run", dir.path().to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("logits/test.csv"), "stderr: {stderr}");

    // Training without a preset or config file.
    let out = colopath(
        &[
            "train", "--manifest", dir.path().to_str().unwrap(), "--run-name", "x",
        ],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));

    // Help exits 0.
    let out = colopath(&["--help"], &[]);
    assert_eq!(out.status.code(), Some(0));
}
