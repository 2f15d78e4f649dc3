//! End-to-end CLI tests: gen -> run -> report, plus the allocation
//! brute-force sweep and error reporting.

use std::path::Path;
use std::process::{Command, Output};

fn oreal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oreal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_gen_config(path: &Path) {
    let config = serde_json::json!({
        "scene": {
            "height": 16,
            "width": 16,
            "num_classes": 5,
            "shapes_per_image": [1, 3],
            "class_weights": [4.0, 4.0, 2.0, 1.75],
            "radius_range": [0.15, 0.3],
            "noise_sigma": 0.2,
            "seed": 9
        },
        "n_train": 4,
        "n_val": 1,
        "n_test": 2,
        "superpixels_per_image": 4,
        "slic": { "compactness": 10.0, "iterations": 5 }
    });
    std::fs::write(path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
}

#[test]
fn gen_run_report_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("gen.json");
    write_gen_config(&config_path);
    let data_dir = dir.path().join("data");

    let gen = oreal(&[
        "gen",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert!(data_dir.join("manifest.json").exists());
    assert!(data_dir.join("images/img_00000.orim").exists());
    assert!(data_dir.join("masks/mask_00006.orlm").exists());
    assert!(data_dir.join("parts/part_00003.orsp").exists());

    let mut run_dirs = Vec::new();
    for (strategy, out) in [("oreal", "run-oreal"), ("random", "run-random")] {
        let out_dir = dir.path().join(out);
        let run = oreal(&[
            "run",
            "--data",
            data_dir.to_str().unwrap(),
            "--strategy",
            strategy,
            "--agg",
            "max",
            "--budget",
            "5",
            "--steps",
            "2",
            "--seeds",
            "2",
            "--max-epochs",
            "40",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let csv = std::fs::read_to_string(out_dir.join("runs.csv")).unwrap();
        assert_eq!(csv.lines().count(), 5, "header + 2 seeds x 2 steps");
        assert!(csv.starts_with("seed,step,clicks,miou_val,miou_test,"));
        assert!(out_dir.join("summary.json").exists());
        assert!(out_dir.join("curves.svg").exists());
        run_dirs.push(out_dir);
    }

    let merged = dir.path().join("merged");
    let report = oreal(&[
        "report",
        "--in",
        run_dirs[0].to_str().unwrap(),
        run_dirs[1].to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert!(report.status.success(), "{}", String::from_utf8_lossy(&report.stderr));
    let svg = std::fs::read_to_string(merged.join("curves.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2, "one polyline per strategy");
    let csv = std::fs::read_to_string(merged.join("runs.csv")).unwrap();
    assert!(csv.starts_with("strategy,aggregation,seed,step,"));
    assert_eq!(csv.lines().count(), 9, "header + 2 runs x 4 rows");
}

#[test]
fn run_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("gen.json");
    write_gen_config(&config_path);
    let data_dir = dir.path().join("data");
    assert!(oreal(&[
        "gen",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let mut outputs = Vec::new();
    for out in ["a", "b"] {
        let out_dir = dir.path().join(out);
        assert!(oreal(&[
            "run",
            "--data",
            data_dir.to_str().unwrap(),
            "--strategy",
            "bvsb",
            "--agg",
            "mean",
            "--budget",
            "5",
            "--steps",
            "2",
            "--seeds",
            "1",
            "--max-epochs",
            "40",
            "--out",
            out_dir.to_str().unwrap(),
        ])
        .status
        .success());
        outputs.push((
            std::fs::read(out_dir.join("runs.csv")).unwrap(),
            std::fs::read(out_dir.join("summary.json")).unwrap(),
            std::fs::read(out_dir.join("curves.svg")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn weak_scheme_is_rejected_with_machine_readable_error() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("gen.json");
    write_gen_config(&config_path);
    let data_dir = dir.path().join("data");
    assert!(oreal(&[
        "gen",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        data_dir.to_str().unwrap(),
    ])
    .status
    .success());

    let run = oreal(&[
        "run",
        "--data",
        data_dir.to_str().unwrap(),
        "--strategy",
        "oreal",
        "--agg",
        "max",
        "--budget",
        "5",
        "--steps",
        "2",
        "--scheme",
        "weak",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(!run.status.success());
    let stderr = String::from_utf8_lossy(&run.stderr);
    let payload: serde_json::Value =
        serde_json::from_str(stderr.lines().last().unwrap()).expect("JSON error envelope");
    assert!(payload["error"].as_str().unwrap().contains("dominant"));
}

#[test]
fn bruteforce_delta_sweep_agrees() {
    let out = oreal(&[
        "bruteforce-delta",
        "--classes",
        "3",
        "--max-count",
        "4",
        "--budget",
        "4",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0 mismatches"), "{stdout}");
}

#[test]
fn unknown_strategy_fails_cleanly() {
    let out = oreal(&[
        "run",
        "--data",
        "nowhere",
        "--strategy",
        "osmosis",
        "--agg",
        "max",
        "--budget",
        "5",
        "--out",
        "out",
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown strategy"), "{stderr}");
}
