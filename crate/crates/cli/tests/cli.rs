use std::path::Path;
use std::process::{Command, Output};

fn lift360(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lift360"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, scenes: &str, border: &str) {
    let o = lift360(&["synth", "--out", "corpus", "--scenes", scenes, "--border-rate", border, "--seed", "3"], dir);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, extra: &str) {
    let text = format!(
        r#"{{"dataset_root": "corpus", "class_map": "corpus/classes.csv", "output_root": "out" {extra}}}"#
    );
    std::fs::write(dir.join("cfg.json"), text).unwrap();
}

#[test]
fn eval_identical_dirs_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "0.5");
    let o = lift360(
        &[
            "eval",
            "--pred",
            "corpus/sequences",
            "--gt",
            "corpus/sequences",
            "--classes",
            "corpus/classes.csv",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    assert!(stdout(&o).contains("mIoU 1.000000"), "{}", stdout(&o));
}

#[test]
fn even_k_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "0");
    write_config(dir.path(), "");
    let o = lift360(&["--config", "cfg.json", "refine", "--k", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("K=2"));
}

#[test]
fn config_problems_exit_2_and_data_problems_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"dataset_root": "x", "unknown": 1}"#).unwrap();
    let o = lift360(&["--config", "bad.json", "lift"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = lift360(&["lift"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    synth(dir.path(), "1", "0");
    write_config(dir.path(), "");
    std::fs::write(dir.path().join("corpus/sequences/00/velodyne/000000.bin"), [0u8; 7]).unwrap();
    let o = lift360(&["--config", "cfg.json", "lift"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("000000.bin"));
}

#[test]
fn zero_noise_pipeline_reproduces_ground_truth_in_view() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "0");
    write_config(dir.path(), r#", "threshold": {"mode": "off"}"#);
    let o = lift360(&["--config", "cfg.json", "pipeline", "--k", "1"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("mIoU 100.00"), "{}", stdout(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    assert!(csv.contains("mIoU,1.000000"));
}

#[test]
fn stages_match_the_pipeline_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "0.5");
    write_config(dir.path(), r#", "refinement": {"k": 7}"#);
    for stage in ["lift", "refine", "stats", "threshold", "slice"] {
        let o = lift360(&["--config", "cfg.json", stage], dir.path());
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let pred = dir.path().join("out/sequences/00/predictions/000001.label");
    let first = std::fs::read(&pred).unwrap();
    let o = lift360(&["--config", "cfg.json", "--jobs", "3", "pipeline"], dir.path());
    assert!(o.status.success());
    assert_eq!(std::fs::read(&pred).unwrap(), first);
    assert!(dir.path().join("out/sequences/00/velodyne_fov/000000.bin").is_file());
    assert!(dir.path().join("out/thresholds.csv").is_file());
}

#[test]
fn tta_emit_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "1", "0");
    let o = lift360(&["tta", "emit", "--cloud", "corpus/sequences/00/velodyne/000000.bin", "--out", "tta"], dir.path());
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("tta/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["variants"].as_array().unwrap().len(), 12);
    assert_eq!(
        std::fs::read(dir.path().join("tta/00_identity.bin")).unwrap(),
        std::fs::read(dir.path().join("corpus/sequences/00/velodyne/000000.bin")).unwrap()
    );

    // two 2×2 predictions; the second point is unseen by the first
    let write = |name: &str, vals: [f32; 4]| {
        let t = lift360::io::TensorFile::f32(vec![2, 2], vals.to_vec()).unwrap();
        lift360::io::write_tensor(&t, &dir.path().join(name)).unwrap();
    };
    write("a.ptns", [0.2, 0.8, 0.0, 0.0]);
    write("b.ptns", [0.6, 0.4, 1.0, 0.0]);
    let o = lift360(&["tta", "aggregate", "--out", "mean.ptns", "a.ptns", "b.ptns"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mean = lift360::io::read_tensor(&dir.path().join("mean.ptns")).unwrap();
    let v = mean.as_f32().unwrap();
    assert!((v[0] - 0.4).abs() < 1e-6 && (v[1] - 0.6).abs() < 1e-6);
    assert_eq!(&v[2..], &[1.0, 0.0]);
}

#[cfg(unix)]
#[test]
fn soup_runs_external_metric() {
    let dir = tempfile::tempdir().unwrap();
    for (name, w) in [("w0.ptns", 0.0f32), ("w1.ptns", 1.0), ("w10.ptns", 10.0)] {
        let t = lift360::io::TensorFile::f32(vec![1], vec![w]).unwrap();
        lift360::io::write_tensor(&t, &dir.path().join(name)).unwrap();
    }
    // metric −(w − 0.5)² read from the 4-byte payload at offset 14
    let script = dir.path().join("metric.sh");
    std::fs::write(
        &script,
        "#!/bin/sh\nw=$(od -An -t f4 -j 14 -N 4 \"$1\" | tr -d ' ')\nawk -v w=\"$w\" 'BEGIN { printf \"%.9f\\n\", -(w-0.5)*(w-0.5) }'\n",
    )
    .unwrap();
    let o = lift360(
        &[
            "soup",
            "--candidate",
            "w0.ptns",
            "--candidate",
            "w1.ptns",
            "--candidate",
            "w10.ptns",
            "--out",
            "soup/soup.ptns",
            "--",
            "sh",
            script.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let soup = lift360::io::read_tensor(&dir.path().join("soup/soup.ptns")).unwrap();
    assert_eq!(soup.as_f32().unwrap(), &[0.5]);
    assert!(stdout(&o).contains("drop w10.ptns"));
}

#[test]
fn synth_from_scene_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = r#"{"seed": 1, "objects": [{"kind": "ground", "class": 1, "z": -1.73, "extent": 20.0}],
                   "lidar": {"beams": 8, "azimuth_steps": 128}}"#;
    std::fs::write(dir.path().join("scene.json"), spec).unwrap();
    let o = lift360(&["synth", "--out", "one", "--spec", "scene.json"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let labels = std::fs::read(dir.path().join("one/sequences/00/labels/000000.label")).unwrap();
    assert!(!labels.is_empty());
    assert!(labels.chunks(4).all(|w| w == [1, 0, 0, 0]));

    std::fs::write(dir.path().join("bad.json"), r#"{"seed": 1, "objects": [], "lidar": {"beams": 0}}"#).unwrap();
    let o = lift360(&["synth", "--out", "two", "--spec", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn augment_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "2", "0");
    let run = |out: &str, seed: &str| {
        let o = lift360(
            &[
                "--seed",
                seed,
                "augment",
                "--cloud",
                "corpus/sequences/00/velodyne/000000.bin",
                "--labels",
                "corpus/sequences/00/labels/000000.label",
                "--mix-cloud",
                "corpus/sequences/00/velodyne/000001.bin",
                "--mix-labels",
                "corpus/sequences/00/labels/000001.label",
                "--out",
                out,
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join(out).join("cloud.bin")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
}
