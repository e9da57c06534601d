//! End-to-end tests against the built `mednc` binary: exit codes, file
//! outputs, determinism, and the verification gate.

use std::path::Path;
use std::process::{Command, Output};

fn mednc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mednc"))
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

fn quick_config(out_dir: &Path) -> String {
    format!(
        r#"{{
  "run_id": "cli-test",
  "seed": 11,
  "output_dir": "{}",
  "dataset": {{
    "source": {{"type": "synthetic", "classes": 2, "per_class": 40, "height": 12, "width": 12,
                "pattern": "stripes", "noise": 0.1}}
  }},
  "model": {{
    "kind": "single",
    "members": [{{"type": "toy_conv", "id": "toy0", "channels": [3], "kernel": 3, "pool": 2}}],
    "fc_width": 8
  }},
  "training": {{"epochs": 3, "batch_size": 16}},
  "mccv": {{"repetitions": 2}}
}}"#,
        out_dir.display()
    )
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn prepare_prints_class_counts_and_split_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &quick_config(dir.path()));
    let output = mednc()
        .args(["--config"])
        .arg(&config)
        .arg("prepare")
        .output()
        .unwrap();
    assert_success(&output);
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("80 samples"), "{text}");
    assert!(text.contains("(48, 16, 8, 8)"), "{text}");
}

#[test]
fn missing_dataset_directory_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &format!(
            r#"{{
  "run_id": "x", "output_dir": "{}",
  "dataset": {{"source": {{"type": "directory", "path": "{}/does-not-exist"}}}},
  "model": {{"kind": "single",
             "members": [{{"type": "toy_conv", "id": "t", "channels": [2], "kernel": 3, "pool": 2}}]}}
}}"#,
            dir.path().display(),
            dir.path().display()
        ),
    );
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("prepare")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(!dir.path().join("x").join("metrics.json").exists());
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{ not json ");
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn numeric_divergence_exits_3_naming_the_epoch() {
    // Softmax max-subtraction and the log clamp make learning-rate blowups
    // saturate instead of overflowing, so non-finite values are injected at
    // the data boundary: a feature table containing a NaN.
    let dir = tempfile::tempdir().unwrap();
    let mut bytes: Vec<u8> = Vec::new();
    bytes.extend_from_slice(b"MEDF");
    bytes.extend_from_slice(&1u32.to_le_bytes());
    bytes.extend_from_slice(&8u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    bytes.extend_from_slice(&2u32.to_le_bytes());
    for i in 0..8u32 {
        let id = format!("s{i}");
        bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
        bytes.extend_from_slice(id.as_bytes());
        bytes.extend_from_slice(&(i % 2).to_le_bytes());
        let bad = i == 3;
        for _ in 0..2 {
            let v: f32 = if bad { f32::NAN } else { 0.5 };
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let table_path = dir.path().join("bad.medf");
    std::fs::write(&table_path, bytes).unwrap();

    let body = format!(
        r#"{{
  "run_id": "nan", "seed": 1, "output_dir": "{}",
  "dataset": {{"source": {{"type": "feature_tables",
               "tables": [{{"backbone_id": "bb", "path": "{}"}}]}}, "balance": false}},
  "model": {{"kind": "single",
             "members": [{{"type": "feature_table", "id": "m0", "backbone_id": "bb"}}],
             "fc_width": 4}},
  "training": {{"epochs": 2, "batch_size": 4}},
  "mccv": {{"ratios": [0.5, 0.2, 0.15, 0.15]}}
}}"#,
        dir.path().display(),
        table_path.display()
    );
    let config = write_config(dir.path(), &body);
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("epoch"), "{stderr}");
}

#[test]
fn metrics_recompute_from_emitted_confusion_matrix() {
    let dir = tempfile::tempdir().unwrap();
    // A cleanly separable fixture, so the test-B floor assertion is stable.
    let body = format!(
        r#"{{
  "run_id": "cli-test",
  "seed": 11,
  "output_dir": "{}",
  "dataset": {{
    "source": {{"type": "synthetic", "classes": 2, "per_class": 60, "height": 16, "width": 16,
                "pattern": "gaussian_blob", "noise": 0.05}}
  }},
  "model": {{
    "kind": "single",
    "members": [{{"type": "toy_conv", "id": "toy0", "channels": [4], "kernel": 3, "pool": 2}}],
    "fc_width": 16
  }},
  "training": {{"epochs": 10, "batch_size": 16}}
}}"#,
        dir.path().display()
    );
    let config = write_config(dir.path(), &body);
    let run_dir = dir.path().join("cli-test");
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_success(&output);

    // Independent recomputation from the emitted confusion CSV.
    let csv = std::fs::read_to_string(run_dir.join("confusion_testB.csv")).unwrap();
    let mut counts = [[0f64; 2]; 2];
    for (row, line) in csv.lines().skip(1).enumerate() {
        for (col, field) in line.split(',').skip(1).enumerate() {
            counts[row][col] = field.parse().unwrap();
        }
    }
    let total = counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
    let accuracy = (counts[0][0] + counts[1][1]) / total;
    let (tp, fp, fn_, tn) = (counts[1][1], counts[0][1], counts[1][0], counts[0][0]);
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("metrics.json")).unwrap())
            .unwrap();
    let test_b = &metrics["partitions"]["testB"];
    assert!((test_b["accuracy"].as_f64().unwrap() - accuracy).abs() < 1e-12);
    if tp + fp > 0.0 {
        let precision = tp / (tp + fp);
        assert!((test_b["precision"].as_f64().unwrap() - precision).abs() < 1e-12);
    }
    if tp + fn_ > 0.0 {
        let sensitivity = tp / (tp + fn_);
        assert!((test_b["sensitivity"].as_f64().unwrap() - sensitivity).abs() < 1e-12);
    }
    if tn + fp > 0.0 {
        let specificity = tn / (tn + fp);
        assert!((test_b["specificity"].as_f64().unwrap() - specificity).abs() < 1e-12);
    }

    // The separable fixture trains to a strong test-B score.
    assert!(test_b["accuracy"].as_f64().unwrap() >= 0.95);
}

#[test]
fn train_writes_files_and_reruns_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &quick_config(dir.path()));
    let run_dir = dir.path().join("cli-test");

    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_success(&output);
    for file in ["metrics.json", "curve.csv", "model.json", "model.params"] {
        assert!(run_dir.join(file).is_file(), "{file}");
    }
    let first = std::fs::read(run_dir.join("metrics.json")).unwrap();

    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_success(&output);
    let second = std::fs::read(run_dir.join("metrics.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn mccv_emits_rep_dirs_and_summary_and_report_regenerates() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &quick_config(dir.path()));
    let run_dir = dir.path().join("cli-test");

    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("mccv")
        .output()
        .unwrap();
    assert_success(&output);
    assert!(run_dir.join("rep0/metrics.json").is_file());
    assert!(run_dir.join("rep1/metrics.json").is_file());
    assert!(run_dir.join("summary.csv").is_file());
    assert!(run_dir.join("summary.md").is_file());

    // Deleting curve.csv must not break report regeneration.
    std::fs::remove_file(run_dir.join("rep0/curve.csv")).unwrap();
    let before = std::fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    let output = mednc().arg("report").arg(&run_dir).output().unwrap();
    assert_success(&output);
    let after = std::fs::read_to_string(run_dir.join("summary.csv")).unwrap();
    assert_eq!(before, after);
}

#[test]
fn report_on_empty_directory_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let output = mednc().arg("report").arg(dir.path()).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_lists_all_nine_ops() {
    let output = mednc().arg("gradcheck").output().unwrap();
    assert_success(&output);
    let text = String::from_utf8_lossy(&output.stdout);
    for op in [
        "dense",
        "conv2d",
        "maxpool2d",
        "flatten",
        "relu",
        "dropout",
        "softmax",
        "concatenate",
        "cross_entropy",
    ] {
        assert!(text.contains(op), "missing {op}:\n{text}");
    }
}

#[test]
fn corrupted_gradcheck_exits_4() {
    let output = mednc()
        .arg("gradcheck")
        .env("MEDNC_GRADCHECK_CORRUPT", "dense")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(4));
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("FAIL"), "{text}");
}

#[test]
fn print_default_config_round_trips() {
    let output = mednc().arg("--print-default-config").output().unwrap();
    assert_success(&output);
    let text = String::from_utf8_lossy(&output.stdout);
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(value["model"]["fc_width"], 128);
    assert_eq!(value["mccv"]["repetitions"], 10);
    // The printed default parses back as a valid config.
    mednc_cli::RunConfig::from_json(&text).unwrap();
}

#[test]
fn paper_mode_overrides_are_visible() {
    let output = mednc()
        .args(["--paper-mode", "--print-default-config"])
        .output()
        .unwrap();
    assert_success(&output);
    let value: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&output.stdout)).unwrap();
    assert_eq!(value["dataset"]["resize"][0], 224);
    assert_eq!(value["dataset"]["resize"][1], 224);
    assert_eq!(value["model"]["dropout"], 0.5);
}

#[test]
fn seed_and_out_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &quick_config(dir.path()));
    let other = dir.path().join("elsewhere");
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&other)
        .args(["--seed", "99", "train"])
        .output()
        .unwrap();
    assert_success(&output);
    let metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(other.join("cli-test/metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(metrics["split_seed"], 99);
}

#[test]
fn commands_do_not_mutate_the_input_dataset_directory() {
    // Build a tiny PNG tree, run train, and verify the tree is untouched.
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    for class in ["a", "b"] {
        let class_dir = data_dir.join(class);
        std::fs::create_dir_all(&class_dir).unwrap();
        for i in 0..6 {
            write_png(&class_dir.join(format!("{i}.png")), class == "a", i);
        }
    }
    let snapshot = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for class in ["a", "b"] {
            for i in 0..6 {
                let p = root.join(class).join(format!("{i}.png"));
                out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
        out
    };
    let before = snapshot(&data_dir);

    let config = write_config(
        dir.path(),
        &format!(
            r#"{{
  "run_id": "tree", "seed": 3, "output_dir": "{}",
  "dataset": {{"source": {{"type": "directory", "path": "{}"}}, "resize": [8, 8]}},
  "model": {{"kind": "single",
             "members": [{{"type": "toy_conv", "id": "t", "channels": [2], "kernel": 3, "pool": 2}}],
             "fc_width": 4}},
  "training": {{"epochs": 1, "batch_size": 4}},
  "mccv": {{"ratios": [0.5, 0.2, 0.15, 0.15]}}
}}"#,
            dir.path().display(),
            data_dir.display()
        ),
    );
    let output = mednc()
        .arg("--config")
        .arg(&config)
        .arg("train")
        .output()
        .unwrap();
    assert_success(&output);
    assert_eq!(before, snapshot(&data_dir));
}

/// Minimal 4x4 grayscale PNG with class-dependent content.
fn write_png(path: &Path, bright: bool, index: usize) {
    let file = std::fs::File::create(path).unwrap();
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), 4, 4);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().unwrap();
    let base: u8 = if bright { 200 } else { 40 };
    let data: Vec<u8> = (0..16)
        .map(|p| base.wrapping_add((p + index) as u8 % 16))
        .collect();
    writer.write_image_data(&data).unwrap();
}
