use std::path::Path;
use std::process::Command;

use spikeprop_core::config::RunConfig;
use spikeprop_core::mnist::{write_idx_images, write_idx_labels, PIXELS, TRAIN_IMAGES, TRAIN_LABELS};

fn spikeprop() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spikeprop"));
    cmd.env_remove("MNIST_DATA_DIR");
    cmd
}

fn write_toy_mnist(dir: &Path, per_class: usize) {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..per_class * 10 {
        let class = i % 10;
        let img: Vec<u8> = (0..PIXELS)
            .map(|p| {
                let on = (p / 28) / 2 == class + 3 || (p % 28) / 2 == class + 3;
                if on { 200 + (i % 50) as u8 } else { 0 }
            })
            .collect();
        images.push(img);
        labels.push(class as u8);
    }
    std::fs::write(dir.join(TRAIN_IMAGES), write_idx_images(&images)).unwrap();
    std::fs::write(dir.join(TRAIN_LABELS), write_idx_labels(&labels)).unwrap();
}

#[test]
fn print_config_applies_overrides() {
    let out = spikeprop()
        .args(["--print-config", "--seed", "42", "--kind", "self-training", "--labeled-per-class", "30"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let cfg = RunConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.kind.to_string(), "self-training");
    assert_eq!(cfg.split.labeled_per_class, 30);
}

#[test]
fn out_of_range_config_fails_with_key_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[network]\nsigma = 1.5\n").unwrap();
    let out = spikeprop().arg("--config").arg(&path).arg("--print-config").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("network.sigma"));
}

#[test]
fn missing_data_dir_is_an_error() {
    let out = spikeprop().output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn short_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_toy_mnist(&data, 8);
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        "[network]\nhidden = 16\n\n[schedule]\nbp_epochs = 2\nstdp_epochs = 1\n\n\
         [split]\nlabeled_per_class = 1\nunlabeled_per_class = 2\ntest_sets = 2\ntest_per_class = 1\n",
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = spikeprop()
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run_dir)
        .arg("--quiet")
        .env("MNIST_DATA_DIR", &data)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(run_dir.join("summary.toml").is_file());
    assert!(run_dir.join("config.toml").is_file());
}
