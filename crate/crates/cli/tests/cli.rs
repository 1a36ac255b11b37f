use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smbg::net::BandSpec;
use smbg::pipeline::RunConfig;

fn tiny(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.model.input_channels = 4;
    cfg.model.base_hidden = 8;
    cfg.model.feature_channels = 4;
    cfg.model.sec_hidden = 4;
    cfg.model.temporal_length = 16;
    cfg.model.dilation = 3;
    cfg.model.bands = BandSpec::new(vec![0, 4, 8, 16], vec![3, 5, 7]).unwrap();
    cfg.synth.channels = 4;
    cfg.synth.train_videos = 8;
    cfg.synth.eval_videos = 4;
    cfg.synth.duration = [16.0, 32.0];
    cfg.train.epochs = 1;
    cfg.train.batch_size = 4;
    cfg.eval.max_an = 20;
    cfg.probe.trials = 2;
    cfg.paths.features = dir.join("data/features.bin");
    cfg.paths.annotations = dir.join("data/annotations.json");
    let path = dir.join("tiny.toml");
    cfg.save(&path).unwrap();
    path
}

fn smbg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smbg"))
        .args(args)
        .env("SMBG_OUT", out)
        .output()
        .unwrap()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn synth_train_infer_eval_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("run");

    ok(smbg(&["synth", "--config", cfg], &out));
    assert!(dir.path().join("data/features.bin").exists());
    assert!(out.join("config.toml").exists());

    let text = ok(smbg(&["train", "--config", cfg], &out));
    assert!(text.contains("epoch   1"));
    assert!(out.join("checkpoints/epoch_0001.bin").exists());
    let log = std::fs::read_to_string(out.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    ok(smbg(&["infer", "--config", cfg], &out));
    let props: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("proposals.json")).unwrap()).unwrap();
    assert_eq!(props.as_object().unwrap().len(), 4);

    let text = ok(smbg(&["eval", "--config", cfg], &out));
    assert!(text.contains("AUC"));
    for f in ["eval_report.json", "ar_curve.csv", "recall_table.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let text = ok(smbg(&["probe", "--config", cfg], &out));
    assert_eq!(text.lines().filter(|l| l.starts_with("fraction")).count(), 3);
    assert!(out.join("probe/probe_report.json").exists());
}

#[test]
fn seed_flag_selects_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(smbg(
        &[
            "synth",
            "--config",
            cfg,
            "--data",
            a.to_str().unwrap(),
            "--seed",
            "1",
        ],
        &a,
    ));
    ok(smbg(
        &[
            "synth",
            "--config",
            cfg,
            "--data",
            b.to_str().unwrap(),
            "--seed",
            "2",
        ],
        &b,
    ));
    let fa = std::fs::read(a.join("annotations.json")).unwrap();
    let fb = std::fs::read(b.join("annotations.json")).unwrap();
    assert_ne!(fa, fb);
    ok(smbg(
        &[
            "synth",
            "--config",
            cfg,
            "--data",
            b.to_str().unwrap(),
            "--seed",
            "1",
        ],
        &b,
    ));
    assert_eq!(fa, std::fs::read(b.join("annotations.json")).unwrap());
}

#[test]
fn cost_compare_prints_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(smbg(&["cost"], dir.path()));
    assert!(text.contains("ratio 0.0269"), "{text}");
    assert!(dir.path().join("cost_compare.json").exists());
}

#[test]
fn bench_rejects_too_few_repetitions() {
    let dir = tempfile::tempdir().unwrap();
    let o = smbg(
        &[
            "bench",
            "--t",
            "8",
            "--channels",
            "2",
            "--batch",
            "1",
            "--kernels",
            "3,5",
            "--repetitions",
            "3",
        ],
        dir.path(),
    );
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("10 repetitions"));
}

#[test]
fn bench_small_run_writes_timing() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(smbg(
        &[
            "bench",
            "--variant",
            "bmn-pfg",
            "--t",
            "8",
            "--channels",
            "2",
            "--batch",
            "1",
            "--samples",
            "4",
            "--kernels",
            "3,5",
        ],
        dir.path(),
    ));
    assert!(text.starts_with("bmn_pfg: median"), "{text}");
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("bench_bmn_pfg.json")).unwrap())
            .unwrap();
    assert_eq!(v["timing"]["samples_s"].as_array().unwrap().len(), 10);
}

#[test]
fn infer_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let out = dir.path().join("run");
    let o = smbg(&["infer", "--config", cfg.to_str().unwrap()], &out);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no checkpoint"));
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "workers = 0\n").unwrap();
    let o = smbg(&["cost", "--config", path.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("workers"));
}
