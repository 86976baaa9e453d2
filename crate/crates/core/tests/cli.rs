mod common;

use std::path::Path;
use std::process::{Command, Output};

use wmark::channel::{ChannelConfig, ChannelModel};
use wmark::metrics::seeded_rng;
use wmark::nets::{NetConfig, WatermarkModel};
use wmark::report::EvalReport;

use common::{random_image, tiny_nets, write_image_dir};

fn wmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmark")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).trim().to_string()
}

/// Untrained codec and watermark checkpoints with matching lengths.
fn checkpoints(dir: &Path, nets: &NetConfig) -> (std::path::PathBuf, std::path::PathBuf) {
    let ch_cfg =
        ChannelConfig { source_len: 8, code_len: nets.message_len, hidden_widths: vec![16], ..Default::default() };
    let channel = ChannelModel::new(&ch_cfg, &mut seeded_rng(1)).unwrap();
    let ch_path = dir.join("channel.ckpt");
    channel.save(&ch_path, 0).unwrap();
    let wm_path = dir.join("wm.ckpt");
    WatermarkModel::new(nets, 2).unwrap().save(&wm_path, 0, serde_json::Value::Null, &[]).unwrap();
    (wm_path, ch_path)
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("c.png");
    random_image(16, 16, 0).save_png(&img).unwrap();
    let out = wmark(&["extract", "--model", p(&dir.path().join("none.ckpt")), "--image", p(&img)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_image_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let (wm, _) = checkpoints(dir.path(), &tiny_nets(12));
    let out = wmark(&["extract", "--model", p(&wm), "--image", p(&dir.path().join("none.png"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn wrong_message_length_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let (wm, ch) = checkpoints(dir.path(), &tiny_nets(12));
    let img = dir.path().join("c.png");
    random_image(16, 16, 0).save_png(&img).unwrap();
    let out_png = dir.path().join("o.png");
    let base = ["embed", "--model", p(&wm), "--channel", p(&ch), "--image", p(&img), "--out", p(&out_png)];
    let out = wmark(&[&base[..], &["--message", "0101"]].concat());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_png.exists());
    let out = wmark(&[&base[..], &["--message", "01x10101"]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_codec_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ch) = checkpoints(dir.path(), &tiny_nets(12));
    let other = dir.path().join("other.ckpt");
    WatermarkModel::new(&tiny_nets(10), 3).unwrap().save(&other, 0, serde_json::Value::Null, &[]).unwrap();
    let img = dir.path().join("c.png");
    random_image(16, 16, 0).save_png(&img).unwrap();
    let out = wmark(&["extract", "--model", p(&other), "--channel", p(&ch), "--image", p(&img)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("12"));
}

#[test]
fn embed_then_extract_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (wm, ch) = checkpoints(dir.path(), &tiny_nets(12));
    let img = dir.path().join("c.png");
    random_image(24, 20, 5).save_png(&img).unwrap();
    let extract = |png: &Path| {
        let out = wmark(&["extract", "--model", p(&wm), "--channel", p(&ch), "--image", p(png)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout(&out)
    };
    let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
    for out_png in [&a, &b] {
        let out = wmark(&[
            "embed",
            "--model",
            p(&wm),
            "--channel",
            p(&ch),
            "--image",
            p(&img),
            "--message",
            "a5",
            "--hex",
            "--out",
            p(out_png),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let bits = extract(&a);
    assert_eq!(bits.len(), 8);
    assert!(bits.chars().all(|c| c == '0' || c == '1'));
    assert_eq!(extract(&a), bits);
    assert_eq!(image::open(&a).unwrap().to_rgb8().dimensions(), (20, 24));
}

#[test]
fn curve_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (_, ch) = checkpoints(dir.path(), &tiny_nets(12));
    let csv = dir.path().join("curve.csv");
    let out = wmark(&["curve", "--channel", p(&ch), "--out", p(&csv), "--grid", "0,0.2", "--trials", "50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "noise,accuracy,trials,N,D");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(",50,12,8"));

    let bad = wmark(&["curve", "--channel", p(&ch), "--out", p(&csv), "--grid", "0.7"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn train_channel_then_curve() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("codec.ckpt");
    let out = wmark(&[
        "train-channel",
        "--out",
        p(&ck),
        "--steps",
        "5",
        "--source-len",
        "4",
        "--code-len",
        "8",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = ChannelModel::load(&ck).unwrap();
    assert_eq!((loaded.source_len(), loaded.code_len()), (4, 8));
}

#[test]
fn tiny_training_run_writes_log_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_image_dir(&data, 6, 16, 0);
    let cfg = dir.path().join("train.toml");
    std::fs::write(
        &cfg,
        "mode = \"combined\"\nmax_steps = 3\nbatch_size = 2\ndistortions = [\"jpeg_diff:50\", \"crop:0.5\"]\n\
         [nets]\nmessage_len = 6\nencoder_channels = 4\ndecoder_channels = 4\ndiscriminator_channels = 4\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = wmark(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&out_dir),
        "--size",
        "16",
        "--eval-count",
        "1",
        "--seed",
        "4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(out_dir.join("train_log.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 3);
    for key in ["step", "total_loss", "bit_acc", "psnr"] {
        assert!(records[0].get(key).is_some(), "log record lacks {key}");
    }
    let (model, _) = WatermarkModel::load(out_dir.join("final.ckpt")).unwrap();
    assert_eq!(model.message_len(), 6);

    let report = dir.path().join("report");
    let out = wmark(&[
        "evaluate",
        "--model",
        p(&out_dir.join("final.ckpt")),
        "--data",
        p(&data),
        "--suite",
        "known",
        "--out",
        p(&report),
        "--size",
        "16",
        "--eval-count",
        "2",
        "--seed",
        "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let parsed = EvalReport::load_json(report.with_extension("json")).unwrap();
    assert_eq!(parsed.entries.len(), wmark::distortion::known_suite().len());
    assert_eq!(parsed.image_count, 2);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_image_dir(&data, 3, 16, 0);
    let cfg = dir.path().join("train.toml");
    std::fs::write(&cfg, "max_stepz = 3\n").unwrap();
    let out = wmark(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2));
}
