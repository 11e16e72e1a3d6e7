//! End-to-end checks of the `avit` binary: exit codes, the train → eval →
//! predict flow, and the probability-map/metric consistency invariant.

use avit_cli::netpbm;
use std::path::Path;
use std::process::{Command, Output};

fn avit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(path: &Path, data_dir: &Path, out_dir: &Path, epochs: usize) {
    let text = format!(
        "variant=avit\nimage_size=32\npatch=4\ndim=32\ndepth=2\nheads=4\nadapter_ratio=4\n\
         epochs={epochs}\nbatch=4\nlr=0.001\nseed=3\ndata_dir={}\nout_dir={}\n",
        data_dir.display(),
        out_dir.display()
    );
    std::fs::write(path, text).unwrap();
}

#[test]
fn exit_codes_match_the_contract() {
    // Unknown subcommand and unknown flag: usage text, exit 2.
    let out = avit(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = avit(&["params", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(2));

    // Runtime failure: one error line on stderr, exit 1.
    let out = avit(&["eval", "--config", "/nonexistent.cfg", "--ckpt", "/nonexistent.avck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    // Success: exit 0.
    let out = avit(&["params"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("params_total="));
}

#[test]
fn train_eval_predict_flow_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.cfg");
    write_config(&cfg, &data, &out, 1);

    let gen = avit(&[
        "make-synthetic",
        "--n",
        "12",
        "--size",
        "32",
        "--out",
        data.to_str().unwrap(),
        "--seed",
        "21",
    ]);
    assert_eq!(gen.status.code(), Some(0), "{}", String::from_utf8_lossy(&gen.stderr));

    let train = avit(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(train.status.code(), Some(0), "{}", String::from_utf8_lossy(&train.stderr));
    let stdout = String::from_utf8_lossy(&train.stdout);
    assert!(stdout.contains("epoch=0 lr=0.001000"), "{stdout}");
    let ckpt = out.join("model.avck");
    assert!(ckpt.exists() && out.join("backbone.avck").exists());

    // Evaluate the saved checkpoint and collect per-sample Dice.
    let eval = avit(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert_eq!(eval.status.code(), Some(0), "{}", String::from_utf8_lossy(&eval.stderr));
    let eval_out = String::from_utf8_lossy(&eval.stdout);
    let mut eval_dice: Vec<(String, f64)> = Vec::new();
    for line in eval_out.lines() {
        if let Some(rest) = line.strip_prefix("sample=") {
            let mut parts = rest.split_whitespace();
            let id = parts.next().unwrap().to_string();
            let dice = parts
                .next()
                .unwrap()
                .strip_prefix("dice=")
                .unwrap()
                .parse::<f64>()
                .unwrap();
            eval_dice.push((id, dice));
        }
    }
    assert_eq!(eval_dice.len(), 12);

    // Predict probability maps for the same data.
    let pred_dir = dir.path().join("pred");
    let pred = avit(&[
        "predict",
        "--config",
        cfg.to_str().unwrap(),
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        pred_dir.to_str().unwrap(),
    ]);
    assert_eq!(pred.status.code(), Some(0), "{}", String::from_utf8_lossy(&pred.stderr));

    // Re-binarize each probability map and re-score it against the ground
    // truth: the Dice must match evaluate's within 8-bit quantization.
    for (id, reported) in &eval_dice {
        let prob = netpbm::read(&pred_dir.join(format!("{id}_prob.pgm"))).unwrap();
        assert_eq!((prob.channels, prob.height, prob.width), (1, 32, 32));
        let mask = netpbm::read(&data.join(format!("{id}_mask.pgm"))).unwrap();
        let pred_bits: Vec<bool> = prob.pixels.iter().map(|&v| v >= 128).collect();
        let gt_bits: Vec<bool> = mask.pixels.iter().map(|&v| v >= 128).collect();
        let m = avit_core::metrics::dice_iou(&pred_bits, &gt_bits);
        assert!(
            (m.dice - reported).abs() <= 1.0 / 255.0,
            "{id}: rebinarized dice {} vs evaluate's {}",
            m.dice,
            reported
        );
    }
}
