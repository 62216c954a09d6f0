use std::path::Path;
use std::process::{Command, Output};

fn dasfft(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dasfft"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DASFFT_SEED")
        .output()
        .expect("spawn dasfft")
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set", "resolution=32",
    "--set", "train_size=3",
    "--set", "test_size=2",
    "--set", "pretrain_steps=2",
    "--set", "dafe_steps=2",
    "--set", "gan_steps=1",
    "--set", "batch_size=1",
];

fn with_tiny<'a>(cmd: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(TINY);
    v.extend_from_slice(extra);
    v
}

#[test]
fn facegen_and_degrade_write_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&dasfft(&["facegen", "--seed", "5", "--count", "3", "--res", "32", "--out", "faces"], d));
    let manifest = std::fs::read_to_string(d.join("faces/manifest.csv")).unwrap();
    let rows: Vec<&str> = manifest.lines().collect();
    assert_eq!(rows.len(), 3);
    let cols: Vec<&str> = rows[0].split(',').collect();
    assert_eq!(cols[1..], ["face_0000.ppm", "face_0000_parsing.pgm", "face_0000_depth.tens"]);
    let pgm = std::fs::read(d.join("faces/face_0000_parsing.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n4\n"));

    ok(&dasfft(&["degrade", "--manifest", "faces/manifest.csv", "--seed", "2", "--m-min", "1", "--m-max", "2", "--out", "lq"], d));
    let degraded = std::fs::read_to_string(d.join("lq/manifest.csv")).unwrap();
    assert_eq!(degraded.lines().count(), 3);
    assert!(degraded.lines().all(|l| l.split(',').count() == 6));
    assert!(d.join("lq/lq_0002.ppm").exists());
    let params = std::fs::read_to_string(d.join("lq/lq_0000_params.txt")).unwrap();
    assert!(params.contains("blur_sigma"));

    // Same seeds, same bytes.
    ok(&dasfft(&["degrade", "--manifest", "faces/manifest.csv", "--seed", "2", "--m-min", "1", "--m-max", "2", "--out", "lq2"], d));
    assert_eq!(std::fs::read(d.join("lq/lq_0001.ppm")).unwrap(), std::fs::read(d.join("lq2/lq_0001.ppm")).unwrap());
}

#[test]
fn full_pipeline_restores_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&dasfft(&with_tiny("pretrain-encoder", &["--model", "m.dasfft"]), d));
    ok(&dasfft(&with_tiny("align-dafe", &["--model", "m.dasfft"]), d));
    let train = ok(&dasfft(&with_tiny("train", &["--model", "m.dasfft", "--set", "log_path=log.csv"]), d));
    assert!(train.contains("train: 1 steps"));
    let log = std::fs::read_to_string(d.join("log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,L_s,L_rec,L_G,total,L_D"));
    assert_eq!(log.lines().count(), 2);

    ok(&dasfft(&["facegen", "--seed", "8", "--count", "2", "--res", "32", "--out", "faces"], d));
    ok(&dasfft(&["degrade", "--manifest", "faces/manifest.csv", "--seed", "3", "--out", "lq"], d));
    let restored = ok(&dasfft(
        &["restore", "--model", "m.dasfft", "--in", "lq/lq_0000.ppm", "--parsing", "faces/face_0000_parsing.pgm", "--out", "r.ppm"],
        d,
    ));
    assert!(restored.contains("E_LQ") && !restored.contains("E_HQ"));
    assert!(std::fs::read(d.join("r.ppm")).unwrap().starts_with(b"P6\n32 32\n255\n"));

    let eval = ok(&dasfft(&["eval", "--model", "m.dasfft", "--manifest", "lq/manifest.csv", "--csv", "metrics.csv"], d));
    assert!(eval.contains("aligned closer on"));
    let csv = std::fs::read_to_string(d.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sample,psnr_db,ssim,lpips,fid");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("face_0000,") && lines[1].ends_with(",n/a,n/a"));
}

#[test]
fn config_file_env_and_flags_compose() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.cfg"), "# tiny run\nseed = 3\nmodel_path = from_file.dasfft\n").unwrap();
    let mut args = with_tiny("pretrain-encoder", &["--config", "run.cfg"]);
    ok(&dasfft(&args, d));
    let header = std::fs::read(d.join("from_file.dasfft")).unwrap();
    assert!(String::from_utf8_lossy(&header).contains("config seed = 3"));

    let out = Command::new(env!("CARGO_BIN_EXE_dasfft")).args(&args).current_dir(d).env("DASFFT_SEED", "11").output().unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&std::fs::read(d.join("from_file.dasfft")).unwrap()).contains("config seed = 11"));

    args.extend(["--set", "seed=12", "--model", "flag.dasfft"]);
    let out = Command::new(env!("CARGO_BIN_EXE_dasfft")).args(&args).current_dir(d).env("DASFFT_SEED", "11").output().unwrap();
    ok(&out);
    assert!(String::from_utf8_lossy(&std::fs::read(d.join("flag.dasfft")).unwrap()).contains("config seed = 12"));
}

#[test]
fn stage_order_and_bad_input_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = dasfft(&with_tiny("align-dafe", &["--model", "missing.dasfft"]), d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    ok(&dasfft(&with_tiny("pretrain-encoder", &["--model", "m.dasfft"]), d));
    let out = dasfft(&with_tiny("train", &["--model", "m.dasfft"]), d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("align-dafe"));

    let out = dasfft(&with_tiny("train", &["--model", "m.dasfft", "--set", "bogus=1"]), d);
    assert!(!out.status.success());
    let out = dasfft(&with_tiny("align-dafe", &["--model", "m.dasfft", "--set", "resolution=64"]), d);
    assert!(!out.status.success());
}

#[test]
fn sfft_only_trains_without_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let only = ["--model", "m.dasfft", "--set", "ablation=sfft_only"];
    ok(&dasfft(&with_tiny("pretrain-encoder", &only), d));
    let out = dasfft(&with_tiny("align-dafe", &only), d);
    assert!(!out.status.success());
    ok(&dasfft(&with_tiny("train", &only), d));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&dasfft(&["gradcheck"], dir.path()));
    assert!(out.contains(" 0 failed"));
    assert!(!out.contains("FAIL"));
}
