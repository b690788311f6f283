use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Mutex;

use refinegan_cli::run;

static SERIAL: Mutex<()> = Mutex::new(());

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["refinegan"];
    v.extend_from_slice(args);
    run(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &[&str] = &[
    "--set", "epochs=1", "--set", "refine_epochs=1", "--set", "depth=2", "--set", "base_filters=4",
    "--set", "images_per_batch=8", "--set", "g_optimizer=rmsprop", "--set", "d_optimizer=rmsprop",
];

fn synth(dir: &Path) {
    assert_eq!(
        cli(&["synth", "--out", s(dir), "--patients", "5", "--slices", "8", "--height", "16", "--width", "16", "--fraction", "0.05", "--seed", "3"]),
        0
    );
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--seed", "5"];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn full_pipeline_is_reproducible() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    assert!(data.join("manifest.txt").exists());

    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(train(&data, &a, &[]), 0);
    assert_eq!(train(&data, &b, &[]), 0);
    let loss_a = fs::read(a.join("loss.csv")).unwrap();
    assert_eq!(loss_a, fs::read(b.join("loss.csv")).unwrap());
    assert!(String::from_utf8_lossy(&loss_a).starts_with("step,epoch,d_loss,g_adv,l1,total\n"));
    assert_eq!(fs::read(a.join("cgan.ckpt")).unwrap(), fs::read(b.join("cgan.ckpt")).unwrap());

    // Re-running from the echoed config reproduces the run.
    let c = tmp.path().join("c");
    let echo = a.join("train.cfg");
    assert_eq!(cli(&["train", "--config", s(&echo), "--out", s(&c)]), 0);
    assert_eq!(loss_a, fs::read(c.join("loss.csv")).unwrap());

    let ck = a.join("cgan.ckpt");
    let mut refine = vec!["refine", "--data", s(&data), "--out", s(&a), "--seed", "5", "--checkpoint", s(&ck)];
    refine.extend_from_slice(TINY);
    assert_eq!(cli(&refine), 0);
    assert!(a.join("refine_loss.csv").exists());

    // A generator trained with another architecture does not load.
    let mut wrong = refine.clone();
    wrong.extend_from_slice(&["--set", "base_filters=8"]);
    assert_eq!(cli(&wrong), 2);

    let (p1, p2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    assert_eq!(cli(&["predict", "--data", s(&data), "--out", s(&p1), "--checkpoint", s(&ck)]), 0);
    let rck = a.join("refine.ckpt");
    assert_eq!(
        cli(&["predict", "--data", s(&data), "--out", s(&p2), "--checkpoint", s(&ck), "--refine-checkpoint", s(&rck)]),
        0
    );
    assert!(p1.join("synth-004.pred.mvl").exists());
    assert!(!p1.join("synth-000.pred.mvl").exists());

    let (e1, e2) = (tmp.path().join("e1"), tmp.path().join("e2"));
    assert_eq!(cli(&["evaluate", "--data", s(&data), "--pred", s(&p1), "--out", s(&e1)]), 0);
    assert_eq!(cli(&["evaluate", "--data", s(&data), "--pred", s(&p1), "--out", s(&e2)]), 0);
    assert_eq!(fs::read(e1.join("metrics.csv")).unwrap(), fs::read(e2.join("metrics.csv")).unwrap());

    fs::copy(a.join("loss.csv"), e1.join("loss.csv")).unwrap();
    fs::copy(a.join("refine_loss.csv"), e1.join("refine_loss.csv")).unwrap();
    let r = tmp.path().join("r");
    assert_eq!(cli(&["report", "--data", s(&e1), "--out", s(&r)]), 0);
    for f in ["loss.svg", "refine_loss.svg", "report.md"] {
        assert!(r.join(f).exists(), "{f}");
    }
    let md = fs::read_to_string(r.join("report.md")).unwrap();
    assert!(md.contains("| class1 |"));
}

#[test]
fn evaluating_truth_against_itself_gives_unit_dice() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let pred = tmp.path().join("pred");
    fs::create_dir_all(&pred).unwrap();
    for entry in fs::read_dir(&data).unwrap() {
        let p = entry.unwrap().path();
        let name = p.file_name().unwrap().to_str().unwrap().to_string();
        if let Some(id) = name.strip_suffix(".seg.mvl") {
            fs::copy(&p, pred.join(format!("{id}.pred.mvl"))).unwrap();
        }
    }
    let out = tmp.path().join("out");
    assert_eq!(cli(&["evaluate", "--data", s(&data), "--pred", s(&pred), "--out", s(&out), "--split", "all"]), 0);
    let text = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let dice = header.iter().position(|h| *h == "dice").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5 * 2);
    for row in rows {
        assert_eq!(row.split(',').nth(dice).unwrap(), "1");
    }
}

#[test]
fn exit_codes() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["train", "--bogus"]), 1);
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["train", "--set", "nokey=1"]), 1);
    assert_eq!(cli(&["train", "--set", "epochs"]), 1);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["train", "--data", s(&tmp.path().join("missing")), "--out", s(tmp.path())]), 2);
    assert_eq!(cli(&["synth", "--out", s(tmp.path()), "--fraction", "0.7"]), 1);

    let data = tmp.path().join("data");
    synth(&data);
    assert_eq!(train(&data, &tmp.path().join("x"), &["--set", "lambda_l1=1e300"]), 3);

    std::env::set_var(refinegan_cli::THREADS_ENV, "zero");
    assert!(refinegan_cli::thread_pool().is_err());
    std::env::set_var(refinegan_cli::THREADS_ENV, "1");
    assert_eq!(refinegan_cli::thread_pool().unwrap().current_num_threads(), 1);
    std::env::remove_var(refinegan_cli::THREADS_ENV);
}

#[test]
fn binary_reports_exit_codes_and_config_keys() {
    let exe = env!("CARGO_BIN_EXE_refinegan");
    let out = Command::new(exe).args(["train", "--help"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for (key, _) in refinegan_train::config::KEYS {
        assert!(help.contains(key), "help lacks {key}");
    }
    assert!(help.contains("REFINEGAN_THREADS"));
    let out = Command::new(exe).args(["predict", "--unknown-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(exe)
        .args(["evaluate", "--data", s(&tmp.path().join("none")), "--pred", s(tmp.path()), "--out", s(tmp.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
