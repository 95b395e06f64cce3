use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vremd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vremd"))
        .args(args)
        .current_dir(cwd)
        .env("VREMD_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("help_{name}.txt"))
}

#[test]
fn help_matches_golden_files_and_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["", "synth", "train", "eval", "infer", "gradcheck"] {
        let args: Vec<&str> = if sub.is_empty() { vec!["--help"] } else { vec![sub, "--help"] };
        let out = vremd(&args, dir.path());
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8(out.stdout).unwrap();
        let name = if sub.is_empty() { "top" } else { sub };
        if std::env::var_os("VREMD_BLESS").is_some() {
            fs::write(golden(name), &text).unwrap();
        }
        assert_eq!(text, fs::read_to_string(golden(name)).unwrap(), "help of `{name}` changed");
        for line in text.lines().filter(|l| l.trim_start().starts_with("--") && !l.contains("--help")) {
            assert!(
                line.contains("[default: ") || line.contains("(required)"),
                "`{name}` flag without a default: {line}"
            );
        }
    }
}

#[test]
fn synth_is_deterministic_and_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = vremd(&["synth", "--windows", "8", "--seed", "7", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut frames = 0;
    for w in 0..8 {
        let name = format!("window_{w:04}");
        for e in fs::read_dir(dir.path().join("a").join(&name)).unwrap() {
            let e = e.unwrap();
            if e.path().extension().is_some_and(|x| x == "pgm") {
                frames += 1;
            }
            let twin = dir.path().join("b").join(&name).join(e.file_name());
            assert_eq!(fs::read(e.path()).unwrap(), fs::read(twin).unwrap());
        }
    }
    assert_eq!(frames, 24);
}

#[test]
fn distractors_do_not_add_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let o = vremd(&["synth", "--windows", "2", "--distractors", "2", "--out", "d"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("d/window_0000/annotations.txt")).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 15);
}

#[test]
fn train_eval_infer_round() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(vremd(&["synth", "--windows", "2", "--seed", "3", "--out", "ds"], p).status.code(), Some(0));
    fs::write(p.join("run.cfg"), "# quick run\npreset = tiny\nsteps = 50\nno_augment = true\n").unwrap();
    let o = vremd(&["train", "--config", "run.cfg", "--steps", "3", "--data", "ds", "--out", "run"], p);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(p.join("run/metrics.csv")).unwrap();
    assert!(metrics.starts_with("step,loss,lr\n"));
    assert_eq!(metrics.lines().count(), 4, "flag must override the file");
    assert_eq!(&fs::read(p.join("run/checkpoint.vrmd")).unwrap()[..8], b"VRMD0001");

    let o = vremd(&["eval", "--checkpoint", "run/checkpoint.vrmd", "--data", "ds", "--out", "ev"], p);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(p.join("ev/report.csv")).unwrap();
    assert!(csv.starts_with("Head,Shoulder,Elbow,Wrist,Hip,Knee,Ankle,Mean\n"));

    let o = vremd(
        &["infer", "--checkpoint", "run/checkpoint.vrmd", "--window", "ds/window_0001", "--dump-masks", "--dump-offsets", "--out", "inf"],
        p,
    );
    assert_eq!(o.status.code(), Some(0));
    for f in ["overlay.ppm", "heatmaps.pgm", "prediction.txt", "mask_human_1.pgm", "mask_keypoint_2.pgm", "heatmap_00.pgm", "heatmap_14.pgm", "offsets_forward.ppm", "offsets_backward.ppm"] {
        assert!(p.join("inf").join(f).exists(), "{f}");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = vremd(&["train", "--data", "x", "--no-bmd", "--dca-mode", "dc"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--dca-mode"));

    let o = vremd(&["train", "--config", "nowhere.cfg", "--data", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.cfg"));

    fs::write(p.join("bad.cfg"), "steps = 3\nlearning_speed = 2\n").unwrap();
    let o = vremd(&["train", "--config", "bad.cfg", "--data", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_speed"));

    assert_eq!(vremd(&["train", "--steps", "many"], p).status.code(), Some(1));
    assert_eq!(vremd(&["frobnicate"], p).status.code(), Some(1));

    let o = vremd(&["eval", "--checkpoint", "missing.vrmd", "--data", "x", "--out", "e"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.vrmd"));
}

#[test]
fn gradcheck_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let o = vremd(&["gradcheck", "--scale", "zero"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = vremd(&["gradcheck", "--seeds", "1", "--max-coords", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = vremd(&["gradcheck", "--seeds", "1", "--max-coords", "3", "--inject-wrong-sign"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("FAIL"));
}
