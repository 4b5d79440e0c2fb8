use std::path::Path;
use std::process::{Command, Output};

fn weakseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weakseg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("train.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

const SMALL: &str = "epochs = 1\nbatch_size = 2\nn_points = 64\nk = 8\nglobal_width = 32\n";

#[test]
fn full_pipeline_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    let out = weakseg(&[
        "gen",
        "--random",
        "1",
        "--density",
        "20",
        "--views",
        "2",
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("scene_000/view_001/gt.lm").exists());

    let cfg = write_config(tmp.path(), SMALL);
    let out = weakseg(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("epoch 1 "));
    let ckpt = run.join("model.ckpt");

    let report = tmp.path().join("report.txt");
    let out = weakseg(&[
        "eval",
        "--ckpt",
        s(&ckpt),
        "--data",
        s(&data),
        "--chunk",
        "64",
        "--report",
        s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&report).unwrap(), out.stdout);
    assert!(String::from_utf8_lossy(&out.stdout).contains("visibility accuracy"));

    let sample = data.join("scene_000/view_000");
    let ppm = tmp.path().join("pred.ppm");
    let out = weakseg(&["render", "--ckpt", s(&ckpt), "--sample", s(&sample), "--out", s(&ppm)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&ppm).unwrap().starts_with("P3"));
    let lm = tmp.path().join("pred.lm");
    let out = weakseg(&[
        "render",
        "--ckpt",
        s(&ckpt),
        "--sample",
        s(&sample),
        "--out",
        s(&lm),
        "--direct",
        "--no-mask",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(lm.exists());

    let out = weakseg(&["oracle-vis", "--sample", s(&sample)]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("agreement with stored flags"));
}

#[test]
fn configuration_problems_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&weakseg(&["gen", "--out", s(tmp.path())])), 2);
    assert_eq!(code(&weakseg(&["train", "--no-such-flag"])), 2);
    let cfg = write_config(tmp.path(), "colour = blue\n");
    let out = weakseg(&[
        "train",
        "--data",
        s(tmp.path()),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}

#[test]
fn missing_or_broken_data_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nothing");
    let out = weakseg(&["train", "--data", s(&missing), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(code(&out), 3);
    std::fs::write(tmp.path().join("classes.txt"), "floor\nfloor\n").unwrap();
    let out = weakseg(&["train", "--data", s(tmp.path()), "--out", s(&tmp.path().join("run"))]);
    assert_eq!(code(&out), 3);
    let out = weakseg(&["oracle-vis", "--sample", s(&missing)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn divergence_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(
        code(&weakseg(&[
            "gen",
            "--random",
            "1",
            "--density",
            "20",
            "--views",
            "2",
            "--out",
            s(&data)
        ])),
        0
    );
    let cfg = write_config(tmp.path(), &format!("{SMALL}epochs = 5\nlr = 1e30\n"));
    let out = weakseg(&[
        "train",
        "--data",
        s(&data),
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("run/model.ckpt").exists());
}
