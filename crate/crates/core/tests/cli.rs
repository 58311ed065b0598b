use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn exertion() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_exertion"));
    cmd.env_remove("EXERTION_OUT");
    cmd
}

fn run(args: &[&str]) -> Output {
    exertion().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Evaluated {
    _dir: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
    stdout: String,
}

/// One `synth` + `evaluate` run shared by the tests below.
fn evaluated() -> &'static Evaluated {
    static RUN: OnceLock<Evaluated> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = dir.path().join("eval");
        let synth = run(&["synth", "--subjects", "20", "--seed", "7", "--unseen", "--out", p(&data)]);
        assert!(synth.status.success(), "{}", stderr(&synth));
        let manifest = data.join("manifest.toml");
        let eval = run(&[
            "evaluate",
            "--manifest",
            p(&manifest),
            "--seed",
            "7",
            "--jobs",
            "4",
            "--out",
            p(&out),
        ]);
        assert!(eval.status.success(), "{}", stderr(&eval));
        Evaluated {
            _dir: dir,
            data,
            out,
            stdout: stdout(&eval),
        }
    })
}

fn accuracy(summary: &str, name: &str) -> (usize, usize) {
    let line = summary
        .lines()
        .find(|l| l.starts_with(&format!("{name} accuracy ")))
        .unwrap_or_else(|| panic!("no {name} line in:\n{summary}"));
    let frac = line.split_whitespace().nth(2).unwrap();
    let (c, t) = frac.split_once('/').unwrap();
    (c.parse().unwrap(), t.parse().unwrap())
}

#[test]
fn end_to_end_evaluation_meets_targets() {
    let e = evaluated();
    let (c, t) = accuracy(&e.stdout, "overall");
    assert_eq!(t, 60);
    assert!(c as f64 / t as f64 >= 0.90, "{}", e.stdout);
    let (c1, t1) = accuracy(&e.stdout, "NN1");
    assert!(c1 as f64 / t1 as f64 >= 0.95, "{}", e.stdout);
    for f in ["report.md", "model.bin", "evaluation.json", "run.json", "predictions.csv"] {
        assert!(e.out.join(f).is_file(), "{f} missing");
    }
    assert!(e.stdout.contains("routed to group B"), "{}", e.stdout);
}

#[test]
fn report_rerenders_identically() {
    let e = evaluated();
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "report",
        "--evaluation",
        p(&e.out.join("evaluation.json")),
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.md", "group_stats.csv", "group_movement.svg", "intervals.svg", "predictions.csv"] {
        let a = std::fs::read(e.out.join(f)).unwrap();
        let b = std::fs::read(dir.path().join(f)).unwrap();
        assert!(a == b, "{f} differs after re-rendering");
    }
}

#[test]
fn predict_without_ppg_on_group_b_is_missing_features() {
    let e = evaluated();
    let model = e.out.join("model.bin");
    let landmarks = e.data.join("s01").join("pct0_landmarks.csv");
    let ppg = e.data.join("s01").join("pct0_ppg.csv");

    let o = run(&["predict", "--model", p(&model), "--landmarks", p(&landmarks)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[missing-features]: "), "{err}");

    let o = run(&[
        "predict",
        "--model",
        p(&model),
        "--landmarks",
        p(&landmarks),
        "--ppg",
        p(&ppg),
        "--subject",
        "s01",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("s01,"), "{}", lines[1]);
}

#[test]
fn predict_over_a_manifest_labels_every_trial() {
    let e = evaluated();
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("pred.csv");
    let o = run(&[
        "predict",
        "--model",
        p(&e.out.join("model.bin")),
        "--manifest",
        p(&e.data.join("manifest.toml")),
        "--output",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 20 * 4);
}

fn landmark_file(path: &Path, frames: usize) {
    let mut s = String::from("frame");
    for j in 0..68 {
        let _ = write!(s, ",x{j},y{j}");
    }
    s.push('\n');
    for i in 0..frames {
        let _ = write!(s, "{i}");
        for j in 0..68 {
            let wobble = ((i * 7 + j * 13) % 11) as f64 * 0.1;
            let x = 200.0 + 3.0 * j as f64 + wobble;
            let y = 150.0 + 2.0 * (j % 17) as f64 - wobble;
            let _ = write!(s, ",{x},{y}");
        }
        s.push('\n');
    }
    std::fs::write(path, s).unwrap();
}

#[test]
fn extract_landmarks_prints_one_d1_row() {
    let dir = tempfile::tempdir().unwrap();
    let traj = dir.path().join("traj.csv");
    landmark_file(&traj, 450);
    let o = run(&["extract", "landmarks", "--in", p(&traj), "--fps", "50", "--trim", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), 128);
    assert!(lines[0].starts_with("d0,") && lines[0].ends_with(",d127"));
    let values: Vec<f64> = lines[1].split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 128);
    assert!(values.iter().all(|v| v.is_finite() && *v >= 0.0));
}

#[test]
fn extract_ppg_on_a_short_record_is_a_typed_error() {
    let dir = tempfile::tempdir().unwrap();
    let ppg = dir.path().join("ppg.csv");
    let mut s = String::from("value\n");
    for i in 0..200 {
        let _ = writeln!(s, "{}", (i as f64 / 128.0 * std::f64::consts::TAU).sin());
    }
    std::fs::write(&ppg, s).unwrap();
    let o = run(&["extract", "ppg", "--in", p(&ppg), "--rate", "128"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[insufficient-beats]: "), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two_with_one_line() {
    for args in [
        &["frobnicate"][..],
        &["synth", "--bogus"],
        &["evaluate"],
        &["extract", "landmarks", "--in", "x.csv", "--fps", "fast"],
    ] {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error[usage]: "), "{args:?}: {err}");
    }
}

#[test]
fn missing_input_is_an_io_error() {
    let o = run(&["extract", "landmarks", "--in", "/nonexistent/traj.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[io]: "), "{}", stderr(&o));
}

#[test]
fn help_lists_defaults() {
    let cases: &[(&[&str], &[&str])] = &[
        (&["synth"], &["[default: 20]", "[default: 7]", "[default: 50]", "[default: 128]"]),
        (&["extract", "landmarks"], &["[default: 50]", "[default: 2]"]),
        (&["extract", "ppg"], &["[default: 0.1]", "[default: 0.3]"]),
        (&["train"], &["[default: 200]", "[default: 175]", "[default: 0.5]", "[default: 2]"]),
        (&["evaluate"], &["[default: 200]", "[default: 175]", "[default: 1]", "[default: 7]"]),
        (&["predict"], &["[default: 50]", "[default: 2]"]),
        (&["report"], &["[default: out]"]),
    ];
    for (sub, defaults) in cases {
        let mut args = sub.to_vec();
        args.push("--help");
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{sub:?}");
        let text = stdout(&o);
        for d in *defaults {
            assert!(text.contains(d), "{sub:?} help lacks {d}:\n{text}");
        }
    }
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let o = exertion()
        .args(["synth", "--subjects", "2"])
        .env("EXERTION_OUT", &target)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(target.join("manifest.toml").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn train_then_predict_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = run(&["synth", "--subjects", "4", "--seed", "3", "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = data.join("manifest.toml");
    let mut models = Vec::new();
    for k in 0..2 {
        let model = dir.path().join(format!("m{k}.bin"));
        let o = run(&[
            "train",
            "--manifest",
            p(&manifest),
            "--seed",
            "5",
            "--nn1-epochs",
            "30",
            "--nn2-epochs",
            "30",
            "--model",
            p(&model),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        models.push(std::fs::read(&model).unwrap());
    }
    assert_eq!(models[0], models[1]);
}
