use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use super::*;

const TINY: &str = "\
n_g = 3
n_a = 3
n_dual = 3
batch_size = 2
past = 3
horizon = 3
gen_widths = 3,4,4
actor_conv_widths = 3,3
actor_dense = 6
disc_widths = 3,3,3,3
";

/// Exit code of the command line `acvg <args>`, run in-process.
fn acvg(args: &[&str]) -> u8 {
    match Cli::try_parse_from(std::iter::once("acvg").chain(args.iter().copied())) {
        Ok(cli) => run(cli.command),
        Err(e) => e.exit_code() as u8,
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Five sequences and one fully trained tiny model, shared by every test.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    config: PathBuf,
    ckpt: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let out = acvg(&["gen-data", "--out", p(&data), "--sequences", "5", "--seed", "3"]);
        assert_eq!(out, 0);
        let config = dir.path().join("tiny.cfg");
        fs::write(&config, TINY).unwrap();
        let ckpt = dir.path().join("model.ckpt");
        let out = acvg(&["train", "--data", p(&data), "--config", p(&config), "--ckpt-out", p(&ckpt)]);
        assert_eq!(out, 0);
        Fixture { _dir: dir, data, config, ckpt }
    })
}

fn manifest_counts(dir: &Path) -> (usize, usize) {
    let text = fs::read_to_string(dir.join("manifest.txt")).unwrap();
    let train = text.lines().filter(|l| l.starts_with("train ")).count();
    let test = text.lines().filter(|l| l.starts_with("test ")).count();
    (train, test)
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_splits_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = acvg(&["gen-data", "--out", p(d), "--sequences", "25", "--length", "12", "--seed", "9"]);
        assert_eq!(out, 0);
    }
    assert_eq!(manifest_counts(&a), (20, 5));
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
}

#[test]
fn gen_data_rejects_one_frame_sequences() {
    let dir = tempfile::tempdir().unwrap();
    let out = acvg(&["gen-data", "--out", p(&dir.path().join("x")), "--length", "1"]);
    assert_eq!(out, 2);
}

#[test]
fn later_phases_need_an_input_checkpoint() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = acvg(&[
        "train", "--data", p(&f.data), "--config", p(&f.config), "--phase", "actor", "--ckpt-out",
        p(&dir.path().join("a.ckpt")),
    ]);
    assert_eq!(out, 2);
}

#[test]
fn full_training_writes_three_checkpoints_and_replays() {
    let f = fixture();
    for suffix in [".generator", ".actor", ""] {
        let mut s = f.ckpt.as_os_str().to_owned();
        s.push(suffix);
        assert!(Path::new(&s).is_file(), "missing {s:?}");
    }
    let dir = tempfile::tempdir().unwrap();
    let again = dir.path().join("again.ckpt");
    let out = acvg(&["train", "--data", p(&f.data), "--config", p(&f.config), "--ckpt-out", p(&again)]);
    assert_eq!(out, 0);
    let log = |c: &Path| fs::read(format!("{}.losses.csv", c.display())).unwrap();
    assert_eq!(log(&f.ckpt), log(&again));
    assert_eq!(fs::read(&f.ckpt).unwrap(), fs::read(&again).unwrap());
    let rows = String::from_utf8(log(&again)).unwrap().lines().count();
    assert_eq!(rows, 1 + 9);
}

#[test]
fn stepwise_phases_match_full_training() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut prev: Option<PathBuf> = None;
    for phase in ["generator", "actor", "dual"] {
        let out_path = dir.path().join(format!("{phase}.ckpt"));
        let mut args = vec!["train", "--data", p(&f.data), "--config", p(&f.config), "--phase", phase];
        if let Some(prev) = &prev {
            args.extend(["--ckpt-in", p(prev)]);
        }
        args.extend(["--ckpt-out", p(&out_path)]);
        let out = acvg(&args);
        assert_eq!(out, 0, "{phase}");
        prev = Some(out_path);
    }
    assert_eq!(fs::read(prev.unwrap()).unwrap(), fs::read(&f.ckpt).unwrap());
}

#[test]
fn eval_defaults_write_twenty_rows() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let out = acvg(&["eval", "--data", p(&f.data), "--ckpt", p(&f.ckpt), "--metrics-out", p(&metrics)]);
    assert_eq!(out, 0);
    let text = fs::read_to_string(&metrics).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 21);
    assert!(lines[0].starts_with("t,"));
    assert!(lines[20].starts_with("20,"));
}

#[test]
fn eval_rejects_windows_longer_than_a_clip() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("m.csv");
    let out = acvg(&[
        "eval", "--data", p(&f.data), "--ckpt", p(&f.ckpt), "--metrics-out", p(&metrics), "--future", "46",
    ]);
    assert_eq!(out, 2);
    assert!(!metrics.exists());
}

#[test]
fn eval_rejects_unknown_action_mode() {
    let f = fixture();
    let out = acvg(&["eval", "--data", p(&f.data), "--ckpt", p(&f.ckpt), "--metrics-out", "/dev/null", "--action-mode", "oracle"]);
    assert_eq!(out, 2);
}

#[test]
fn grad_check_passes_and_catches_a_corrupted_backward() {
    assert_eq!(acvg(&["grad-check", "--ops", "conv2d,lstm_step"]), 0);
    assert_eq!(acvg(&["grad-check", "--ops", "conv2d,lstm_step", "--corrupt-backward", "conv2d"]), 1);
    let args = GradCheck { ops: "conv2d,lstm_step".into(), seed: 0, corrupt_backward: Some("conv2d".into()) };
    match grad_check(args) {
        Err(Failure::Verification(msg)) => assert!(msg.contains("conv2d") && !msg.contains("lstm_step"), "{msg}"),
        _ => panic!("corrupted conv2d backward passed"),
    }
    tensor::corrupt_backward(None);
}

#[test]
fn grad_check_rejects_unknown_ops() {
    assert_eq!(acvg(&["grad-check", "--ops", "fourier"]), 2);
}

#[test]
fn ablate_writes_per_seed_and_average_tables() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut fa = f.ckpt.as_os_str().to_owned();
    fa.push(".generator");
    let out = acvg(&[
        "ablate", "--data", p(&f.data), "--ckpt-acvg", p(&f.ckpt), "--ckpt-fa", fa.to_str().unwrap(), "--modes",
        "full,dt2", "--seeds", "3", "--windows", "1", "--out", p(dir.path()),
    ]);
    assert_eq!(out, 0);
    for run in ["full", "dt2_full"] {
        for seed in 0..3 {
            assert!(dir.path().join(format!("{run}_seed{seed}.csv")).is_file(), "{run} seed {seed}");
        }
    }
    let rows = |name: &str| fs::read_to_string(dir.path().join(name)).unwrap().lines().count() - 1;
    assert_eq!(rows("full_avg.csv"), 20);
    assert_eq!(rows("dt2_full_avg.csv"), 15);
    assert!(dir.path().join("summary.csv").is_file());
}

#[test]
fn ablate_rejects_unknown_flags_and_missing_models() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(acvg(&["ablate", "--data", p(&f.data), "--out", p(dir.path()), "--bogus"]), 2);
    let out = acvg(&["ablate", "--data", p(&f.data), "--out", p(dir.path()), "--modes", "fixed"]);
    assert_eq!(out, 2);
}
