use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn jointdet(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jointdet")).current_dir(cwd).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &[&str] = &[
    "--set",
    "stage1.epochs=1",
    "--set",
    "stage2.epochs=1",
    "--set",
    "stage3.epochs=1",
    "--set",
    "augment=off",
    "--set",
    "val_fraction=0",
    "--set",
    "batch_size=8",
];

#[test]
fn help_lists_every_key_with_default() {
    let dir = tempfile::tempdir().unwrap();
    let out = jointdet(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for (key, _) in jointdet::config::KEYS {
        assert!(text.contains(key), "missing {key}");
    }
    assert!(text.contains("stage3.lr") && text.contains("0.001"));
}

#[test]
fn usage_and_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = jointdet(dir.path(), &["eval", "--corpus", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = jointdet(dir.path(), &["gradcheck", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = jointdet(dir.path(), &["gradcheck", "--config", "missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let out = jointdet(dir.path(), &["gradcheck", "--set", "stage1.epochs=0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_corpus_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = jointdet(dir.path(), &["prepare", "--corpus", "nowhere"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gradcheck_passes_on_fresh_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = jointdet(dir.path(), &["gradcheck", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("max relative error"));
}

#[test]
fn prepare_train_eval_detect() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let prep = jointdet(
        root,
        &["prepare", "--synthetic", "--positives", "6", "--negatives", "6", "--scenes", "2", "--output-dir", "data"],
    );
    assert!(prep.status.success(), "{}", String::from_utf8_lossy(&prep.stderr));
    assert!(root.join("data/manifest.txt").exists());

    let train = |out: &str, threads: &str| {
        let mut args =
            vec!["train", "--corpus", "data/corpus", "--output-dir", out, "--seed", "5", "--threads", threads];
        args.extend_from_slice(TINY);
        let o = jointdet(root, &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        stdout(&o).lines().find(|l| l.starts_with("final.ckpt sha256")).unwrap().to_string()
    };
    let a = train("run_a", "1");
    assert_eq!(a, train("run_b", "2"));
    for f in ["stage1.ckpt", "stage2.ckpt", "final.ckpt", "epochs.csv", "config.txt"] {
        assert!(root.join("run_a").join(f).exists(), "{f}");
    }

    let eval = jointdet(
        root,
        &[
            "eval",
            "--checkpoint",
            "run_a/final.ckpt",
            "--corpus",
            "data/corpus",
            "--output-dir",
            "eval",
            "--set",
            "eval.stride_r=20",
            "--set",
            "eval.stride_c=35",
        ],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(stdout(&eval).contains("lamr"));
    for f in ["detections.csv", "curve.csv", "summary.csv", "curve.dat"] {
        assert!(root.join("eval").join(f).exists(), "{f}");
    }

    let detect = jointdet(
        root,
        &[
            "detect",
            "--checkpoint",
            "run_a/final.ckpt",
            "--image",
            "data/corpus/test/test-0.pgm",
            "--set",
            "eval.threshold=0",
            "--set",
            "eval.stride_r=20",
            "--set",
            "eval.stride_c=35",
        ],
    );
    assert!(detect.status.success(), "{}", String::from_utf8_lossy(&detect.stderr));
    assert!(stdout(&detect).lines().count() >= 2);

    let mut entries: Vec<String> =
        fs::read_dir(root).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    entries.sort();
    assert_eq!(entries, ["data", "eval", "run_a", "run_b"]);
}
