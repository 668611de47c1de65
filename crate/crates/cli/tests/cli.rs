use std::path::Path;
use std::process::{Command, Output};

fn cmrt(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmrt")).args(args).current_dir(cwd).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_one_line_error(out: &Output) -> String {
    assert!(!out.status.success());
    let err = stderr(out);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    err
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn gen_data_writes_the_corpus_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "corpus_size = 50\n");
    for out in ["a", "b"] {
        let res = cmrt(&["gen-data", "--config", &cfg, "--seed", "7", "--out", out], dir.path());
        assert!(res.status.success(), "{}", stderr(&res));
    }
    let files: Vec<_> = std::fs::read_dir(dir.path().join("a/data")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert!(files.len() >= 8);
    for f in files {
        let a = std::fs::read(dir.path().join("a/data").join(&f)).unwrap();
        let b = std::fs::read(dir.path().join("b/data").join(&f)).unwrap();
        assert!(a == b, "{f:?} differs between reruns");
    }
    let res = cmrt(&["gen-data", "--config", &cfg, "--seed", "8", "--out", "c"], dir.path());
    assert!(res.status.success());
    let a = std::fs::read(dir.path().join("a/data/train.jsonl")).unwrap();
    let c = std::fs::read(dir.path().join("c/data/train.jsonl")).unwrap();
    assert!(a != c, "seed has no effect");
}

#[test]
fn too_small_corpus_fails_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "corpus_size = 20\n");
    let res = cmrt(&["gen-data", "--config", &cfg, "--out", "run"], dir.path());
    assert_one_line_error(&res);
    assert!(!dir.path().join("run").exists());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[schedule]\ntr_steps = 10\nwarmup = 5\n");
    let err = assert_one_line_error(&cmrt(&["gen-data", "--config", &cfg, "--out", "run"], dir.path()));
    assert!(err.contains("warmup"), "{err}");
    assert!(!dir.path().join("run").exists());
}

#[test]
fn missing_checkpoint_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "corpus_size = 40\n");
    assert!(cmrt(&["gen-data", "--config", &cfg, "--out", "run"], dir.path()).status.success());
    let err = assert_one_line_error(&cmrt(&["finetune-fn", "--config", &cfg, "--out", "run"], dir.path()));
    assert!(err.contains("tr/full/model.ckpt"), "{err}");
    let err = assert_one_line_error(&cmrt(&["attack", "--config", &cfg, "--out", "run"], dir.path()));
    assert!(err.contains("mt/model.ckpt"), "{err}");
}

#[test]
fn bad_arguments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!cmrt(&["train-tr", "--variant", "nope"], dir.path()).status.success());
    assert!(!cmrt(&["frobnicate"], dir.path()).status.success());
    let err = assert_one_line_error(&cmrt(&["gen-data", "--config", "absent.toml"], dir.path()));
    assert!(err.contains("absent.toml"), "{err}");
}
