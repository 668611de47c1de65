use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use cmrt::analysis::REPORT_COLUMNS;
use cmrt::model::{load_checkpoint, save_checkpoint, ModelParams, SPEECH_PREFIX};
use cmrt::pipeline::{self, average_params, AttackRecord, ExperimentConfig, Layout, Manifest, PipelineError, Variant};

fn tiny_config(out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 3
out = "{}"
precision = "f64"
corpus_size = 60
variants = ["full", "mixup-only", "base"]
sweep_lambdas = [1.0, 2.0, 5.0, 8.0, 10.0]

[model]
d_model = 16
heads = 2
ffn_dim = 32
speech_layers = 1
encoder_layers = 1
decoder_layers = 1

[schedule]
pretrain_steps = 120
pretrain_batch = 8
eval_every = 20
patience = 2
tr_steps = 40
snapshot_every = 10
fn_steps = 6
baseline_steps = 6

[tr]
batch_size = 4

[fn]
batch_size = 4
lambda_kl = 5.0

[eval]
beam = 2
max_len = 20
"#,
        out.display()
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

/// One small end-to-end run shared by every test in this file.
fn run() -> &'static (ExperimentConfig, Layout) {
    static RUN: OnceLock<(ExperimentConfig, Layout)> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let cfg = tiny_config(&dir);
        pipeline::run_all(&cfg).unwrap();
        (cfg, Layout::new(dir))
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap()
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    assert!(matches!(ExperimentConfig::from_toml("sed = 1"), Err(PipelineError::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("[schedule]\ntr_step = 5"), Err(PipelineError::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("corpus_size = 10"), Err(PipelineError::Config(_))));
    assert!(matches!(ExperimentConfig::from_toml("[model]\nd_model = 30\nheads = 4"), Err(PipelineError::Config(_))));
    let cfg = ExperimentConfig::from_toml("seed = 9").unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.tr.lambda_kl, 2.0);
    assert_eq!(cfg.finetune.lambda_kl, 5.0);
    assert_eq!(cfg.schedule.fn_steps(), cfg.schedule.tr_steps / 8);
}

#[test]
fn gen_data_is_deterministic_and_validated() {
    let (cfg, layout) = run();
    let data = layout.data();
    for f in ["train.jsonl", "train.frames", "dev.jsonl", "test.jsonl", "lexicon.tsv", "vocab.txt", "phonemes.json", "corpus.json"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let other = tempfile::tempdir().unwrap();
    let cfg2 = ExperimentConfig { out: other.path().to_path_buf(), ..cfg.clone() };
    pipeline::gen_data(&cfg2).unwrap();
    for f in std::fs::read_dir(&data).unwrap() {
        let name = f.unwrap().file_name();
        assert_eq!(read(&data.join(&name)), read(&other.path().join("data").join(&name)), "{name:?} differs");
    }
    let empty = tempfile::tempdir().unwrap();
    let small = ExperimentConfig { out: empty.path().join("run"), corpus_size: 29, ..cfg.clone() };
    assert!(pipeline::gen_data(&small).is_err());
    assert!(!empty.path().join("run").exists());
}

#[test]
fn pretraining_beats_uniform_and_honours_patience() {
    let (cfg, layout) = run();
    let summary: pipeline::PretrainSummary = serde_json::from_slice(&read(&layout.mt().join("summary.json"))).unwrap();
    assert!(summary.best_dev_ce < summary.uniform_ce, "{summary:?}");
    let best = summary.dev_ce.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    assert_eq!(best, summary.best_dev_ce);
    if summary.early_stop {
        let tail = &summary.dev_ce[summary.dev_ce.len() - cfg.schedule.patience..];
        assert!(tail.iter().all(|&(_, ce)| ce >= best));
    } else {
        assert_eq!(summary.steps, cfg.schedule.pretrain_steps);
    }
    let path = Layout::checkpoint(&layout.mt());
    let model: ModelParams<f64> = load_checkpoint(&path).unwrap();
    let copy = tempfile::NamedTempFile::new().unwrap();
    save_checkpoint(copy.path(), &model).unwrap();
    assert_eq!(read(&path), read(copy.path()));
}

#[test]
fn alignment_training_logs_every_step_and_averages_snapshots() {
    let (cfg, layout) = run();
    let dir = layout.tr(Variant::Full);
    let log = String::from_utf8(read(&dir.join("losses.csv"))).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next().unwrap(), "step,l_st,l_mt,l_ctr,l_mix,kl_s,kl_x,kl_s_pq,kl_x_pq,total");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), cfg.schedule.tr_steps);
    assert!(rows.iter().all(|r| r.len() == 10 && r.iter().all(|v| v.is_finite())));

    let summary: serde_json::Value = serde_json::from_slice(&read(&dir.join("summary.json"))).unwrap();
    let names: Vec<&str> = summary["averaged"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(names.len(), 4);
    let snaps: Vec<ModelParams<f64>> = names.iter().map(|n| load_checkpoint(&dir.join("snapshots").join(n)).unwrap()).collect();
    let averaged: ModelParams<f64> = load_checkpoint(&Layout::checkpoint(&dir)).unwrap();
    for (i, t) in averaged.tensors().iter().enumerate() {
        for (j, &v) in t.data().iter().enumerate() {
            let mean = snaps.iter().map(|s| s.tensors()[i].data()[j]).sum::<f64>() / snaps.len() as f64;
            assert!((v - mean).abs() < 1e-12);
        }
    }
    assert_eq!(average_params(&snaps).unwrap().tensors(), averaged.tensors());
}

#[test]
fn attack_records_are_valid_and_reproducible() {
    let (cfg, layout) = run();
    let lexicon = cmrt::morpheus::InflectionLexicon::read_tsv(read(&layout.data().join("lexicon.tsv")).as_slice()).unwrap();
    let dir = layout.attack();
    let mut before = Vec::new();
    for split in ["train", "dev", "test"] {
        let text = String::from_utf8(read(&dir.join(format!("{split}.attack.jsonl")))).unwrap();
        for line in text.lines() {
            let r: AttackRecord = serde_json::from_str(line).unwrap();
            r.attack.validate(&lexicon).unwrap();
        }
        for ext in ["attack.jsonl", "jsonl", "frames"] {
            before.push(read(&dir.join(format!("{split}.{ext}"))));
        }
    }
    pipeline::attack(cfg).unwrap();
    let mut after = Vec::new();
    for split in ["train", "dev", "test"] {
        for ext in ["attack.jsonl", "jsonl", "frames"] {
            after.push(read(&dir.join(format!("{split}.{ext}"))));
        }
    }
    assert!(before == after, "attack rerun changed its outputs");
}

#[test]
fn finetuning_freezes_speech_and_reads_no_adversarial_speech() {
    let (_, layout) = run();
    let tr: ModelParams<f64> = load_checkpoint(&Layout::checkpoint(&layout.tr(Variant::Full))).unwrap();
    let ft: ModelParams<f64> = load_checkpoint(&Layout::checkpoint(&layout.finetune())).unwrap();
    let mut changed = false;
    for (i, name) in tr.names().iter().enumerate() {
        if name.starts_with(SPEECH_PREFIX) {
            assert_eq!(tr.tensors()[i], ft.tensors()[i], "{name} moved");
        } else {
            changed |= tr.tensors()[i] != ft.tensors()[i];
        }
    }
    assert!(changed);
    let m = manifest(&layout.finetune());
    assert!(m.clean_speech && m.adversarial_text && !m.adversarial_speech);
    assert!(m.inputs.iter().all(|p| !p.starts_with("attack/") || p.ends_with(".attack.jsonl")));
    let b = manifest(&layout.baseline());
    assert!(b.adversarial_speech && !b.adversarial_text);
    assert_eq!(b.inputs, ["attack/train.jsonl", "attack/train.frames"]);
    assert_eq!(b.init, "tr/base/model.ckpt");
}

#[test]
fn sweep_runs_are_isolated_and_reported() {
    let (cfg, layout) = run();
    for &l in &cfg.sweep_lambdas {
        let m = manifest(&layout.sweep_run(l));
        assert_eq!(m.lambda_kl, Some(l));
        assert!(Layout::checkpoint(&layout.sweep_run(l)).exists());
    }
    let report = String::from_utf8(read(&layout.sweep().join("report.csv"))).unwrap();
    let lambdas: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').nth(5).unwrap()).collect();
    assert_eq!(lambdas, ["1", "2", "5", "8", "10"]);
}

#[test]
fn analysis_report_follows_the_schema() {
    let (cfg, layout) = run();
    let report = String::from_utf8(read(&layout.analysis().join("report.csv"))).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), (cfg.variants.len() + 2) * 4);
    for r in &rows {
        let bleu: f64 = r[2].parse().unwrap();
        assert!((0.0..=100.0).contains(&bleu));
        if !r[3].is_empty() {
            assert!((-1.0..=1.0).contains(&r[3].parse::<f64>().unwrap()));
        }
        if !r[4].is_empty() {
            assert!((0.0..=1.0 + 1e-9).contains(&r[4].parse::<f64>().unwrap()));
            assert_eq!(r[1], "dev-adv");
        }
    }
    let meta: serde_json::Value = serde_json::from_slice(&read(&layout.analysis().join("meta.json"))).unwrap();
    assert_eq!(meta["cka_reference"], "advspeech-fn");
}

#[test]
fn missing_checkpoint_is_named() {
    let (cfg, layout) = run();
    let dir = tempfile::tempdir().unwrap();
    let copy = ExperimentConfig { out: PathBuf::from(dir.path()), ..cfg.clone() };
    std::fs::create_dir_all(dir.path().join("data")).unwrap();
    for f in std::fs::read_dir(layout.data()).unwrap() {
        let f = f.unwrap();
        std::fs::copy(f.path(), dir.path().join("data").join(f.file_name())).unwrap();
    }
    let err = pipeline::train_tr(&copy, &[Variant::Full]).unwrap_err();
    assert!(err.to_string().contains(&dir.path().join("mt").join("model.ckpt").display().to_string()), "{err}");
    let err = pipeline::analyze(&copy).unwrap_err();
    assert!(matches!(err, PipelineError::Missing { what: "checkpoint", .. }), "{err}");
}
