use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{alignment_cosine, corpus_bleu, emit_report, linear_cka, SimilarityReport};
use crate::corpus::{generate_corpus, write_split, AlignedUtterance, Vocab, CORPUS_FORMAT_VERSION};
use crate::diffcore::{Graph, Tensor, Var};
use crate::model::{beam_decode, save_checkpoint, ModelParams, SPEECH_PREFIX};
use crate::morpheus::{speech_morpheus, BleuScorer};
use crate::objectives::{cmrt_fn_loss, cmrt_tr_loss, LossBreakdown, TrainConfig};
use crate::pipeline::config::{ExperimentConfig, Precision, Variant};
use crate::pipeline::data::{
    create, create_dir, items, load_model, load_split, read_jsonl, write_json, write_jsonl, AdvItem, AttackRecord, CorpusFiles,
    CorpusMeta, Item, Manifest, CORPUS_META, LEXICON, PHONEMES, VOCAB,
};
use crate::pipeline::train::{average_params, optimizer, step, Batcher, CsvLog};
use crate::pipeline::{Layout, PipelineError};
use crate::scalar::Scalar;
use crate::seed::{derive, derive_str};

macro_rules! dispatch {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

const SPLITS: [&str; 3] = ["train", "dev", "test"];
const LOSS_LOG: &str = "losses.csv";
const MANIFEST: &str = "manifest.json";

fn layout(cfg: &ExperimentConfig) -> Layout {
    Layout::new(&cfg.out)
}

/// Generates the corpus and writes splits, lexicon, vocabulary and phoneme bank.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<CorpusMeta, PipelineError> {
    cfg.validate()?;
    let ds = generate_corpus(&cfg.synth, cfg.corpus_size, derive_str(cfg.seed, "corpus"))?;
    let dir = layout(cfg).data();
    create_dir(&dir)?;
    for (name, split) in ds.splits.iter() {
        write_split(&dir, name, split)?;
    }
    let path = dir.join(LEXICON);
    let mut w = create(&path)?;
    ds.language.lexicon.write_tsv(&mut w)?;
    std::io::Write::flush(&mut w).map_err(|e| PipelineError::io(&path, e))?;
    let path = dir.join(VOCAB);
    let mut w = create(&path)?;
    ds.vocab.write(&mut w).and_then(|_| std::io::Write::flush(&mut w)).map_err(|e| PipelineError::io(&path, e))?;
    write_json(&dir.join(PHONEMES), &ds.bank)?;
    let meta = CorpusMeta {
        version: CORPUS_FORMAT_VERSION,
        seed: cfg.seed,
        size: cfg.corpus_size,
        spec: cfg.synth.clone(),
        dictionary: ds.language.dictionary.clone(),
    };
    write_json(&dir.join(CORPUS_META), &meta)?;
    Ok(meta)
}

/// Outcome of text-only pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub steps: usize,
    pub best_step: usize,
    pub best_dev_ce: f64,
    /// Cross-entropy of a uniform prediction over the vocabulary.
    pub uniform_ce: f64,
    pub early_stop: bool,
    /// `(step, dev cross-entropy)` at every evaluation.
    pub dev_ce: Vec<(usize, f64)>,
}

/// Text-only translation pretraining with dev-loss early stopping; keeps the best checkpoint.
pub fn pretrain_mt(cfg: &ExperimentConfig) -> Result<PretrainSummary, PipelineError> {
    cfg.validate()?;
    dispatch!(cfg, pretrain_impl(cfg))
}

fn mean_of<T: Scalar>(g: &mut Graph<T>, vars: &[Var]) -> Result<Var, PipelineError> {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v)?;
    }
    Ok(g.scale(acc, T::lit(1.0 / vars.len() as f64))?)
}

fn text_ce<T: Scalar>(model: &ModelParams<T>, items: &[Item<T>]) -> Result<f64, PipelineError> {
    let mut total = 0.0;
    for it in items {
        total += model.translate_forward(&model.embed_text(&it.source)?, &it.target)?.ce.to_f64_lossy();
    }
    Ok(total / items.len().max(1) as f64)
}

fn pretrain_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<PretrainSummary, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let train: Vec<Item<T>> = items(&load_split(&l.data(), "train")?, &corpus.vocab);
    let dev: Vec<Item<T>> = items(&load_split(&l.data(), "dev")?, &corpus.vocab);
    let config = cfg.model.model_config(corpus.vocab.len(), corpus.meta.spec.frame_dim);
    let mut params = ModelParams::<T>::init(config, derive_str(cfg.seed, "init"))?;
    let mut adam = optimizer(&cfg.adam, cfg.adam.lr, &params);
    let mut batches = Batcher::new(train.len(), derive_str(cfg.seed, "pretrain"));
    let dir = l.mt();
    create_dir(&dir)?;
    let mut log = CsvLog::create(&dir.join("log.csv"), "step,train_ce,dev_ce")?;
    let s = &cfg.schedule;
    let mut best = (f64::INFINITY, 0, params.clone());
    let (mut stale, mut early_stop, mut steps) = (0, false, 0);
    let (mut running, mut seen) = (0.0, 0);
    let mut curve = Vec::new();
    for index in 1..=s.pretrain_steps {
        let batch = batches.next(s.pretrain_batch);
        running += step(&mut params, &mut adam, "pretrain-mt", index, |g, p, b| {
            let mut ces = Vec::with_capacity(batch.len());
            for &i in &batch {
                let e = p.embed_graph(g, b, &train[i].source)?;
                ces.push(p.translate_graph(g, b, e, &train[i].target)?.ce);
            }
            mean_of(g, &ces)
        })?;
        seen += 1;
        steps = index;
        if index % s.eval_every == 0 || index == s.pretrain_steps {
            let dev_ce = text_ce(&params, &dev)?;
            log.line(&format!("{index},{:.6},{dev_ce:.6}", running / seen as f64))?;
            curve.push((index, dev_ce));
            (running, seen) = (0.0, 0);
            if dev_ce < best.0 {
                best = (dev_ce, index, params.clone());
                stale = 0;
            } else {
                stale += 1;
                if s.patience > 0 && stale >= s.patience {
                    early_stop = index < s.pretrain_steps;
                    break;
                }
            }
        }
    }
    log.finish()?;
    save_checkpoint(&Layout::checkpoint(&dir), &best.2)?;
    let summary = PretrainSummary {
        steps,
        best_step: best.1,
        best_dev_ce: best.0,
        uniform_ce: (corpus.vocab.len() as f64).ln(),
        early_stop,
        dev_ce: curve,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Alignment training of each variant from the pretrained text model. The
/// final checkpoint averages the last saved snapshots.
pub fn train_tr(cfg: &ExperimentConfig, variants: &[Variant]) -> Result<(), PipelineError> {
    cfg.validate()?;
    for &v in variants {
        dispatch!(cfg, train_tr_impl(cfg, v))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrSummary {
    variant: String,
    steps: usize,
    averaged: Vec<String>,
}

fn train_tr_impl<T: Scalar>(cfg: &ExperimentConfig, variant: Variant) -> Result<(), PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let mut params: ModelParams<T> = load_model(&l.mt())?;
    let train: Vec<Item<T>> = items(&load_split(&l.data(), "train")?, &corpus.vocab);
    let dir = l.tr(variant);
    let snap_dir = dir.join("snapshots");
    create_dir(&snap_dir)?;
    let tag = format!("tr/{}", variant.name());
    let mut adam = optimizer(&cfg.adam, cfg.tr.lr, &params);
    let mut batches = Batcher::new(train.len(), derive_str(cfg.seed, &tag));
    let mut rng = ChaCha8Rng::seed_from_u64(derive(derive_str(cfg.seed, &format!("{tag}/mixup")), cfg.tr.seed));
    let mut log = CsvLog::create(&dir.join(LOSS_LOG), LossBreakdown::CSV_HEADER)?;
    let keep = cfg.schedule.average_last();
    let mut snapshots: Vec<(String, ModelParams<T>)> = Vec::new();
    for index in 1..=cfg.schedule.tr_steps {
        let batch = batches.next(cfg.tr.batch_size);
        let mut breakdown = LossBreakdown::default();
        step(&mut params, &mut adam, &tag, index, |g, p, b| -> Result<Var, PipelineError> {
            let inputs: Vec<_> = batch.iter().map(|&i| train[i].input()).collect();
            let loss = cmrt_tr_loss(g, p, b, &inputs, &cfg.tr, variant.terms(), &mut rng)?;
            breakdown = loss.breakdown;
            Ok(loss.total)
        })?;
        log.line(&breakdown.csv_row(index))?;
        if index % cfg.schedule.snapshot_every == 0 {
            let name = format!("step-{index:06}.ckpt");
            save_checkpoint(&snap_dir.join(&name), &params)?;
            snapshots.push((name, params.clone()));
            if snapshots.len() > keep {
                snapshots.remove(0);
            }
        }
    }
    log.finish()?;
    if snapshots.is_empty() {
        snapshots.push(("final".into(), params.clone()));
    }
    let models: Vec<_> = snapshots.iter().map(|(_, p)| p.clone()).collect();
    save_checkpoint(&Layout::checkpoint(&dir), &average_params(&models)?)?;
    let summary = TrSummary {
        variant: variant.name().into(),
        steps: cfg.schedule.tr_steps,
        averaged: snapshots.into_iter().map(|(n, _)| n).collect(),
    };
    write_json(&dir.join("summary.json"), &summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAttackSummary {
    pub split: String,
    pub sentences: usize,
    /// Sentences with at least one replacement.
    pub perturbed: usize,
    pub replacements: usize,
    pub attackable_positions: usize,
    /// Mean victim sentence BLEU before and after the attack.
    pub victim_bleu_before: f64,
    pub victim_bleu_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub victim: String,
    pub splits: Vec<SplitAttackSummary>,
}

/// Attacks every split against the pretrained text model: adversarial
/// transcripts plus re-synthesized adversarial speech.
pub fn attack(cfg: &ExperimentConfig) -> Result<AttackSummary, PipelineError> {
    cfg.validate()?;
    dispatch!(cfg, attack_impl(cfg))
}

fn attack_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<AttackSummary, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let victim: ModelParams<T> = load_model(&l.mt())?;
    let dir = l.attack();
    create_dir(&dir)?;
    let mpl = corpus.max_piece_len();
    let mut summary = AttackSummary { victim: l.relative(&Layout::checkpoint(&l.mt())), splits: Vec::new() };
    for split in SPLITS {
        let mut utts = load_split(&l.data(), split)?;
        if let (Some(limit), "train") = (cfg.attack.train_limit, split) {
            utts.truncate(limit);
        }
        let mut scorer =
            BleuScorer { model: &victim, vocab: &corpus.vocab, max_piece_len: mpl, beam: cfg.attack.victim_beam, max_len: cfg.attack.max_len };
        let mut records = Vec::with_capacity(utts.len());
        let mut attacked = Vec::with_capacity(utts.len());
        let mut s = SplitAttackSummary {
            split: split.into(),
            sentences: utts.len(),
            perturbed: 0,
            replacements: 0,
            attackable_positions: 0,
            victim_bleu_before: 0.0,
            victim_bleu_after: 0.0,
        };
        for u in &utts {
            let (adv, speech) = speech_morpheus(u, &mut scorer, &corpus.lexicon, &corpus.bank, &corpus.meta.spec, mpl)?;
            adv.validate(&corpus.lexicon)?;
            s.perturbed += usize::from(!adv.indices.is_empty());
            s.replacements += adv.indices.len();
            s.attackable_positions += adv.attackable_positions();
            s.victim_bleu_before += adv.score_before;
            s.victim_bleu_after += adv.score_after;
            records.push(AttackRecord { id: u.id.clone(), attack: adv });
            attacked.push(speech);
        }
        let n = utts.len().max(1) as f64;
        s.victim_bleu_before /= n;
        s.victim_bleu_after /= n;
        write_jsonl(&dir.join(format!("{split}.attack.jsonl")), &records)?;
        write_split(&dir, split, &attacked)?;
        summary.splits.push(s);
    }
    write_json(&dir.join("report.json"), &summary)?;
    Ok(summary)
}

/// Robustness fine-tuning of the full alignment-trained model on clean
/// speech and attacked transcripts, with the speech encoder frozen.
pub fn finetune_fn(cfg: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let dir = layout(cfg).finetune();
    dispatch!(cfg, finetune_impl(cfg, cfg.finetune.lambda_kl, &dir))
}

fn finetune_impl<T: Scalar>(cfg: &ExperimentConfig, lambda_kl: f64, dir: &Path) -> Result<Manifest, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let init = Layout::checkpoint(&l.tr(Variant::Full));
    let mut params: ModelParams<T> = load_model(&l.tr(Variant::Full))?;
    params.freeze_prefix(SPEECH_PREFIX);
    let records_path = l.attack().join("train.attack.jsonl");
    let records: Vec<AttackRecord> = read_jsonl(&records_path, "attack records")?;
    let clean: HashMap<String, AlignedUtterance> = load_split(&l.data(), "train")?.into_iter().map(|u| (u.id.clone(), u)).collect();
    let train = records
        .iter()
        .map(|r| {
            let u = clean.get(&r.id).ok_or_else(|| PipelineError::Format {
                path: records_path.display().to_string(),
                msg: format!("unknown utterance {}", r.id),
            })?;
            Ok(AdvItem::<T>::new(u, &r.attack, &corpus.vocab, corpus.max_piece_len()))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    if train.is_empty() {
        return Err(PipelineError::Format { path: records_path.display().to_string(), msg: "no attacked sentences".into() });
    }
    create_dir(dir)?;
    let fn_cfg = TrainConfig { lambda_kl, ..cfg.finetune.clone() };
    let steps = cfg.schedule.fn_steps();
    let mut adam = optimizer(&cfg.adam, fn_cfg.lr, &params);
    let mut batches = Batcher::new(train.len(), derive_str(cfg.seed, "fn"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive(derive_str(cfg.seed, "fn/mixup"), fn_cfg.seed));
    let mut log = CsvLog::create(&dir.join(LOSS_LOG), LossBreakdown::CSV_HEADER)?;
    for index in 1..=steps {
        let batch = batches.next(fn_cfg.batch_size);
        let mut breakdown = LossBreakdown::default();
        step(&mut params, &mut adam, "finetune-fn", index, |g, p, b| -> Result<Var, PipelineError> {
            let inputs: Vec<_> = batch.iter().map(|&i| train[i].input()).collect();
            let loss = cmrt_fn_loss(g, p, b, &inputs, &fn_cfg, &mut rng)?;
            breakdown = loss.breakdown;
            Ok(loss.total)
        })?;
        log.line(&breakdown.csv_row(index))?;
    }
    log.finish()?;
    save_checkpoint(&Layout::checkpoint(dir), &params)?;
    let manifest = Manifest {
        stage: "finetune-fn".into(),
        init: l.relative(&init),
        inputs: vec![
            l.relative(&l.data().join("train.jsonl")),
            l.relative(&l.data().join("train.frames")),
            l.relative(&records_path),
        ],
        clean_speech: true,
        adversarial_text: true,
        adversarial_speech: false,
        steps,
        frozen: vec![SPEECH_PREFIX.into()],
        lambda_kl: Some(lambda_kl),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Fine-tunes the base model on adversarial speech with the speech-translation loss only.
pub fn baseline_advspeech_fn(cfg: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    dispatch!(cfg, baseline_impl(cfg))
}

fn baseline_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<Manifest, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let init = Layout::checkpoint(&l.tr(Variant::Base));
    let mut params: ModelParams<T> = load_model(&l.tr(Variant::Base))?;
    let train: Vec<Item<T>> = items(&load_split(&l.attack(), "train")?, &corpus.vocab);
    let dir = l.baseline();
    create_dir(&dir)?;
    let steps = cfg.schedule.baseline_steps();
    let mut adam = optimizer(&cfg.adam, cfg.schedule.baseline_lr, &params);
    let mut batches = Batcher::new(train.len(), derive_str(cfg.seed, "baseline"));
    let mut log = CsvLog::create(&dir.join(LOSS_LOG), "step,l_st")?;
    for index in 1..=steps {
        let batch = batches.next(cfg.finetune.batch_size);
        let loss = step(&mut params, &mut adam, "baseline-advspeech-fn", index, |g, p, b| {
            let mut ces = Vec::with_capacity(batch.len());
            for &i in &batch {
                let a = p.speech_encoder_graph(g, b, &train[i].speech)?;
                ces.push(p.translate_graph(g, b, a, &train[i].target)?.ce);
            }
            mean_of(g, &ces)
        })?;
        log.line(&format!("{index},{loss:.6}"))?;
    }
    log.finish()?;
    save_checkpoint(&Layout::checkpoint(&dir), &params)?;
    let manifest = Manifest {
        stage: "baseline-advspeech-fn".into(),
        init: l.relative(&init),
        inputs: vec![l.relative(&l.attack().join("train.jsonl")), l.relative(&l.attack().join("train.frames"))],
        clean_speech: false,
        adversarial_text: false,
        adversarial_speech: true,
        steps,
        frozen: Vec::new(),
        lambda_kl: None,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

fn translate_speech<T: Scalar>(model: &ModelParams<T>, items: &[Item<T>], vocab: &Vocab, cfg: &ExperimentConfig) -> Result<Vec<Vec<String>>, PipelineError> {
    items
        .iter()
        .map(|it| {
            let enc = model.encode_speech(&it.speech)?;
            Ok(vocab.decode(&beam_decode(model, &enc, cfg.eval.beam, cfg.eval.max_len)?.tokens))
        })
        .collect()
}

fn speech_bleu<T: Scalar>(model: &ModelParams<T>, items: &[Item<T>], refs: &[Vec<String>], vocab: &Vocab, cfg: &ExperimentConfig) -> Result<f64, PipelineError> {
    Ok(corpus_bleu(&translate_speech(model, items, vocab, cfg)?, refs)?)
}

/// Sentence-mean translation-encoder states of the speech inputs, one row per item.
fn sentence_reps<T: Scalar>(model: &ModelParams<T>, items: &[Item<T>]) -> Result<Tensor<f64>, PipelineError> {
    let rows = items
        .iter()
        .map(|it| Ok(model.sentence_representation(&model.encode_speech(&it.speech)?)?.iter().map(|x| x.to_f64_lossy()).collect()))
        .collect::<Result<Vec<Vec<f64>>, PipelineError>>()?;
    Ok(Tensor::from_rows(&rows)?)
}

/// An evaluation set: model inputs and reference translations.
struct EvalSet<T: Scalar> {
    name: &'static str,
    items: Vec<Item<T>>,
    refs: Vec<Vec<String>>,
}

impl<T: Scalar> EvalSet<T> {
    fn load(dir: &Path, split: &str, name: &'static str, vocab: &Vocab) -> Result<Self, PipelineError> {
        let utts = load_split(dir, split)?;
        Ok(Self { name, items: items(&utts, vocab), refs: utts.into_iter().map(|u| u.y).collect() })
    }
}

/// Fine-tunes once per KL weight, each run in its own directory, and
/// reports attacked-test BLEU per weight.
pub fn sweep_kl(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<SimilarityReport>, PipelineError> {
    cfg.validate()?;
    if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(PipelineError::Config("KL weights must be finite and non-negative".into()));
    }
    dispatch!(cfg, sweep_impl(cfg, lambdas))
}

fn sweep_impl<T: Scalar>(cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<SimilarityReport>, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let test_adv = EvalSet::<T>::load(&l.attack(), "test", "test-adv", &corpus.vocab)?;
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let dir = l.sweep_run(lambda);
        finetune_impl::<T>(cfg, lambda, &dir)?;
        let model: ModelParams<T> = load_model(&dir)?;
        rows.push(SimilarityReport {
            model: "cmrt-fn".into(),
            dataset: test_adv.name.into(),
            bleu: speech_bleu(&model, &test_adv.items, &test_adv.refs, &corpus.vocab, cfg)?,
            mean_cosine: None,
            cka_vs_ref: None,
            lambda_kl: Some(lambda),
            seed: cfg.seed,
        });
    }
    emit_report(&rows, &l.sweep().join("report.csv"))?;
    Ok(rows)
}

/// Model tag used in reports.
pub(crate) fn model_tag(v: Variant) -> &'static str {
    match v {
        Variant::Full => "cmrt-tr",
        Variant::MixupOnly => "mixup-only",
        Variant::WacoOnly => "waco-only",
        Variant::Base => "base",
    }
}

pub(crate) const FN_TAG: &str = "cmrt-fn";
pub(crate) const BASELINE_TAG: &str = "advspeech-fn";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AnalysisMeta {
    cka_layer: String,
    cka_reference: String,
    cka_dataset: String,
    cosine_dataset: String,
    bleu: String,
    beam: usize,
}

/// BLEU on clean and attacked dev/test speech for every trained model,
/// speech–text cosine on clean dev, and CKA against the adversarial-speech
/// baseline on attacked dev speech.
pub fn analyze(cfg: &ExperimentConfig) -> Result<Vec<SimilarityReport>, PipelineError> {
    cfg.validate()?;
    dispatch!(cfg, analyze_impl(cfg))
}

fn analyze_impl<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<SimilarityReport>, PipelineError> {
    let l = layout(cfg);
    let corpus = CorpusFiles::load(&l.data())?;
    let mut models: Vec<(&str, ModelParams<T>)> = Vec::new();
    for &v in &cfg.variants {
        models.push((model_tag(v), load_model(&l.tr(v))?));
    }
    models.push((FN_TAG, load_model(&l.finetune())?));
    let reference: ModelParams<T> = load_model(&l.baseline())?;
    let sets = [
        EvalSet::<T>::load(&l.data(), "dev", "dev", &corpus.vocab)?,
        EvalSet::<T>::load(&l.attack(), "dev", "dev-adv", &corpus.vocab)?,
        EvalSet::<T>::load(&l.data(), "test", "test", &corpus.vocab)?,
        EvalSet::<T>::load(&l.attack(), "test", "test-adv", &corpus.vocab)?,
    ];
    let ref_reps = sentence_reps(&reference, &sets[1].items)?;
    let mut rows = Vec::new();
    for (tag, model) in models.iter().map(|(t, m)| (*t, m)).chain([(BASELINE_TAG, &reference)]) {
        let inputs: Vec<_> = sets[0].items.iter().map(Item::input).collect();
        let cosine = alignment_cosine(model, &inputs)?;
        for set in &sets {
            let cka = match (set.name, tag) {
                (_, BASELINE_TAG) => None,
                ("dev-adv", _) => Some(linear_cka(&sentence_reps(model, &set.items)?, &ref_reps)?),
                _ => None,
            };
            rows.push(SimilarityReport {
                model: tag.into(),
                dataset: set.name.into(),
                bleu: speech_bleu(model, &set.items, &set.refs, &corpus.vocab, cfg)?,
                mean_cosine: (set.name == "dev").then_some(cosine),
                cka_vs_ref: cka,
                lambda_kl: None,
                seed: cfg.seed,
            });
        }
    }
    let dir = l.analysis();
    create_dir(&dir)?;
    emit_report(&rows, &dir.join("report.csv"))?;
    let meta = AnalysisMeta {
        cka_layer: "translation encoder output, mean over positions".into(),
        cka_reference: BASELINE_TAG.into(),
        cka_dataset: "dev-adv".into(),
        cosine_dataset: "dev".into(),
        bleu: "corpus".into(),
        beam: cfg.eval.beam,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(rows)
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<SimilarityReport>, PipelineError> {
    gen_data(cfg)?;
    pretrain_mt(cfg)?;
    let mut variants = cfg.variants.clone();
    for needed in [Variant::Full, Variant::Base] {
        if !variants.contains(&needed) {
            variants.push(needed);
        }
    }
    train_tr(cfg, &variants)?;
    attack(cfg)?;
    finetune_fn(cfg)?;
    baseline_advspeech_fn(cfg)?;
    sweep_kl(cfg, &cfg.sweep_lambdas)?;
    analyze(cfg)
}
