use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_split, split_subwords, AlignedUtterance, PhonemeBank, SynthSpec, Vocab};
use crate::diffcore::Tensor;
use crate::model::{load_checkpoint, ModelParams};
use crate::morpheus::{AdversarialText, InflectionLexicon};
use crate::objectives::{AdvLossInput, LossInput, Span, WordAlignment};
use crate::pipeline::{Layout, PipelineError};
use crate::scalar::Scalar;

pub(crate) const CORPUS_META: &str = "corpus.json";
pub(crate) const LEXICON: &str = "lexicon.tsv";
pub(crate) const VOCAB: &str = "vocab.txt";
pub(crate) const PHONEMES: &str = "phonemes.json";

/// Generation parameters and the source→target dictionary of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusMeta {
    pub version: u32,
    pub seed: u64,
    pub size: usize,
    pub spec: SynthSpec,
    pub dictionary: BTreeMap<String, String>,
}

/// One attacked sentence of the attack stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackRecord {
    pub id: String,
    pub attack: AdversarialText,
}

/// Provenance of a training stage: what it started from and what it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub init: String,
    pub inputs: Vec<String>,
    pub clean_speech: bool,
    pub adversarial_text: bool,
    pub adversarial_speech: bool,
    pub steps: usize,
    pub frozen: Vec<String>,
    pub lambda_kl: Option<f64>,
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| PipelineError::io(path, e))?))
}

pub(crate) fn open(path: &Path, what: &'static str) -> Result<BufReader<File>, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Missing { what, path: path.display().to_string() });
    }
    Ok(BufReader::new(File::open(path).map_err(|e| PipelineError::io(path, e))?))
}

pub(crate) fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| PipelineError::Format { path: path.display().to_string(), msg: e.to_string() })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<D: DeserializeOwned>(path: &Path, what: &'static str) -> Result<D, PipelineError> {
    serde_json::from_reader(open(path, what)?).map_err(|e| PipelineError::Format { path: path.display().to_string(), msg: e.to_string() })
}

pub(crate) fn write_lines<I: IntoIterator<Item = String>>(path: &Path, lines: I) -> Result<(), PipelineError> {
    let mut w = create(path)?;
    for l in lines {
        writeln!(w, "{l}").map_err(|e| PipelineError::io(path, e))?;
    }
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn write_jsonl<S: Serialize>(path: &Path, records: &[S]) -> Result<(), PipelineError> {
    let lines = records
        .iter()
        .map(|r| serde_json::to_string(r).map_err(|e| PipelineError::Format { path: path.display().to_string(), msg: e.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;
    write_lines(path, lines)
}

pub(crate) fn read_jsonl<D: DeserializeOwned>(path: &Path, what: &'static str) -> Result<Vec<D>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in open(path, what)?.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Format {
            path: path.display().to_string(),
            msg: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

pub(crate) fn load_model<T: Scalar>(dir: &Path) -> Result<ModelParams<T>, PipelineError> {
    let path = Layout::checkpoint(dir);
    if !path.exists() {
        return Err(PipelineError::Missing { what: "checkpoint", path: path.display().to_string() });
    }
    load_checkpoint(&path).map_err(|e| PipelineError::Format { path: path.display().to_string(), msg: e.to_string() })
}

/// The persisted corpus resources shared by every later stage.
pub(crate) struct CorpusFiles {
    pub meta: CorpusMeta,
    pub lexicon: InflectionLexicon,
    pub vocab: Vocab,
    pub bank: PhonemeBank,
}

impl CorpusFiles {
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let meta: CorpusMeta = read_json(&dir.join(CORPUS_META), "corpus")?;
        let lexicon = InflectionLexicon::read_tsv(open(&dir.join(LEXICON), "lexicon")?)?;
        let vocab_path = dir.join(VOCAB);
        let vocab = Vocab::read(open(&vocab_path, "vocabulary")?).map_err(|e| PipelineError::io(&vocab_path, e))?;
        let bank = read_json(&dir.join(PHONEMES), "phoneme bank")?;
        Ok(Self { meta, lexicon, vocab, bank })
    }

    pub fn max_piece_len(&self) -> usize {
        self.meta.spec.max_piece_len
    }
}

pub(crate) fn load_split(dir: &Path, split: &str) -> Result<Vec<AlignedUtterance>, PipelineError> {
    let path = dir.join(format!("{split}.jsonl"));
    if !path.exists() {
        return Err(PipelineError::Missing { what: "corpus split", path: path.display().to_string() });
    }
    Ok(read_split(dir, split)?)
}

/// Model-ready form of one utterance: encoder-row speech spans and vocabulary ids.
pub(crate) struct Item<T: Scalar> {
    pub speech: Tensor<T>,
    pub source: Vec<usize>,
    pub target: Vec<usize>,
    pub alignments: Vec<WordAlignment>,
}

impl<T: Scalar> Item<T> {
    pub fn new(utt: &AlignedUtterance, vocab: &Vocab) -> Self {
        Self {
            speech: utt.speech.cast(),
            source: vocab.encode(&utt.pieces),
            target: vocab.encode(&utt.y),
            alignments: utt.encoder_alignments(),
        }
    }

    pub fn input(&self) -> LossInput<'_, T> {
        LossInput { speech: &self.speech, source: &self.source, target: &self.target, alignments: &self.alignments }
    }
}

pub(crate) fn items<T: Scalar>(utts: &[AlignedUtterance], vocab: &Vocab) -> Vec<Item<T>> {
    utts.iter().map(|u| Item::new(u, vocab)).collect()
}

/// A clean item paired with its attacked transcript.
pub(crate) struct AdvItem<T: Scalar> {
    pub clean: Item<T>,
    pub adv_source: Vec<usize>,
    pub adv_spans: Vec<Span>,
    pub perturbed: BTreeSet<usize>,
}

impl<T: Scalar> AdvItem<T> {
    pub fn new(utt: &AlignedUtterance, attack: &AdversarialText, vocab: &Vocab, max_piece_len: usize) -> Self {
        let (pieces, adv_spans) = split_subwords(&attack.perturbed, max_piece_len);
        Self { clean: Item::new(utt, vocab), adv_source: vocab.encode(&pieces), adv_spans, perturbed: attack.indices.clone() }
    }

    pub fn input(&self) -> AdvLossInput<'_, T> {
        AdvLossInput { clean: self.clean.input(), adv_source: &self.adv_source, adv_spans: &self.adv_spans, perturbed: &self.perturbed }
    }
}
