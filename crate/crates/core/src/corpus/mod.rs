//! Synthetic bilingual corpus with generated speech and exact word alignments.

mod io;
mod language;
mod speech;
mod text;

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{read_split, write_split, CORPUS_FORMAT_VERSION};
pub use language::{builtin_lexicon, g2p, Language, Tense, PHONEMES, PLURAL_MARKER, TENSE_MARKERS};
pub use speech::{synthesize_speech, PhonemeBank};
pub use text::{detokenize, split_subwords, split_word, Vocab, CONTINUATION, SPECIAL_TOKENS};

use crate::diffcore::{Tensor, TensorError};
use crate::model::DOWNSAMPLE;
use crate::objectives::{Span, WordAlignment};
use crate::seed::derive_str;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("no phoneme entry for {0:?}")]
    MissingPhonemes(String),
    #[error("corpus size {0} is below the minimum of {MIN_CORPUS}")]
    TooSmall(usize),
    #[error("invalid synthesis spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path} line {line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("frame file {path}, utterance {id}: {msg}")]
    Sidecar { path: String, id: String, msg: String },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub const MIN_CORPUS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Width of a speech frame.
    pub frame_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Noise norm as a fraction of the base vector norm.
    pub noise: f64,
    pub max_piece_len: usize,
    /// Probability of a time adverb. The adverb fixes the tense; without
    /// one the tense is drawn at random and only the verb carries it.
    pub p_time: f64,
    pub p_adj: f64,
    pub p_object: f64,
    pub p_pp: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            frame_dim: 16,
            frames_min: 2,
            frames_max: 4,
            noise: 0.1,
            max_piece_len: 3,
            p_time: 0.5,
            p_adj: 0.4,
            p_object: 0.6,
            p_pp: 0.4,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::Spec(m.to_string()));
        if self.frame_dim == 0 {
            return bad("frame_dim must be positive");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return bad("frames per phoneme must satisfy 1 <= frames_min <= frames_max");
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)");
        }
        if self.max_piece_len < 2 {
            return bad("max_piece_len must be at least 2");
        }
        if [self.p_time, self.p_adj, self.p_object, self.p_pp].iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("grammar probabilities must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One `(speech, transcript, translation)` triple with word alignments.
/// Speech spans are in frames, text spans in subword pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedUtterance {
    pub id: String,
    /// Seed of the speech noise; re-synthesis with it reproduces the frames.
    pub seed: u64,
    pub speech: Tensor,
    pub x: Vec<String>,
    pub pieces: Vec<String>,
    pub y: Vec<String>,
    pub alignments: Vec<WordAlignment>,
}

impl AlignedUtterance {
    pub fn assemble(
        id: String,
        seed: u64,
        x: Vec<String>,
        y: Vec<String>,
        (speech, frame_spans): (Tensor, Vec<Span>),
        max_piece_len: usize,
    ) -> Self {
        let (pieces, text_spans) = split_subwords(&x, max_piece_len);
        let alignments = frame_spans
            .into_iter()
            .zip(text_spans)
            .enumerate()
            .map(|(word, (speech, text))| WordAlignment { word, speech, text })
            .collect();
        Self { id, seed, speech, x, pieces, y, alignments }
    }

    /// Alignments with speech spans mapped to speech-encoder rows.
    pub fn encoder_alignments(&self) -> Vec<WordAlignment> {
        self.alignments.iter().map(|a| WordAlignment { speech: downsample_span(a.speech), ..*a }).collect()
    }
}

/// Frame span → encoder-row span, rounding outward so no word is left empty.
/// Neighbouring words may share a boundary row.
pub fn downsample_span(span: Span) -> Span {
    Span::new(span.start / DOWNSAMPLE, span.end.div_ceil(DOWNSAMPLE))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<AlignedUtterance>,
    pub dev: Vec<AlignedUtterance>,
    pub test: Vec<AlignedUtterance>,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &Vec<AlignedUtterance>)> {
        [("train", &self.train), ("dev", &self.dev), ("test", &self.test)].into_iter()
    }
}

/// Everything generated from one seed.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SynthSpec,
    pub language: Language,
    pub bank: PhonemeBank,
    pub vocab: Vocab,
    pub splits: Splits,
}

/// Vocabulary over every piece of every lexicon word plus the target words.
pub fn build_vocab(language: &Language, max_piece_len: usize) -> Vocab {
    let mut pieces: Vec<String> =
        language.lexicon.entries().iter().flat_map(|e| split_word(&e.word, max_piece_len)).collect();
    pieces.sort();
    pieces.dedup();
    Vocab::new(pieces.into_iter().chain(language.target_words()))
}

/// Generates `n` distinct sentence pairs split 80/10/10 into train/dev/test.
pub fn generate_corpus(spec: &SynthSpec, n: usize, seed: u64) -> Result<Dataset, CorpusError> {
    spec.validate()?;
    if n < MIN_CORPUS {
        return Err(CorpusError::TooSmall(n));
    }
    let language = Language::new(derive_str(seed, "language"), spec.max_piece_len);
    let bank = PhonemeBank::new(spec.frame_dim, derive_str(seed, "phonemes"));
    let vocab = build_vocab(&language, spec.max_piece_len);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_str(seed, "sentences"));
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n);
    while pairs.len() < n {
        let (x, y) = language.sample_sentence(spec, &mut rng);
        if seen.insert(x.clone()) {
            pairs.push((x, y));
        }
    }
    let n_train = n * 8 / 10;
    let n_dev = n / 10;
    let mut splits = Splits::default();
    for (i, (x, y)) in pairs.into_iter().enumerate() {
        let (name, split) = if i < n_train {
            ("train", &mut splits.train)
        } else if i < n_train + n_dev {
            ("dev", &mut splits.dev)
        } else {
            ("test", &mut splits.test)
        };
        let id = format!("{name}-{:05}", split.len());
        let utt_seed = derive_str(seed, &id);
        let speech = synthesize_speech(&x, &language.lexicon, &bank, spec, utt_seed)?;
        split.push(AlignedUtterance::assemble(id, utt_seed, x, y, speech, spec.max_piece_len));
    }
    Ok(Dataset { spec: spec.clone(), language, bank, vocab, splits })
}

/// Re-synthesizes speech for `words` with the noise stream of `utt_seed`.
pub fn resynthesize(dataset: &Dataset, id: String, utt_seed: u64, words: Vec<String>, y: Vec<String>) -> Result<AlignedUtterance, CorpusError> {
    let speech = synthesize_speech(&words, &dataset.language.lexicon, &dataset.bank, &dataset.spec, utt_seed)?;
    Ok(AlignedUtterance::assemble(id, utt_seed, words, y, speech, dataset.spec.max_piece_len))
}
