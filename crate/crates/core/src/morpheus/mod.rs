//! Inflectional adversarial attack: greedy, POS-constrained replacement of
//! words by other inflections of the same lemma, skipping homophones.

mod lexicon;
mod scorer;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexicon::{InflectionLexicon, LexEntry, LexiconError, Pos};
pub use scorer::{BleuScorer, NllScorer, VictimScorer};

use crate::corpus::{synthesize_speech, AlignedUtterance, CorpusError, PhonemeBank, SynthSpec};

#[derive(Debug, Error)]
pub enum MorpheusError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("scoring position {position}: {msg}")]
    Scorer { position: usize, msg: String },
    #[error("victim scorer: {0}")]
    Victim(String),
    #[error("invalid adversarial text: {0}")]
    Invalid(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub fn tag_pos(tokens: &[String], lexicon: &InflectionLexicon) -> Vec<Pos> {
    tokens.iter().map(|t| lexicon.pos(t)).collect()
}

/// Same-POS inflections of the word's lemma, in paradigm order, without the word itself.
pub fn candidate_inflections(word: &str, lexicon: &InflectionLexicon) -> Vec<String> {
    match lexicon.get(word) {
        Some(e) if e.pos.attackable() => e.inflections.iter().filter(|w| *w != word).cloned().collect(),
        _ => Vec::new(),
    }
}

/// Drops candidates pronounced exactly like `original`.
pub fn filter_homophones(original: &str, candidates: &[String], lexicon: &InflectionLexicon) -> Result<Vec<String>, MorpheusError> {
    let base = lexicon.phonemes(original)?;
    let mut kept = Vec::with_capacity(candidates.len());
    for c in candidates {
        if lexicon.phonemes(c)? != base {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replacement {
    pub index: usize,
    pub original: String,
    pub adversarial: String,
}

/// Scores seen at one attacked position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionTrace {
    pub index: usize,
    /// Running score with the original word in place.
    pub before: f64,
    pub candidates: Vec<(String, f64)>,
    pub chosen: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialText {
    pub original: Vec<String>,
    pub perturbed: Vec<String>,
    pub indices: BTreeSet<usize>,
    pub replacements: Vec<Replacement>,
    pub score_before: f64,
    pub score_after: f64,
    pub trace: Vec<PositionTrace>,
}

impl AdversarialText {
    /// Checks the structural guarantees of an attack result.
    pub fn validate(&self, lexicon: &InflectionLexicon) -> Result<(), MorpheusError> {
        let bad = |m: String| Err(MorpheusError::Invalid(m));
        if self.original.len() != self.perturbed.len() {
            return bad("length changed".into());
        }
        for (i, (a, b)) in self.original.iter().zip(&self.perturbed).enumerate() {
            if (a != b) != self.indices.contains(&i) {
                return bad(format!("position {i} disagrees with the perturbed index set"));
            }
        }
        if self.replacements.len() != self.indices.len() {
            return bad("replacement list does not match the index set".into());
        }
        for r in &self.replacements {
            let (o, a) = match (lexicon.get(&r.original), lexicon.get(&r.adversarial)) {
                (Some(o), Some(a)) => (o, a),
                _ => return bad(format!("replacement {} → {} outside the lexicon", r.original, r.adversarial)),
            };
            if self.original.get(r.index) != Some(&r.original) || self.perturbed.get(r.index) != Some(&r.adversarial) {
                return bad(format!("replacement at {} does not match the texts", r.index));
            }
            if !o.pos.attackable() || o.lemma != a.lemma || o.pos != a.pos {
                return bad(format!("{} → {} changes lemma or POS", r.original, r.adversarial));
            }
            if o.phonemes == a.phonemes {
                return bad(format!("{} → {} is a homophone", r.original, r.adversarial));
            }
        }
        if self.score_after > self.score_before {
            return bad("attack raised the victim score".into());
        }
        Ok(())
    }

    /// Number of positions with at least one admissible candidate.
    pub fn attackable_positions(&self) -> usize {
        self.trace.len()
    }
}

/// Left-to-right greedy search. At each attackable position the original
/// word and every surviving candidate are scored with the prefix committed
/// so far; a candidate wins only with a strictly lower score, and among
/// equal candidates the first in paradigm order wins.
pub fn greedy_attack<S: VictimScorer + ?Sized>(
    tokens: &[String],
    reference: &[String],
    scorer: &mut S,
    lexicon: &InflectionLexicon,
) -> Result<AdversarialText, MorpheusError> {
    let mut current = tokens.to_vec();
    let score_before = scorer.score(&current, reference).map_err(|e| MorpheusError::Scorer { position: 0, msg: e.to_string() })?;
    let mut running = score_before;
    let mut indices = BTreeSet::new();
    let mut replacements = Vec::new();
    let mut trace = Vec::new();
    for i in 0..tokens.len() {
        let candidates = filter_homophones(&tokens[i], &candidate_inflections(&tokens[i], lexicon), lexicon)?;
        if candidates.is_empty() {
            continue;
        }
        let mut scored = Vec::with_capacity(candidates.len());
        let mut best: Option<(usize, f64)> = None;
        for (k, c) in candidates.iter().enumerate() {
            let mut trial = current.clone();
            trial[i] = c.clone();
            let s = scorer.score(&trial, reference).map_err(|e| MorpheusError::Scorer { position: i, msg: e.to_string() })?;
            if s < running && best.is_none_or(|(_, b)| s < b) {
                best = Some((k, s));
            }
            scored.push((c.clone(), s));
        }
        let before = running;
        let chosen = best.map(|(k, s)| {
            current[i] = candidates[k].clone();
            running = s;
            indices.insert(i);
            replacements.push(Replacement { index: i, original: tokens[i].clone(), adversarial: candidates[k].clone() });
            candidates[k].clone()
        });
        trace.push(PositionTrace { index: i, before, candidates: scored, chosen });
    }
    Ok(AdversarialText {
        original: tokens.to_vec(),
        perturbed: current,
        indices,
        replacements,
        score_before,
        score_after: running,
        trace,
    })
}

/// Attacks the transcript of `utt` and re-synthesizes speech for the result,
/// keeping the reference translation.
pub fn speech_morpheus<S: VictimScorer + ?Sized>(
    utt: &AlignedUtterance,
    scorer: &mut S,
    lexicon: &InflectionLexicon,
    bank: &PhonemeBank,
    spec: &SynthSpec,
    max_piece_len: usize,
) -> Result<(AdversarialText, AlignedUtterance), MorpheusError> {
    let adv = greedy_attack(&utt.x, &utt.y, scorer, lexicon)?;
    let speech = synthesize_speech(&adv.perturbed, lexicon, bank, spec, utt.seed)?;
    let attacked = AlignedUtterance::assemble(utt.id.clone(), utt.seed, adv.perturbed.clone(), utt.y.clone(), speech, max_piece_len);
    Ok((adv, attacked))
}
