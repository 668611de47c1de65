use crate::analysis::sentence_bleu;
use crate::corpus::{split_subwords, Vocab};
use crate::model::{beam_decode, greedy_decode, ModelParams};
use crate::morpheus::MorpheusError;
use crate::scalar::Scalar;

/// Maps a transcript to a score the attack drives down.
pub trait VictimScorer {
    fn score(&mut self, transcript: &[String], reference: &[String]) -> Result<f64, MorpheusError>;
}

impl<F> VictimScorer for F
where
    F: FnMut(&[String], &[String]) -> Result<f64, MorpheusError>,
{
    fn score(&mut self, transcript: &[String], reference: &[String]) -> Result<f64, MorpheusError> {
        self(transcript, reference)
    }
}

/// Smoothed sentence BLEU of the text-path translation against the reference.
pub struct BleuScorer<'a, T: Scalar> {
    pub model: &'a ModelParams<T>,
    pub vocab: &'a Vocab,
    pub max_piece_len: usize,
    pub beam: usize,
    pub max_len: usize,
}

impl<T: Scalar> BleuScorer<'_, T> {
    pub fn translate(&self, transcript: &[String]) -> Result<Vec<String>, MorpheusError> {
        let (pieces, _) = split_subwords(transcript, self.max_piece_len);
        let src = self.model.embed_text(&self.vocab.encode(&pieces)).map_err(|e| MorpheusError::Victim(e.to_string()))?;
        let hyp = if self.beam <= 1 {
            greedy_decode(self.model, &src, self.max_len)
        } else {
            beam_decode(self.model, &src, self.beam, self.max_len)
        }
        .map_err(|e| MorpheusError::Victim(e.to_string()))?;
        Ok(self.vocab.decode(&hyp.tokens))
    }
}

impl<T: Scalar> VictimScorer for BleuScorer<'_, T> {
    fn score(&mut self, transcript: &[String], reference: &[String]) -> Result<f64, MorpheusError> {
        Ok(sentence_bleu(&self.translate(transcript)?, reference))
    }
}

/// Negated reference cross-entropy: lowering it maximizes the victim's loss.
pub struct NllScorer<'a, T: Scalar> {
    pub model: &'a ModelParams<T>,
    pub vocab: &'a Vocab,
    pub max_piece_len: usize,
}

impl<T: Scalar> VictimScorer for NllScorer<'_, T> {
    fn score(&mut self, transcript: &[String], reference: &[String]) -> Result<f64, MorpheusError> {
        let (pieces, _) = split_subwords(transcript, self.max_piece_len);
        let victim = |e: crate::model::ModelError| MorpheusError::Victim(e.to_string());
        let src = self.model.embed_text(&self.vocab.encode(&pieces)).map_err(victim)?;
        let out = self.model.translate_forward(&src, &self.vocab.encode(reference)).map_err(victim)?;
        Ok(-out.ce.to_f64_lossy())
    }
}
