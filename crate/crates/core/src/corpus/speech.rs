use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::language::PHONEMES;
use crate::corpus::{CorpusError, SynthSpec};
use crate::diffcore::Tensor;
use crate::morpheus::InflectionLexicon;
use crate::objectives::Span;
use crate::seed::derive;

/// One base frame vector per phoneme symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhonemeBank {
    pub symbols: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl PhonemeBank {
    /// Gaussian directions scaled to norm `sqrt(dim)`, redrawn until every
    /// pair is at least `sqrt(dim)` apart.
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (dim as f64).sqrt();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(PHONEMES.len());
        while vectors.len() < PHONEMES.len() {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v: Vec<f64> = v.iter().map(|x| x / n * scale).collect();
            if vectors.iter().all(|u| distance(u, &v) >= scale) {
                vectors.push(v);
            }
        }
        Self { symbols: PHONEMES.iter().map(|s| s.to_string()).collect(), vectors }
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    pub fn vector(&self, symbol: &str) -> Option<&[f64]> {
        self.symbols.iter().position(|s| s == symbol).map(|i| self.vectors[i].as_slice())
    }

    /// Symbol whose base vector is closest to `frame`.
    pub fn nearest(&self, frame: &[f64]) -> &str {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vectors.iter().enumerate() {
            let d = distance(v, frame);
            if d < best.0 {
                best = (d, i);
            }
        }
        &self.symbols[best.1]
    }

    fn lookup(&self) -> HashMap<&str, &[f64]> {
        self.symbols.iter().map(String::as_str).zip(self.vectors.iter().map(Vec::as_slice)).collect()
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Frames for a word sequence and each word's frame span. Each phoneme
/// lasts a random number of frames in the configured range; each frame is the
/// phoneme's base vector plus uniform noise whose norm is at most
/// `noise` times the base norm. Word `i` draws from its own stream, so
/// changing one word leaves the other words' frames untouched.
pub fn synthesize_speech(
    words: &[String],
    lexicon: &InflectionLexicon,
    bank: &PhonemeBank,
    spec: &SynthSpec,
    seed: u64,
) -> Result<(Tensor, Vec<Span>), CorpusError> {
    let dim = bank.dim();
    let table = bank.lookup();
    let mut data = Vec::new();
    let mut spans = Vec::with_capacity(words.len());
    let mut rows = 0;
    for (i, w) in words.iter().enumerate() {
        let phonemes = lexicon.phonemes(w).map_err(|_| CorpusError::MissingPhonemes(w.clone()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, i as u64));
        let start = rows;
        for p in phonemes {
            let base = table.get(p.as_str()).ok_or_else(|| CorpusError::MissingPhonemes(format!("{w} (/{p}/)")))?;
            let norm = base.iter().map(|x| x * x).sum::<f64>().sqrt();
            let amp = spec.noise * norm / (dim as f64).sqrt();
            let frames = rng.random_range(spec.frames_min..=spec.frames_max);
            for _ in 0..frames {
                data.extend(base.iter().map(|b| b + amp * rng.random_range(-1.0..=1.0)));
                rows += 1;
            }
        }
        spans.push(Span::new(start, rows));
    }
    Ok((Tensor::matrix(rows, dim, data)?, spans))
}
