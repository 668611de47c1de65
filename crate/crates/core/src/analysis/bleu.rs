//! BLEU-4 over whitespace tokens, following the sacreBLEU formulation.

use std::collections::HashMap;

use crate::analysis::AnalysisError;

pub const MAX_ORDER: usize = 4;
/// Floor value substituted for zero n-gram matches at sentence level.
pub const FLOOR_SMOOTHING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BleuLevel {
    /// Floor-smoothed, with effective n-gram order.
    Sentence,
    /// Pooled n-gram statistics, unsmoothed.
    Corpus,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Self {
        let mut s = Self { hyp_len: hyp.len(), ref_len: reference.len(), ..Self::default() };
        for n in 1..=MAX_ORDER {
            let h = ngrams(hyp, n);
            let r = ngrams(reference, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = h.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    fn add(&mut self, o: &Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    pub fn score(&self, level: BleuLevel) -> f64 {
        let smooth = level == BleuLevel::Sentence;
        if self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut order = MAX_ORDER;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                if smooth {
                    order = n;
                    break;
                }
                return 0.0;
            }
            let p = if self.matches[n] > 0 {
                self.matches[n] as f64 / self.totals[n] as f64
            } else if smooth {
                FLOOR_SMOOTHING / self.totals[n] as f64
            } else {
                return 0.0;
            };
            log_sum += p.ln();
        }
        if order == 0 {
            return 0.0;
        }
        let bp = if self.hyp_len >= self.ref_len { 1.0 } else { (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp() };
        100.0 * bp * (log_sum / order as f64).exp()
    }
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

pub fn sentence_bleu<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> f64 {
    BleuStats::of(hyp, reference).score(BleuLevel::Sentence)
}

pub fn corpus_bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<f64, AnalysisError> {
    bleu(hyps, refs, BleuLevel::Corpus)
}

/// Corpus level pools statistics; sentence level averages per-sentence scores.
pub fn bleu<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], level: BleuLevel) -> Result<f64, AnalysisError> {
    if hyps.len() != refs.len() {
        return Err(AnalysisError::CountMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    match level {
        BleuLevel::Corpus => {
            let mut total = BleuStats::default();
            for (h, r) in hyps.iter().zip(refs) {
                total.add(&BleuStats::of(h, r));
            }
            Ok(total.score(BleuLevel::Corpus))
        }
        BleuLevel::Sentence if hyps.is_empty() => Ok(0.0),
        BleuLevel::Sentence => {
            Ok(hyps.iter().zip(refs).map(|(h, r)| sentence_bleu(h, r)).sum::<f64>() / hyps.len() as f64)
        }
    }
}
