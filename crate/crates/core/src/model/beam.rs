use std::cmp::Ordering;

use crate::model::infer::{DecoderState, EncoderOutput};
use crate::model::{ModelError, ModelParams, BOS, EOS, NUM_SPECIAL};
use crate::scalar::Scalar;

/// A completed decoding result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated content tokens, without the end-of-sentence token.
    pub tokens: Vec<usize>,
    /// Sum of log-probabilities of every generated token, end-of-sentence included.
    pub log_prob: f64,
    /// Number of generated tokens, end-of-sentence included.
    pub length: usize,
    /// False when decoding stopped at `max_len` without emitting end-of-sentence.
    pub ended: bool,
}

impl Hypothesis {
    /// Length-normalized log-probability.
    pub fn score(&self) -> f64 {
        self.log_prob / self.length as f64
    }
}

/// Whether `token` may be generated after `generated` content tokens.
fn allowed(token: usize, generated: usize) -> bool {
    if token == EOS {
        generated > 0
    } else {
        token >= NUM_SPECIAL
    }
}

/// Step-wise argmax decoding. Ties go to the lower token id.
pub fn greedy_decode<T: Scalar>(model: &ModelParams<T>, src: &EncoderOutput<T>, max_len: usize) -> Result<Hypothesis, ModelError> {
    let memory = model.encode_source(src)?;
    let cross = model.cross_cache(&memory);
    let mut state = model.decoder_start();
    let mut lp = model.decoder_step(&cross, &mut state, BOS);
    let mut hyp = Hypothesis { tokens: Vec::new(), log_prob: 0.0, length: 0, ended: false };
    while hyp.length < max_len {
        let mut best: Option<(usize, f64)> = None;
        for (tok, &v) in lp.iter().enumerate() {
            let v = v.to_f64_lossy();
            if allowed(tok, hyp.tokens.len()) && best.is_none_or(|(_, b)| v > b) {
                best = Some((tok, v));
            }
        }
        let Some((tok, v)) = best else { break };
        hyp.log_prob += v;
        hyp.length += 1;
        if tok == EOS {
            hyp.ended = true;
            break;
        }
        hyp.tokens.push(tok);
        if hyp.length < max_len {
            lp = model.decoder_step(&cross, &mut state, tok);
        }
    }
    Ok(hyp)
}

struct Live<T: Scalar> {
    hyp: Hypothesis,
    state: DecoderState<T>,
    next: Vec<T>,
}

/// Beam search returning the completed hypothesis with the best length-normalized score.
///
/// Each step keeps the `beam` best expansions by cumulative log-probability;
/// expansions ending in end-of-sentence, or reaching `max_len`, complete.
pub fn beam_decode<T: Scalar>(
    model: &ModelParams<T>,
    src: &EncoderOutput<T>,
    beam: usize,
    max_len: usize,
) -> Result<Hypothesis, ModelError> {
    let beam = beam.max(1);
    let memory = model.encode_source(src)?;
    let cross = model.cross_cache(&memory);
    let mut state = model.decoder_start();
    let next = model.decoder_step(&cross, &mut state, BOS);
    let mut live = vec![Live { hyp: Hypothesis { tokens: Vec::new(), log_prob: 0.0, length: 0, ended: false }, state, next }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let mut cands: Vec<(usize, usize, f64)> = Vec::new();
        for (i, l) in live.iter().enumerate() {
            for (tok, &v) in l.next.iter().enumerate() {
                if allowed(tok, l.hyp.tokens.len()) {
                    cands.push((i, tok, l.hyp.log_prob + v.to_f64_lossy()));
                }
            }
        }
        cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut next_live = Vec::with_capacity(beam);
        for &(parent, tok, total) in cands.iter().take(beam) {
            let p = &live[parent];
            let mut hyp = Hypothesis { tokens: p.hyp.tokens.clone(), log_prob: total, length: p.hyp.length + 1, ended: false };
            if tok == EOS {
                hyp.ended = true;
                finished.push(hyp);
                continue;
            }
            hyp.tokens.push(tok);
            if step + 1 == max_len {
                finished.push(hyp);
                continue;
            }
            let mut state = p.state.clone();
            let next = model.decoder_step(&cross, &mut state, tok);
            next_live.push(Live { hyp, state, next });
        }
        live = next_live;
        if live.is_empty() {
            break;
        }
    }
    let mut best: Option<Hypothesis> = None;
    for h in finished {
        if best.as_ref().is_none_or(|b| h.score() > b.score()) {
            best = Some(h);
        }
    }
    Ok(best.unwrap_or(Hypothesis { tokens: Vec::new(), log_prob: 0.0, length: 0, ended: false }))
}
