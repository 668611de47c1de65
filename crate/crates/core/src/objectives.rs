//! Training objectives: word pooling, word-aligned contrastive loss, mixup
//! and adversarial mixup, KL consistency terms, and the combined losses.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Graph, Tensor, TensorError, Var};
use crate::model::{Bound, ModelError, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("word {word}: {which} span {start}..{end} invalid for length {len}")]
    SpanOutOfRange { word: usize, which: &'static str, start: usize, end: usize, len: usize },
    #[error("word {word} is perturbed but has no adversarial span")]
    MissingAdversarialSpan { word: usize },
    #[error("KL inputs differ in shape: {p:?} vs {q:?}")]
    LengthMismatch { p: Vec<usize>, q: Vec<usize> },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Half-open row range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check(self, word: usize, which: &'static str, len: usize) -> Result<Self, ObjectiveError> {
        if self.start >= self.end || self.end > len {
            return Err(ObjectiveError::SpanOutOfRange { word, which, start: self.start, end: self.end, len });
        }
        Ok(self)
    }
}

/// Speech and text extents of one source word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordAlignment {
    pub word: usize,
    pub speech: Span,
    pub text: Span,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledWordPair<T: Scalar = f64> {
    pub word: usize,
    pub f_s: Vec<T>,
    pub f_t: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentSource {
    Speech,
    Text,
    AdvText,
}

/// Per-word modality choices together with the uniform draws behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct MixupPlan {
    pub sources: Vec<SegmentSource>,
    pub draws: Vec<f64>,
}

impl MixupPlan {
    /// Applies the mixup rule to recorded draws: speech when `p < p_star`,
    /// adversarial text for perturbed words regardless of the draw.
    pub fn from_draws(draws: Vec<f64>, p_star: f64, perturbed: &BTreeSet<usize>) -> Self {
        let sources = draws
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                if perturbed.contains(&i) {
                    SegmentSource::AdvText
                } else if p < p_star {
                    SegmentSource::Speech
                } else {
                    SegmentSource::Text
                }
            })
            .collect();
        Self { sources, draws }
    }

    /// One uniform `[0, 1)` draw per word, always consumed, so perturbation
    /// never shifts the random stream.
    pub fn sample<R: Rng + ?Sized>(words: usize, p_star: f64, perturbed: &BTreeSet<usize>, rng: &mut R) -> Self {
        let draws = (0..words).map(|_| rng.random::<f64>()).collect();
        Self::from_draws(draws, p_star, perturbed)
    }

    pub fn speech_fraction(&self) -> f64 {
        let n = self.sources.iter().filter(|s| **s == SegmentSource::Speech).count();
        n as f64 / self.sources.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupSegment<T: Scalar = f64> {
    pub word: usize,
    pub source: SegmentSource,
    pub block: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixupSequence<T: Scalar = f64> {
    pub segments: Vec<MixupSegment<T>>,
    pub plan: MixupPlan,
    /// Concatenation of all segment blocks in word order.
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KlMode {
    Sym,
    Asym,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    pub p_star: f64,
    pub lambda_ctr: f64,
    pub lambda_kl: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub beam: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { tau: 0.2, p_star: 0.8, lambda_ctr: 1.0, lambda_kl: 2.0, lr: 2e-3, batch_size: 16, seed: 0, beam: 5 }
    }
}

impl TrainConfig {
    /// Defaults for the robustness fine-tuning stage: a stronger KL pull and
    /// a tenth of the training rate, since it starts from a converged model.
    pub fn finetune() -> Self {
        Self { lambda_kl: 5.0, lr: 2e-4, ..Self::default() }
    }

    // Negated comparisons so that NaN fails validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |m: &str| Err(ObjectiveError::Config(m.to_string()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(0.0..=1.0).contains(&self.p_star) {
            return bad("p_star must lie in [0, 1]");
        }
        if !(self.lambda_ctr >= 0.0 && self.lambda_kl >= 0.0) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.beam == 0 {
            return bad("lr, batch_size and beam must be positive");
        }
        Ok(())
    }
}

/// Which optional terms of the alignment-training loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub contrastive: bool,
    /// Mixup cross-entropy plus its KL consistency terms.
    pub mixup: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { contrastive: true, mixup: true };
}

/// Per-component loss values of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub st: f64,
    pub mt: f64,
    pub ctr: f64,
    /// Mixup (or adversarial mixup) cross-entropy.
    pub mix: f64,
    /// KL between the mixup path and the speech path.
    pub kl_s: f64,
    /// KL between the mixup path and the text path.
    pub kl_x: f64,
    /// The `KL(clean‖mixup)` direction of `kl_s`; equal to it when asymmetric.
    pub kl_s_pq: f64,
    /// The `KL(clean‖mixup)` direction of `kl_x`.
    pub kl_x_pq: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const CSV_HEADER: &'static str = "step,l_st,l_mt,l_ctr,l_mix,kl_s,kl_x,kl_s_pq,kl_x_pq,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8}",
            self.st, self.mt, self.ctr, self.mix, self.kl_s, self.kl_x, self.kl_s_pq, self.kl_x_pq, self.total
        )
    }
}

/// Graph handles of the loss components; absent terms are `None`.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub st: Var,
    pub mt: Var,
    pub ctr: Option<Var>,
    pub mix: Option<Var>,
    /// Unweighted `(kl_s + kl_x) / 2`.
    pub kl: Option<Var>,
}

pub struct Loss {
    pub total: Var,
    pub parts: LossVars,
    pub breakdown: LossBreakdown,
}

/// One aligned training example. Speech spans index encoder-output rows,
/// text spans index source tokens.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a, T: Scalar = f64> {
    pub speech: &'a Tensor<T>,
    pub source: &'a [usize],
    pub target: &'a [usize],
    pub alignments: &'a [WordAlignment],
}

/// A training example paired with its attacked transcript.
#[derive(Debug, Clone, Copy)]
pub struct AdvLossInput<'a, T: Scalar = f64> {
    pub clean: LossInput<'a, T>,
    pub adv_source: &'a [usize],
    /// Text spans of every word within `adv_source`.
    pub adv_spans: &'a [Span],
    pub perturbed: &'a BTreeSet<usize>,
}

fn rows<T: Scalar>(g: &Graph<T>, v: Var) -> usize {
    g.value(v).rows()
}

/// Mean-pooled speech and text word representations as two `n × d` matrices.
pub fn pool_words_graph<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    e: Var,
    alignments: &[WordAlignment],
) -> Result<(Var, Var), ObjectiveError> {
    let (la, le) = (rows(g, a), rows(g, e));
    let mut fs = Vec::with_capacity(alignments.len());
    let mut ft = Vec::with_capacity(alignments.len());
    for w in alignments {
        let s = w.speech.check(w.word, "speech", la)?;
        let t = w.text.check(w.word, "text", le)?;
        let block = g.slice(a, 0, s.start, s.end)?;
        fs.push(g.mean_pool(block, 0)?);
        let block = g.slice(e, 0, t.start, t.end)?;
        ft.push(g.mean_pool(block, 0)?);
    }
    if fs.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    Ok((g.concat(&fs, 0)?, g.concat(&ft, 0)?))
}

pub fn pool_word_reps<T: Scalar>(
    a: &Tensor<T>,
    e: &Tensor<T>,
    alignments: &[WordAlignment],
) -> Result<Vec<PooledWordPair<T>>, ObjectiveError> {
    let mut g = Graph::new();
    let (av, ev) = (g.constant(a.clone())?, g.constant(e.clone())?);
    let (fs, ft) = pool_words_graph(&mut g, av, ev, alignments)?;
    let (fs, ft) = (g.value(fs), g.value(ft));
    Ok(alignments
        .iter()
        .enumerate()
        .map(|(i, w)| PooledWordPair { word: w.word, f_s: fs.row(i).to_vec(), f_t: ft.row(i).to_vec() })
        .collect())
}

/// InfoNCE over rows: row `i` of `fs` is positive with row `i` of `ft`, every
/// other row of `ft` a negative.
pub fn contrastive_graph<T: Scalar>(g: &mut Graph<T>, fs: Var, ft: Var, tau: f64) -> Result<Var, ObjectiveError> {
    let sim = g.cosine(fs, ft)?;
    let logits = g.scale(sim, T::lit(1.0 / tau))?;
    let n = rows(g, fs);
    Ok(g.cross_entropy(logits, (0..n).collect())?)
}

pub fn contrastive_loss<T: Scalar>(pairs: &[PooledWordPair<T>], tau: f64) -> Result<T, ObjectiveError> {
    let d = pairs.first().ok_or(ObjectiveError::EmptyBatch)?.f_s.len();
    let stack = |f: &dyn Fn(&PooledWordPair<T>) -> &[T]| -> Result<Tensor<T>, TensorError> {
        Tensor::matrix(pairs.len(), d, pairs.iter().flat_map(|p| f(p).iter().copied()).collect())
    };
    let mut g = Graph::new();
    let fs = g.constant(stack(&|p| &p.f_s)?)?;
    let ft = g.constant(stack(&|p| &p.f_t)?)?;
    let l = contrastive_graph(&mut g, fs, ft, tau)?;
    Ok(g.value(l).item())
}

/// Concatenates the planned segments of `a`, `e`, and (for perturbed words) `e_adv`.
pub fn mixup_graph<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    e: Var,
    adv: Option<(Var, &[Span])>,
    alignments: &[WordAlignment],
    plan: &MixupPlan,
) -> Result<Var, ObjectiveError> {
    let (la, le) = (rows(g, a), rows(g, e));
    let mut parts = Vec::with_capacity(alignments.len());
    for (w, src) in alignments.iter().zip(&plan.sources) {
        let part = match src {
            SegmentSource::Speech => {
                let s = w.speech.check(w.word, "speech", la)?;
                g.slice(a, 0, s.start, s.end)?
            }
            SegmentSource::Text => {
                let t = w.text.check(w.word, "text", le)?;
                g.slice(e, 0, t.start, t.end)?
            }
            SegmentSource::AdvText => {
                let (ev, spans) = adv.ok_or(ObjectiveError::MissingAdversarialSpan { word: w.word })?;
                let span = spans.get(w.word).ok_or(ObjectiveError::MissingAdversarialSpan { word: w.word })?;
                let t = span.check(w.word, "adversarial text", rows(g, ev))?;
                g.slice(ev, 0, t.start, t.end)?
            }
        };
        parts.push(part);
    }
    if parts.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    Ok(g.concat(&parts, 0)?)
}

fn materialize<T: Scalar>(
    a: &Tensor<T>,
    e: &Tensor<T>,
    adv: Option<(&Tensor<T>, &[Span])>,
    alignments: &[WordAlignment],
    plan: MixupPlan,
) -> Result<MixupSequence<T>, ObjectiveError> {
    let mut g = Graph::new();
    let (av, ev) = (g.constant(a.clone())?, g.constant(e.clone())?);
    let adv = match adv {
        Some((t, spans)) => Some((g.constant(t.clone())?, spans)),
        None => None,
    };
    let m = mixup_graph(&mut g, av, ev, adv, alignments, &plan)?;
    let tensor = g.value(m).clone();
    let mut segments = Vec::with_capacity(alignments.len());
    let mut at = 0;
    for (w, &source) in alignments.iter().zip(&plan.sources) {
        let len = match source {
            SegmentSource::Speech => w.speech.len(),
            SegmentSource::Text => w.text.len(),
            SegmentSource::AdvText => adv.map_or(0, |(_, s)| s[w.word].len()),
        };
        let d = tensor.cols();
        let block = Tensor::matrix(len, d, tensor.data()[at * d..(at + len) * d].to_vec())?;
        segments.push(MixupSegment { word: w.word, source, block });
        at += len;
    }
    Ok(MixupSequence { segments, plan, tensor })
}

pub fn build_mixup<T: Scalar, R: Rng + ?Sized>(
    a: &Tensor<T>,
    e: &Tensor<T>,
    alignments: &[WordAlignment],
    p_star: f64,
    rng: &mut R,
) -> Result<MixupSequence<T>, ObjectiveError> {
    let plan = MixupPlan::sample(alignments.len(), p_star, &BTreeSet::new(), rng);
    materialize(a, e, None, alignments, plan)
}

#[allow(clippy::too_many_arguments)]
pub fn build_adversarial_mixup<T: Scalar, R: Rng + ?Sized>(
    a: &Tensor<T>,
    e_clean: &Tensor<T>,
    e_adv: &Tensor<T>,
    adv_spans: &[Span],
    alignments: &[WordAlignment],
    perturbed: &BTreeSet<usize>,
    p_star: f64,
    rng: &mut R,
) -> Result<MixupSequence<T>, ObjectiveError> {
    if let Some(&word) = perturbed.iter().find(|&&i| i >= adv_spans.len()) {
        return Err(ObjectiveError::MissingAdversarialSpan { word });
    }
    let plan = MixupPlan::sample(alignments.len(), p_star, perturbed, rng);
    materialize(a, e_clean, Some((e_adv, adv_spans)), alignments, plan)
}

/// KL between per-position log-distributions, averaged over positions.
/// `Asym` is `KL(P‖Q)`; `Sym` adds `KL(Q‖P)`.
pub fn kl_graph<T: Scalar>(g: &mut Graph<T>, log_p: Var, log_q: Var, mode: KlMode) -> Result<Var, ObjectiveError> {
    let (ps, qs) = (g.value(log_p).shape(), g.value(log_q).shape());
    if ps != qs {
        return Err(ObjectiveError::LengthMismatch { p: ps.to_vec(), q: qs.to_vec() });
    }
    let pq = g.kl(log_p, log_q)?;
    Ok(match mode {
        KlMode::Asym => pq,
        KlMode::Sym => {
            let qp = g.kl(log_q, log_p)?;
            g.add(pq, qp)?
        }
    })
}

pub fn kl_divergence<T: Scalar>(log_p: &Tensor<T>, log_q: &Tensor<T>, mode: KlMode) -> Result<T, ObjectiveError> {
    let mut g = Graph::new();
    let (p, q) = (g.constant(log_p.clone())?, g.constant(log_q.clone())?);
    let v = kl_graph(&mut g, p, q, mode)?;
    Ok(g.value(v).item())
}

struct Accum {
    vars: Vec<Var>,
}

impl Accum {
    fn new() -> Self {
        Self { vars: Vec::new() }
    }

    /// Mean of the collected scalars, or `None` when nothing was collected.
    fn mean<T: Scalar>(&self, g: &mut Graph<T>) -> Result<Option<Var>, TensorError> {
        let Some((&first, rest)) = self.vars.split_first() else { return Ok(None) };
        let mut acc = first;
        for &v in rest {
            acc = g.add(acc, v)?;
        }
        Ok(Some(g.scale(acc, T::lit(1.0 / self.vars.len() as f64))?))
    }
}

#[derive(Clone, Copy)]
enum Stage {
    Align(Terms),
    Robust,
}

/// Attacked source ids, their word spans, and the perturbed word indices.
type AdvParts<'a> = (&'a [usize], &'a [Span], &'a BTreeSet<usize>);

#[allow(clippy::too_many_arguments)]
fn combined_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    items: &[(LossInput<'_, T>, Option<AdvParts<'_>>)],
    config: &TrainConfig,
    stage: Stage,
    teacher: Option<&Bound>,
    rng: &mut R,
) -> Result<Loss, ObjectiveError> {
    config.validate()?;
    if items.is_empty() {
        return Err(ObjectiveError::EmptyBatch);
    }
    let (ctr_on, mix_on) = match stage {
        Stage::Align(t) => (t.contrastive, t.mixup),
        Stage::Robust => (false, true),
    };
    let (mut st, mut mt, mut mix) = (Accum::new(), Accum::new(), Accum::new());
    let (mut kl_s, mut kl_x, mut kl_s_pq, mut kl_x_pq) = (Accum::new(), Accum::new(), Accum::new(), Accum::new());
    let (mut fs_all, mut ft_all) = (Vec::new(), Vec::new());
    let empty = BTreeSet::new();
    for (item, adv) in items {
        let a = params.speech_encoder_graph(g, bound, item.speech)?;
        let e = params.embed_graph(g, bound, item.source)?;
        let s_path = params.translate_graph(g, bound, a, item.target)?;
        let x_path = params.translate_graph(g, bound, e, item.target)?;
        st.vars.push(s_path.ce);
        mt.vars.push(x_path.ce);
        if ctr_on {
            let (fs, ft) = pool_words_graph(g, a, e, item.alignments)?;
            fs_all.push(fs);
            ft_all.push(ft);
        }
        if mix_on {
            let perturbed = adv.map_or(&empty, |(_, _, p)| p);
            let plan = MixupPlan::sample(item.alignments.len(), config.p_star, perturbed, rng);
            let adv_var = match adv {
                Some((ids, spans, _)) if !perturbed.is_empty() => Some((params.embed_graph(g, bound, ids)?, *spans)),
                _ => None,
            };
            let m = mixup_graph(g, a, e, adv_var, item.alignments, &plan)?;
            let m_path = params.translate_graph(g, bound, m, item.target)?;
            mix.vars.push(m_path.ce);
            let (clean_s, clean_x) = match teacher {
                Some(tb) => {
                    let ta = params.speech_encoder_graph(g, tb, item.speech)?;
                    let te = params.embed_graph(g, tb, item.source)?;
                    (params.translate_graph(g, tb, ta, item.target)?.log_probs, params.translate_graph(g, tb, te, item.target)?.log_probs)
                }
                None => (s_path.log_probs, x_path.log_probs),
            };
            for (clean, sym, pq) in [(clean_s, &mut kl_s, &mut kl_s_pq), (clean_x, &mut kl_x, &mut kl_x_pq)] {
                match stage {
                    Stage::Align(_) => {
                        let fwd = kl_graph(g, clean, m_path.log_probs, KlMode::Asym)?;
                        let bwd = kl_graph(g, m_path.log_probs, clean, KlMode::Asym)?;
                        pq.vars.push(fwd);
                        sym.vars.push(g.add(fwd, bwd)?);
                    }
                    Stage::Robust => {
                        let teacher = g.detach(clean)?;
                        let fwd = kl_graph(g, teacher, m_path.log_probs, KlMode::Asym)?;
                        pq.vars.push(fwd);
                        sym.vars.push(fwd);
                    }
                }
            }
        }
    }
    let mut breakdown = LossBreakdown::default();
    let st = st.mean(g)?.expect("non-empty batch");
    let mt = mt.mean(g)?.expect("non-empty batch");
    breakdown.st = g.value(st).item().to_f64_lossy();
    breakdown.mt = g.value(mt).item().to_f64_lossy();
    let mut total = g.add(st, mt)?;
    let mut parts = LossVars { st, mt, ctr: None, mix: None, kl: None };
    if ctr_on {
        let fs = g.concat(&fs_all, 0)?;
        let ft = g.concat(&ft_all, 0)?;
        let ctr = contrastive_graph(g, fs, ft, config.tau)?;
        breakdown.ctr = g.value(ctr).item().to_f64_lossy();
        parts.ctr = Some(ctr);
        let w = g.scale(ctr, T::lit(config.lambda_ctr))?;
        total = g.add(total, w)?;
    }
    if mix_on {
        let mix = mix.mean(g)?.expect("non-empty batch");
        let ks = kl_s.mean(g)?.expect("non-empty batch");
        let kx = kl_x.mean(g)?.expect("non-empty batch");
        breakdown.mix = g.value(mix).item().to_f64_lossy();
        breakdown.kl_s = g.value(ks).item().to_f64_lossy();
        breakdown.kl_x = g.value(kx).item().to_f64_lossy();
        for (acc, slot) in [(&kl_s_pq, &mut breakdown.kl_s_pq), (&kl_x_pq, &mut breakdown.kl_x_pq)] {
            let v = acc.mean(g)?.expect("non-empty batch");
            *slot = g.value(v).item().to_f64_lossy();
        }
        total = g.add(total, mix)?;
        let kl = g.add(ks, kx)?;
        let kl = g.scale(kl, T::lit(0.5))?;
        parts.mix = Some(mix);
        parts.kl = Some(kl);
        let kl = g.scale(kl, T::lit(config.lambda_kl))?;
        total = g.add(total, kl)?;
    }
    breakdown.total = g.value(total).item().to_f64_lossy();
    Ok(Loss { total, parts, breakdown })
}

/// Alignment-training loss: speech and text translation, word-aligned
/// contrastive loss, mixup translation, and symmetric KL consistency.
pub fn cmrt_tr_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    batch: &[LossInput<'_, T>],
    config: &TrainConfig,
    terms: Terms,
    rng: &mut R,
) -> Result<Loss, ObjectiveError> {
    let items: Vec<_> = batch.iter().map(|&b| (b, None)).collect();
    combined_loss(g, params, bound, &items, config, Stage::Align(terms), None, rng)
}

/// Robustness fine-tuning loss: speech and text translation, adversarial
/// mixup translation, and asymmetric KL towards detached clean-path outputs.
pub fn cmrt_fn_loss<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    batch: &[AdvLossInput<'_, T>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Loss, ObjectiveError> {
    let items: Vec<_> = batch.iter().map(|b| (b.clean, Some((b.adv_source, b.adv_spans, b.perturbed)))).collect();
    combined_loss(g, params, bound, &items, config, Stage::Robust, None, rng)
}

/// [`cmrt_fn_loss`] with the KL teacher distributions computed from a
/// separately bound parameter set rather than the detached student paths.
/// With `teacher` bound to the same values this yields the same loss and
/// gradient, while making the teacher's constancy explicit.
pub fn cmrt_fn_loss_with_teacher<T: Scalar, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    bound: &Bound,
    teacher: &Bound,
    batch: &[AdvLossInput<'_, T>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Loss, ObjectiveError> {
    let items: Vec<_> = batch.iter().map(|b| (b.clean, Some((b.adv_source, b.adv_spans, b.perturbed)))).collect();
    combined_loss(g, params, bound, &items, config, Stage::Robust, Some(teacher), rng)
}
