use crate::diffcore::{Graph, Tensor, Var};
use crate::model::{
    positional_table, window_indices, AttnIx, Bound, DecLayerIx, EncLayerIx, FfnIx, LinearIx, ModelError, ModelParams,
    NormIx, BOS, DOWNSAMPLE, EOS,
};
use crate::scalar::Scalar;

/// Graph handles produced by a teacher-forced translation pass.
#[derive(Debug, Clone, Copy)]
pub struct TranslationVars {
    /// Output of the translation encoder (`L × d`).
    pub encoder_states: Var,
    /// Per-position log-probabilities (`(|y|+1) × vocab`), the last row predicting end-of-sentence.
    pub log_probs: Var,
    /// Mean token cross-entropy against the gold continuation.
    pub ce: Var,
}

impl<T: Scalar> ModelParams<T> {
    fn linear_g(&self, g: &mut Graph<T>, p: &Bound, x: Var, l: LinearIx) -> Result<Var, ModelError> {
        let y = g.matmul(x, p.v(l.w))?;
        Ok(g.add_row(y, p.v(l.b))?)
    }

    fn norm_g(&self, g: &mut Graph<T>, p: &Bound, x: Var, n: NormIx) -> Result<Var, ModelError> {
        Ok(g.layer_norm(x, p.v(n.g), p.v(n.b))?)
    }

    fn attention_g(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        query: Var,
        context: Var,
        a: AttnIx,
        causal: bool,
    ) -> Result<Var, ModelError> {
        let q = self.linear_g(g, p, query, a.q)?;
        let k = self.linear_g(g, p, context, a.k)?;
        let v = self.linear_g(g, p, context, a.v)?;
        let heads = self.config().heads;
        let dh = self.config().d_model / heads;
        let scale = T::lit(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let (qh, kh, vh) = if heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice(q, 1, h * dh, (h + 1) * dh)?,
                    g.slice(k, 1, h * dh, (h + 1) * dh)?,
                    g.slice(v, 1, h * dh, (h + 1) * dh)?,
                )
            };
            let scores = g.matmul_nt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let weights = if causal { g.causal_softmax(scores)? } else { g.softmax(scores)? };
            outs.push(g.matmul(weights, vh)?);
        }
        let merged = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
        self.linear_g(g, p, merged, a.o)
    }

    fn ffn_g(&self, g: &mut Graph<T>, p: &Bound, x: Var, f: FfnIx) -> Result<Var, ModelError> {
        let h = self.linear_g(g, p, x, f.up)?;
        let h = g.gelu(h)?;
        self.linear_g(g, p, h, f.down)
    }

    fn enc_layer_g(&self, g: &mut Graph<T>, p: &Bound, x: Var, l: &EncLayerIx) -> Result<Var, ModelError> {
        let h = self.norm_g(g, p, x, l.ln1)?;
        let h = self.attention_g(g, p, h, h, l.attn, false)?;
        let x = g.add(x, h)?;
        let h = self.norm_g(g, p, x, l.ln2)?;
        let h = self.ffn_g(g, p, h, l.ffn)?;
        Ok(g.add(x, h)?)
    }

    fn dec_layer_g(&self, g: &mut Graph<T>, p: &Bound, x: Var, memory: Var, l: &DecLayerIx) -> Result<Var, ModelError> {
        let h = self.norm_g(g, p, x, l.ln1)?;
        let h = self.attention_g(g, p, h, h, l.self_attn, true)?;
        let x = g.add(x, h)?;
        let h = self.norm_g(g, p, x, l.ln2)?;
        let h = self.attention_g(g, p, h, memory, l.cross_attn, false)?;
        let x = g.add(x, h)?;
        let h = self.norm_g(g, p, x, l.ln3)?;
        let h = self.ffn_g(g, p, h, l.ffn)?;
        Ok(g.add(x, h)?)
    }

    pub(crate) fn check_frames(&self, frames: &Tensor<T>) -> Result<(), ModelError> {
        let cfg = self.config();
        if frames.ndim() != 2 || frames.cols() != cfg.frame_dim {
            return Err(ModelError::FrameWidth { got: frames.cols(), expected: cfg.frame_dim });
        }
        let t = frames.rows();
        if t < DOWNSAMPLE {
            return Err(ModelError::TooShort { frames: t, min: DOWNSAMPLE });
        }
        if t > cfg.max_frames {
            return Err(ModelError::TooLong { frames: t, max: cfg.max_frames });
        }
        Ok(())
    }

    pub(crate) fn check_ids(&self, ids: &[usize]) -> Result<(), ModelError> {
        let vocab = self.config().vocab_size;
        match ids.iter().find(|&&id| id >= vocab) {
            Some(&id) => Err(ModelError::OutOfVocab { id, vocab }),
            None => Ok(()),
        }
    }

    /// Speech frontend and speech encoder: `T × frame_dim` frames to `ceil(T/4) × d` states.
    pub fn speech_encoder_graph(&self, g: &mut Graph<T>, p: &Bound, frames: &Tensor<T>) -> Result<Var, ModelError> {
        self.check_frames(frames)?;
        let lay = &self.layout;
        let x = g.constant(frames.clone())?;
        let mut h = self.linear_g(g, p, x, lay.frame_proj)?;
        let mut len = frames.rows();
        for block in lay.downsample {
            let windows = window_indices(len)
                .into_iter()
                .map(|idx| g.gather(h, idx))
                .collect::<Result<Vec<_>, _>>()?;
            let stacked = g.concat(&windows, 1)?;
            let y = self.linear_g(g, p, stacked, block)?;
            h = g.gelu(y)?;
            len = len.div_ceil(2);
        }
        let pos = g.constant(positional_table(len, self.config().d_model))?;
        h = g.add(h, pos)?;
        for l in &lay.speech_layers {
            h = self.enc_layer_g(g, p, h, l)?;
        }
        self.norm_g(g, p, h, lay.speech_norm)
    }

    /// Embedding lookup plus positional signal: `L × d`.
    pub fn embed_graph(&self, g: &mut Graph<T>, p: &Bound, ids: &[usize]) -> Result<Var, ModelError> {
        self.check_ids(ids)?;
        let rows = g.embedding(p.v(self.layout.embed), ids)?;
        let pos = g.constant(positional_table(ids.len(), self.config().d_model))?;
        Ok(g.add(rows, pos)?)
    }

    pub fn translation_encoder_graph(&self, g: &mut Graph<T>, p: &Bound, src: Var) -> Result<Var, ModelError> {
        let mut h = src;
        for l in &self.layout.encoder_layers {
            h = self.enc_layer_g(g, p, h, l)?;
        }
        self.norm_g(g, p, h, self.layout.encoder_norm)
    }

    /// Teacher-forced decoder pass over `memory` for target `tgt` (without sentinels).
    pub fn decoder_graph(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        memory: Var,
        tgt: &[usize],
    ) -> Result<(Var, Var), ModelError> {
        if tgt.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        self.check_ids(tgt)?;
        let input: Vec<usize> = std::iter::once(BOS).chain(tgt.iter().copied()).collect();
        let labels: Vec<usize> = tgt.iter().copied().chain(std::iter::once(EOS)).collect();
        let mut h = self.embed_graph(g, p, &input)?;
        for l in &self.layout.decoder_layers {
            h = self.dec_layer_g(g, p, h, memory, l)?;
        }
        h = self.norm_g(g, p, h, self.layout.decoder_norm)?;
        let logits = g.matmul_nt(h, p.v(self.layout.embed))?;
        let logits = g.scale(logits, self.output_scale())?;
        let log_probs = g.log_softmax(logits)?;
        let ce = g.cross_entropy(logits, labels)?;
        Ok((log_probs, ce))
    }

    /// Translation encoder–decoder on any `L × d` source sequence.
    pub fn translate_graph(&self, g: &mut Graph<T>, p: &Bound, src: Var, tgt: &[usize]) -> Result<TranslationVars, ModelError> {
        let shape = g.value(src).shape();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.config().d_model {
            return Err(ModelError::Tensor(crate::diffcore::TensorError::ShapeMismatch {
                op: "translate",
                detail: format!("source shape {shape:?}"),
            }));
        }
        let encoder_states = self.translation_encoder_graph(g, p, src)?;
        let (log_probs, ce) = self.decoder_graph(g, p, encoder_states, tgt)?;
        Ok(TranslationVars { encoder_states, log_probs, ce })
    }

    /// Logit scale of the tied output projection.
    pub(crate) fn output_scale(&self) -> T {
        T::lit(1.0 / (self.config().d_model as f64).sqrt())
    }
}
