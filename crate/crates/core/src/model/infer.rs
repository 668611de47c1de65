//! Tape-free forward passes. Numerically these follow the graph path op for
//! op; decoding additionally caches per-layer keys and values.

use serde::{Deserialize, Serialize};

use crate::diffcore::kernels;
use crate::diffcore::Tensor;
use crate::model::{
    positional_row, positional_table, window_indices, AttnIx, DecLayerIx, EncLayerIx, FfnIx, LinearIx, ModelError, ModelParams, NormIx,
    BOS, EOS,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Speech,
    Text,
    Mixup,
}

/// Input sequence for the translation encoder–decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T: Scalar = f64> {
    pub frames: Tensor<T>,
    pub source: Modality,
}

impl<T: Scalar> EncoderOutput<T> {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct TranslationOutput<T: Scalar = f64> {
    pub log_probs: Tensor<T>,
    pub ce: T,
}

fn linear<T: Scalar>(p: &ModelParams<T>, x: &Tensor<T>, l: LinearIx) -> Tensor<T> {
    let (w, b) = (p.t(l.w), p.t(l.b));
    let (m, k, n) = (x.rows(), x.cols(), w.cols());
    let mut out = vec![T::zero(); m * n];
    kernels::matmul_acc(x.data(), w.data(), &mut out, m, k, n);
    for i in 0..m {
        kernels::add_assign(&mut out[i * n..(i + 1) * n], b.data());
    }
    Tensor::matrix(m, n, out).expect("linear shape")
}

fn norm<T: Scalar>(p: &ModelParams<T>, x: &Tensor<T>, n: NormIx) -> Tensor<T> {
    let mut out = vec![T::zero(); x.numel()];
    kernels::layer_norm_rows(x.data(), p.t(n.g).data(), p.t(n.b).data(), &mut out, x.rows(), x.cols());
    Tensor::new(x.shape().to_vec(), out).expect("norm shape")
}

fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("add shape")
}

fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(kernels::gelu)
}

fn column_block<T: Scalar>(x: &Tensor<T>, start: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.rows() * width);
    for r in 0..x.rows() {
        out.extend_from_slice(&x.row(r)[start..start + width]);
    }
    out
}

/// Multi-head attention of `q` (already projected) over projected keys/values.
fn attend<T: Scalar>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize, causal: bool) -> Tensor<T> {
    let (lq, lk, d) = (q.rows(), k.rows(), q.cols());
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut merged = vec![T::zero(); lq * d];
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.data().to_vec(), k.data().to_vec(), v.data().to_vec())
        } else {
            (column_block(q, h * dh, dh), column_block(k, h * dh, dh), column_block(v, h * dh, dh))
        };
        let mut scores = vec![T::zero(); lq * lk];
        kernels::matmul_nt_acc(&qh, &kh, &mut scores, lq, dh, lk);
        scores.iter_mut().for_each(|s| *s *= scale);
        kernels::softmax_rows(&mut scores, lq, lk, causal);
        let mut out = vec![T::zero(); lq * dh];
        kernels::matmul_acc(&scores, &vh, &mut out, lq, lk, dh);
        for r in 0..lq {
            merged[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(&out[r * dh..(r + 1) * dh]);
        }
    }
    Tensor::matrix(lq, d, merged).expect("attention shape")
}

fn attention<T: Scalar>(p: &ModelParams<T>, query: &Tensor<T>, context: &Tensor<T>, a: AttnIx, causal: bool) -> Tensor<T> {
    let q = linear(p, query, a.q);
    let k = linear(p, context, a.k);
    let v = linear(p, context, a.v);
    let o = attend(&q, &k, &v, p.config().heads, causal);
    linear(p, &o, a.o)
}

fn ffn<T: Scalar>(p: &ModelParams<T>, x: &Tensor<T>, f: FfnIx) -> Tensor<T> {
    linear(p, &gelu(&linear(p, x, f.up)), f.down)
}

fn enc_layer<T: Scalar>(p: &ModelParams<T>, x: &Tensor<T>, l: &EncLayerIx) -> Tensor<T> {
    let h = norm(p, x, l.ln1);
    let x = add(x, &attention(p, &h, &h, l.attn, false));
    let h = norm(p, &x, l.ln2);
    add(&x, &ffn(p, &h, l.ffn))
}

fn gather_rows<T: Scalar>(x: &Tensor<T>, idx: &[Option<usize>]) -> Vec<T> {
    let d = x.cols();
    let mut out = vec![T::zero(); idx.len() * d];
    for (r, i) in idx.iter().enumerate() {
        if let Some(i) = *i {
            out[r * d..(r + 1) * d].copy_from_slice(x.row(i));
        }
    }
    out
}

/// Self-attention key/value cache of one decoding hypothesis.
#[derive(Debug, Clone)]
pub struct DecoderState<T: Scalar = f64> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pub(crate) position: usize,
}

/// Cross-attention keys and values for a fixed encoder memory.
#[derive(Debug, Clone)]
pub(crate) struct CrossCache<T: Scalar> {
    keys: Vec<Tensor<T>>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    /// Speech frontend and speech encoder on raw frames.
    pub fn encode_speech(&self, frames: &Tensor<T>) -> Result<EncoderOutput<T>, ModelError> {
        self.check_frames(frames)?;
        let lay = &self.layout;
        let d = self.config().d_model;
        let mut h = linear(self, frames, lay.frame_proj);
        for block in lay.downsample {
            let windows = window_indices(h.rows());
            let out_len = windows[0].len();
            let parts: Vec<Vec<T>> = windows.iter().map(|idx| gather_rows(&h, idx)).collect();
            let mut stacked = Vec::with_capacity(out_len * d * parts.len());
            for r in 0..out_len {
                for part in &parts {
                    stacked.extend_from_slice(&part[r * d..(r + 1) * d]);
                }
            }
            let stacked = Tensor::matrix(out_len, d * parts.len(), stacked)?;
            h = gelu(&linear(self, &stacked, block));
        }
        h = add(&h, &positional_table(h.rows(), d));
        for l in &lay.speech_layers {
            h = enc_layer(self, &h, l);
        }
        Ok(EncoderOutput { frames: norm(self, &h, lay.speech_norm), source: Modality::Speech })
    }

    /// Embedding rows plus positional signal.
    pub fn embed_text(&self, ids: &[usize]) -> Result<EncoderOutput<T>, ModelError> {
        self.check_ids(ids)?;
        let d = self.config().d_model;
        let table = self.t(self.layout.embed);
        let rows = gather_rows(table, &ids.iter().map(|&i| Some(i)).collect::<Vec<_>>());
        let rows = if ids.is_empty() { Tensor::zeros(&[0, d]) } else { Tensor::matrix(ids.len(), d, rows)? };
        let frames = if ids.is_empty() { rows } else { add(&rows, &positional_table(ids.len(), d)) };
        Ok(EncoderOutput { frames, source: Modality::Text })
    }

    /// Translation encoder output for any source sequence.
    pub fn encode_source(&self, src: &EncoderOutput<T>) -> Result<Tensor<T>, ModelError> {
        if src.is_empty() || src.frames.cols() != self.config().d_model {
            return Err(ModelError::Tensor(crate::diffcore::TensorError::ShapeMismatch {
                op: "encode_source",
                detail: format!("source shape {:?}", src.frames.shape()),
            }));
        }
        let mut h = src.frames.clone();
        for l in &self.layout.encoder_layers {
            h = enc_layer(self, &h, l);
        }
        Ok(norm(self, &h, self.layout.encoder_norm))
    }

    fn logits_to_log_probs(&self, h: &Tensor<T>) -> Tensor<T> {
        let table = self.t(self.layout.embed);
        let (m, d, v) = (h.rows(), h.cols(), table.rows());
        let mut out = vec![T::zero(); m * v];
        kernels::matmul_nt_acc(h.data(), table.data(), &mut out, m, d, v);
        let s = self.output_scale();
        out.iter_mut().for_each(|x| *x *= s);
        kernels::log_softmax_rows(&mut out, m, v);
        Tensor::matrix(m, v, out).expect("logits shape")
    }

    /// Teacher-forced pass: per-position log-probabilities and mean cross-entropy.
    pub fn translate_forward(&self, src: &EncoderOutput<T>, tgt: &[usize]) -> Result<TranslationOutput<T>, ModelError> {
        if tgt.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        self.check_ids(tgt)?;
        let memory = self.encode_source(src)?;
        let input: Vec<usize> = std::iter::once(BOS).chain(tgt.iter().copied()).collect();
        let mut h = self.embed_text(&input)?.frames;
        for l in &self.layout.decoder_layers {
            h = self.dec_layer_full(&h, &memory, l);
        }
        h = norm(self, &h, self.layout.decoder_norm);
        let log_probs = self.logits_to_log_probs(&h);
        let labels = tgt.iter().copied().chain(std::iter::once(EOS));
        let nll: T = labels.enumerate().map(|(i, y)| -log_probs.get2(i, y)).sum();
        let ce = nll / T::lit(input.len() as f64);
        Ok(TranslationOutput { log_probs, ce })
    }

    fn dec_layer_full(&self, x: &Tensor<T>, memory: &Tensor<T>, l: &DecLayerIx) -> Tensor<T> {
        let h = norm(self, x, l.ln1);
        let x = add(x, &attention(self, &h, &h, l.self_attn, true));
        let h = norm(self, &x, l.ln2);
        let x = add(&x, &attention(self, &h, memory, l.cross_attn, false));
        let h = norm(self, &x, l.ln3);
        add(&x, &ffn(self, &h, l.ffn))
    }

    pub(crate) fn cross_cache(&self, memory: &Tensor<T>) -> CrossCache<T> {
        let (keys, values) = self
            .layout
            .decoder_layers
            .iter()
            .map(|l| (linear(self, memory, l.cross_attn.k), linear(self, memory, l.cross_attn.v)))
            .unzip();
        CrossCache { keys, values }
    }

    pub(crate) fn decoder_start(&self) -> DecoderState<T> {
        let n = self.layout.decoder_layers.len();
        DecoderState { keys: vec![Vec::new(); n], values: vec![Vec::new(); n], position: 0 }
    }

    /// Feeds one token and returns log-probabilities of the next one.
    pub(crate) fn decoder_step(&self, cross: &CrossCache<T>, state: &mut DecoderState<T>, token: usize) -> Vec<T> {
        let d = self.config().d_model;
        let heads = self.config().heads;
        let table = self.t(self.layout.embed);
        let pos = positional_row::<T>(state.position, d);
        let mut x = Tensor::matrix(1, d, table.row(token).iter().zip(&pos).map(|(&e, &p)| e + p).collect())
        .expect("step shape");
        for (li, l) in self.layout.decoder_layers.iter().enumerate() {
            let h = norm(self, &x, l.ln1);
            let q = linear(self, &h, l.self_attn.q);
            state.keys[li].extend_from_slice(linear(self, &h, l.self_attn.k).data());
            state.values[li].extend_from_slice(linear(self, &h, l.self_attn.v).data());
            let t = state.position + 1;
            let k = Tensor::matrix(t, d, state.keys[li].clone()).expect("cache");
            let v = Tensor::matrix(t, d, state.values[li].clone()).expect("cache");
            let o = attend(&q, &k, &v, heads, false);
            x = add(&x, &linear(self, &o, l.self_attn.o));
            let h = norm(self, &x, l.ln2);
            let q = linear(self, &h, l.cross_attn.q);
            let o = attend(&q, &cross.keys[li], &cross.values[li], heads, false);
            x = add(&x, &linear(self, &o, l.cross_attn.o));
            let h = norm(self, &x, l.ln3);
            x = add(&x, &ffn(self, &h, l.ffn));
        }
        state.position += 1;
        let h = norm(self, &x, self.layout.decoder_norm);
        self.logits_to_log_probs(&h).into_data()
    }

    /// Mean of the translation encoder states for `src`.
    pub fn sentence_representation(&self, src: &EncoderOutput<T>) -> Result<Vec<T>, ModelError> {
        let h = self.encode_source(src)?;
        let inv = T::lit(1.0 / h.rows() as f64);
        let mut mean = vec![T::zero(); h.cols()];
        for r in 0..h.rows() {
            kernels::add_assign(&mut mean, h.row(r));
        }
        mean.iter_mut().for_each(|v| *v *= inv);
        Ok(mean)
    }
}
