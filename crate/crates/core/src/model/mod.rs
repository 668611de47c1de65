//! Toy-scale speech translation model: speech encoder with a strided
//! frontend, text embedding layer, and a translation encoder–decoder that
//! accepts speech, text, or mixed input sequences.

mod beam;
mod checkpoint;
mod forward;
mod infer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{Graph, Tensor, TensorError, Var};
use crate::scalar::Scalar;

pub use beam::{beam_decode, greedy_decode, Hypothesis};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use forward::TranslationVars;
pub use infer::{DecoderState, EncoderOutput, Modality, TranslationOutput};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIAL: usize = 4;

/// Frames consumed per encoder output position (two stride-2 blocks).
pub const DOWNSAMPLE: usize = 4;
pub const CONV_KERNEL: usize = 5;
pub const CONV_PAD: usize = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("speech input has {frames} frames; at least {min} required")]
    TooShort { frames: usize, min: usize },
    #[error("speech input has {frames} frames; at most {max} allowed")]
    TooLong { frames: usize, max: usize },
    #[error("frame width {got} does not match model input width {expected}")]
    FrameWidth { got: usize, expected: usize },
    #[error("token id {id} outside vocabulary of {vocab}")]
    OutOfVocab { id: usize, vocab: usize },
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of raw speech frames.
    pub frame_dim: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub speech_layers: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_frames: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 200,
            frame_dim: 16,
            d_model: 64,
            heads: 4,
            ffn_dim: 128,
            speech_layers: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            max_frames: 1024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.vocab_size <= NUM_SPECIAL {
            return Err(format!("vocab_size {} leaves no room past the special tokens", self.vocab_size));
        }
        if self.frame_dim == 0 || self.ffn_dim == 0 {
            return Err("frame_dim and ffn_dim must be positive".into());
        }
        if self.max_frames < DOWNSAMPLE {
            return Err(format!("max_frames must be at least {DOWNSAMPLE}"));
        }
        Ok(())
    }
}

/// Output length of the speech frontend for `frames` input frames.
pub fn downsampled_len(frames: usize) -> usize {
    frames.div_ceil(2).div_ceil(2)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LinearIx {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NormIx {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttnIx {
    pub q: LinearIx,
    pub k: LinearIx,
    pub v: LinearIx,
    pub o: LinearIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct FfnIx {
    pub up: LinearIx,
    pub down: LinearIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct EncLayerIx {
    pub ln1: NormIx,
    pub attn: AttnIx,
    pub ln2: NormIx,
    pub ffn: FfnIx,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DecLayerIx {
    pub ln1: NormIx,
    pub self_attn: AttnIx,
    pub ln2: NormIx,
    pub cross_attn: AttnIx,
    pub ln3: NormIx,
    pub ffn: FfnIx,
}

/// Parameter indices, fixed by the config.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub frame_proj: LinearIx,
    /// Strided windowed projections; weight is `(kernel·d) × d`.
    pub downsample: [LinearIx; 2],
    pub speech_layers: Vec<EncLayerIx>,
    pub speech_norm: NormIx,
    pub embed: usize,
    pub encoder_layers: Vec<EncLayerIx>,
    pub encoder_norm: NormIx,
    pub decoder_layers: Vec<DecLayerIx>,
    pub decoder_norm: NormIx,
}

enum Init {
    Xavier,
    Normal(f64),
    Zeros,
    Ones,
}

struct Builder<'a, T: Scalar> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Xavier | Init::Normal(_) => {
                let std = match init {
                    Init::Normal(s) => s,
                    _ => (2.0 / (shape[0] + shape[shape.len() - 1]) as f64).sqrt(),
                };
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n).map(|_| T::lit(dist.sample(self.rng))).collect()
            }
        };
        self.names.push(name);
        self.tensors.push(Tensor::new(shape.to_vec(), data).expect("shape matches data"));
        self.tensors.len() - 1
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIx {
        LinearIx {
            w: self.add(format!("{name}.w"), &[fan_in, fan_out], Init::Xavier),
            b: self.add(format!("{name}.b"), &[fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> NormIx {
        NormIx { g: self.add(format!("{name}.g"), &[d], Init::Ones), b: self.add(format!("{name}.b"), &[d], Init::Zeros) }
    }

    fn attn(&mut self, name: &str, d: usize) -> AttnIx {
        AttnIx {
            q: self.linear(&format!("{name}.q"), d, d),
            k: self.linear(&format!("{name}.k"), d, d),
            v: self.linear(&format!("{name}.v"), d, d),
            o: self.linear(&format!("{name}.o"), d, d),
        }
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> FfnIx {
        FfnIx { up: self.linear(&format!("{name}.up"), d, hidden), down: self.linear(&format!("{name}.down"), hidden, d) }
    }

    fn enc_layer(&mut self, name: &str, cfg: &ModelConfig) -> EncLayerIx {
        let d = cfg.d_model;
        EncLayerIx {
            ln1: self.norm(&format!("{name}.ln1"), d),
            attn: self.attn(&format!("{name}.attn"), d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            ffn: self.ffn(&format!("{name}.ffn"), d, cfg.ffn_dim),
        }
    }

    fn dec_layer(&mut self, name: &str, cfg: &ModelConfig) -> DecLayerIx {
        let d = cfg.d_model;
        DecLayerIx {
            ln1: self.norm(&format!("{name}.ln1"), d),
            self_attn: self.attn(&format!("{name}.self_attn"), d),
            ln2: self.norm(&format!("{name}.ln2"), d),
            cross_attn: self.attn(&format!("{name}.cross_attn"), d),
            ln3: self.norm(&format!("{name}.ln3"), d),
            ffn: self.ffn(&format!("{name}.ffn"), d, cfg.ffn_dim),
        }
    }
}

/// Prefix shared by every parameter of the speech frontend and speech encoder.
pub const SPEECH_PREFIX: &str = "speech.";

/// All model weights plus the index layout used by the forward passes.
#[derive(Debug, Clone)]
pub struct ModelParams<T: Scalar = f64> {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    frozen: Vec<bool>,
    pub(crate) layout: Layout,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Checkpoint)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder { names: Vec::new(), tensors: Vec::new(), rng: &mut rng };
        let d = config.d_model;
        let frame_proj = b.linear("speech.frame_proj", config.frame_dim, d);
        let downsample = [
            b.linear("speech.down0", CONV_KERNEL * d, d),
            b.linear("speech.down1", CONV_KERNEL * d, d),
        ];
        let speech_layers = (0..config.speech_layers).map(|i| b.enc_layer(&format!("speech.layer{i}"), &config)).collect();
        let speech_norm = b.norm("speech.norm", d);
        let embed = b.add("embed.table".into(), &[config.vocab_size, d], Init::Normal(1.0));
        let encoder_layers = (0..config.encoder_layers).map(|i| b.enc_layer(&format!("encoder.layer{i}"), &config)).collect();
        let encoder_norm = b.norm("encoder.norm", d);
        let decoder_layers = (0..config.decoder_layers).map(|i| b.dec_layer(&format!("decoder.layer{i}"), &config)).collect();
        let decoder_norm = b.norm("decoder.norm", d);
        let layout = Layout {
            frame_proj,
            downsample,
            speech_layers,
            speech_norm,
            embed,
            encoder_layers,
            encoder_norm,
            decoder_layers,
            decoder_norm,
        };
        let Builder { names, tensors, .. } = b;
        let frozen = vec![false; names.len()];
        Ok(Self { config, names, tensors, frozen, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_weights(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (f, n) in self.frozen.iter_mut().zip(&self.names) {
            if n.starts_with(prefix) {
                *f = true;
            }
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = false);
    }

    /// Replaces the weights with those of `other`, which must share the layout.
    pub fn load_from(&mut self, other: &Self) -> Result<(), ModelError> {
        if self.names != other.names || self.config != other.config {
            return Err(ModelError::Checkpoint("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            *dst = src.clone();
        }
        Ok(())
    }

    /// Inserts every parameter into `g` as a leaf. Frozen parameters (and all
    /// parameters when `trainable` is false) do not require gradients.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Result<Bound, ModelError> {
        let vars = self
            .tensors
            .iter()
            .zip(&self.frozen)
            .map(|(t, &frozen)| g.leaf(t.clone(), trainable && !frozen))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Bound { vars })
    }

    /// Gradients accumulated on the bound leaves; `None` for parameters the loss never reached.
    pub fn collect_grads(&self, g: &Graph<T>, bound: &Bound) -> Vec<Option<Vec<T>>> {
        bound.vars.iter().map(|&v| g.grad(v).map(<[T]>::to_vec)).collect()
    }

    pub(crate) fn t(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub(crate) fn from_parts(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self, ModelError> {
        let mut fresh = Self::init(config, 0)?;
        if fresh.names != names {
            return Err(ModelError::Checkpoint("parameter names do not match the config layout".into()));
        }
        for (i, (dst, src)) in fresh.tensors.iter_mut().zip(tensors).enumerate() {
            if dst.shape() != src.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "{}: shape {:?} expected {:?}",
                    names[i],
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src;
        }
        Ok(fresh)
    }
}

/// Graph handles for a bound parameter set.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    pub(crate) fn v(&self, i: usize) -> Var {
        self.vars[i]
    }
}

/// Sinusoidal positional signal, `rows × d`.
pub fn positional_table<T: Scalar>(rows: usize, d: usize) -> Tensor<T> {
    let data = (0..rows).flat_map(|pos| positional_row(pos, d)).collect();
    Tensor::new(vec![rows, d], data).expect("positional table shape")
}

/// One row of [`positional_table`].
pub fn positional_row<T: Scalar>(pos: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / d as f64);
            T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

/// Row indices feeding each window slot of a kernel-5, stride-2, padding-2 projection.
pub(crate) fn window_indices(input_len: usize) -> Vec<Vec<Option<usize>>> {
    let out_len = input_len.div_ceil(2);
    (0..CONV_KERNEL)
        .map(|k| {
            (0..out_len)
                .map(|t| {
                    let src = (2 * t + k) as isize - CONV_PAD as isize;
                    (src >= 0 && (src as usize) < input_len).then_some(src as usize)
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsampling_arithmetic() {
        assert_eq!(downsampled_len(16), 4);
        assert_eq!(downsampled_len(17), 5);
        assert_eq!(downsampled_len(4), 1);
        for t in 4..200 {
            assert_eq!(downsampled_len(t), window_indices(window_indices(t)[0].len())[0].len());
        }
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        let a = ModelParams::<f64>::init(ModelConfig::default(), 5).unwrap();
        let b = ModelParams::<f64>::init(ModelConfig::default(), 5).unwrap();
        assert_eq!(a.tensors(), b.tensors());
        assert!(a.tensors().iter().all(Tensor::is_finite));
        assert!(a.names().iter().any(|n| n.starts_with(SPEECH_PREFIX)));
    }

    #[test]
    fn freeze_marks_only_speech_parameters() {
        let mut p = ModelParams::<f64>::init(ModelConfig::default(), 1).unwrap();
        p.freeze_prefix(SPEECH_PREFIX);
        for (i, n) in p.names().iter().enumerate() {
            assert_eq!(p.is_frozen(i), n.starts_with(SPEECH_PREFIX), "{n}");
        }
    }
}
