use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{SynthSpec, MIN_CORPUS};
use crate::model::ModelConfig;
use crate::objectives::TrainConfig;
use crate::optim::AdamConfig;
use crate::pipeline::PipelineError;

/// Arithmetic the pipeline trains and evaluates in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Alignment-training variants; `base` trains speech and text translation only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    MixupOnly,
    WacoOnly,
    Base,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::MixupOnly, Variant::WacoOnly, Variant::Base];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::MixupOnly => "mixup-only",
            Variant::WacoOnly => "waco-only",
            Variant::Base => "base",
        }
    }

    pub fn terms(self) -> crate::objectives::Terms {
        use crate::objectives::Terms;
        match self {
            Variant::Full => Terms::ALL,
            Variant::MixupOnly => Terms { contrastive: false, mixup: true },
            Variant::WacoOnly => Terms { contrastive: true, mixup: false },
            Variant::Base => Terms { contrastive: false, mixup: false },
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

/// Transformer sizes; vocabulary and frame width come from the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub speech_layers: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_frames: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { d_model: 32, heads: 4, ffn_dim: 64, speech_layers: 1, encoder_layers: 2, decoder_layers: 2, max_frames: 1024 }
    }
}

impl ModelDims {
    pub fn model_config(&self, vocab_size: usize, frame_dim: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            frame_dim,
            d_model: self.d_model,
            heads: self.heads,
            ffn_dim: self.ffn_dim,
            speech_layers: self.speech_layers,
            encoder_layers: self.encoder_layers,
            decoder_layers: self.decoder_layers,
            max_frames: self.max_frames,
        }
    }
}

/// Step budgets for every training stage. Pretraining uses the optimizer's
/// learning rate; the other stages use their own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Upper bound on text-only pretraining steps.
    pub pretrain_steps: usize,
    pub pretrain_batch: usize,
    /// Steps between dev evaluations during pretraining.
    pub eval_every: usize,
    /// Evaluations without dev improvement before pretraining stops.
    pub patience: usize,
    pub tr_steps: usize,
    /// Steps per saved snapshot during alignment training.
    pub snapshot_every: usize,
    /// Snapshots averaged into the final alignment-training checkpoint;
    /// `None` averages up to ten.
    pub average_last: Option<usize>,
    /// Fine-tuning steps; `None` uses an eighth of `tr_steps`.
    pub fn_steps: Option<usize>,
    /// Adversarial-speech baseline steps; `None` uses an eighth of `tr_steps`.
    pub baseline_steps: Option<usize>,
    pub baseline_lr: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            pretrain_steps: 1000,
            pretrain_batch: 32,
            eval_every: 200,
            patience: 3,
            tr_steps: 2000,
            snapshot_every: 100,
            average_last: None,
            fn_steps: None,
            baseline_steps: None,
            baseline_lr: 1e-3,
        }
    }
}

impl Schedule {
    pub fn fn_steps(&self) -> usize {
        self.fn_steps.unwrap_or((self.tr_steps / 8).max(1))
    }

    pub fn baseline_steps(&self) -> usize {
        self.baseline_steps.unwrap_or((self.tr_steps / 8).max(1))
    }

    /// Number of snapshots averaged into the final alignment checkpoint.
    pub fn average_last(&self) -> usize {
        let snapshots = (self.tr_steps / self.snapshot_every).max(1);
        self.average_last.unwrap_or(10).min(snapshots).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Beam of the victim's decoder; `1` decodes greedily.
    pub victim_beam: usize,
    pub max_len: usize,
    /// Attack at most this many training sentences (all when unset).
    pub train_limit: Option<usize>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { victim_beam: 1, max_len: 32, train_limit: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub beam: usize,
    pub max_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { beam: 5, max_len: 32 }
    }
}

/// Everything one experiment run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub precision: Precision,
    pub corpus_size: usize,
    pub synth: SynthSpec,
    pub model: ModelDims,
    pub adam: AdamConfig,
    pub schedule: Schedule,
    /// Alignment-training loss settings.
    pub tr: TrainConfig,
    /// Robustness fine-tuning loss settings.
    #[serde(rename = "fn")]
    pub finetune: TrainConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub variants: Vec<Variant>,
    pub sweep_lambdas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            precision: Precision::default(),
            corpus_size: 2000,
            synth: SynthSpec::default(),
            model: ModelDims::default(),
            adam: AdamConfig::default(),
            schedule: Schedule::default(),
            tr: TrainConfig::default(),
            finetune: TrainConfig::finetune(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            variants: Variant::ALL.to_vec(),
            sweep_lambdas: vec![1.0, 2.0, 5.0, 8.0, 10.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus_size < MIN_CORPUS {
            return bad(format!("corpus_size {} is below the minimum of {MIN_CORPUS}", self.corpus_size));
        }
        self.synth.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.model.model_config(64, self.synth.frame_dim).validate().map_err(PipelineError::Config)?;
        self.tr.validate().map_err(|e| PipelineError::Config(format!("tr: {e}")))?;
        self.finetune.validate().map_err(|e| PipelineError::Config(format!("fn: {e}")))?;
        let s = &self.schedule;
        if s.pretrain_batch == 0 || s.eval_every == 0 || s.snapshot_every == 0 || s.tr_steps == 0 {
            return bad("batch sizes, step budgets and intervals must be positive".into());
        }
        if !(s.baseline_lr > 0.0 && self.adam.lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.attack.victim_beam == 0 || self.eval.beam == 0 || self.attack.max_len == 0 || self.eval.max_len == 0 {
            return bad("beams and decode lengths must be positive".into());
        }
        if self.sweep_lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("sweep_lambdas must be finite and non-negative".into());
        }
        Ok(())
    }
}
