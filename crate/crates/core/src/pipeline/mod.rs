//! End-to-end experiment: corpus generation, pretraining, alignment
//! training, attack, robustness fine-tuning, baselines and analysis. Stages
//! communicate only through files under one output directory.

mod config;
mod data;
mod stages;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{AttackConfig, EvalConfig, ExperimentConfig, ModelDims, Precision, Schedule, Variant};
pub use data::{AttackRecord, CorpusMeta, Manifest};
pub use stages::{
    analyze, attack, baseline_advspeech_fn, finetune_fn, gen_data, pretrain_mt, run_all, sweep_kl, train_tr, AttackSummary,
    PretrainSummary, SplitAttackSummary,
};
pub use train::average_params;

use crate::analysis::AnalysisError;
use crate::corpus::CorpusError;
use crate::diffcore::TensorError;
use crate::model::ModelError;
use crate::morpheus::{LexiconError, MorpheusError};
use crate::objectives::ObjectiveError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing {what} {path}")]
    Missing { what: &'static str, path: String },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error("{stage}: loss is not finite at step {step}")]
    Diverged { stage: String, step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Attack(#[from] MorpheusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

/// File locations of every stage under the output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn mt(&self) -> PathBuf {
        self.root.join("mt")
    }

    pub fn tr(&self, variant: Variant) -> PathBuf {
        self.root.join("tr").join(variant.name())
    }

    pub fn attack(&self) -> PathBuf {
        self.root.join("attack")
    }

    pub fn finetune(&self) -> PathBuf {
        self.root.join("fn")
    }

    pub fn baseline(&self) -> PathBuf {
        self.root.join("baseline")
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep")
    }

    pub fn sweep_run(&self, lambda: f64) -> PathBuf {
        self.sweep().join(format!("lambda-{lambda}"))
    }

    pub fn analysis(&self) -> PathBuf {
        self.root.join("analysis")
    }

    pub fn checkpoint(dir: &Path) -> PathBuf {
        dir.join("model.ckpt")
    }

    /// `path` relative to the root, for manifests that must not depend on where the run lives.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}
