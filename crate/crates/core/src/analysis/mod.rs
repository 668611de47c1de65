//! Evaluation: BLEU, linear CKA, speech–text alignment, CSV reports.

mod bleu;
mod cka;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, corpus_bleu, sentence_bleu, BleuLevel, BleuStats, FLOOR_SMOOTHING, MAX_ORDER};
pub use cka::linear_cka;

use crate::diffcore::kernels::dot;
use crate::model::{ModelError, ModelParams};
use crate::objectives::{pool_word_reps, LossInput, ObjectiveError};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{hyps} hypotheses for {refs} references")]
    CountMismatch { hyps: usize, refs: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("cannot write {path}: {msg}")]
    Write { path: String, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Mean cosine between pooled speech and text representations over every
/// aligned word of `items`. Speech spans must index speech-encoder rows.
pub fn alignment_cosine<T: Scalar>(model: &ModelParams<T>, items: &[LossInput<'_, T>]) -> Result<f64, AnalysisError> {
    let (mut total, mut count) = (0.0, 0usize);
    for item in items.iter().filter(|i| !i.alignments.is_empty()) {
        let a = model.encode_speech(item.speech)?.frames.cast::<f64>();
        let e = model.embed_text(item.source)?.frames.cast::<f64>();
        for p in pool_word_reps(&a, &e, item.alignments)? {
            total += cosine(&p.f_s, &p.f_t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(AnalysisError::Degenerate("no aligned words".into()));
    }
    Ok(total / count as f64)
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub model: String,
    pub dataset: String,
    pub bleu: f64,
    pub mean_cosine: Option<f64>,
    pub cka_vs_ref: Option<f64>,
    pub lambda_kl: Option<f64>,
    pub seed: u64,
}

pub const REPORT_COLUMNS: [&str; 7] = ["model", "dataset", "bleu", "mean_cosine", "cka_vs_ref", "lambda_kl", "seed"];

/// Writes `reports` as CSV in a fixed column order, rows sorted by
/// model, dataset, λ_kl and seed.
pub fn emit_report(reports: &[SimilarityReport], path: &Path) -> Result<(), AnalysisError> {
    let err = |e: &dyn std::fmt::Display| AnalysisError::Write { path: path.display().to_string(), msg: e.to_string() };
    let mut rows = reports.to_vec();
    rows.sort_by(|a, b| {
        (&a.model, &a.dataset, a.seed)
            .cmp(&(&b.model, &b.dataset, b.seed))
            .then(a.lambda_kl.partial_cmp(&b.lambda_kl).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    w.write_record(REPORT_COLUMNS).map_err(|e| err(&e))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    for r in &rows {
        w.write_record([
            r.model.clone(),
            r.dataset.clone(),
            format!("{:.4}", r.bleu),
            opt(r.mean_cosine),
            opt(r.cka_vs_ref),
            r.lambda_kl.map_or(String::new(), |v| format!("{v}")),
            r.seed.to_string(),
        ])
        .map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))?;
    Ok(())
}
