//! Evaluation metrics: embedding-based SS and S-IoU, BLEU-n, ROUGE-L /
//! ROUGE-1, CIDEr and classification accuracy, plus batch scoring.

pub mod captioning;
pub mod embedding;
pub mod report;
pub mod semantic;

use std::collections::BTreeSet;

pub use captioning::{bleu_n, cider, rouge_1, rouge_l, CiderScores};
pub use embedding::{load_embeddings, EmbeddingTable, OovPolicy};
pub use report::{evaluate, EvalItem, MetricKind, SampleScore, ScoreReport};
pub use semantic::{accuracy, s_iou, sentence_embedding, ss, Matcher};

use crate::error::{Error, Result};
use crate::text::normalize_tokens;

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Cosine threshold for a semantic token match, in (0, 1).
    pub tau: f64,
    pub stopwords: BTreeSet<String>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            stopwords: BTreeSet::new(),
        }
    }
}

impl MetricConfig {
    pub fn with_tau(tau: f64) -> Result<Self> {
        let cfg = Self {
            tau,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }

    /// Normalized tokens with stopwords removed.
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        normalize_tokens(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

/// Panics if a metric escapes its documented range; these are internal
/// invariants, not input errors.
pub(crate) fn checked(name: &str, v: f64, lo: f64, hi: f64) -> f64 {
    assert!(
        v.is_finite() && v >= lo && v <= hi,
        "{name} produced {v}, outside [{lo}, {hi}]"
    );
    v
}
