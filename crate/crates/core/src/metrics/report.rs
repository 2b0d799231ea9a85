//! Batch scoring over `(prediction, references)` items.
//!
//! With several references, per-sample metrics take the best reference
//! (ss, s_iou, rouge) or accept any match (accuracy). BLEU and CIDEr use all
//! references natively.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::metrics::captioning::{bleu_n, cider, rouge_1, rouge_l};
use crate::metrics::embedding::EmbeddingTable;
use crate::metrics::semantic::{s_iou, ss, Matcher};
use crate::metrics::MetricConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Ss,
    SIou,
    Bleu(usize),
    RougeL,
    Rouge1,
    Cider,
    Accuracy,
    AccuracySemantic,
}

impl MetricKind {
    pub const ALL: [MetricKind; 11] = [
        MetricKind::Ss,
        MetricKind::SIou,
        MetricKind::Bleu(1),
        MetricKind::Bleu(2),
        MetricKind::Bleu(3),
        MetricKind::Bleu(4),
        MetricKind::RougeL,
        MetricKind::Rouge1,
        MetricKind::Cider,
        MetricKind::Accuracy,
        MetricKind::AccuracySemantic,
    ];

    pub fn name(self) -> String {
        match self {
            MetricKind::Ss => "ss".into(),
            MetricKind::SIou => "s_iou".into(),
            MetricKind::Bleu(n) => format!("bleu{n}"),
            MetricKind::RougeL => "rouge_l".into(),
            MetricKind::Rouge1 => "rouge_1".into(),
            MetricKind::Cider => "cider".into(),
            MetricKind::Accuracy => "accuracy".into(),
            MetricKind::AccuracySemantic => "accuracy_semantic".into(),
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, MetricKind::Ss | MetricKind::SIou | MetricKind::AccuracySemantic)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<String> = MetricKind::ALL.iter().map(|m| m.name()).collect();
                Error::invalid(format!("unknown metric `{s}` (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub pred: String,
    pub refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metric: String,
    pub n: usize,
    /// Arithmetic mean of `per_sample`.
    pub mean: f64,
    pub per_sample: Vec<SampleScore>,
}

fn best<F: Fn(&str) -> f64>(refs: &[String], f: F) -> f64 {
    refs.iter().map(|r| f(r)).fold(f64::NEG_INFINITY, f64::max)
}

pub fn evaluate(
    items: &[EvalItem],
    metric: MetricKind,
    table: Option<&EmbeddingTable>,
    cfg: &MetricConfig,
    exec: Execution,
) -> Result<ScoreReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::invalid("nothing to evaluate"));
    }
    if let Some(item) = items.iter().find(|i| i.refs.is_empty()) {
        return Err(Error::invalid(format!("item `{}` has no references", item.id)));
    }
    let table = match (metric.needs_embeddings(), table) {
        (true, None) => {
            return Err(Error::invalid(format!("metric `{metric}` needs an embedding table")))
        }
        (_, t) => t,
    };

    let scores: Vec<f64> = match metric {
        MetricKind::Cider => {
            let cands: Vec<&str> = items.iter().map(|i| i.pred.as_str()).collect();
            let refs: Vec<&[String]> = items.iter().map(|i| i.refs.as_slice()).collect();
            cider(&cands, &refs)?.per_item
        }
        MetricKind::Bleu(n) => exec
            .map(items, |i| bleu_n(&i.pred, &i.refs, n))
            .into_iter()
            .collect::<Result<_>>()?,
        _ => exec.map(items, |i| {
            let p = i.pred.as_str();
            match metric {
                MetricKind::Ss => best(&i.refs, |r| ss(p, r, table.unwrap(), cfg)),
                MetricKind::SIou => best(&i.refs, |r| s_iou(p, r, table.unwrap(), cfg)),
                MetricKind::RougeL => best(&i.refs, |r| rouge_l(p, r)),
                MetricKind::Rouge1 => best(&i.refs, |r| rouge_1(p, r)),
                MetricKind::Accuracy | MetricKind::AccuracySemantic => {
                    let m = if metric == MetricKind::Accuracy {
                        Matcher::Exact
                    } else {
                        Matcher::Semantic {
                            table: table.unwrap(),
                            tau: cfg.tau,
                        }
                    };
                    f64::from(u8::from(i.refs.iter().any(|r| m.matches(p, r))))
                }
                MetricKind::Cider | MetricKind::Bleu(_) => unreachable!(),
            }
        }),
    };

    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    Ok(ScoreReport {
        metric: metric.name(),
        n,
        mean,
        per_sample: items
            .iter()
            .zip(scores)
            .map(|(i, score)| SampleScore {
                id: i.id.clone(),
                score,
            })
            .collect(),
    })
}

/// Aligned plain-text summary, one row per report.
pub fn format_table(reports: &[ScoreReport]) -> String {
    let w = reports
        .iter()
        .map(|r| r.metric.len())
        .chain(std::iter::once("metric".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!("{:<w$}  {:>6}  {:>10}\n", "metric", "n", "mean");
    for r in reports {
        out.push_str(&format!("{:<w$}  {:>6}  {:>10.6}\n", r.metric, r.n, r.mean));
    }
    out
}
