//! Embedding-based label similarity.
//!
//! SS is the cosine between mean-pooled, L2-normalized sentence embeddings.
//! S-IoU matches tokens in both directions: a token of one side counts when
//! some token on the other side is the same string or has cosine above `tau`,
//! and the score is `(|M_AB| + |M_BA|) / (|A| + |B|)` over deduplicated sets.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::metrics::embedding::{EmbeddingTable, OovPolicy};
use crate::metrics::{checked, MetricConfig};
use crate::text::normalize_tokens;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine of two raw vectors; 0 when either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Tokens that take part in scoring under the table's OOV policy.
fn scoring_tokens(text: &str, table: &EmbeddingTable, cfg: &MetricConfig) -> Vec<String> {
    let toks = cfg.tokenize(text);
    match table.oov_policy {
        OovPolicy::ZeroVector => toks,
        OovPolicy::SkipToken => toks.into_iter().filter(|t| table.contains(t)).collect(),
    }
}

/// Mean of the in-vocabulary token vectors, L2-normalized. Zero vector when
/// nothing embeds.
pub fn sentence_embedding(text: &str, table: &EmbeddingTable, cfg: &MetricConfig) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    for tok in cfg.tokenize(text) {
        if let Some(v) = table.get(&tok) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return sum;
    }
    for s in sum.iter_mut() {
        *s /= count as f64;
    }
    let n = norm(&sum);
    if n == 0.0 {
        return sum;
    }
    sum.iter().map(|s| s / n).collect()
}

pub fn ss(pred: &str, gt: &str, table: &EmbeddingTable, cfg: &MetricConfig) -> f64 {
    let a = sentence_embedding(pred, table, cfg);
    let b = sentence_embedding(gt, table, cfg);
    let v = if norm(&a) == 0.0 || norm(&b) == 0.0 {
        0.0
    } else if a == b {
        // Avoid 0.9999999999999998 from summing squares of a unit vector.
        1.0
    } else {
        dot(&a, &b).clamp(-1.0, 1.0)
    };
    checked("ss", v, -1.0, 1.0)
}

fn token_match(a: &str, b: &str, table: &EmbeddingTable, tau: f64) -> bool {
    if a == b {
        return true;
    }
    match (table.get(a), table.get(b)) {
        (Some(u), Some(v)) => cosine(u, v) > tau,
        _ => false,
    }
}

/// Uses `cfg.tau` as the threshold.
pub fn s_iou(pred: &str, gt: &str, table: &EmbeddingTable, cfg: &MetricConfig) -> f64 {
    let a: BTreeSet<String> = scoring_tokens(pred, table, cfg).into_iter().collect();
    let b: BTreeSet<String> = scoring_tokens(gt, table, cfg).into_iter().collect();
    let v = match (a.is_empty(), b.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let m_ab = a
                .iter()
                .filter(|x| b.iter().any(|y| token_match(x, y, table, cfg.tau)))
                .count();
            let m_ba = b
                .iter()
                .filter(|y| a.iter().any(|x| token_match(y, x, table, cfg.tau)))
                .count();
            (m_ab + m_ba) as f64 / (a.len() + b.len()) as f64
        }
    };
    checked("s_iou", v, 0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub enum Matcher<'a> {
    /// Normalized token sequences must be equal.
    Exact,
    /// `ss(pred, gt) > tau`.
    Semantic { table: &'a EmbeddingTable, tau: f64 },
}

impl Matcher<'_> {
    pub fn matches(&self, pred: &str, gt: &str) -> bool {
        match *self {
            Matcher::Exact => normalize_tokens(pred) == normalize_tokens(gt),
            Matcher::Semantic { table, tau } => ss(pred, gt, table, &MetricConfig::default()) > tau,
        }
    }
}

pub fn accuracy<P: AsRef<str>, G: AsRef<str>>(preds: &[P], gts: &[G], matcher: Matcher) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!(
            "accuracy needs equal lengths, got {} predictions and {} labels",
            preds.len(),
            gts.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::invalid("accuracy needs at least one item"));
    }
    let hits = preds
        .iter()
        .zip(gts)
        .filter(|(p, g)| matcher.matches(p.as_ref(), g.as_ref()))
        .count();
    Ok(checked("accuracy", hits as f64 / preds.len() as f64, 0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// cos(airplane, aircraft) = 0.82; every other cross pair is 0.
    pub(crate) fn fixture() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(4);
        t.insert("airplane", vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        t.insert("aircraft", vec![0.82, (1.0f64 - 0.82 * 0.82).sqrt(), 0.0, 0.0]).unwrap();
        t.insert("vehicle", vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        t.insert("building", vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        t
    }

    fn cfg() -> MetricConfig {
        MetricConfig::default()
    }

    #[test]
    fn sentence_embedding_cases() {
        let t = fixture();
        assert_eq!(sentence_embedding("vehicle", &t, &cfg()), vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            sentence_embedding("vehicle vehicle", &t, &cfg()),
            sentence_embedding("vehicle", &t, &cfg())
        );
        // mean of e3 and e4 is (0,0,.5,.5); normalized each component is 1/sqrt(2)
        let e = sentence_embedding("vehicle building", &t, &cfg());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in e.iter().zip([0.0, 0.0, h, h]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(sentence_embedding("zebra", &t, &cfg()), vec![0.0; 4]);
    }

    #[test]
    fn ss_cases() {
        let t = fixture();
        assert_eq!(ss("airplane", "airplane", &t, &cfg()), 1.0);
        assert_eq!(ss("vehicle", "building", &t, &cfg()), 0.0);
        assert!((ss("airplane", "aircraft", &t, &cfg()) - 0.82).abs() < 1e-12);
        assert_eq!(ss("zebra", "airplane", &t, &cfg()), 0.0);
    }

    #[test]
    fn s_iou_cases() {
        let t = fixture();
        assert_eq!(s_iou("airplane", "airplane", &t, &cfg()), 1.0);
        assert_eq!(s_iou("airplane vehicle", "aircraft building", &t, &cfg()), 0.5);
        assert_eq!(s_iou("vehicle", "building", &t, &cfg()), 0.0);
        assert_eq!(s_iou("", "", &t, &cfg()), 1.0);
        assert_eq!(s_iou("", "vehicle", &t, &cfg()), 0.0);
        // airplane~aircraft match both ways; vehicle has no partner
        assert_eq!(s_iou("airplane vehicle", "aircraft", &t, &cfg()), 2.0 / 3.0);
    }

    #[test]
    fn s_iou_brute_force_oracle() {
        // Every pair checked independently against the definition.
        let t = fixture();
        let vocab = ["airplane", "aircraft", "vehicle", "building", "zebra"];
        for ma in 1u32..32 {
            for mb in 1u32..32 {
                let a: Vec<&str> = (0..5).filter(|i| ma >> i & 1 == 1).map(|i| vocab[i]).collect();
                let b: Vec<&str> = (0..5).filter(|i| mb >> i & 1 == 1).map(|i| vocab[i]).collect();
                let close = |x: &str, y: &str| {
                    x == y || matches!((x, y), ("airplane", "aircraft") | ("aircraft", "airplane"))
                };
                let m_ab = a.iter().filter(|x| b.iter().any(|y| close(x, y))).count();
                let m_ba = b.iter().filter(|y| a.iter().any(|x| close(x, y))).count();
                let want = (m_ab + m_ba) as f64 / (a.len() + b.len()) as f64;
                assert_eq!(s_iou(&a.join(" "), &b.join(" "), &t, &cfg()), want);
            }
        }
    }

    #[test]
    fn skip_token_policy_drops_oov() {
        let mut t = fixture();
        assert_eq!(s_iou("airplane zebra", "airplane", &t, &cfg()), 2.0 / 3.0);
        t.oov_policy = OovPolicy::SkipToken;
        assert_eq!(s_iou("airplane zebra", "airplane", &t, &cfg()), 1.0);
    }

    #[test]
    fn accuracy_cases() {
        let t = fixture();
        assert_eq!(accuracy(&["a", "b"], &["a", "b"], Matcher::Exact).unwrap(), 1.0);
        assert_eq!(accuracy(&["a", "x", "y", "z"], &["a", "b", "c", "d"], Matcher::Exact).unwrap(), 0.25);
        let sem = Matcher::Semantic { table: &t, tau: 0.5 };
        assert_eq!(accuracy(&["aircraft"], &["airplane"], sem).unwrap(), 1.0);
        assert_eq!(accuracy(&["aircraft"], &["airplane"], Matcher::Exact).unwrap(), 0.0);
        assert!(matches!(accuracy(&["a"], &["a", "b"], Matcher::Exact), Err(Error::InvalidArgument(_))));
    }

    proptest! {
        #[test]
        fn s_iou_symmetric_and_monotone(
            a in proptest::collection::vec(0usize..5, 0..6),
            b in proptest::collection::vec(0usize..5, 0..6),
        ) {
            let t = fixture();
            let vocab = ["airplane", "aircraft", "vehicle", "building", "zebra"];
            let sa: Vec<&str> = a.iter().map(|&i| vocab[i]).collect();
            let sb: Vec<&str> = b.iter().map(|&i| vocab[i]).collect();
            let (pa, pb) = (sa.join(" "), sb.join(" "));
            let mut last = f64::INFINITY;
            for tau in [0.3, 0.5, 0.7, 0.9] {
                let c = MetricConfig::with_tau(tau).unwrap();
                let ab = s_iou(&pa, &pb, &t, &c);
                prop_assert_eq!(ab, s_iou(&pb, &pa, &t, &c));
                prop_assert!(ab <= last);
                last = ab;
            }
            prop_assert_eq!(ss(&pa, &pb, &t, &cfg()), ss(&pb, &pa, &t, &cfg()));
        }
    }
}
