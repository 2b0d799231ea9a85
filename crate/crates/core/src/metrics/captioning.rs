//! Reference-based captioning metrics: sentence BLEU, ROUGE-L, ROUGE-1 and
//! corpus CIDEr. All of them tokenize with [`normalize_tokens`].

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::metrics::checked;
use crate::text::normalize_tokens;

pub type NgramCounts = HashMap<Vec<String>, usize>;

pub fn ngram_counts(tokens: &[String], n: usize) -> NgramCounts {
    let mut out = NgramCounts::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.to_vec()).or_insert(0) += 1;
    }
    out
}

/// Sentence BLEU with uniform weights over orders `1..=n_max` and the usual
/// brevity penalty against the closest reference length (shorter wins ties).
///
/// Orders longer than the candidate are left out of the geometric mean so
/// that a short sentence scored against itself still gets 1. Any included
/// order with zero clipped matches makes the score 0.
pub fn bleu_n<S: AsRef<str>>(candidate: &str, references: &[S], n_max: usize) -> Result<f64> {
    if !(1..=4).contains(&n_max) {
        return Err(Error::invalid(format!("n_max must be in 1..=4, got {n_max}")));
    }
    if references.is_empty() {
        return Err(Error::invalid("BLEU needs at least one reference"));
    }
    let cand = normalize_tokens(candidate);
    if cand.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| normalize_tokens(r.as_ref())).collect();

    let orders = n_max.min(cand.len());
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let c = ngram_counts(&cand, n);
        let mut max_ref: NgramCounts = HashMap::new();
        for r in &refs {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let total: usize = c.values().sum();
        let clipped: usize = c
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        if clipped == 0 {
            return Ok(checked("bleu", 0.0, 0.0, 1.0));
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let precision = (log_sum / orders as f64).exp();

    let c_len = cand.len();
    let r_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c_len), l))
        .unwrap_or(0);
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(checked("bleu", (precision * bp).min(1.0), 0.0, 1.0))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f1(hits: usize, cand_len: usize, ref_len: usize) -> f64 {
    match (cand_len, ref_len) {
        (0, 0) => 1.0,
        (0, _) | (_, 0) => 0.0,
        _ if hits == 0 => 0.0,
        _ => {
            let p = hits as f64 / cand_len as f64;
            let r = hits as f64 / ref_len as f64;
            2.0 * p * r / (p + r)
        }
    }
}

/// LCS-based F1 with beta = 1.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = normalize_tokens(candidate);
    let r = normalize_tokens(reference);
    checked("rouge_l", f1(lcs_len(&c, &r), c.len(), r.len()), 0.0, 1.0)
}

/// Clipped unigram-overlap F1.
pub fn rouge_1(candidate: &str, reference: &str) -> f64 {
    let c = normalize_tokens(candidate);
    let r = normalize_tokens(reference);
    let rc = ngram_counts(&r, 1);
    let hits: usize = ngram_counts(&c, 1)
        .iter()
        .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
        .sum();
    checked("rouge_1", f1(hits, c.len(), r.len()), 0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub per_item: Vec<f64>,
    pub mean: f64,
}

const CIDER_MAX_N: usize = 4;

fn tfidf_weights<'a>(counts: &'a NgramCounts, df: &NgramCounts, n_docs: usize) -> HashMap<&'a Vec<String>, f64> {
    let total: usize = counts.values().sum();
    counts
        .iter()
        .map(|(g, &k)| {
            let d = df.get(g).copied().unwrap_or(0).max(1);
            (g, k as f64 / total as f64 * (n_docs as f64 / d as f64).ln())
        })
        .collect()
}

/// Cosine between the TF-IDF vectors of two n-gram count maps. TF is the
/// count divided by the sentence's n-gram total; IDF is
/// `ln(n_docs / max(1, df))`. A zero vector gives 0.
pub fn tfidf_cosine(a: &NgramCounts, b: &NgramCounts, df: &NgramCounts, n_docs: usize) -> f64 {
    let (wa, wb) = (tfidf_weights(a, df, n_docs), tfidf_weights(b, df, n_docs));
    let na: f64 = wa.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb: f64 = wb.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let d: f64 = wa.iter().map(|(g, v)| v * wb.get(g).copied().unwrap_or(0.0)).sum();
    (d / (na * nb)).clamp(0.0, 1.0)
}

/// Corpus CIDEr: for each item, `10 * mean_n mean_refs cos_n`, with document
/// frequencies counted over each item's reference set.
pub fn cider<C: AsRef<str>, S: AsRef<str>, R: AsRef<[S]>>(
    candidates: &[C],
    references: &[R],
) -> Result<CiderScores> {
    if candidates.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    let n_docs = candidates.len();
    if n_docs < 2 {
        return Err(Error::DegenerateCorpus(n_docs));
    }
    let cands: Vec<Vec<String>> = candidates.iter().map(|c| normalize_tokens(c.as_ref())).collect();
    let mut refs: Vec<Vec<Vec<String>>> = Vec::with_capacity(n_docs);
    for (i, r) in references.iter().enumerate() {
        let r = r.as_ref();
        if r.is_empty() {
            return Err(Error::invalid(format!("item {i} has no references")));
        }
        refs.push(r.iter().map(|s| normalize_tokens(s.as_ref())).collect());
    }

    let mut per_item = vec![0.0; n_docs];
    for n in 1..=CIDER_MAX_N {
        let mut df = NgramCounts::new();
        let ref_counts: Vec<Vec<NgramCounts>> = refs
            .iter()
            .map(|rs| rs.iter().map(|r| ngram_counts(r, n)).collect())
            .collect();
        for item in &ref_counts {
            let mut seen: Vec<&Vec<String>> = item.iter().flat_map(|c| c.keys()).collect();
            seen.sort_unstable();
            seen.dedup();
            for g in seen {
                *df.entry(g.clone()).or_insert(0) += 1;
            }
        }
        for (i, cand) in cands.iter().enumerate() {
            let c = ngram_counts(cand, n);
            let avg: f64 = ref_counts[i]
                .iter()
                .map(|r| tfidf_cosine(&c, r, &df, n_docs))
                .sum::<f64>()
                / ref_counts[i].len() as f64;
            per_item[i] += avg;
        }
    }
    for s in per_item.iter_mut() {
        *s = checked("cider", 10.0 * *s / CIDER_MAX_N as f64, 0.0, 10.0);
    }
    let mean = per_item.iter().sum::<f64>() / n_docs as f64;
    Ok(CiderScores { per_item, mean })
}
