//! Corpus BLEU, perplexity and gold n-gram overlap analyses.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParameterStore};
use crate::error::{Error, Result};
use crate::mtl::SentencePair;
use crate::seq2seq::Seq2SeqModel;

pub const BLEU_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// In `[0, 100]`.
    pub bleu: f64,
    /// Modified precisions `p_1 .. p_4`.
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Candidate n-grams of order `n` also found in `gold`, each clipped by its
/// gold count.
fn clipped_matches<T: Eq + Hash>(candidate: &[T], gold: &[T], n: usize, keep: impl Fn(&[T]) -> bool) -> usize {
    let gold_counts = ngram_counts(gold, n);
    ngram_counts(candidate, n)
        .into_iter()
        .filter(|(g, _)| keep(g))
        .map(|(g, c)| c.min(gold_counts.get(g).copied().unwrap_or(0)))
        .sum()
}

/// Corpus-level BLEU with one reference per sentence: clipped n-gram counts
/// summed over the corpus, uniform weights up to 4-grams, and brevity
/// penalty `exp(1 - r/c)` when the candidate corpus is not longer than the
/// reference corpus.
pub fn corpus_bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::data(format!(
            "{} candidate sentences but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; BLEU_ORDER];
    let mut total = [0usize; BLEU_ORDER];
    let (mut c_len, mut r_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=BLEU_ORDER {
            matched[n - 1] += clipped_matches(c, r, n, |_| true);
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    let mut precisions = [0.0; BLEU_ORDER];
    for n in 0..BLEU_ORDER {
        if total[n] > 0 {
            precisions[n] = matched[n] as f64 / total[n] as f64;
        }
    }
    let brevity_penalty = if c_len == 0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / BLEU_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        candidate_length: c_len,
        reference_length: r_len,
    })
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        write!(
            f,
            "BLEU = {:.2}, {} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            p.join("/"),
            self.brevity_penalty,
            if self.reference_length == 0 {
                0.0
            } else {
                self.candidate_length as f64 / self.reference_length as f64
            },
            self.candidate_length,
            self.reference_length
        )
    }
}

impl BleuReport {
    /// `key=value` lines for scripts.
    pub fn key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bleu={:.4}", self.bleu);
        for (n, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(s, "p{}={:.6}", n + 1, p);
        }
        let _ = writeln!(s, "brevity_penalty={:.6}", self.brevity_penalty);
        let _ = writeln!(s, "hyp_len={}", self.candidate_length);
        let _ = writeln!(s, "ref_len={}", self.reference_length);
        s
    }
}

/// `exp(-Σ LL / N)` where `N` counts every target token including `</s>`.
pub fn perplexity_from(total_log_likelihood: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return 1.0;
    }
    (-total_log_likelihood / tokens as f64).exp()
}

/// Sum of sentence log-likelihoods and the number of target tokens.
pub fn corpus_log_likelihood(model: &Seq2SeqModel, store: &ParameterStore, corpus: &[SentencePair]) -> Result<(f64, usize)> {
    let mut ll = 0.0;
    let mut tokens = 0;
    for pair in corpus {
        let mut g = Graph::new(store);
        let node = model.sentence_log_likelihood(&mut g, &pair.source, &pair.target)?;
        ll += g.value(node).item();
        tokens += pair.target.len();
    }
    Ok((ll, tokens))
}

pub fn corpus_perplexity(model: &Seq2SeqModel, store: &ParameterStore, corpus: &[SentencePair]) -> Result<f64> {
    let (ll, n) = corpus_log_likelihood(model, store, corpus)?;
    Ok(perplexity_from(ll, n))
}

/// Fraction of target positions where greedy prediction under teacher
/// forcing equals the gold token (`</s>` included).
pub fn token_accuracy(model: &Seq2SeqModel, store: &ParameterStore, corpus: &[SentencePair]) -> Result<f64> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for pair in corpus {
        let dists = model.teacher_forced_distributions(store, &pair.source, &pair.target)?;
        for (p, &y) in dists.iter().zip(&pair.target) {
            hit += (p.argmax() == y) as usize;
            total += 1;
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Gold n-gram matches per order, optionally restricted to gold n-grams with
/// at least one position whose tag passes the filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgramOverlap {
    /// Entry `n - 1` is the clipped match count for order `n`.
    pub matches: Vec<usize>,
    /// Candidate n-grams per order.
    pub candidate_ngrams: Vec<usize>,
}

/// Gold-side tags used to restrict counted n-grams.
pub struct TagFilter<'a> {
    /// Tags aligned with each gold sentence.
    pub tags: &'a [Vec<String>],
    pub keep: &'a dyn Fn(&str) -> bool,
}

fn marked_ngrams<'t>(gold: &'t [String], tags: &[String], n: usize, keep: &dyn Fn(&str) -> bool) -> Vec<&'t [String]> {
    if gold.len() < n {
        return Vec::new();
    }
    (0..=gold.len() - n)
        .filter(|&i| tags[i..i + n].iter().any(|t| keep(t)))
        .map(|i| &gold[i..i + n])
        .collect()
}

pub fn ngram_overlap(
    candidates: &[Vec<String>],
    gold: &[Vec<String>],
    max_n: usize,
    filter: Option<&TagFilter<'_>>,
) -> Result<NgramOverlap> {
    if candidates.len() != gold.len() {
        return Err(Error::data(format!(
            "{} system sentences but {} gold sentences",
            candidates.len(),
            gold.len()
        )));
    }
    if let Some(f) = filter {
        if f.tags.len() != gold.len() {
            return Err(Error::data("tag file and gold file differ in sentence count"));
        }
        for (i, (t, g)) in f.tags.iter().zip(gold).enumerate() {
            if t.len() != g.len() {
                return Err(Error::data(format!(
                    "sentence {}: {} tags for {} tokens",
                    i + 1,
                    t.len(),
                    g.len()
                )));
            }
        }
    }
    let mut matches = vec![0; max_n];
    let mut candidate_ngrams = vec![0; max_n];
    for (s, (c, g)) in candidates.iter().zip(gold).enumerate() {
        for n in 1..=max_n {
            candidate_ngrams[n - 1] += c.len().saturating_sub(n - 1);
            matches[n - 1] += match filter {
                None => clipped_matches(c, g, n, |_| true),
                Some(f) => {
                    let marked = marked_ngrams(g, &f.tags[s], n, f.keep);
                    clipped_matches(c, g, n, |ng| marked.contains(&ng))
                }
            };
        }
    }
    Ok(NgramOverlap {
        matches,
        candidate_ngrams,
    })
}

/// Per order, `100 · (matches_A − matches_B) / matches_B`, or `None` when
/// system B matches nothing at that order.
pub fn ngram_gain(
    system_a: &[Vec<String>],
    system_b: &[Vec<String>],
    gold: &[Vec<String>],
    max_n: usize,
    filter: Option<&TagFilter<'_>>,
) -> Result<Vec<Option<f64>>> {
    let a = ngram_overlap(system_a, gold, max_n, filter)?;
    let b = ngram_overlap(system_b, gold, max_n, filter)?;
    Ok(a.matches
        .iter()
        .zip(&b.matches)
        .map(|(&ma, &mb)| (mb > 0).then(|| 100.0 * (ma as f64 - mb as f64) / mb as f64))
        .collect())
}

/// Default noun test for Penn-style tags (`NN`, `NNS`, `NNP`, `NNPS`) and
/// universal `NOUN`/`PROPN`.
pub fn is_noun_tag(tag: &str) -> bool {
    tag.starts_with("NN") || tag == "NOUN" || tag == "PROPN" || tag == "N"
}

/// CSV of per-order gains: `order,gain` with an empty cell for undefined
/// entries.
pub fn gains_csv(gains: &[Option<f64>]) -> String {
    let mut s = String::from("order,gain_percent\n");
    for (n, g) in gains.iter().enumerate() {
        match g {
            Some(v) => {
                let _ = writeln!(s, "{},{:.4}", n + 1, v);
            }
            None => {
                let _ = writeln!(s, "{},", n + 1);
            }
        }
    }
    s
}
