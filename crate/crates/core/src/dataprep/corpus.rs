//! Parallel text: reading, length filtering and id encoding.

use crate::dataprep::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::mtl::SentencePair;
use crate::seq2seq::EOS;

/// One whitespace-tokenized sentence pair.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TextPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl TextPair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Self {
        Self { source, target }
    }
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Pairs line by line from two texts of equal line count.
pub fn read_parallel(source: &str, target: &str) -> Result<Vec<TextPair>> {
    let src: Vec<&str> = source.lines().collect();
    let tgt: Vec<&str> = target.lines().collect();
    if src.len() != tgt.len() {
        return Err(Error::data(format!(
            "parallel files differ in length: {} source lines, {} target lines",
            src.len(),
            tgt.len()
        )));
    }
    Ok(src
        .into_iter()
        .zip(tgt)
        .map(|(s, t)| TextPair::new(tokenize(s), tokenize(t)))
        .collect())
}

/// Length limits; `None` disables a check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LengthLimits {
    /// Maximum words per side before segmentation.
    pub max_words: Option<usize>,
    /// Maximum units per side after segmentation.
    pub max_units: Option<usize>,
}

impl Default for LengthLimits {
    fn default() -> Self {
        Self {
            max_words: Some(80),
            max_units: Some(300),
        }
    }
}

impl LengthLimits {
    pub const NONE: LengthLimits = LengthLimits {
        max_words: None,
        max_units: None,
    };
}

fn within(len: usize, limit: Option<usize>) -> bool {
    limit.is_none_or(|m| len <= m)
}

/// Segments each pair with the given side functions and keeps, in order,
/// the pairs whose both sides pass both limits. Empty sides are dropped too.
pub fn filter_corpus(
    pairs: &[TextPair],
    limits: LengthLimits,
    segment_source: impl Fn(&[String]) -> Vec<String>,
    segment_target: impl Fn(&[String]) -> Vec<String>,
) -> Vec<TextPair> {
    pairs
        .iter()
        .filter(|p| !p.source.is_empty() && !p.target.is_empty())
        .filter(|p| within(p.source.len(), limits.max_words) && within(p.target.len(), limits.max_words))
        .map(|p| TextPair::new(segment_source(&p.source), segment_target(&p.target)))
        .filter(|p| within(p.source.len(), limits.max_units) && within(p.target.len(), limits.max_units))
        .collect()
}

/// Maps units to ids, unknown units to `<unk>`, and appends `</s>` to the
/// target.
pub fn encode_corpus(pairs: &[TextPair], source_vocab: &Vocabulary, target_vocab: &Vocabulary) -> Vec<SentencePair> {
    pairs
        .iter()
        .map(|p| {
            let mut target = target_vocab.encode(&p.target);
            target.push(EOS);
            SentencePair::new(source_vocab.encode(&p.source), target)
        })
        .collect()
}
