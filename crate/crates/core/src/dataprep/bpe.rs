//! Byte-pair encoding over characters with an end-of-word marker.
//!
//! Segmented text marks every unit except the last of a word with a trailing
//! `@@`, so `lower` may become `lo@@ wer`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";

type Pair = (String, String);

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

/// Word frequencies of whitespace-tokenized sentences.
pub fn word_counts<S: AsRef<str>>(sentences: &[Vec<S>]) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for w in s {
            *counts.entry(w.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    counts
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    symbols.push(END_OF_WORD.to_string());
    symbols
}

fn merge_symbols(symbols: &[String], pair: &Pair) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(format!("{}{}", pair.0, pair.1));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Pair counts with a queue ordered by count, then by pair.
#[derive(Default)]
struct PairStats {
    counts: HashMap<Pair, u64>,
    queue: BTreeSet<(Reverse<u64>, Pair)>,
    words: HashMap<Pair, BTreeSet<usize>>,
}

impl PairStats {
    fn add(&mut self, pair: Pair, delta: i64, word: usize) {
        let old = self.counts.get(&pair).copied().unwrap_or(0);
        let new = (old as i64 + delta) as u64;
        if old > 0 {
            self.queue.remove(&(Reverse(old), pair.clone()));
        }
        if new > 0 {
            self.queue.insert((Reverse(new), pair.clone()));
            self.counts.insert(pair.clone(), new);
        } else {
            self.counts.remove(&pair);
        }
        if delta > 0 {
            self.words.entry(pair).or_default().insert(word);
        }
    }

    fn add_word(&mut self, symbols: &[String], freq: u64, word: usize, sign: i64) {
        for w in symbols.windows(2) {
            self.add((w[0].clone(), w[1].clone()), sign * freq as i64, word);
        }
    }

    fn best(&self) -> Option<Pair> {
        self.queue.first().map(|(_, p)| p.clone())
    }
}

/// Learns up to `num_merges` merges, each joining the currently most frequent
/// adjacent pair; ties go to the lexicographically smallest pair. Stops early
/// when every word is a single symbol.
pub fn learn_bpe(counts: &BTreeMap<String, u64>, num_merges: usize) -> Result<BpeModel> {
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .filter(|(w, &c)| !w.is_empty() && c > 0)
        .map(|(w, &c)| (initial_symbols(w), c))
        .collect();
    if words.is_empty() {
        return Err(Error::data("cannot learn BPE merges from an empty corpus"));
    }
    let mut stats = PairStats::default();
    for (i, (symbols, freq)) in words.iter().enumerate() {
        stats.add_word(symbols, *freq, i, 1);
    }
    let mut model = BpeModel::default();
    while model.merges.len() < num_merges {
        let Some(pair) = stats.best() else { break };
        let affected = stats.words.remove(&pair).unwrap_or_default();
        for i in affected {
            let (symbols, freq) = &words[i];
            if !symbols.windows(2).any(|w| w[0] == pair.0 && w[1] == pair.1) {
                continue;
            }
            let merged = merge_symbols(symbols, &pair);
            let freq = *freq;
            stats.add_word(&words[i].0, freq, i, -1);
            stats.add_word(&merged, freq, i, 1);
            words[i].0 = merged;
        }
        model.push(pair);
    }
    Ok(model)
}

/// Number of distinct initial symbols (characters plus the end-of-word
/// marker) in `counts`.
pub fn alphabet_size(counts: &BTreeMap<String, u64>) -> usize {
    let chars: BTreeSet<char> = counts.keys().flat_map(|w| w.chars()).collect();
    chars.len() + 1
}

/// Learns enough merges for a subword inventory of about `vocab_size` units:
/// `vocab_size` minus the initial alphabet.
pub fn learn_bpe_for_vocab_size(counts: &BTreeMap<String, u64>, vocab_size: usize) -> Result<BpeModel> {
    learn_bpe(counts, vocab_size.saturating_sub(alphabet_size(counts)))
}

impl BpeModel {
    fn push(&mut self, pair: Pair) {
        self.ranks.insert(pair.clone(), self.merges.len());
        self.merges.push(pair);
    }

    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let mut model = Self::default();
        for m in merges {
            model.push(m);
        }
        model
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Internal symbols of `word` after applying merges in rank order.
    pub fn symbols(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, w)))
                .min_by_key(|(r, _)| *r)
                .map(|(_, w)| (w[0].clone(), w[1].clone()));
            match best {
                Some(pair) => symbols = merge_symbols(&symbols, &pair),
                None => return symbols,
            }
        }
    }

    /// Units of one word, `@@` on all but the last.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = self.symbols(word);
        let last = symbols.pop().expect("at least the end-of-word marker");
        let stem = last.strip_suffix(END_OF_WORD).unwrap_or(&last);
        if !stem.is_empty() {
            symbols.push(stem.to_string());
        }
        let n = symbols.len();
        for s in &mut symbols[..n - 1] {
            s.push_str(CONTINUATION);
        }
        symbols
    }

    /// Segments a sentence. Units already carrying `@@` are first joined back
    /// into words, so segmenting twice changes nothing.
    pub fn segment<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        join_units(tokens).iter().flat_map(|w| self.segment_word(w)).collect()
    }

    /// Segments many sentences, caching per word.
    pub fn segment_all<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Vec<Vec<String>> {
        let mut cache: HashMap<String, Vec<String>> = HashMap::new();
        sentences
            .iter()
            .map(|s| {
                join_units(s)
                    .into_iter()
                    .flat_map(|w| cache.entry(w).or_insert_with_key(|w| self.segment_word(w)).clone())
                    .collect()
            })
            .collect()
    }

    /// One merge per line, `left right`, in rank order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for (a, b) in &self.merges {
            writeln!(w, "{a} {b}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut merges = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            let fields: Vec<&str> = line.split(' ').collect();
            if fields.len() != 2 || fields.iter().any(|f| f.is_empty()) {
                return Err(Error::data(format!("BPE model line {}: expected two symbols, got {line:?}", n + 1)));
            }
            merges.push((fields[0].to_string(), fields[1].to_string()));
        }
        Ok(Self::from_merges(merges))
    }
}

/// Undoes segmentation: concatenates each unit ending in `@@` with the next.
pub fn join_units<S: AsRef<str>>(units: &[S]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for u in units {
        let u = u.as_ref();
        match u.strip_suffix(CONTINUATION) {
            Some(stem) => current.push_str(stem),
            None => {
                current.push_str(u);
                words.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}
