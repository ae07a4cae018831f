use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::seq2seq::{BOS, EOS, RESERVED_TOKENS, UNK};

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token ↔ id map with `<s>`, `</s>` and `<unk>` in the first three slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    /// Only the reserved entries.
    pub fn new() -> Self {
        let tokens: Vec<String> = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN].map(String::from).to_vec();
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, ids }
    }

    /// Adds `token` unless present; returns its id.
    pub fn insert(&mut self, token: &str) -> Result<usize> {
        if let Some(&id) = self.ids.get(token) {
            return Ok(id);
        }
        if token.is_empty() || token.chars().any(char::is_whitespace) {
            return Err(Error::data(format!("vocabulary entry {token:?} is empty or contains whitespace")));
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        Ok(id)
    }

    /// Most frequent tokens first, ties in lexicographic order. `max_size`
    /// caps the number of non-reserved entries.
    pub fn from_counts<'a>(counts: impl IntoIterator<Item = (&'a str, u64)>, max_size: Option<usize>) -> Result<Self> {
        let mut merged: HashMap<&str, u64> = HashMap::new();
        for (t, c) in counts {
            *merged.entry(t).or_insert(0) += c;
        }
        let mut ranked: Vec<(&str, u64)> = merged
            .into_iter()
            .filter(|(t, _)| ![BOS_TOKEN, EOS_TOKEN, UNK_TOKEN].contains(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(n) = max_size {
            ranked.truncate(n);
        }
        let mut vocab = Self::new();
        for (t, _) in ranked {
            vocab.insert(t)?;
        }
        Ok(vocab)
    }

    /// Counts every token of every sentence.
    pub fn from_corpus<S: AsRef<str>>(sentences: &[Vec<S>], max_size: Option<usize>) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_ref()).or_insert(0) += 1;
            }
        }
        Self::from_counts(counts, max_size)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    /// Id of `token`, `<unk>` when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Tokens for `ids`, stopping at the first `</s>` and skipping `<s>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS)
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    /// One non-reserved token per line, in id order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in &self.tokens[RESERVED_TOKENS..] {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut vocab = Self::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let token = line.strip_suffix('\r').unwrap_or(&line);
            if vocab.get(token).is_some() {
                return Err(Error::data(format!("vocabulary line {}: duplicate or reserved token {token:?}", n + 1)));
            }
            vocab
                .insert(token)
                .map_err(|e| Error::data(format!("vocabulary line {}: {e}", n + 1)))?;
        }
        Ok(vocab)
    }
}
