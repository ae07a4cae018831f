//! CoNLL-style named-entity data as sentence → tag-sequence pairs.

use crate::error::{Error, Result};

/// Words of one sentence and their tags, equally long.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TaggedSentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
}

/// Reads whitespace-separated columns with the word first and the tag last.
/// Blank lines end sentences; `-DOCSTART-` lines are skipped.
pub fn parse_conll(text: &str) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let mut current = TaggedSentence {
        words: Vec::new(),
        tags: Vec::new(),
    };
    for (n, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !current.words.is_empty() {
                out.push(std::mem::replace(
                    &mut current,
                    TaggedSentence {
                        words: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 2 {
            return Err(Error::data(format!("CoNLL line {}: expected a word and a tag", n + 1)));
        }
        current.words.push(cols[0].to_string());
        current.tags.push(cols[cols.len() - 1].to_string());
    }
    if !current.words.is_empty() {
        out.push(current);
    }
    Ok(out)
}
