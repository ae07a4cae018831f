//! Corpus preparation: vocabularies, BPE, length filtering, and the
//! linearized forms of trees, AMR graphs and entity tags.

mod amr;
mod bpe;
mod corpus;
mod ner;
mod tree;
mod vocab;

pub use amr::{delinearize_amr, parse_penman_file, AmrEdge, AmrGraph, AmrValue, BACKREF_PREFIX, CONSTANT_PREFIX};
pub use bpe::{
    alphabet_size, join_units, learn_bpe, learn_bpe_for_vocab_size, word_counts, BpeModel, CONTINUATION, END_OF_WORD,
};
pub use corpus::{encode_corpus, filter_corpus, read_parallel, tokenize, LengthLimits, TextPair};
pub use ner::{parse_conll, TaggedSentence};
pub use tree::{delinearize_tree, Tree};
pub use vocab::{Vocabulary, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN};

#[cfg(test)]
mod tests;
