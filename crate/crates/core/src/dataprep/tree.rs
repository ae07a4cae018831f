//! Constituency trees in bracketed form and their linearization with typed
//! closing brackets: `(S (NP the dog ) ...)` becomes
//! `(S (NP the dog )NP ... )S`.

use std::fmt;

use crate::error::{Error, Result};

/// A labeled node or a terminal word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Word(String),
}

impl Tree {
    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn word(w: impl Into<String>) -> Self {
        Tree::Word(w.into())
    }

    pub fn nonterminals(&self) -> usize {
        match self {
            Tree::Word(_) => 0,
            Tree::Node { children, .. } => 1 + children.iter().map(Tree::nonterminals).sum::<usize>(),
        }
    }

    /// Terminal words, left to right.
    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_words(&mut out);
        out
    }

    fn collect_words<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Word(w) => out.push(w),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_words(out)),
        }
    }

    /// Preterminal labels, left to right: the label of every node whose only
    /// child is a word.
    pub fn tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_tags(&mut out);
        out
    }

    fn collect_tags<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Tree::Node { label, children } = self {
            if let [Tree::Word(_)] = children.as_slice() {
                out.push(label);
            } else {
                children.iter().for_each(|c| c.collect_tags(out));
            }
        }
    }

    pub fn linearize(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<String>) {
        match self {
            Tree::Word(w) => out.push(w.clone()),
            Tree::Node { label, children } => {
                out.push(format!("({label}"));
                children.iter().for_each(|c| c.push_tokens(out));
                out.push(format!("){label}"));
            }
        }
    }

    /// Parses bracketed text such as `(S (NP (DT the) (NN dog)) (VP (VBZ barks)))`.
    pub fn parse(text: &str) -> Result<Tree> {
        let tokens = bracket_tokens(text);
        let mut pos = 0;
        let tree = parse_bracketed(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Parse {
                position: pos,
                message: "text after the end of the tree".into(),
            });
        }
        Ok(tree)
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Word(w) => write!(f, "{w}"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn bracket_tokens(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
            if !c.is_whitespace() {
                out.push(&text[i..i + 1]);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn parse_bracketed(tokens: &[&str], pos: &mut usize) -> Result<Tree> {
    let err = |position: usize, message: &str| Error::Parse {
        position,
        message: message.into(),
    };
    match tokens.get(*pos) {
        None => Err(err(*pos, "unexpected end of input")),
        Some(&"(") => {
            *pos += 1;
            // `( (S ...))` is the unlabeled root of treebank files.
            let label = match tokens.get(*pos) {
                Some(&t) if t != "(" && t != ")" => {
                    *pos += 1;
                    t.to_string()
                }
                _ => String::new(),
            };
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos) {
                    None => return Err(err(*pos, "unclosed bracket")),
                    Some(&")") => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_bracketed(tokens, pos)?),
                }
            }
            if children.is_empty() {
                return Err(err(*pos, "node without children"));
            }
            Ok(Tree::Node { label, children })
        }
        Some(&")") => Err(err(*pos, "unbalanced closing bracket")),
        Some(&w) => {
            *pos += 1;
            Ok(Tree::Word(w.to_string()))
        }
    }
}

/// Inverse of [`Tree::linearize`]. Every `(X` must be closed by `)X`.
pub fn delinearize_tree<S: AsRef<str>>(tokens: &[S]) -> Result<Tree> {
    // Open nodes, innermost last.
    let mut stack: Vec<(String, Vec<Tree>, usize)> = Vec::new();
    let mut done: Option<Tree> = None;
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        if done.is_some() {
            return Err(Error::Parse {
                position: i,
                message: "tokens after the end of the tree".into(),
            });
        }
        if let Some(label) = t.strip_prefix('(') {
            stack.push((label.to_string(), Vec::new(), i));
        } else if let Some(label) = t.strip_prefix(')') {
            let Some((open, children, _)) = stack.pop() else {
                return Err(Error::Parse {
                    position: i,
                    message: format!("closing {t} without an open bracket"),
                });
            };
            if open != label {
                return Err(Error::Parse {
                    position: i,
                    message: format!("closing {t} does not match ({open}"),
                });
            }
            if children.is_empty() {
                return Err(Error::Parse {
                    position: i,
                    message: format!("({open} has no children"),
                });
            }
            let node = Tree::Node { label: open, children };
            match stack.last_mut() {
                Some(parent) => parent.1.push(node),
                None => done = Some(node),
            }
        } else {
            match stack.last_mut() {
                Some(parent) => parent.1.push(Tree::Word(t.to_string())),
                None => {
                    return Err(Error::Parse {
                        position: i,
                        message: format!("word {t:?} outside any bracket"),
                    })
                }
            }
        }
    }
    match (done, stack.last()) {
        (Some(tree), _) => Ok(tree),
        (None, Some((label, _, at))) => Err(Error::Parse {
            position: tokens.len(),
            message: format!("({label} opened at token {at} is never closed"),
        }),
        (None, None) => Err(Error::Parse {
            position: 0,
            message: "empty token sequence".into(),
        }),
    }
}
