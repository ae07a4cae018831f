//! AMR graphs: PENMAN reading and writing, and a variable-free
//! linearization.
//!
//! Linearization walks the graph depth first from the root. A concept with
//! outgoing edges is written `( concept :role value ... )`, a concept without
//! edges as the bare concept. A node met again is written `*k`, pointing to
//! the k-th concept introduced (from 1). Constants carry a leading `'`.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// A role's value: another node or a constant such as `-`, `5` or `"Paris"`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AmrValue {
    Node(usize),
    Constant(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AmrEdge {
    pub source: usize,
    pub role: String,
    pub target: AmrValue,
}

/// Node 0 is the root. Edges keep their written order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AmrGraph {
    pub concepts: Vec<String>,
    pub edges: Vec<AmrEdge>,
}

pub const BACKREF_PREFIX: char = '*';
pub const CONSTANT_PREFIX: char = '\'';

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

impl AmrGraph {
    pub fn add_node(&mut self, concept: impl Into<String>) -> usize {
        self.concepts.push(concept.into());
        self.concepts.len() - 1
    }

    pub fn add_edge(&mut self, source: usize, role: impl Into<String>, target: AmrValue) {
        self.edges.push(AmrEdge {
            source,
            role: role.into(),
            target,
        });
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    fn outgoing(&self) -> Vec<Vec<&AmrEdge>> {
        let mut out = vec![Vec::new(); self.concepts.len()];
        for e in &self.edges {
            out[e.source].push(e);
        }
        out
    }

    fn check(&self) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::data("AMR graph has no nodes"));
        }
        for e in &self.edges {
            let target_ok = match &e.target {
                AmrValue::Node(t) => *t < self.concepts.len(),
                AmrValue::Constant(c) => !c.is_empty() && !c.chars().any(char::is_whitespace),
            };
            if e.source >= self.concepts.len() || !target_ok {
                return Err(Error::data(format!("AMR edge {e:?} is malformed")));
            }
            if !e.role.starts_with(':') || e.role.len() < 2 || e.role.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("AMR role {:?} must be ':' followed by a name", e.role)));
            }
        }
        for c in &self.concepts {
            let bad_start = c.starts_with(['(', ')', ':', BACKREF_PREFIX, CONSTANT_PREFIX, '"']);
            if c.is_empty() || bad_start || c.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("AMR concept {c:?} cannot be linearized")));
            }
        }
        Ok(())
    }

    /// Depth-first order of first visits from the root; errors when some node
    /// is unreachable.
    fn visit_order(&self) -> Result<Vec<usize>> {
        let outgoing = self.outgoing();
        let mut seen = vec![false; self.concepts.len()];
        let mut order = Vec::new();
        let mut stack = vec![0];
        while let Some(n) = stack.pop() {
            if seen[n] {
                continue;
            }
            seen[n] = true;
            order.push(n);
            for e in outgoing[n].iter().rev() {
                if let AmrValue::Node(t) = e.target {
                    if !seen[t] {
                        stack.push(t);
                    }
                }
            }
        }
        if let Some(lost) = seen.iter().position(|s| !s) {
            return Err(Error::data(format!(
                "AMR graph is disconnected: node {lost} ({}) is not reachable from the root",
                self.concepts[lost]
            )));
        }
        Ok(order)
    }

    pub fn linearize(&self) -> Result<Vec<String>> {
        self.check()?;
        self.visit_order()?;
        let outgoing = self.outgoing();
        let mut introduced: HashMap<usize, usize> = HashMap::new();
        let mut out = Vec::new();
        self.emit(0, &outgoing, &mut introduced, &mut out);
        Ok(out)
    }

    fn emit(&self, n: usize, outgoing: &[Vec<&AmrEdge>], introduced: &mut HashMap<usize, usize>, out: &mut Vec<String>) {
        if let Some(k) = introduced.get(&n) {
            out.push(format!("{BACKREF_PREFIX}{k}"));
            return;
        }
        introduced.insert(n, introduced.len() + 1);
        if outgoing[n].is_empty() {
            out.push(self.concepts[n].clone());
            return;
        }
        out.push("(".into());
        out.push(self.concepts[n].clone());
        for e in &outgoing[n] {
            out.push(e.role.clone());
            match &e.target {
                AmrValue::Node(t) => self.emit(*t, outgoing, introduced, out),
                AmrValue::Constant(c) => out.push(format!("{CONSTANT_PREFIX}{c}")),
            }
        }
        out.push(")".into());
    }

    /// PENMAN text with generated variable names.
    pub fn to_penman(&self) -> Result<String> {
        self.check()?;
        let order = self.visit_order()?;
        let mut names = vec![String::new(); self.concepts.len()];
        let mut used: HashMap<String, usize> = HashMap::new();
        for &n in &order {
            let initial: String = self.concepts[n]
                .chars()
                .find(|c| c.is_ascii_alphabetic())
                .map(|c| c.to_ascii_lowercase().to_string())
                .unwrap_or_else(|| "x".into());
            let count = used.entry(initial.clone()).or_insert(0);
            *count += 1;
            names[n] = if *count == 1 { initial } else { format!("{initial}{count}") };
        }
        let outgoing = self.outgoing();
        let mut written = vec![false; self.concepts.len()];
        let mut s = String::new();
        self.write_penman(0, &outgoing, &names, &mut written, 0, &mut s);
        Ok(s)
    }

    fn write_penman(
        &self,
        n: usize,
        outgoing: &[Vec<&AmrEdge>],
        names: &[String],
        written: &mut [bool],
        depth: usize,
        s: &mut String,
    ) {
        if written[n] {
            s.push_str(&names[n]);
            return;
        }
        written[n] = true;
        let _ = write!(s, "({} / {}", names[n], self.concepts[n]);
        for e in &outgoing[n] {
            let _ = write!(s, "\n{}{} ", "      ".repeat(depth + 1), e.role);
            match &e.target {
                AmrValue::Node(t) => self.write_penman(*t, outgoing, names, written, depth + 1, s),
                AmrValue::Constant(c) => s.push_str(c),
            }
        }
        s.push(')');
    }

    /// Reads one PENMAN graph. Variables may be referenced before their
    /// definition.
    pub fn parse_penman(text: &str) -> Result<AmrGraph> {
        let tokens = penman_tokens(text)?;
        let mut parser = PenmanParser {
            tokens: &tokens,
            pos: 0,
            graph: AmrGraph::default(),
            vars: HashMap::new(),
            pending: Vec::new(),
        };
        if tokens.first().map(String::as_str) != Some("(") {
            return Err(parse_err(0, "a PENMAN graph starts with '('"));
        }
        parser.node()?;
        if parser.pos != tokens.len() {
            return Err(parse_err(parser.pos, "text after the end of the graph"));
        }
        let PenmanParser { mut graph, vars, pending, .. } = parser;
        for (edge, var) in pending {
            graph.edges[edge].target = match vars.get(&var) {
                Some(&t) => AmrValue::Node(t),
                None => AmrValue::Constant(var),
            };
        }
        Ok(graph)
    }
}

fn penman_tokens(text: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            c if c.is_whitespace() => {}
            '(' | ')' | '/' => out.push(c.to_string()),
            '"' => {
                let mut s = String::from('"');
                let mut closed = false;
                for (_, d) in chars.by_ref() {
                    s.push(d);
                    if d == '"' {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(parse_err(out.len(), format!("unterminated string starting at byte {i}")));
                }
                out.push(s);
            }
            _ => {
                let mut s = c.to_string();
                while let Some(&(_, d)) = chars.peek() {
                    if d.is_whitespace() || matches!(d, '(' | ')' | '/' | '"') {
                        break;
                    }
                    s.push(d);
                    chars.next();
                }
                out.push(s);
            }
        }
    }
    Ok(out)
}

struct PenmanParser<'t> {
    tokens: &'t [String],
    pos: usize,
    graph: AmrGraph,
    vars: HashMap<String, usize>,
    /// Edges whose target is a bare symbol, resolved once every variable is
    /// known.
    pending: Vec<(usize, String)>,
}

impl<'t> PenmanParser<'t> {
    fn peek(&self) -> Option<&'t str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn expect(&mut self, what: &str) -> Result<()> {
        if self.peek() == Some(what) {
            self.pos += 1;
            Ok(())
        } else {
            Err(parse_err(self.pos, format!("expected '{what}'")))
        }
    }

    fn symbol(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(t) if !matches!(t, "(" | ")" | "/") && !t.starts_with(':') => {
                self.pos += 1;
                Ok(t.to_string())
            }
            _ => Err(parse_err(self.pos, format!("expected {what}"))),
        }
    }

    fn node(&mut self) -> Result<usize> {
        self.expect("(")?;
        let var_at = self.pos;
        let var = self.symbol("a variable")?;
        self.expect("/")?;
        let concept = self.symbol("a concept")?;
        if self.vars.contains_key(&var) {
            return Err(parse_err(var_at, format!("variable {var} defined twice")));
        }
        let id = self.graph.add_node(concept);
        self.vars.insert(var, id);
        loop {
            match self.peek() {
                Some(")") => {
                    self.pos += 1;
                    return Ok(id);
                }
                Some(role) if role.starts_with(':') => {
                    let role = role.to_string();
                    self.pos += 1;
                    if self.peek() == Some("(") {
                        let child = self.node()?;
                        self.graph.add_edge(id, role, AmrValue::Node(child));
                    } else {
                        let value = self.symbol("a role value")?;
                        self.graph.add_edge(id, role, AmrValue::Constant(String::new()));
                        let edge = self.graph.edges.len() - 1;
                        if value.starts_with('"') {
                            self.graph.edges[edge].target = AmrValue::Constant(value);
                        } else {
                            self.pending.push((edge, value));
                        }
                    }
                }
                None => return Err(parse_err(self.pos, "unclosed node")),
                Some(_) => return Err(parse_err(self.pos, "expected a role or ')'")),
            }
        }
    }
}

/// Inverse of [`AmrGraph::linearize`]; nodes are numbered in introduction
/// order.
pub fn delinearize_amr<S: AsRef<str>>(tokens: &[S]) -> Result<AmrGraph> {
    let tokens: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let mut graph = AmrGraph::default();
    let mut pos = 0;
    match read_value(&tokens, &mut pos, &mut graph)? {
        AmrValue::Node(_) => {}
        AmrValue::Constant(_) => return Err(parse_err(0, "the root must be a concept")),
    }
    if pos != tokens.len() {
        return Err(parse_err(pos, "tokens after the end of the graph"));
    }
    Ok(graph)
}

fn read_value(tokens: &[&str], pos: &mut usize, graph: &mut AmrGraph) -> Result<AmrValue> {
    let Some(&t) = tokens.get(*pos) else {
        return Err(parse_err(*pos, "unexpected end of input"));
    };
    let at = *pos;
    *pos += 1;
    if t == "(" {
        let concept = match tokens.get(*pos) {
            Some(&c) if is_concept(c) => c,
            _ => return Err(parse_err(*pos, "expected a concept after '('")),
        };
        *pos += 1;
        let id = graph.add_node(concept);
        let mut edges = 0;
        loop {
            match tokens.get(*pos) {
                Some(&")") => {
                    *pos += 1;
                    break;
                }
                Some(&role) if role.starts_with(':') && role.len() > 1 => {
                    *pos += 1;
                    let value = read_value(tokens, pos, graph)?;
                    graph.add_edge(id, role, value);
                    edges += 1;
                }
                Some(_) => return Err(parse_err(*pos, "expected a role or ')'")),
                None => return Err(parse_err(*pos, "unclosed '('")),
            }
        }
        if edges == 0 {
            return Err(parse_err(at, "'(' around a concept without roles"));
        }
        Ok(AmrValue::Node(id))
    } else if let Some(k) = t.strip_prefix(BACKREF_PREFIX) {
        let k: usize = k
            .parse()
            .map_err(|_| parse_err(at, format!("malformed back-reference {t}")))?;
        if k == 0 || k > graph.len() {
            return Err(parse_err(at, format!("back-reference {t} to a concept not yet introduced")));
        }
        Ok(AmrValue::Node(k - 1))
    } else if let Some(c) = t.strip_prefix(CONSTANT_PREFIX) {
        if c.is_empty() {
            return Err(parse_err(at, "empty constant"));
        }
        Ok(AmrValue::Constant(c.to_string()))
    } else if is_concept(t) {
        Ok(AmrValue::Node(graph.add_node(t)))
    } else {
        Err(parse_err(at, format!("unexpected token {t:?}")))
    }
}

fn is_concept(t: &str) -> bool {
    !t.is_empty() && !t.starts_with(['(', ')', ':', BACKREF_PREFIX, CONSTANT_PREFIX])
}

/// Graphs separated by blank lines; `#` lines are comments.
pub fn parse_penman_file(text: &str) -> Result<Vec<AmrGraph>> {
    let mut graphs = Vec::new();
    let mut block = String::new();
    for line in text.lines().chain(std::iter::once("")) {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if trimmed.is_empty() {
            if !block.trim().is_empty() {
                let g = AmrGraph::parse_penman(&block).map_err(|e| match e {
                    Error::Parse { position, message } => Error::Parse {
                        position,
                        message: format!("graph {}: {message}", graphs.len() + 1),
                    },
                    other => other,
                })?;
                graphs.push(g);
            }
            block.clear();
        } else {
            block.push_str(line);
            block.push('\n');
        }
    }
    Ok(graphs)
}
