//! Bracketed constituency trees and their vocabularies.
//!
//! Trees are written `(LABEL child child ...)` with bare tokens as leaves,
//! e.g. `(S (NP (DT the) (NN dog)) (VP (VBZ barks)))`. Every token becomes
//! its own leaf node carrying the reserved label [`TOKEN_LABEL`], so the tree
//! above has five internal nodes and three leaves.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Label assigned to every leaf node.
pub const TOKEN_LABEL: &str = "TOKEN";
/// Vocabulary entry for anything not seen at construction time.
pub const UNK: &str = "<unk>";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub label: String,
    pub children: Vec<usize>,
    pub token: Option<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.token.is_some()
    }
}

/// An immutable constituency tree. Node ids are a post-order numbering, so
/// every child id is smaller than its parent's and the root is last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseTree {
    nodes: Vec<TreeNode>,
    root: usize,
}

impl ParseTree {
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Total node count, internal nodes plus leaves.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }

    /// Leaf tokens in sentence order.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_tokens(self.root, &mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, id: usize, out: &mut Vec<&'a str>) {
        let node = &self.nodes[id];
        match &node.token {
            Some(tok) => out.push(tok),
            None => {
                for &c in &node.children {
                    self.collect_tokens(c, out);
                }
            }
        }
    }

    /// Parent of every node; `None` for the root.
    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parents = vec![None; self.nodes.len()];
        for (id, node) in self.nodes.iter().enumerate() {
            for &c in &node.children {
                parents[c] = Some(id);
            }
        }
        parents
    }

    /// Builds a tree from a nested description, numbering nodes in post-order.
    pub fn from_nested(tree: &Nested) -> ParseTree {
        let mut nodes = Vec::new();
        let root = push_nested(tree, &mut nodes);
        ParseTree { nodes, root }
    }

    pub fn to_nested(&self) -> Nested {
        self.nested_at(self.root)
    }

    fn nested_at(&self, id: usize) -> Nested {
        let node = &self.nodes[id];
        match &node.token {
            Some(tok) => Nested::Leaf(tok.clone()),
            None => Nested::Node(
                node.label.clone(),
                node.children.iter().map(|&c| self.nested_at(c)).collect(),
            ),
        }
    }
}

/// Owned recursive tree form, convenient for building and comparing trees.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Nested {
    Node(String, Vec<Nested>),
    Leaf(String),
}

fn push_nested(tree: &Nested, nodes: &mut Vec<TreeNode>) -> usize {
    let node = match tree {
        Nested::Leaf(tok) => TreeNode {
            label: TOKEN_LABEL.to_string(),
            children: Vec::new(),
            token: Some(tok.clone()),
        },
        Nested::Node(label, kids) => {
            let children = kids.iter().map(|k| push_nested(k, nodes)).collect();
            TreeNode {
                label: label.clone(),
                children,
                token: None,
            }
        }
    };
    nodes.push(node);
    nodes.len() - 1
}

/// Parses a single bracketed tree.
pub fn parse_bracketed(text: &str) -> Result<ParseTree> {
    let mut parser = Parser { text, pos: 0 };
    parser.skip_ws();
    if parser.pos == text.len() {
        return Err(parse_error(0, "empty input"));
    }
    let tree = parser.constituent()?;
    parser.skip_ws();
    if parser.pos != text.len() {
        return Err(parse_error(parser.pos, "unexpected text after the tree"));
    }
    Ok(ParseTree::from_nested(&tree))
}

fn parse_error(offset: usize, message: &str) -> Error {
    Error::Parse {
        offset,
        message: message.to_string(),
    }
}

struct Parser<'a> {
    text: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b) if b.is_ascii_whitespace()) {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> &str {
        let start = self.pos;
        while matches!(self.peek(), Some(b) if !b.is_ascii_whitespace() && b != b'(' && b != b')') {
            self.pos += 1;
        }
        &self.text[start..self.pos]
    }

    fn constituent(&mut self) -> Result<Nested> {
        let open = self.pos;
        if self.peek() != Some(b'(') {
            return Err(parse_error(self.pos, "expected '('"));
        }
        self.pos += 1;
        self.skip_ws();
        let label_at = self.pos;
        let label = self.atom().to_string();
        if label.is_empty() {
            return Err(parse_error(label_at, "empty label"));
        }
        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                None => return Err(parse_error(open, "unbalanced parentheses: '(' is never closed")),
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                Some(b'(') => children.push(self.constituent()?),
                Some(_) => children.push(Nested::Leaf(self.atom().to_string())),
            }
        }
        if children.is_empty() {
            return Err(parse_error(open, "constituent has no children"));
        }
        Ok(Nested::Node(label, children))
    }
}

/// Single-line bracketed form with one space between siblings.
pub fn serialize(tree: &ParseTree) -> String {
    let mut out = String::new();
    write_node(tree, tree.root(), &mut out);
    out
}

fn write_node(tree: &ParseTree, id: usize, out: &mut String) {
    let node = tree.node(id);
    if let Some(tok) = &node.token {
        out.push_str(tok);
        return;
    }
    let _ = write!(out, "({}", node.label);
    for &c in &node.children {
        out.push(' ');
        write_node(tree, c, out);
    }
    out.push(')');
}

/// Reads a tree file: one bracketed tree per line, line index = query id.
/// Errors carry the 1-based line number.
pub fn read_tree_file(reader: impl BufRead, source: &str) -> Result<Vec<ParseTree>> {
    let mut trees = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let tree = parse_bracketed(&line).map_err(|e| match e {
            Error::Parse { offset, message } => Error::data(source, Some(i + 1), format!("byte {offset}: {message}")),
            other => other,
        })?;
        trees.push(tree);
    }
    Ok(trees)
}

/// Dense string ↔ id map with reserved entries at the lowest ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    /// `reserved` take ids `0..reserved.len()`; the rest follow in sorted
    /// order, so the result does not depend on input order.
    pub fn new<'a>(reserved: &[&str], observed: impl IntoIterator<Item = &'a str>) -> Self {
        let observed: BTreeSet<&str> = observed.into_iter().collect();
        let mut tokens: Vec<String> = reserved.iter().map(|s| s.to_string()).collect();
        for tok in observed {
            if !reserved.contains(&tok) {
                tokens.push(tok.to_string());
            }
        }
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or of [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).or_else(|| self.ids.get(UNK)).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One `token<TAB>id` line per entry, in id order.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for (i, tok) in self.tokens.iter().enumerate() {
            writeln!(out, "{tok}\t{i}")?;
        }
        Ok(())
    }

    pub fn read_from(reader: impl BufRead, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::data(source, Some(i + 1), "expected token<TAB>id"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::data(source, Some(i + 1), format!("bad id {id:?}")))?;
            entries.push((id, tok.to_string()));
        }
        entries.sort();
        for (expected, (id, _)) in entries.iter().enumerate() {
            if *id != expected {
                return Err(Error::data(source, None, "ids are not dense from 0"));
            }
        }
        Ok(Self::from_tokens(entries.into_iter().map(|(_, t)| t).collect()))
    }
}

/// Constituent labels. Id 0 is [`UNK`], id 1 is [`TOKEN_LABEL`].
pub type LabelVocabulary = Vocabulary;

pub fn build_vocabularies(trees: &[ParseTree]) -> (LabelVocabulary, Vocabulary) {
    let labels = Vocabulary::new(
        &[UNK, TOKEN_LABEL],
        trees
            .iter()
            .flat_map(|t| t.nodes().iter().filter(|n| !n.is_leaf()).map(|n| n.label.as_str())),
    );
    let words = Vocabulary::new(
        &[UNK],
        trees
            .iter()
            .flat_map(|t| t.nodes().iter().filter_map(|n| n.token.as_deref())),
    );
    (labels, words)
}
