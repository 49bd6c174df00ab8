//! Token symbol table, lexicon and the lexicon trie.

use std::collections::HashMap;

use crate::error::{Error, Result};

/// Acoustic token symbols. Id 0 is the blank.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl TokenTable {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Input("token table is empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("token `{s}` listed twice")));
            }
        }
        Ok(Self { symbols, index })
    }

    /// Parses `symbol id` lines. Ids must cover `0..n` exactly.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(sym), Some(id), None) = (it.next(), it.next(), it.next()) else {
                return Err(Error::Input(format!(
                    "tokens line {}: expected `symbol id`",
                    lineno + 1
                )));
            };
            let id: usize = id.parse().map_err(|_| {
                Error::Input(format!("tokens line {}: bad id `{id}`", lineno + 1))
            })?;
            pairs.push((id, sym.to_string()));
        }
        pairs.sort();
        if pairs.iter().enumerate().any(|(i, (id, _))| *id != i) {
            return Err(Error::Input("token ids must be contiguous from 0".into()));
        }
        Self::new(pairs.into_iter().map(|(_, s)| s).collect())
    }

    pub fn to_text(&self) -> String {
        self.symbols
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s} {i}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }
}

/// Words and their token spellings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    words: Vec<String>,
    index: HashMap<String, u32>,
    entries: Vec<(u32, Vec<u32>)>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a pronunciation. A word may have several spellings.
    pub fn add(&mut self, word: &str, spelling: Vec<u32>) -> Result<()> {
        if spelling.is_empty() {
            return Err(Error::Input(format!("word `{word}` has an empty spelling")));
        }
        if spelling.contains(&0) {
            return Err(Error::Input(format!("word `{word}` is spelled with the blank token")));
        }
        let id = match self.index.get(word) {
            Some(&id) => id,
            None => {
                let id = self.words.len() as u32;
                self.words.push(word.to_string());
                self.index.insert(word.to_string(), id);
                id
            }
        };
        self.entries.push((id, spelling));
        Ok(())
    }

    /// Parses lines of a word followed by its token symbols.
    pub fn parse(text: &str, tokens: &TokenTable) -> Result<Self> {
        let mut lex = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let Some(word) = it.next() else { continue };
            let spelling = it
                .map(|s| {
                    tokens.id(s).ok_or_else(|| {
                        Error::Input(format!("lexicon line {}: unknown token `{s}`", lineno + 1))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            lex.add(word, spelling)
                .map_err(|e| Error::Input(format!("lexicon line {}: {e}", lineno + 1)))?;
        }
        Ok(lex)
    }

    pub fn to_text(&self, tokens: &TokenTable) -> String {
        let mut out = String::new();
        for (w, spelling) in &self.entries {
            out.push_str(&self.words[*w as usize]);
            for &t in spelling {
                out.push(' ');
                out.push_str(tokens.symbol(t).unwrap_or("?"));
            }
            out.push('\n');
        }
        out
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn word_id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn entries(&self) -> &[(u32, Vec<u32>)] {
        &self.entries
    }
}

/// Bytes of a trie node header in the graph store.
pub const NODE_HEADER_BYTES: u64 = 16;
/// Bytes of one child link.
pub const CHILD_LINK_BYTES: u64 = 8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrieNode {
    /// Children as `(token, node)`, sorted by token.
    pub children: Vec<(u32, u32)>,
    /// Words ending at this node.
    pub words: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconTrie {
    nodes: Vec<TrieNode>,
    offsets: Vec<u64>,
}

pub const ROOT: u32 = 0;

impl LexiconTrie {
    /// Builds the trie. Entries are sorted first, so node ids do not depend
    /// on insertion order.
    pub fn build(lexicon: &Lexicon) -> Self {
        let mut entries: Vec<(&[u32], u32)> =
            lexicon.entries().iter().map(|(w, s)| (s.as_slice(), *w)).collect();
        entries.sort();
        let before = entries.len();
        entries.dedup();
        if entries.len() < before {
            log::warn!("ignored {} duplicate lexicon entries", before - entries.len());
        }
        let mut nodes = vec![TrieNode::default()];
        for (spelling, word) in entries {
            let mut node = ROOT as usize;
            for &t in spelling {
                node = match nodes[node].children.binary_search_by_key(&t, |c| c.0) {
                    Ok(i) => nodes[node].children[i].1 as usize,
                    Err(i) => {
                        let id = nodes.len();
                        nodes[node].children.insert(i, (t, id as u32));
                        nodes.push(TrieNode::default());
                        id
                    }
                };
            }
            nodes[node].words.push(word);
        }
        let mut offsets = Vec::with_capacity(nodes.len());
        let mut at = 0;
        for n in &nodes {
            offsets.push(at);
            at += NODE_HEADER_BYTES + CHILD_LINK_BYTES * n.children.len() as u64;
        }
        Self { nodes, offsets }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node(&self, id: u32) -> &TrieNode {
        &self.nodes[id as usize]
    }

    pub fn get(&self, id: u32) -> Option<&TrieNode> {
        self.nodes.get(id as usize)
    }

    /// Address of a node record in the graph store.
    pub fn address(&self, id: u32) -> u64 {
        self.offsets[id as usize]
    }

    /// Bytes of the whole trie in the graph store.
    pub fn footprint(&self) -> u64 {
        self.offsets.last().map_or(0, |&o| {
            o + NODE_HEADER_BYTES + CHILD_LINK_BYTES * self.nodes.last().map_or(0, |n| n.children.len()) as u64
        })
    }

    /// Node reached by following `spelling` from the root.
    pub fn walk(&self, spelling: &[u32]) -> Option<u32> {
        spelling.iter().try_fold(ROOT, |node, &t| {
            let n = self.node(node);
            n.children
                .binary_search_by_key(&t, |c| c.0)
                .ok()
                .map(|i| n.children[i].1)
        })
    }
}
