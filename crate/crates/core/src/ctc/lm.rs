//! Back-off n-gram language model read from ARPA text.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const SENTENCE_START: &str = "<s>";
/// Unigram log10 probability given to `<unk>` when the file has none.
pub const UNK_FLOOR: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    prob: f64,
    backoff: f64,
    /// Position in canonical (order, words) order; used as its address.
    slot: u32,
}

/// Result of one LM query.
#[derive(Debug, Clone, PartialEq)]
pub struct LmLookup {
    /// log10 probability including back-off weights.
    pub score: f64,
    pub state: u32,
    /// Entry slots read while resolving the query.
    pub probed: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramLm {
    order: usize,
    vocab: Vec<String>,
    word_index: HashMap<String, u32>,
    entries: HashMap<Vec<u32>, Entry>,
    states: Vec<Vec<u32>>,
    state_index: HashMap<Vec<u32>, u32>,
    unk: u32,
    start_state: u32,
}

impl NGramLm {
    /// Builds a model from `(words, log10 prob, backoff)` n-grams.
    pub fn from_ngrams(order: usize, ngrams: &[(Vec<String>, f64, f64)]) -> Result<Self> {
        if order == 0 {
            return Err(Error::Input("language model order must be at least 1".into()));
        }
        let mut vocab: Vec<String> = Vec::new();
        let mut word_index: HashMap<String, u32> = HashMap::new();
        fn intern(vocab: &mut Vec<String>, index: &mut HashMap<String, u32>, w: &str) -> u32 {
            if let Some(&id) = index.get(w) {
                return id;
            }
            let id = vocab.len() as u32;
            vocab.push(w.to_string());
            index.insert(w.to_string(), id);
            id
        }
        let mut sorted: BTreeMap<(usize, Vec<u32>), (f64, f64)> = BTreeMap::new();
        for (words, prob, backoff) in ngrams {
            if words.is_empty() || words.len() > order {
                return Err(Error::Input(format!(
                    "n-gram `{}` does not fit order {order}",
                    words.join(" ")
                )));
            }
            if *prob > 0.0 || !prob.is_finite() || !backoff.is_finite() {
                return Err(Error::Input(format!(
                    "n-gram `{}` has invalid log10 probability {prob}",
                    words.join(" ")
                )));
            }
            let ids: Vec<u32> = words
                .iter()
                .map(|w| intern(&mut vocab, &mut word_index, w))
                .collect();
            sorted.insert((ids.len(), ids), (*prob, *backoff));
        }
        if !word_index.contains_key(UNK) {
            let id = intern(&mut vocab, &mut word_index, UNK);
            sorted.insert((1, vec![id]), (UNK_FLOOR, 0.0));
        }
        for (n, ids) in sorted.keys() {
            if *n > 1 && !sorted.contains_key(&(n - 1, ids[..n - 1].to_vec())) {
                log::warn!("n-gram context {:?} has no entry; its back-off weight is 0", &ids[..n - 1]);
            }
        }
        let mut entries = HashMap::with_capacity(sorted.len());
        let mut states = vec![Vec::new()];
        for (slot, ((n, ids), (prob, backoff))) in sorted.into_iter().enumerate() {
            if n < order {
                states.push(ids.clone());
            }
            entries.insert(ids, Entry { prob, backoff, slot: slot as u32 });
        }
        let state_index: HashMap<Vec<u32>, u32> = states
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        let unk = word_index[UNK];
        let start_state = word_index
            .get(SENTENCE_START)
            .and_then(|&s| state_index.get(&vec![s]).copied())
            .unwrap_or(0);
        Ok(Self {
            order,
            vocab,
            word_index,
            entries,
            states,
            state_index,
            unk,
            start_state,
        })
    }

    pub fn parse_arpa(text: &str) -> Result<Self> {
        let mut declared: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ngrams = Vec::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        let mut ended = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let err = |msg: &str| Error::Input(format!("LM line {}: {msg}", lineno + 1));
            if line.is_empty() || ended {
                continue;
            }
            if line == "\\data\\" {
                seen_data = true;
                section = None;
                continue;
            }
            if line == "\\end\\" {
                ended = true;
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\') {
                let n = rest
                    .strip_suffix("-grams:")
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| err("unknown section header"))?;
                section = Some(n);
                continue;
            }
            match section {
                None => {
                    if !seen_data {
                        return Err(err("text before \\data\\"));
                    }
                    let spec = line.strip_prefix("ngram ").ok_or_else(|| err("expected `ngram N=count`"))?;
                    let (n, count) = spec.split_once('=').ok_or_else(|| err("expected `ngram N=count`"))?;
                    let n: usize = n.trim().parse().map_err(|_| err("bad n-gram order"))?;
                    let count: usize = count.trim().parse().map_err(|_| err("bad n-gram count"))?;
                    declared.insert(n, count);
                }
                Some(n) => {
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    if fields.len() != n + 1 && fields.len() != n + 2 {
                        return Err(err(&format!("expected {} or {} fields", n + 1, n + 2)));
                    }
                    let prob: f64 = fields[0].parse().map_err(|_| err("bad probability"))?;
                    let backoff: f64 = match fields.get(n + 1) {
                        Some(b) => b.parse().map_err(|_| err("bad back-off weight"))?,
                        None => 0.0,
                    };
                    let words: Vec<String> = fields[1..=n].iter().map(|s| s.to_string()).collect();
                    ngrams.push((words, prob, backoff));
                }
            }
        }
        if !seen_data {
            return Err(Error::Input("LM has no \\data\\ section".into()));
        }
        for (&n, &count) in &declared {
            let found = ngrams.iter().filter(|(w, _, _)| w.len() == n).count();
            if found != count {
                return Err(Error::Input(format!(
                    "LM declares {count} {n}-grams but lists {found}"
                )));
            }
        }
        let order = declared.keys().copied().max().unwrap_or(1);
        Self::from_ngrams(order, &ngrams)
    }

    pub fn to_arpa(&self) -> String {
        let mut by_order: BTreeMap<usize, Vec<(&Vec<u32>, &Entry)>> = BTreeMap::new();
        for (ids, e) in &self.entries {
            by_order.entry(ids.len()).or_default().push((ids, e));
        }
        let mut out = String::from("\\data\\\n");
        for (n, list) in &by_order {
            let _ = writeln!(out, "ngram {n}={}", list.len());
        }
        for (n, list) in by_order.iter_mut() {
            list.sort_by_key(|(_, e)| e.slot);
            let _ = write!(out, "\n\\{n}-grams:\n");
            for (ids, e) in list.iter() {
                let words: Vec<&str> = ids.iter().map(|&i| self.vocab[i as usize].as_str()).collect();
                let _ = write!(out, "{}\t{}", e.prob, words.join(" "));
                if *n < self.order {
                    let _ = write!(out, "\t{}", e.backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn start_state(&self) -> u32 {
        self.start_state
    }

    pub fn state_words(&self, state: u32) -> Option<&[u32]> {
        self.states.get(state as usize).map(Vec::as_slice)
    }

    pub fn state_of(&self, context: &[u32]) -> Option<u32> {
        self.state_index.get(context).copied()
    }

    /// LM word for a lexicon word; out-of-vocabulary words map to `<unk>`.
    pub fn word_or_unk(&self, word: &str) -> u32 {
        self.word_index.get(word).copied().unwrap_or(self.unk)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    fn score_in(&self, context: &[u32], word: u32, probed: &mut Vec<u32>) -> f64 {
        let mut key = context.to_vec();
        key.push(word);
        if let Some(e) = self.entries.get(&key) {
            probed.push(e.slot);
            return e.prob;
        }
        if context.is_empty() {
            let unk = &self.entries[&vec![self.unk]];
            probed.push(unk.slot);
            return unk.prob;
        }
        let backoff = match self.entries.get(context) {
            Some(e) => {
                probed.push(e.slot);
                e.backoff
            }
            None => 0.0,
        };
        backoff + self.score_in(&context[1..], word, probed)
    }

    pub fn lookup(&self, state: u32, word: u32) -> LmLookup {
        let context = &self.states[state as usize];
        let mut probed = Vec::new();
        let score = self.score_in(context, word, &mut probed);
        let mut history: Vec<u32> = context.iter().copied().chain([word]).collect();
        let keep = self.order.saturating_sub(1);
        if history.len() > keep {
            history.drain(..history.len() - keep);
        }
        while !history.is_empty() && !self.state_index.contains_key(&history) {
            history.remove(0);
        }
        LmLookup {
            score,
            state: self.state_index[&history],
            probed,
        }
    }
}
