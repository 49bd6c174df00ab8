//! The hypothesis-expansion kernel: one thread per active hypothesis and
//! score vector.

use crate::cost::{PeContext, SfuOp};
use crate::error::{Error, Fault, Result};
use crate::hypothesis::{HistoryEntry, Hypothesis, HypothesisStore, Submission, NO_HISTORY};
use crate::kernel::{BufferDecl, Expansion, ExpansionKernel, KernelState, Machine};
use crate::memory::{BufferId, BufferSpec, ReaderId};

use super::lexicon::{Lexicon, LexiconTrie, CHILD_LINK_BYTES, NODE_HEADER_BYTES, ROOT};
use super::lm::NGramLm;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
/// Low hash bit: the path currently ends in a blank.
const BLANK_FLAG: u64 = 1;
/// Distinguishes word labels from token labels in the hash input.
const WORD_TAG: u64 = 1 << 40;
/// Bytes of one LM entry in the graph store.
const LM_ENTRY_BYTES: u64 = 16;

fn fnv_mix(state: u64, value: u64) -> u64 {
    value
        .to_le_bytes()
        .iter()
        .fold(state, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Hash of the labeling extended by token `t`; the blank flag is cleared.
pub fn extend_with_token(hash: u64, token: u32) -> u64 {
    fnv_mix(hash & !BLANK_FLAG, u64::from(token)) & !BLANK_FLAG
}

pub fn extend_with_word(hash: u64, word: u32) -> u64 {
    fnv_mix(hash & !BLANK_FLAG, WORD_TAG | u64::from(word)) & !BLANK_FLAG
}

pub fn with_blank(hash: u64) -> u64 {
    hash | BLANK_FLAG
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub lm_weight: f64,
    pub word_penalty: f64,
    pub blank: u32,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self { lm_weight: 1.0, word_penalty: 0.0, blank: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct CtcDecoder {
    lexicon: Lexicon,
    trie: LexiconTrie,
    lm: NGramLm,
    /// LM word of each lexicon word.
    lm_words: Vec<u32>,
    n_tokens: usize,
    params: DecodeParams,
    input: BufferId,
    input_spec: BufferSpec,
    reader: ReaderId,
    lm_base: u64,
    trace: bool,
}

impl CtcDecoder {
    /// `input` is the buffer of raw final-layer scores, one item per
    /// acoustic vector.
    pub fn new(
        lexicon: Lexicon,
        lm: NGramLm,
        params: DecodeParams,
        input: BufferId,
        input_spec: BufferSpec,
        reader: ReaderId,
    ) -> Result<Self> {
        let n_tokens = input_spec.item_len;
        if params.blank as usize >= n_tokens {
            return Err(Error::Config(format!("blank id {} >= {n_tokens} tokens", params.blank)));
        }
        if !(params.lm_weight >= 0.0) || !params.word_penalty.is_finite() {
            return Err(Error::Config("lm_weight must be >= 0 and word_penalty finite".into()));
        }
        if let Some((w, s)) = lexicon
            .entries()
            .iter()
            .find(|(_, s)| s.iter().any(|&t| t as usize >= n_tokens))
        {
            return Err(Error::Config(format!(
                "word `{}` uses token {:?} outside the {n_tokens} model outputs",
                lexicon.word(*w).unwrap_or("?"),
                s
            )));
        }
        let trie = LexiconTrie::build(&lexicon);
        let lm_words = lexicon.words().iter().map(|w| lm.word_or_unk(w)).collect();
        let lm_base = trie.footprint().div_ceil(4096) * 4096;
        Ok(Self {
            lexicon,
            trie,
            lm,
            lm_words,
            n_tokens,
            params,
            input,
            input_spec,
            reader,
            lm_base,
            trace: false,
        })
    }

    /// Records a history entry for every submission, not only for word
    /// emissions, so scores can be recomputed along backlinks.
    pub fn with_trace(mut self, trace: bool) -> Self {
        self.trace = trace;
        self
    }

    pub fn trie(&self) -> &LexiconTrie {
        &self.trie
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn lm(&self) -> &NGramLm {
        &self.lm
    }

    pub fn params(&self) -> &DecodeParams {
        &self.params
    }

    /// Submissions an expansion of `hyp` produces.
    pub fn fan_out(&self, hyp: &Hypothesis) -> usize {
        let blank = self.params.blank;
        let node = self.trie.node(hyp.lexicon_node);
        let children: usize = node
            .children
            .iter()
            .filter(|(t, _)| hyp.last_token == blank || *t != hyp.last_token)
            .map(|&(_, c)| {
                let c = self.trie.node(c);
                c.words.len() + usize::from(c.words.is_empty() || !c.children.is_empty())
            })
            .sum();
        children + if hyp.last_token == blank { 1 } else { 2 }
    }

    fn submit(
        &self,
        out: &mut Expansion,
        pe: &mut PeContext<'_>,
        parent: &Hypothesis,
        hyp: Hypothesis,
        entry: HistoryEntry,
    ) {
        pe.store(6);
        let history = if entry.word.is_some() || self.trace {
            pe.store(5);
            Some(entry)
        } else {
            None
        };
        debug_assert_eq!(entry.prev, parent.backlink);
        out.submissions.push(Submission { hyp, history });
    }

    fn charge_hash(pe: &mut PeContext<'_>) {
        pe.add(8);
        pe.mul(8);
    }
}

impl ExpansionKernel for CtcDecoder {
    fn name(&self) -> &str {
        "ctc-expand"
    }

    fn buffers(&self) -> Vec<BufferDecl> {
        vec![BufferDecl {
            id: self.input,
            spec: self.input_spec,
            readers: vec![self.reader],
        }]
    }

    fn seed(&self) -> Hypothesis {
        Hypothesis {
            hash: with_blank(FNV_OFFSET),
            score: 0.0,
            lexicon_node: ROOT,
            lm_state: self.lm.start_state(),
            backlink: NO_HISTORY,
            last_token: self.params.blank,
        }
    }

    fn setup(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<u32, Fault> {
        let buf = machine.shared.get(self.input)?;
        pe.load(2);
        pe.add(1);
        let n = buf.written().saturating_sub(state.produced);
        state.launch_base = state.produced;
        state.launch_items = n;
        state.scratch.clear();
        // Log-normaliser of each vector: a max pass, then a sum of
        // exponentials and one logarithm.
        let len = self.n_tokens as u64;
        let c = *pe.costs();
        for v in 0..n {
            let logits = buf.item_f32(state.launch_base + v)?;
            pe.counted_loop(len, c.load + c.compare + c.branch);
            pe.loop_init();
            pe.loop_iterations(len);
            for _ in 0..len {
                pe.load(1);
                pe.add(2);
                pe.sfu_eval(SfuOp::Exp, 0.0)?;
            }
            pe.sfu_eval(SfuOp::Log, 1.0)?;
            pe.add(1);
            pe.store(1);
            state.scratch.push(crate::model::log_sum_exp(logits));
        }
        Ok(n as u32)
    }

    fn thread(
        &self,
        vector: u32,
        hyp: &Hypothesis,
        machine: &Machine,
        state: &KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<Expansion, Fault> {
        let logits = machine
            .shared
            .get(self.input)?
            .item_f32(state.launch_base + u64::from(vector))?;
        let log_z = *state
            .scratch
            .get(vector as usize)
            .ok_or_else(|| Fault::Logic(format!("no normaliser for vector {vector}")))?;
        let lp = |t: u32| -> Result<f64, Fault> {
            logits
                .get(t as usize)
                .map(|&x| f64::from(x) - log_z)
                .ok_or(Fault::TokenOutOfRange { token: t, len: logits.len() })
        };
        let node_id = hyp.lexicon_node;
        let node = self
            .trie
            .get(node_id)
            .ok_or_else(|| Fault::Logic(format!("lexicon node {node_id} does not exist")))?;
        let blank = self.params.blank;
        let mut out = Expansion::default();
        out.accesses.push((self.trie.address(node_id), NODE_HEADER_BYTES));
        pe.load(8);

        let entry = |token: u32, acoustic: f64| HistoryEntry {
            prev: hyp.backlink,
            word: None,
            token,
            acoustic,
            lm: 0.0,
        };

        // Blank: same labeling, now ending in blank.
        let a = lp(blank)?;
        pe.load(1);
        pe.add(3);
        let h = Hypothesis { hash: with_blank(hyp.hash), score: hyp.score + a, last_token: blank, ..*hyp };
        self.submit(&mut out, pe, hyp, h, entry(blank, a));

        // Repeat of the last token collapses onto the same labeling.
        pe.compare(1);
        pe.branch(1);
        if hyp.last_token != blank {
            let a = lp(hyp.last_token)?;
            pe.load(1);
            pe.add(2);
            let h = Hypothesis { score: hyp.score + a, ..*hyp };
            self.submit(&mut out, pe, hyp, h, entry(hyp.last_token, a));
        }

        pe.loop_init();
        pe.loop_iterations(node.children.len() as u64);
        for (i, &(token, child)) in node.children.iter().enumerate() {
            out.accesses.push((
                self.trie.address(node_id) + NODE_HEADER_BYTES + CHILD_LINK_BYTES * i as u64,
                CHILD_LINK_BYTES,
            ));
            pe.load(2);
            pe.compare(1);
            pe.branch(1);
            // A doubled token needs a blank in between.
            if hyp.last_token != blank && token == hyp.last_token {
                continue;
            }
            let a = lp(token)?;
            pe.load(1);
            pe.add(2);
            let score = hyp.score + a;
            let hash = extend_with_token(hyp.hash, token);
            Self::charge_hash(pe);
            let cnode = self.trie.node(child);
            out.accesses.push((self.trie.address(child), NODE_HEADER_BYTES));
            pe.load(1);
            pe.compare(1);
            pe.branch(1);

            pe.loop_init();
            pe.loop_iterations(cnode.words.len() as u64);
            for &w in &cnode.words {
                pe.load(1);
                let r = self.lm.lookup(hyp.lm_state, self.lm_words[w as usize]);
                for &slot in &r.probed {
                    out.accesses.push((self.lm_base + LM_ENTRY_BYTES * u64::from(slot), LM_ENTRY_BYTES));
                }
                pe.load(2 * r.probed.len() as u64);
                pe.add(r.probed.len() as u64);
                pe.compare(r.probed.len() as u64);
                pe.branch(r.probed.len() as u64);
                pe.mul(1);
                pe.add(2);
                Self::charge_hash(pe);
                let h = Hypothesis {
                    hash: extend_with_word(hash, w),
                    score: score + self.params.lm_weight * r.score + self.params.word_penalty,
                    lexicon_node: ROOT,
                    lm_state: r.state,
                    backlink: hyp.backlink,
                    last_token: token,
                };
                let e = HistoryEntry { word: Some(w), lm: r.score, ..entry(token, a) };
                self.submit(&mut out, pe, hyp, h, e);
            }
            if cnode.words.is_empty() || !cnode.children.is_empty() {
                let h = Hypothesis { hash, score, lexicon_node: child, last_token: token, ..*hyp };
                self.submit(&mut out, pe, hyp, h, entry(token, a));
            }
        }
        debug_assert_eq!(out.submissions.len(), self.fan_out(hyp));
        Ok(out)
    }

    fn complete(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        vectors: u32,
    ) -> Result<(), Fault> {
        machine
            .shared
            .consume_inputs(self.input, self.reader, u64::from(vectors))?;
        state.produced += u64::from(vectors);
        Ok(())
    }

    fn transcript(&self, store: &HypothesisStore, hyp: &Hypothesis) -> Result<Vec<String>, Fault> {
        let mut words = Vec::new();
        let mut link = hyp.backlink;
        let mut hops = 0usize;
        while link != NO_HISTORY {
            let e = store
                .history(link)
                .ok_or_else(|| Fault::Logic(format!("broken backlink {link}")))?;
            if let Some(w) = e.word {
                words.push(self.lexicon.word(w).unwrap_or("<?>").to_string());
            }
            hops += 1;
            if hops > store.history_len() {
                return Err(Fault::Logic("backlink chain has a cycle".into()));
            }
            link = e.prev;
        }
        words.reverse();
        Ok(words)
    }
}
