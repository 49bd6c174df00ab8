//! Hypothesis unit: collects expanded hypotheses, merges duplicates,
//! beam-prunes and keeps the survivors across decoding steps.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Fault, Result};

/// Bytes of one record in hypothesis memory: hash 8, score 4, lexicon node
/// 4, LM state 4, backlink 4.
pub const RECORD_BYTES: u64 = 24;

/// Backlink of a hypothesis with no recorded history.
pub const NO_HISTORY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hypothesis {
    pub hash: u64,
    pub score: f64,
    pub lexicon_node: u32,
    pub lm_state: u32,
    pub backlink: u32,
    pub last_token: u32,
}

/// One entry of the host-side history arena.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub prev: u32,
    pub word: Option<u32>,
    pub token: u32,
    /// Acoustic score added by this transition.
    pub acoustic: f64,
    /// Language-model log10 score added by this transition (unweighted).
    pub lm: f64,
}

/// A hypothesis sent by an expansion thread. When `history` is present the
/// unit appends it to the arena and points the hypothesis' backlink at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Submission {
    pub hyp: Hypothesis,
    pub history: Option<HistoryEntry>,
}

/// How duplicate hypotheses (same hash) are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergePolicy {
    /// Keep the best-scoring duplicate.
    #[default]
    Max,
    /// Sum the duplicates' probabilities; fields come from the best one.
    LogSumExp,
}

/// Ranking order of the active set: higher score first, then smaller hash.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then(a.hash.cmp(&b.hash))
}

#[derive(Debug, Clone)]
pub struct HypothesisStore {
    capacity_records: usize,
    merge: MergePolicy,
    active: Vec<Hypothesis>,
    incoming: Vec<Hypothesis>,
    arena: Vec<HistoryEntry>,
    peak_incoming: usize,
}

impl HypothesisStore {
    pub fn new(capacity_records: usize, merge: MergePolicy) -> Self {
        Self {
            capacity_records,
            merge,
            active: Vec::new(),
            incoming: Vec::new(),
            arena: Vec::new(),
            peak_incoming: 0,
        }
    }

    /// Capacity derived from a hypothesis-memory size.
    pub fn with_memory(hyp_mem_bytes: u64, merge: MergePolicy) -> Self {
        Self::new((hyp_mem_bytes / RECORD_BYTES) as usize, merge)
    }

    pub fn capacity_records(&self) -> usize {
        self.capacity_records
    }

    pub fn set_capacity(&mut self, capacity_records: usize) {
        self.capacity_records = capacity_records;
    }

    pub fn set_merge_policy(&mut self, merge: MergePolicy) {
        self.merge = merge;
    }

    /// Drops everything and installs `seed` as the only active hypothesis.
    pub fn reset(&mut self, seed: Hypothesis) {
        self.active.clear();
        self.active.push(seed);
        self.incoming.clear();
        self.arena.clear();
        self.peak_incoming = 0;
    }

    pub fn active(&self) -> &[Hypothesis] {
        &self.active
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn incoming_count(&self) -> usize {
        self.incoming.len()
    }

    pub fn peak_incoming(&self) -> usize {
        self.peak_incoming
    }

    pub fn history(&self, index: u32) -> Option<&HistoryEntry> {
        self.arena.get(index as usize)
    }

    pub fn history_len(&self) -> usize {
        self.arena.len()
    }

    pub fn submit(&mut self, sub: Submission) -> Result<(), Fault> {
        if !sub.hyp.score.is_finite() {
            return Err(Fault::NonFiniteScore);
        }
        let mut hyp = sub.hyp;
        if let Some(entry) = sub.history {
            hyp.backlink = self.arena.len() as u32;
            self.arena.push(entry);
        }
        self.incoming.push(hyp);
        self.peak_incoming = self.peak_incoming.max(self.incoming.len());
        Ok(())
    }

    /// Merges, prunes and installs the incoming set as the new active set.
    /// Returns the number of survivors.
    pub fn finalize_step(&mut self, beam: f64) -> Result<usize> {
        if self.incoming.is_empty() {
            return Err(Error::Simulation(
                "hypothesis unit finalised with no incoming hypotheses".into(),
            ));
        }
        let mut incoming = std::mem::take(&mut self.incoming);
        incoming.sort_by(|a, b| {
            a.hash
                .cmp(&b.hash)
                .then(b.score.total_cmp(&a.score))
                .then(a.backlink.cmp(&b.backlink))
        });
        let mut merged: Vec<Hypothesis> = Vec::with_capacity(incoming.len());
        for h in incoming {
            match merged.last_mut() {
                Some(last) if last.hash == h.hash => {
                    if self.merge == MergePolicy::LogSumExp {
                        last.score = log_add(last.score, h.score);
                    }
                }
                _ => merged.push(h),
            }
        }
        let best = merged
            .iter()
            .map(|h| h.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = best - beam;
        merged.retain(|h| h.score >= threshold);
        merged.sort_by(rank);
        merged.truncate(self.capacity_records.max(1));
        self.active = merged;
        Ok(self.active.len())
    }

    pub fn best_hypothesis(&self) -> Result<&Hypothesis> {
        self.active
            .iter()
            .min_by(|a, b| rank(a, b))
            .ok_or_else(|| Error::Simulation("hypothesis store is empty".into()))
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}
