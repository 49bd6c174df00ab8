//! Fully associative LRU cache model used for graph accesses during
//! hypothesis expansion. Statistics only; it never changes timing.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> f64 {
        if self.accesses() == 0 {
            0.0
        } else {
            self.hits as f64 / self.accesses() as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct LruCacheModel {
    capacity_lines: usize,
    line_bytes: u64,
    clock: u64,
    stamp_of: HashMap<u64, u64>,
    by_stamp: BTreeMap<u64, u64>,
    stats: CacheStats,
}

impl LruCacheModel {
    pub fn new(capacity_bytes: u64, line_bytes: u64) -> Self {
        Self {
            capacity_lines: (capacity_bytes / line_bytes).max(1) as usize,
            line_bytes,
            clock: 0,
            stamp_of: HashMap::new(),
            by_stamp: BTreeMap::new(),
            stats: CacheStats::default(),
        }
    }

    pub fn capacity_lines(&self) -> usize {
        self.capacity_lines
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    /// Touches every line overlapping `[address, address + size)`. Returns
    /// true when all of them hit.
    pub fn access(&mut self, address: u64, size: u64) -> bool {
        let first = address / self.line_bytes;
        let last = (address + size.max(1) - 1) / self.line_bytes;
        let mut all_hit = true;
        for line in first..=last {
            all_hit &= self.touch(line);
        }
        all_hit
    }

    fn touch(&mut self, line: u64) -> bool {
        self.clock += 1;
        let hit = match self.stamp_of.insert(line, self.clock) {
            Some(old) => {
                self.by_stamp.remove(&old);
                true
            }
            None => false,
        };
        self.by_stamp.insert(self.clock, line);
        if hit {
            self.stats.hits += 1;
        } else {
            self.stats.misses += 1;
            if self.stamp_of.len() > self.capacity_lines {
                let (_, victim) = self.by_stamp.pop_first().expect("non-empty");
                self.stamp_of.remove(&victim);
            }
        }
        hit
    }

    /// Drops all contents; counters are kept.
    pub fn flush(&mut self) {
        self.stamp_of.clear();
        self.by_stamp.clear();
    }

    pub fn reset_stats(&mut self) {
        self.stats = CacheStats::default();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Stack-distance oracle: a line hits iff fewer than `capacity`
    /// distinct lines were touched since its previous access.
    fn oracle_hits(trace: &[u64], capacity: usize) -> Vec<bool> {
        let mut stack: Vec<u64> = Vec::new();
        trace
            .iter()
            .map(|&line| {
                let hit = match stack.iter().rposition(|&l| l == line) {
                    Some(pos) => {
                        let distance = stack.len() - 1 - pos;
                        stack.remove(pos);
                        distance < capacity
                    }
                    None => false,
                };
                stack.push(line);
                hit
            })
            .collect()
    }

    #[test]
    fn repeated_access_hits() {
        let mut c = LruCacheModel::new(1024, 64);
        assert!(!c.access(128, 8));
        assert!(c.access(130, 4));
    }

    #[test]
    fn working_set_fits() {
        let mut c = LruCacheModel::new(64 * 16, 64);
        for _ in 0..3 {
            for l in 0..16 {
                c.access(l * 64, 1);
            }
        }
        assert_eq!(c.stats(), CacheStats { hits: 32, misses: 16 });
    }

    #[test]
    fn random_trace_hit_rate_follows_footprint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (cap, footprint) = (256usize, 4096u64);
        let trace: Vec<u64> = (0..50_000).map(|_| rng.gen_range(0..footprint)).collect();
        let mut c = LruCacheModel::new(cap as u64 * 64, 64);
        let got: Vec<bool> = trace.iter().map(|&l| c.access(l * 64, 1)).collect();
        assert_eq!(got, oracle_hits(&trace, cap));
        let rate = c.stats().hit_rate();
        let expect = cap as f64 / footprint as f64;
        assert!((rate - expect).abs() < 0.01, "{rate} vs {expect}");
    }

    proptest! {
        #[test]
        fn matches_stack_distance(trace in prop::collection::vec(0u64..40, 0..400), cap in 1usize..24) {
            let mut c = LruCacheModel::new(cap as u64 * 32, 32);
            let got: Vec<bool> = trace.iter().map(|&l| c.access(l * 32, 1)).collect();
            prop_assert_eq!(got, oracle_hits(&trace, cap));
        }
    }
}
