//! Model memory: weights for the running acoustic kernel, loaded by DMA.

use serde::Serialize;

use crate::error::Fault;

pub type BlobId = u32;

/// A contiguous region of model data in external memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Blob {
    pub id: BlobId,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryMode {
    /// Holds prefetched weights during acoustic scoring.
    Model,
    /// Acts as an LRU data cache during hypothesis expansion.
    Cache,
}

#[derive(Debug, Clone)]
pub struct ModelMemory {
    capacity: u64,
    bytes_per_cycle: u64,
    resident: Option<Blob>,
    dma_busy_until: u64,
    mode: MemoryMode,
    dma_bytes_total: u64,
}

impl ModelMemory {
    pub fn new(capacity: u64, bytes_per_cycle: u64) -> Self {
        Self {
            capacity,
            bytes_per_cycle,
            resident: None,
            dma_busy_until: 0,
            mode: MemoryMode::Model,
            dma_bytes_total: 0,
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn resident(&self) -> Option<Blob> {
        self.resident
    }

    pub fn is_resident(&self, id: BlobId) -> bool {
        self.mode == MemoryMode::Model && self.resident.map(|b| b.id) == Some(id)
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    pub fn dma_bytes_total(&self) -> u64 {
        self.dma_bytes_total
    }

    /// Cycle counters restart with every decoding step.
    pub fn begin_step(&mut self) {
        self.dma_busy_until = 0;
    }

    /// Loads `blob`, returning the cycle at which it is usable. A blob that
    /// is already resident is available immediately.
    pub fn dma_prefetch(&mut self, blob: Blob, issue_cycle: u64) -> Result<u64, Fault> {
        if blob.bytes > self.capacity {
            return Err(Fault::Capacity(format!(
                "model blob {} of {} bytes exceeds model memory of {} bytes",
                blob.id, blob.bytes, self.capacity
            )));
        }
        if self.mode == MemoryMode::Cache {
            self.mode = MemoryMode::Model;
        }
        if self.resident == Some(blob) {
            return Ok(issue_cycle);
        }
        let start = issue_cycle.max(self.dma_busy_until);
        let done = start + blob.bytes.div_ceil(self.bytes_per_cycle);
        self.dma_busy_until = done;
        self.resident = Some(blob);
        self.dma_bytes_total += blob.bytes;
        Ok(done)
    }

    /// Switches to cache mode, dropping the resident weights.
    pub fn enter_cache_mode(&mut self) {
        self.mode = MemoryMode::Cache;
        self.resident = None;
    }

    pub fn enter_model_mode(&mut self) {
        self.mode = MemoryMode::Model;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MIB;

    #[test]
    fn partition_fits_whole_layer_does_not() {
        let mut mm = ModelMemory::new(MIB, 8);
        let done = mm.dma_prefetch(Blob { id: 1, bytes: 720_000 }, 100).unwrap();
        assert_eq!(done, 100 + 90_000);
        let err = mm.dma_prefetch(Blob { id: 2, bytes: 1_440_000 }, 0).unwrap_err();
        assert!(matches!(err, Fault::Capacity(_)));
    }

    #[test]
    fn resident_blob_is_a_hit() {
        let mut mm = ModelMemory::new(MIB, 8);
        let b = Blob { id: 3, bytes: 4096 };
        mm.dma_prefetch(b, 0).unwrap();
        mm.begin_step();
        assert_eq!(mm.dma_prefetch(b, 7).unwrap(), 7);
        assert!(mm.is_resident(3));
    }

    #[test]
    fn cache_mode_flushes() {
        let mut mm = ModelMemory::new(MIB, 8);
        let b = Blob { id: 3, bytes: 4096 };
        mm.dma_prefetch(b, 0).unwrap();
        mm.enter_cache_mode();
        assert!(!mm.is_resident(3));
        assert!(mm.dma_prefetch(b, 0).unwrap() > 0);
    }
}
