//! Shared scratchpad, model memory and the expansion-phase data cache.

mod buffer;
mod cache;
mod model;

pub use buffer::{
    BufferId, BufferOccupancy, BufferSpec, ElemType, ReaderId, SharedMemory, TensorBuffer,
};
pub use cache::{CacheStats, LruCacheModel};
pub use model::{Blob, BlobId, MemoryMode, ModelMemory};
