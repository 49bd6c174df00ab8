//! Kernel routines and the machine state they operate on.
//!
//! A kernel pairs a setup routine, run once in a single thread, with a
//! thread routine launched as many times as the setup returned. Kernel
//! threads only read machine state; their outputs are written to the
//! slots the setup reserved when the kernel completes.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::config::AcceleratorConfig;
use crate::cost::PeContext;
use crate::error::Fault;
use crate::hypothesis::{Hypothesis, HypothesisStore, MergePolicy, Submission};
use crate::memory::{
    Blob, BufferId, BufferSpec, LruCacheModel, ModelMemory, ReaderId, SharedMemory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelClass {
    Frontend,
    Conv,
    Fc,
    LayerNorm,
    HypExpansion,
}

impl KernelClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelClass::Frontend => "frontend",
            KernelClass::Conv => "conv",
            KernelClass::Fc => "fc",
            KernelClass::LayerNorm => "layer-norm",
            KernelClass::HypExpansion => "hyp-expansion",
        }
    }

    /// Reporting group: convolutions are shown with hypothesis expansion,
    /// fully connected layers with feature extraction.
    pub fn group(&self) -> &'static str {
        match self {
            KernelClass::Conv | KernelClass::HypExpansion => "conv+hyp",
            KernelClass::Fc | KernelClass::Frontend => "fc+frontend",
            KernelClass::LayerNorm => "layernorm",
        }
    }
}

/// A buffer a kernel touches, with the readers it registers.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferDecl {
    pub id: BufferId,
    pub spec: BufferSpec,
    pub readers: Vec<ReaderId>,
}

/// Audio samples received but not yet released by feature extraction.
/// They live in external memory, outside the shared scratchpad.
#[derive(Debug, Clone, Default)]
pub struct SignalQueue {
    base: u64,
    samples: Vec<f32>,
}

impl SignalQueue {
    pub fn push(&mut self, chunk: &[f32]) {
        self.samples.extend_from_slice(chunk);
    }

    /// Total samples received since the queue was last cleared.
    pub fn received(&self) -> u64 {
        self.base + self.samples.len() as u64
    }

    pub fn pending(&self) -> usize {
        self.samples.len()
    }

    pub fn window(&self, start: u64, len: usize) -> Result<&[f32], Fault> {
        if start < self.base || start + len as u64 > self.received() {
            return Err(Fault::InputNotLive(start));
        }
        let off = (start - self.base) as usize;
        Ok(&self.samples[off..off + len])
    }

    /// Frees every sample before absolute index `upto`.
    pub fn release_before(&mut self, upto: u64) {
        if upto > self.base {
            let n = ((upto - self.base) as usize).min(self.samples.len());
            self.samples.drain(..n);
            self.base += n as u64;
        }
    }

    pub fn clear(&mut self) {
        self.base = 0;
        self.samples.clear();
    }
}

/// Functional state shared by all kernels.
#[derive(Debug, Clone)]
pub struct Machine {
    pub shared: SharedMemory,
    pub model: ModelMemory,
    pub cache: LruCacheModel,
    pub hyps: HypothesisStore,
    pub signal: SignalQueue,
}

impl Machine {
    pub fn new(config: &AcceleratorConfig, merge: MergePolicy) -> Self {
        Self {
            shared: SharedMemory::new(config.shared_mem_bytes),
            model: ModelMemory::new(config.model_mem_bytes, config.dma_bytes_per_cycle),
            cache: LruCacheModel::new(config.model_mem_bytes, config.cache_line_bytes),
            hyps: HypothesisStore::with_memory(config.hyp_mem_bytes, merge),
            signal: SignalQueue::default(),
        }
    }
}

/// Per-utterance state a kernel keeps in shared memory between steps,
/// plus the launch parameters its setup writes for the kernel threads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KernelState {
    /// Output items produced so far in this utterance.
    pub produced: u64,
    /// First output item of the current launch.
    pub launch_base: u64,
    /// Output items of the current launch.
    pub launch_items: u64,
    /// Free-form parameters computed by the setup routine.
    pub scratch: Vec<f64>,
}

pub type ThreadOutput = Vec<f32>;

pub trait AcousticKernel: Send + Sync {
    fn name(&self) -> &str;

    fn class(&self) -> KernelClass;

    fn buffers(&self) -> Vec<BufferDecl>;

    /// Model data DMA'd into model memory before the threads run.
    fn model_blob(&self) -> Option<Blob>;

    /// Runs the setup routine: checks available inputs, reserves outputs and
    /// returns the number of kernel threads. Zero stops the decoding step.
    fn setup(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<u32, Fault>;

    fn thread(
        &self,
        thread_id: u32,
        machine: &Machine,
        state: &KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<ThreadOutput, Fault>;

    /// Stores thread outputs (in thread order) and retires consumed inputs.
    fn complete(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        outputs: Vec<ThreadOutput>,
    ) -> Result<(), Fault>;
}

/// Result of expanding one hypothesis against one score vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub submissions: Vec<Submission>,
    /// Graph reads as `(address, bytes)`, replayed through the data cache.
    pub accesses: Vec<(u64, u64)>,
}

pub trait ExpansionKernel: Send + Sync {
    fn name(&self) -> &str;

    fn buffers(&self) -> Vec<BufferDecl>;

    /// The hypothesis installed by a clean decoding command.
    fn seed(&self) -> Hypothesis;

    /// Returns how many score vectors are ready, i.e. how many times the
    /// expansion kernel repeats in this step.
    fn setup(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<u32, Fault>;

    fn thread(
        &self,
        vector: u32,
        hyp: &Hypothesis,
        machine: &Machine,
        state: &KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<Expansion, Fault>;

    /// Retires the `vectors` score vectors processed in this step.
    fn complete(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        vectors: u32,
    ) -> Result<(), Fault>;

    /// Words emitted along the history of `hyp`, in utterance order.
    fn transcript(&self, store: &HypothesisStore, hyp: &Hypothesis) -> Result<Vec<String>, Fault>;
}

/// One acoustic-scoring slot: setup and kernel routine.
#[derive(Clone)]
pub struct KernelDescriptor {
    pub routine: Arc<dyn AcousticKernel>,
}

impl KernelDescriptor {
    pub fn new(routine: Arc<dyn AcousticKernel>) -> Self {
        Self { routine }
    }

    pub fn name(&self) -> &str {
        self.routine.name()
    }
}

impl fmt::Debug for KernelDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelDescriptor")
            .field("name", &self.routine.name())
            .field("class", &self.routine.class())
            .finish()
    }
}

/// The two decoding phases as configured on the accelerator.
#[derive(Clone)]
pub struct PhaseProgram {
    pub acoustic_scoring: Vec<KernelDescriptor>,
    pub hyp_expansion: Arc<dyn ExpansionKernel>,
}

impl fmt::Debug for PhaseProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseProgram")
            .field("acoustic_scoring", &self.acoustic_scoring)
            .field("hyp_expansion", &self.hyp_expansion.name())
            .finish()
    }
}
