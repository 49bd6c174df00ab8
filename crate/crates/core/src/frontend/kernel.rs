//! Feature-extraction kernel: one thread per MFCC frame.

use super::{FrontendParams, MfccExtractor};
use crate::cost::PeContext;
use crate::error::Fault;
use crate::kernel::{
    AcousticKernel, BufferDecl, KernelClass, KernelState, Machine, ThreadOutput,
};
use crate::memory::{Blob, BufferId, BufferSpec, ElemType};

#[derive(Debug, Clone)]
pub struct MfccKernel {
    extractor: MfccExtractor,
    output: BufferId,
    capacity_items: u64,
}

impl MfccKernel {
    pub fn new(params: FrontendParams, output: BufferId, capacity_items: u64) -> Self {
        Self {
            extractor: MfccExtractor::new(params),
            output,
            capacity_items,
        }
    }

    pub fn params(&self) -> &FrontendParams {
        self.extractor.params()
    }

    pub fn output_spec(&self) -> BufferSpec {
        BufferSpec {
            item_len: self.params().n_coeffs(),
            elem: ElemType::F32,
            capacity_items: self.capacity_items,
        }
    }
}

impl AcousticKernel for MfccKernel {
    fn name(&self) -> &str {
        "mfcc"
    }

    fn class(&self) -> KernelClass {
        KernelClass::Frontend
    }

    fn buffers(&self) -> Vec<BufferDecl> {
        vec![BufferDecl {
            id: self.output,
            spec: self.output_spec(),
            readers: Vec::new(),
        }]
    }

    fn model_blob(&self) -> Option<Blob> {
        None
    }

    fn setup(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<u32, Fault> {
        // Read the sample count and the frames emitted so far, derive the
        // frame total, and write the launch parameters.
        pe.load(2);
        pe.add(2);
        pe.mul(1);
        pe.compare(1);
        pe.branch(1);
        let total = self.params().frames_for(machine.signal.received());
        let n = total.saturating_sub(state.produced);
        state.launch_base = state.produced;
        state.launch_items = n;
        if n == 0 {
            return Ok(0);
        }
        pe.store(2);
        machine.shared.reserve_output(self.output, n)?;
        Ok(n as u32)
    }

    fn thread(
        &self,
        thread_id: u32,
        machine: &Machine,
        state: &KernelState,
        pe: &mut PeContext<'_>,
    ) -> Result<ThreadOutput, Fault> {
        let p = self.params();
        let frame = state.launch_base + u64::from(thread_id);
        let start = frame * p.frame_shift() as u64;
        let samples = machine.signal.window(start, p.frame_len())?;
        let coeffs = self.extractor.frame(samples, pe)?;
        pe.store(coeffs.len() as u64);
        Ok(coeffs)
    }

    fn complete(
        &self,
        machine: &mut Machine,
        state: &mut KernelState,
        outputs: Vec<ThreadOutput>,
    ) -> Result<(), Fault> {
        let buf = machine.shared.get_mut(self.output)?;
        for (i, coeffs) in outputs.iter().enumerate() {
            buf.write_item(state.launch_base + i as u64, coeffs)?;
        }
        buf.commit(outputs.len() as u64)?;
        state.produced += outputs.len() as u64;
        // Samples before the next frame's start are never read again.
        let next_start = state.produced * self.params().frame_shift() as u64;
        machine.signal.release_before(next_start);
        Ok(())
    }
}
