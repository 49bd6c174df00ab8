//! Parameterized CONV, FC and LayerNorm kernels. One routine per layer
//! kind, specialized by [`LayerParams`].
//!
//! Conv and FC threads compute one output neuron of one frame; LayerNorm
//! threads normalize one frame. Thread ids run frame-major.

use std::borrow::Cow;
use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;

use super::descriptor::{ConvSpec, FcSpec, LayerNormSpec};
use super::quant::quantize_value;
use super::weights::LayerWeights;
use crate::cost::{PeContext, SfuOp};
use crate::error::Fault;
use crate::kernel::{AcousticKernel, BufferDecl, KernelClass, KernelState, Machine, ThreadOutput};
use crate::memory::{Blob, BufferId, BufferSpec, ElemType, ReaderId, TensorBuffer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InputBinding {
    pub buffer: BufferId,
    pub reader: ReaderId,
    pub spec: BufferSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutputBinding {
    pub buffer: BufferId,
    pub spec: BufferSpec,
}

/// The parameter record a kernel's threads read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerParams {
    pub layer: usize,
    pub input: InputBinding,
    /// Quantization step for real-valued input; int8 input carries its own.
    pub f32_input_scale: f32,
    pub residual: Option<InputBinding>,
    pub output: OutputBinding,
    /// Output neurons this kernel computes.
    pub neurons: Range<usize>,
    /// The first partition of a layer reserves the output slots; the last
    /// one commits them and consumes the inputs.
    pub first_partition: bool,
    pub last_partition: bool,
    pub blob: Blob,
}

impl LayerParams {
    fn input_scale(&self) -> f32 {
        match self.input.spec.elem {
            ElemType::I8 { scale } => scale,
            ElemType::F32 => self.f32_input_scale,
        }
    }

    fn check_resident(&self, machine: &Machine) -> Result<(), Fault> {
        if machine.model.is_resident(self.blob.id) {
            Ok(())
        } else {
            Err(Fault::WeightsNotResident(self.blob.id))
        }
    }

    fn decls(&self) -> Vec<BufferDecl> {
        let mut v = vec![
            BufferDecl { id: self.input.buffer, spec: self.input.spec, readers: vec![self.input.reader] },
            BufferDecl { id: self.output.buffer, spec: self.output.spec, readers: Vec::new() },
        ];
        if let Some(r) = self.residual {
            v.push(BufferDecl { id: r.buffer, spec: r.spec, readers: vec![r.reader] });
        }
        v
    }

    /// Reserves `n` output items on the first partition and records the
    /// launch.
    fn launch(&self, machine: &mut Machine, state: &mut KernelState, n: u64) -> Result<(), Fault> {
        state.launch_base = state.produced;
        state.launch_items = n;
        if n > 0 && self.first_partition {
            let base = machine.shared.reserve_output(self.output.buffer, n)?;
            if base != state.produced {
                return Err(Fault::Logic(format!(
                    "layer {}: output slot {base} reserved, {} expected",
                    self.layer, state.produced
                )));
            }
        }
        Ok(())
    }

    /// Writes one value per thread into this kernel's neuron range.
    fn write_neurons(&self, machine: &mut Machine, state: &KernelState, outputs: &[ThreadOutput]) -> Result<(), Fault> {
        let len = self.neurons.len();
        let buf = machine.shared.get_mut(self.output.buffer)?;
        for (tid, v) in outputs.iter().enumerate() {
            let frame = state.launch_base + (tid / len) as u64;
            buf.write(frame, self.neurons.start + tid % len, v[0])?;
        }
        Ok(())
    }

    fn finish(&self, machine: &mut Machine, state: &mut KernelState, consume_to: u64) -> Result<(), Fault> {
        if self.last_partition {
            machine.shared.commit(self.output.buffer, state.launch_items)?;
            consume_until(machine, self.input, consume_to)?;
            if let Some(r) = self.residual {
                consume_until(machine, r, state.produced + state.launch_items)?;
            }
        }
        state.produced += state.launch_items;
        Ok(())
    }
}

fn consume_until(machine: &mut Machine, input: InputBinding, upto: u64) -> Result<(), Fault> {
    let buf = machine.shared.get(input.buffer)?;
    let pos = buf
        .reader_position(input.reader)
        .ok_or_else(|| Fault::Logic(format!("reader {} not registered", input.reader)))?;
    if upto > pos {
        machine.shared.consume_inputs(input.buffer, input.reader, upto - pos)?;
    }
    Ok(())
}

/// Charge of a setup routine: read the stream counters, compute the launch
/// size, reserve outputs and write the launch record.
fn charge_setup(pe: &mut PeContext<'_>) {
    pe.load(4);
    pe.add(3);
    pe.mul(1);
    pe.compare(1);
    pe.branch(1);
    pe.store(3);
}

/// Int8 view of `range` of an input item, quantizing real-valued input.
fn int8_slice<'a>(
    buf: &'a TensorBuffer,
    index: u64,
    range: Range<usize>,
    scale: f32,
    pe: &mut PeContext<'_>,
) -> Result<Cow<'a, [i8]>, Fault> {
    match buf.elem() {
        ElemType::I8 { .. } => Ok(Cow::Borrowed(&buf.item_i8(index)?[range])),
        ElemType::F32 => {
            let c = *pe.costs();
            pe.counted_loop(range.len() as u64, c.load + c.mul + c.add + 2 * c.compare + c.store);
            Ok(Cow::Owned(
                buf.item_f32(index)?[range].iter().map(|&x| quantize_value(x, scale)).collect(),
            ))
        }
    }
}

/// `acc + a . b` in lane-width chunks: two vector loads and one MAC each.
fn dot(pe: &mut PeContext<'_>, mut acc: i32, a: &[i8], b: &[i8]) -> i32 {
    let lanes = pe.lanes();
    pe.loop_init();
    pe.loop_iterations(a.len().div_ceil(lanes) as u64);
    for (x, y) in a.chunks(lanes).zip(b.chunks(lanes)) {
        pe.load(2);
        acc = pe.vector_mac(acc, x, y);
    }
    acc
}

/// Scale, bias, activation, residual and output quantization of one
/// neuron, then the store.
fn epilogue(
    pe: &mut PeContext<'_>,
    acc: i32,
    scale: f32,
    bias: f32,
    relu: bool,
    residual: Option<f32>,
    out: ElemType,
) -> f32 {
    pe.load(1);
    pe.add(2);
    pe.mul(1);
    let mut v = acc as f32 * scale + bias;
    if relu {
        pe.compare(1);
        pe.branch(1);
        v = v.max(0.0);
    }
    if let Some(r) = residual {
        pe.load(1);
        pe.mul(1);
        pe.add(1);
        v += r;
    }
    if let ElemType::I8 { scale } = out {
        pe.mul(1);
        pe.add(1);
        pe.compare(2);
        v = f32::from(quantize_value(v, scale));
    }
    pe.store(1);
    v
}

#[derive(Debug, Clone)]
pub struct ConvKernel {
    name: String,
    spec: ConvSpec,
    weights: Arc<LayerWeights>,
    params: LayerParams,
}

impl ConvKernel {
    pub fn new(name: String, spec: ConvSpec, weights: Arc<LayerWeights>, params: LayerParams) -> Self {
        Self { name, spec, weights, params }
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }
}

impl AcousticKernel for ConvKernel {
    fn name(&self) -> &str {
        &self.name
    }

    fn class(&self) -> KernelClass {
        KernelClass::Conv
    }

    fn buffers(&self) -> Vec<BufferDecl> {
        self.params.decls()
    }

    fn model_blob(&self) -> Option<Blob> {
        Some(self.params.blob)
    }

    fn setup(&self, machine: &mut Machine, state: &mut KernelState, pe: &mut PeContext<'_>) -> Result<u32, Fault> {
        charge_setup(pe);
        let written = machine.shared.get(self.params.input.buffer)?.written();
        let n = self.spec.output_count(written).saturating_sub(state.produced);
        self.params.launch(machine, state, n)?;
        Ok((n as usize * self.spec.out_dim()) as u32)
    }

    fn thread(&self, tid: u32, machine: &Machine, state: &KernelState, pe: &mut PeContext<'_>) -> Result<ThreadOutput, Fault> {
        let LayerWeights::Conv { weights, bias } = self.weights.as_ref() else {
            return Err(Fault::Logic("conv kernel bound to non-conv weights".into()));
        };
        let p = &self.params;
        p.check_resident(machine)?;
        pe.load(6);
        let s = &self.spec;
        let out_dim = s.out_dim();
        let frame = state.launch_base + (tid as usize / out_dim) as u64;
        let o = tid as usize % out_dim;
        let (x, co) = (o / s.out_channels, o % s.out_channels);
        let input = machine.shared.get(p.input.buffer)?;
        let row = weights.row(co);
        let zeros = vec![0i8; s.in_channels];
        let cin = x * s.in_channels..(x + 1) * s.in_channels;
        let mut acc = 0i32;
        pe.loop_init();
        pe.loop_iterations(s.kernel as u64);
        for dk in 0..s.kernel {
            pe.load(1);
            let logical = frame * s.stride as u64 + dk as u64;
            let taps = &row[dk * s.in_channels..(dk + 1) * s.in_channels];
            // Padding frames are zero vectors, charged like real ones.
            let xs = match logical.checked_sub(s.pad as u64) {
                Some(real) => int8_slice(input, real, cin.clone(), p.input_scale(), pe)?,
                None => {
                    if input.elem() == ElemType::F32 {
                        let c = *pe.costs();
                        pe.counted_loop(s.in_channels as u64, c.load + c.mul + c.add + 2 * c.compare + c.store);
                    }
                    Cow::Borrowed(zeros.as_slice())
                }
            };
            acc = dot(pe, acc, taps, &xs);
        }
        let residual = if s.residual {
            let idx = frame + (s.kernel - 1 - s.pad) as u64;
            Some(input.value(idx, o)?)
        } else {
            None
        };
        let v = epilogue(
            pe,
            acc,
            weights.scale * p.input_scale(),
            bias[co],
            s.relu,
            residual,
            p.output.spec.elem,
        );
        Ok(vec![v])
    }

    fn complete(&self, machine: &mut Machine, state: &mut KernelState, outputs: Vec<ThreadOutput>) -> Result<(), Fault> {
        self.params.write_neurons(machine, state, &outputs)?;
        let next_start = (state.produced + state.launch_items) * self.spec.stride as u64;
        self.params
            .finish(machine, state, next_start.saturating_sub(self.spec.pad as u64))
    }
}

#[derive(Debug, Clone)]
pub struct FcKernel {
    name: String,
    spec: FcSpec,
    weights: Arc<LayerWeights>,
    params: LayerParams,
}

impl FcKernel {
    pub fn new(name: String, spec: FcSpec, weights: Arc<LayerWeights>, params: LayerParams) -> Self {
        Self { name, spec, weights, params }
    }

    pub fn params(&self) -> &LayerParams {
        &self.params
    }
}

impl AcousticKernel for FcKernel {
    fn name(&self) -> &str {
        &self.name
    }

    fn class(&self) -> KernelClass {
        KernelClass::Fc
    }

    fn buffers(&self) -> Vec<BufferDecl> {
        self.params.decls()
    }

    fn model_blob(&self) -> Option<Blob> {
        Some(self.params.blob)
    }

    fn setup(&self, machine: &mut Machine, state: &mut KernelState, pe: &mut PeContext<'_>) -> Result<u32, Fault> {
        charge_setup(pe);
        let written = machine.shared.get(self.params.input.buffer)?.written();
        let n = written.saturating_sub(state.produced);
        self.params.launch(machine, state, n)?;
        Ok((n as usize * self.params.neurons.len()) as u32)
    }

    fn thread(&self, tid: u32, machine: &Machine, state: &KernelState, pe: &mut PeContext<'_>) -> Result<ThreadOutput, Fault> {
        let LayerWeights::Fc { weights, bias } = self.weights.as_ref() else {
            return Err(Fault::Logic("fc kernel bound to non-fc weights".into()));
        };
        let p = &self.params;
        p.check_resident(machine)?;
        pe.load(5);
        let len = p.neurons.len();
        let frame = state.launch_base + (tid as usize / len) as u64;
        let neuron = p.neurons.start + tid as usize % len;
        let input = machine.shared.get(p.input.buffer)?;
        let xs = int8_slice(input, frame, 0..self.spec.inputs, p.input_scale(), pe)?;
        let acc = dot(pe, 0, weights.row(neuron), &xs);
        let residual = match p.residual {
            Some(r) => Some(machine.shared.get(r.buffer)?.value(frame, neuron)?),
            None => None,
        };
        let v = epilogue(
            pe,
            acc,
            weights.scale * p.input_scale(),
            bias[neuron],
            self.spec.relu,
            residual,
            p.output.spec.elem,
        );
        Ok(vec![v])
    }

    fn complete(&self, machine: &mut Machine, state: &mut KernelState, outputs: Vec<ThreadOutput>) -> Result<(), Fault> {
        self.params.write_neurons(machine, state, &outputs)?;
        let upto = state.produced + state.launch_items;
        self.params.finish(machine, state, upto)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormKernel {
    name: String,
    spec: LayerNormSpec,
    weights: Arc<LayerWeights>,
    params: LayerParams,
}

impl LayerNormKernel {
    pub fn new(name: String, spec: LayerNormSpec, weights: Arc<LayerWeights>, params: LayerParams) -> Self {
        Self { name, spec, weights, params }
    }
}

/// `(x - mean) / sqrt(var + eps)` over one frame, population variance.
pub fn layer_norm(x: &[f32], eps: f32) -> Vec<f32> {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / (var + f64::from(eps)).sqrt();
    x.iter().map(|&v| ((f64::from(v) - mean) * inv) as f32).collect()
}

impl AcousticKernel for LayerNormKernel {
    fn name(&self) -> &str {
        &self.name
    }

    fn class(&self) -> KernelClass {
        KernelClass::LayerNorm
    }

    fn buffers(&self) -> Vec<BufferDecl> {
        self.params.decls()
    }

    fn model_blob(&self) -> Option<Blob> {
        Some(self.params.blob)
    }

    fn setup(&self, machine: &mut Machine, state: &mut KernelState, pe: &mut PeContext<'_>) -> Result<u32, Fault> {
        charge_setup(pe);
        let written = machine.shared.get(self.params.input.buffer)?.written();
        let n = written.saturating_sub(state.produced);
        self.params.launch(machine, state, n)?;
        Ok(n as u32)
    }

    fn thread(&self, tid: u32, machine: &Machine, state: &KernelState, pe: &mut PeContext<'_>) -> Result<ThreadOutput, Fault> {
        let LayerWeights::LayerNorm { gamma, beta } = self.weights.as_ref() else {
            return Err(Fault::Logic("layernorm kernel bound to other weights".into()));
        };
        let p = &self.params;
        p.check_resident(machine)?;
        let frame = state.launch_base + u64::from(tid);
        let input = machine.shared.get(p.input.buffer)?;
        let x: Vec<f32> = match input.elem() {
            ElemType::F32 => input.item_f32(frame)?.to_vec(),
            ElemType::I8 { scale } => input.item_i8(frame)?.iter().map(|&v| f32::from(v) * scale).collect(),
        };
        let d = x.len() as u64;
        let c = *pe.costs();
        let dequant = if input.elem() == ElemType::F32 { 0 } else { c.mul };
        pe.load(4);
        pe.counted_loop(d, c.load + dequant + c.add);
        pe.mul(1);
        pe.counted_loop(d, c.load + dequant + 2 * c.add + c.mul);
        pe.mul(1);
        pe.add(1);
        let var = {
            let n = x.len() as f64;
            let mean = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            x.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n
        };
        // 1/sqrt(v) as exp(-ln(v)/2) on the special function unit.
        pe.sfu_eval(SfuOp::Log, (var + f64::from(self.spec.eps)) as f32)?;
        pe.mul(1);
        pe.sfu_eval(SfuOp::Exp, 0.0)?;
        let out_elem = p.output.spec.elem;
        let affine = if self.spec.affine { 2 * c.load + c.mul + c.add } else { 0 };
        let quant = if matches!(out_elem, ElemType::I8 { .. }) { c.mul + c.add + 2 * c.compare } else { 0 };
        pe.counted_loop(d, c.load + dequant + c.add + c.mul + affine + quant + c.store);
        let y = layer_norm(&x, self.spec.eps)
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                let v = if self.spec.affine { v * gamma[i] + beta[i] } else { v };
                match out_elem {
                    ElemType::I8 { scale } => f32::from(quantize_value(v, scale)),
                    ElemType::F32 => v,
                }
            })
            .collect();
        Ok(y)
    }

    fn complete(&self, machine: &mut Machine, state: &mut KernelState, outputs: Vec<ThreadOutput>) -> Result<(), Fault> {
        let buf = machine.shared.get_mut(self.params.output.buffer)?;
        for (i, y) in outputs.iter().enumerate() {
            buf.write_item(state.launch_base + i as u64, y)?;
        }
        let upto = state.produced + state.launch_items;
        self.params.finish(machine, state, upto)
    }
}
