//! Lowering a model to the acoustic-scoring kernel list.

use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;

use super::descriptor::LayerSpec;
use super::kernels::{ConvKernel, FcKernel, InputBinding, LayerNormKernel, LayerParams, OutputBinding};
use super::weights::{LayerWeights, Model};
use crate::config::AcceleratorConfig;
use crate::error::{Error, Result};
use crate::frontend::{FrontendParams, MfccKernel};
use crate::kernel::KernelDescriptor;
use crate::memory::{Blob, BufferId, BufferSpec, ElemType};

/// Item capacity of every stream buffer. Shared-memory size is the
/// binding limit.
const STREAM_CAPACITY: u64 = 1 << 20;

/// Splits `outputs` neurons into the fewest contiguous ranges, equal in
/// size to within one neuron, whose model bytes fit `capacity`.
pub fn partition_fc(outputs: usize, bytes_per_neuron: u64, capacity: u64) -> Result<Vec<Range<usize>>> {
    if bytes_per_neuron > capacity {
        return Err(Error::Config(format!(
            "one neuron needs {bytes_per_neuron} bytes of model memory, only {capacity} available"
        )));
    }
    if outputs == 0 {
        return Ok(Vec::new());
    }
    let total = outputs as u64 * bytes_per_neuron;
    let mut parts = total.div_ceil(capacity).max(1) as usize;
    while (outputs.div_ceil(parts) as u64) * bytes_per_neuron > capacity {
        parts += 1;
    }
    let (base, extra) = (outputs / parts, outputs % parts);
    let mut ranges = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = base + usize::from(i < extra);
        ranges.push(start..start + len);
        start += len;
    }
    Ok(ranges)
}

/// Where each kernel came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelOrigin {
    pub name: String,
    /// Model layer, or `None` for feature extraction.
    pub layer: Option<usize>,
    pub neurons: Option<Range<usize>>,
    /// Int8 weight bytes, biases and norm parameters excluded.
    pub weight_bytes: u64,
    /// Bytes loaded into model memory for this kernel.
    pub model_bytes: u64,
}

#[derive(Clone)]
pub struct AcousticProgram {
    pub kernels: Vec<KernelDescriptor>,
    pub origins: Vec<KernelOrigin>,
    /// Buffer of raw token scores written by the last kernel.
    pub scores: BufferId,
    pub scores_spec: BufferSpec,
    /// Buffer of feature frames written by the first kernel.
    pub features: BufferId,
}

impl std::fmt::Debug for AcousticProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcousticProgram")
            .field("kernels", &self.origins)
            .field("scores", &self.scores)
            .finish()
    }
}

fn stream(item_len: usize, elem: ElemType) -> BufferSpec {
    BufferSpec { item_len, elem, capacity_items: STREAM_CAPACITY }
}

/// Feature extraction first, then one kernel per layer, FC layers split to
/// fit model memory. Buffer `i` holds the input of layer `i`.
pub fn build_program(model: &Model, frontend: &FrontendParams, config: &AcceleratorConfig) -> Result<AcousticProgram> {
    let d = &model.descriptor;
    frontend.validate().map_err(Error::Config)?;
    if frontend.n_coeffs() != d.input_dim {
        return Err(Error::Config(format!(
            "feature extraction emits {} values per frame, the model expects {}",
            frontend.n_coeffs(),
            d.input_dim
        )));
    }
    let capacity = config.model_mem_bytes;
    let mfcc = MfccKernel::new(frontend.clone(), 0, STREAM_CAPACITY);
    let mut specs = vec![mfcc.output_spec()];
    let mut kernels = vec![KernelDescriptor::new(Arc::new(mfcc))];
    let mut origins = vec![KernelOrigin { name: "mfcc".into(), layer: None, neurons: None, weight_bytes: 0, model_bytes: 0 }];
    for (i, layer) in d.layers.iter().enumerate() {
        let last = i + 1 == d.layers.len();
        let next_is_norm = matches!(d.layers.get(i + 1), Some(LayerSpec::LayerNorm(_)));
        let elem = if last || next_is_norm { ElemType::F32 } else { ElemType::I8 { scale: d.act_scale } };
        let out_spec = stream(layer.out_dim(), elem);
        specs.push(out_spec);
        let input = InputBinding { buffer: i as BufferId, reader: 0, spec: specs[i] };
        let output = OutputBinding { buffer: (i + 1) as BufferId, spec: out_spec };
        let weights = model.layers[i].clone();
        let params = |neurons: Range<usize>, first: bool, last: bool, bytes: u64, blob_id: usize| LayerParams {
            layer: i,
            input,
            f32_input_scale: d.input_scale,
            residual: None,
            output,
            neurons,
            first_partition: first,
            last_partition: last,
            blob: Blob { id: blob_id as u32, bytes },
        };
        let whole = |bytes: u64| -> Result<()> {
            if bytes > capacity {
                Err(Error::Config(format!(
                    "layer {i} ({}) needs {bytes} bytes of model memory, only {capacity} available",
                    layer.kind_name()
                )))
            } else {
                Ok(())
            }
        };
        match layer {
            LayerSpec::Conv1d(c) => {
                let bytes = weights.bytes();
                whole(bytes)?;
                let name = format!("conv{i}");
                let p = params(0..c.out_dim(), true, true, bytes, kernels.len());
                let weight_bytes = (c.out_channels * c.row_len()) as u64;
                origins.push(KernelOrigin { name: name.clone(), layer: Some(i), neurons: None, weight_bytes, model_bytes: bytes });
                kernels.push(KernelDescriptor::new(Arc::new(ConvKernel::new(name, *c, weights, p))));
            }
            LayerSpec::LayerNorm(l) => {
                let bytes = weights.bytes();
                whole(bytes)?;
                let name = format!("layernorm{i}");
                let p = params(0..l.dim, true, true, bytes, kernels.len());
                origins.push(KernelOrigin { name: name.clone(), layer: Some(i), neurons: None, weight_bytes: 0, model_bytes: bytes });
                kernels.push(KernelDescriptor::new(Arc::new(LayerNormKernel::new(name, *l, weights, p))));
            }
            LayerSpec::Fc(f) => {
                let LayerWeights::Fc { .. } = weights.as_ref() else {
                    return Err(Error::Config(format!("layer {i}: fc without fc weights")));
                };
                // Each neuron brings its weight row and a 4-byte bias.
                let per_neuron = f.inputs as u64 + 4;
                let ranges = partition_fc(f.outputs, per_neuron, capacity)
                    .map_err(|e| Error::Config(format!("layer {i}: {e}")))?;
                let n = ranges.len();
                for (k, r) in ranges.into_iter().enumerate() {
                    let bytes = r.len() as u64 * per_neuron;
                    let name = if n == 1 { format!("fc{i}") } else { format!("fc{i}.{k}") };
                    let mut p = params(r.clone(), k == 0, k + 1 == n, bytes, kernels.len());
                    if f.residual {
                        p.residual = Some(InputBinding { buffer: (i - 1) as BufferId, reader: 1, spec: specs[i - 1] });
                    }
                    let weight_bytes = (r.len() * f.inputs) as u64;
                    origins.push(KernelOrigin { name: name.clone(), layer: Some(i), neurons: Some(r), weight_bytes, model_bytes: bytes });
                    kernels.push(KernelDescriptor::new(Arc::new(FcKernel::new(name, *f, weights.clone(), p))));
                }
            }
        }
    }
    let scores = d.layers.len() as BufferId;
    Ok(AcousticProgram { kernels, origins, scores, scores_spec: specs[d.layers.len()], features: 0 })
}
