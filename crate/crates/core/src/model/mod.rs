//! Acoustic model: descriptor, quantized weights and the kernels that run
//! it on the accelerator.

mod descriptor;
mod kernels;
mod program;
mod quant;
mod softmax;
mod weights;

pub use descriptor::{
    reference_descriptor, ConvSpec, FcSpec, LayerCounts, LayerNormSpec, LayerSpec, ModelDescriptor,
};
pub use kernels::{layer_norm, ConvKernel, FcKernel, InputBinding, LayerNormKernel, LayerParams, OutputBinding};
pub use program::{build_program, partition_fc, AcousticProgram, KernelOrigin};
pub use quant::{quantize_value, QuantizedTensor};
pub use softmax::{log_softmax, log_sum_exp};
pub use weights::{LayerWeights, Model};
