//! Layer-level description of an acoustic model.
//!
//! Activations are frame vectors. Convolution layers see a frame as
//! `width` positions of `channels` values, channel-minor, and convolve
//! over time only. A residual conv adds its own input; a residual FC adds
//! the input of the FC before it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    /// Zero frames logically prepended to the input stream.
    #[serde(default)]
    pub pad: usize,
    #[serde(default)]
    pub relu: bool,
    #[serde(default)]
    pub residual: bool,
}

impl ConvSpec {
    pub fn in_dim(&self) -> usize {
        self.in_channels * self.width
    }

    pub fn out_dim(&self) -> usize {
        self.out_channels * self.width
    }

    /// Weight row length of one output channel.
    pub fn row_len(&self) -> usize {
        self.kernel * self.in_channels
    }

    /// Outputs computable from `frames` input frames.
    pub fn output_count(&self, frames: u64) -> u64 {
        let padded = frames + self.pad as u64;
        if padded < self.kernel as u64 {
            0
        } else {
            (padded - self.kernel as u64) / self.stride as u64 + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FcSpec {
    pub inputs: usize,
    pub outputs: usize,
    #[serde(default)]
    pub relu: bool,
    #[serde(default)]
    pub residual: bool,
}

fn default_eps() -> f32 {
    1e-5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerNormSpec {
    pub dim: usize,
    #[serde(default = "default_eps")]
    pub eps: f32,
    #[serde(default = "default_true")]
    pub affine: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv1d(ConvSpec),
    Fc(FcSpec),
    LayerNorm(LayerNormSpec),
}

impl LayerSpec {
    pub fn in_dim(&self) -> usize {
        match self {
            LayerSpec::Conv1d(c) => c.in_dim(),
            LayerSpec::Fc(f) => f.inputs,
            LayerSpec::LayerNorm(l) => l.dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerSpec::Conv1d(c) => c.out_dim(),
            LayerSpec::Fc(f) => f.outputs,
            LayerSpec::LayerNorm(l) => l.dim,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d(_) => "conv1d",
            LayerSpec::Fc(_) => "fc",
            LayerSpec::LayerNorm(_) => "layernorm",
        }
    }
}

fn default_input_scale() -> f32 {
    1.0
}

fn default_act_scale() -> f32 {
    4.0 / 127.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    /// Feature values per input frame.
    pub input_dim: usize,
    /// Quantization step applied to real-valued input features.
    #[serde(default = "default_input_scale")]
    pub input_scale: f32,
    /// Quantization step of int8 activations between layers.
    #[serde(default = "default_act_scale")]
    pub act_scale: f32,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LayerCounts {
    pub conv: usize,
    pub fc: usize,
    pub layernorm: usize,
}

impl ModelDescriptor {
    pub fn parse(text: &str) -> Result<Self> {
        let d: Self = toml::from_str(text)
            .map_err(|e| Error::Config(format!("model descriptor: {e}")))?;
        d.validate()?;
        Ok(d)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("descriptor serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |i: usize, msg: String| Err(Error::Config(format!("layer {i}: {msg}")));
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        for (name, s) in [("input_scale", self.input_scale), ("act_scale", self.act_scale)] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {s}")));
            }
        }
        if self.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        let mut dim = self.input_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.in_dim() != dim {
                return bad(i, format!("expects {} inputs but receives {dim}", layer.in_dim()));
            }
            match layer {
                LayerSpec::Conv1d(c) => {
                    if c.in_channels == 0 || c.out_channels == 0 || c.width == 0 {
                        return bad(i, "channels and width must be positive".into());
                    }
                    if c.kernel == 0 || c.stride == 0 {
                        return bad(i, "kernel and stride must be positive".into());
                    }
                    if c.pad >= c.kernel {
                        return bad(i, format!("pad {} must be smaller than kernel {}", c.pad, c.kernel));
                    }
                    if c.residual && (c.stride != 1 || c.in_channels != c.out_channels) {
                        return bad(i, "residual conv needs stride 1 and equal channels".into());
                    }
                }
                LayerSpec::Fc(f) => {
                    if f.outputs == 0 {
                        return bad(i, "fc needs at least one output".into());
                    }
                    if f.residual {
                        match i.checked_sub(1).map(|p| &self.layers[p]) {
                            Some(LayerSpec::Fc(prev)) if prev.inputs == f.outputs => {}
                            _ => {
                                return bad(
                                    i,
                                    "residual fc must follow an fc whose input matches its output".into(),
                                )
                            }
                        }
                    }
                }
                LayerSpec::LayerNorm(l) => {
                    if l.dim == 0 || !(l.eps >= 0.0) {
                        return bad(i, "layernorm needs a positive dim and eps >= 0".into());
                    }
                }
            }
            dim = layer.out_dim();
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Fc(_))) {
            return Err(Error::Config("the final layer must be fc and emit token scores".into()));
        }
        Ok(())
    }

    pub fn n_tokens(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::out_dim)
    }

    /// Product of the convolution strides.
    pub fn subsample_factor(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Conv1d(c) => c.stride,
                _ => 1,
            })
            .product()
    }

    /// Score vectors produced from `frames` feature frames.
    pub fn output_count(&self, frames: u64) -> u64 {
        self.layers.iter().fold(frames, |n, l| match l {
            LayerSpec::Conv1d(c) => c.output_count(n),
            _ => n,
        })
    }

    pub fn counts(&self) -> LayerCounts {
        let mut c = LayerCounts::default();
        for l in &self.layers {
            match l {
                LayerSpec::Conv1d(_) => c.conv += 1,
                LayerSpec::Fc(_) => c.fc += 1,
                LayerSpec::LayerNorm(_) => c.layernorm += 1,
            }
        }
        c
    }
}

/// Descriptor of the reference TDS model.
pub fn reference_descriptor() -> ModelDescriptor {
    ModelDescriptor::parse(include_str!("../../data/reference_tds.toml"))
        .expect("bundled reference descriptor is valid")
}
