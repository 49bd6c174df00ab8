//! Layer weights and the binary model file.
//!
//! File layout, little-endian: magic `ASRM`, u32 version, u32 layer count,
//! u32 input_dim, f32 input_scale, f32 act_scale, then per layer a u8 kind
//! followed by
//! - conv1d: u32 in_channels, out_channels, width, kernel, stride, pad; u8
//!   flags (bit 0 relu, bit 1 residual); f32 scale; i8 weights
//!   `[out_channels][kernel][in_channels]`; f32 biases `[out_channels]`
//! - fc: u32 inputs, outputs; u8 flags; f32 scale; i8 weights
//!   `[outputs][inputs]`; f32 biases `[outputs]`
//! - layernorm: u32 dim; f32 eps; u8 affine; f32 gamma `[dim]`; f32 beta
//!   `[dim]`

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::descriptor::{ConvSpec, FcSpec, LayerNormSpec, LayerSpec, ModelDescriptor};
use super::quant::QuantizedTensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ASRM";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    /// Weights `[out_channels][kernel][in_channels]`.
    Conv { weights: QuantizedTensor, bias: Vec<f32> },
    /// Weights `[outputs][inputs]`.
    Fc { weights: QuantizedTensor, bias: Vec<f32> },
    LayerNorm { gamma: Vec<f32>, beta: Vec<f32> },
}

impl LayerWeights {
    /// Bytes of model data the layer's kernels load.
    pub fn bytes(&self) -> u64 {
        match self {
            LayerWeights::Conv { weights, bias } | LayerWeights::Fc { weights, bias } => {
                weights.len() as u64 + 4 * bias.len() as u64
            }
            LayerWeights::LayerNorm { gamma, beta } => 4 * (gamma.len() + beta.len()) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub descriptor: ModelDescriptor,
    pub layers: Vec<Arc<LayerWeights>>,
}

fn check(cond: bool, i: usize, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Input(format!("layer {i}: {what} does not match the descriptor")))
    }
}

impl Model {
    pub fn new(descriptor: ModelDescriptor, layers: Vec<LayerWeights>) -> Result<Self> {
        descriptor.validate()?;
        if layers.len() != descriptor.layers.len() {
            return Err(Error::Input(format!(
                "{} weight sets for {} layers",
                layers.len(),
                descriptor.layers.len()
            )));
        }
        for (i, (spec, w)) in descriptor.layers.iter().zip(&layers).enumerate() {
            match (spec, w) {
                (LayerSpec::Conv1d(c), LayerWeights::Conv { weights, bias }) => {
                    check(weights.shape == [c.out_channels, c.kernel, c.in_channels], i, "conv weights")?;
                    check(bias.len() == c.out_channels, i, "conv bias")?;
                }
                (LayerSpec::Fc(f), LayerWeights::Fc { weights, bias }) => {
                    check(weights.shape == [f.outputs, f.inputs], i, "fc weights")?;
                    check(bias.len() == f.outputs, i, "fc bias")?;
                }
                (LayerSpec::LayerNorm(l), LayerWeights::LayerNorm { gamma, beta }) => {
                    check(gamma.len() == l.dim && beta.len() == l.dim, i, "layernorm affine")?;
                }
                _ => check(false, i, "weight kind")?,
            }
        }
        Ok(Self { descriptor, layers: layers.into_iter().map(Arc::new).collect() })
    }

    /// Pseudo-random weights with unit-variance fan-in scaling. Each layer
    /// draws from its own stream, so layers do not depend on each other.
    pub fn generate(descriptor: ModelDescriptor, seed: u64) -> Result<Self> {
        let layers = descriptor
            .layers
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                generate_layer(spec, &mut rng)
            })
            .collect();
        Self::new(descriptor, layers)
    }

    pub fn total_bytes(&self) -> u64 {
        self.layers.iter().map(|l| l.bytes()).sum()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let d = &self.descriptor;
        w.write_all(MAGIC)?;
        for v in [VERSION, d.layers.len() as u32, d.input_dim as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&d.input_scale.to_le_bytes())?;
        w.write_all(&d.act_scale.to_le_bytes())?;
        let u32s = |w: &mut dyn Write, vals: &[usize]| -> std::io::Result<()> {
            vals.iter().try_for_each(|&v| w.write_all(&(v as u32).to_le_bytes()))
        };
        let f32s = |w: &mut dyn Write, vals: &[f32]| -> std::io::Result<()> {
            let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
            w.write_all(&bytes)
        };
        let flags = |relu: bool, residual: bool| u8::from(relu) | (u8::from(residual) << 1);
        for (spec, weights) in d.layers.iter().zip(&self.layers) {
            match (spec, weights.as_ref()) {
                (LayerSpec::Conv1d(c), LayerWeights::Conv { weights, bias }) => {
                    w.write_all(&[0])?;
                    u32s(w, &[c.in_channels, c.out_channels, c.width, c.kernel, c.stride, c.pad])?;
                    w.write_all(&[flags(c.relu, c.residual)])?;
                    w.write_all(&weights.scale.to_le_bytes())?;
                    w.write_all(&weights.values.iter().map(|&v| v as u8).collect::<Vec<u8>>())?;
                    f32s(w, bias)?;
                }
                (LayerSpec::Fc(f), LayerWeights::Fc { weights, bias }) => {
                    w.write_all(&[1])?;
                    u32s(w, &[f.inputs, f.outputs])?;
                    w.write_all(&[flags(f.relu, f.residual)])?;
                    w.write_all(&weights.scale.to_le_bytes())?;
                    w.write_all(&weights.values.iter().map(|&v| v as u8).collect::<Vec<u8>>())?;
                    f32s(w, bias)?;
                }
                (LayerSpec::LayerNorm(l), LayerWeights::LayerNorm { gamma, beta }) => {
                    w.write_all(&[2])?;
                    u32s(w, &[l.dim])?;
                    w.write_all(&l.eps.to_le_bytes())?;
                    w.write_all(&[u8::from(l.affine)])?;
                    f32s(w, gamma)?;
                    f32s(w, beta)?;
                }
                _ => unreachable!("validated in Model::new"),
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut rd = Reader { r };
        let mut magic = [0u8; 4];
        rd.bytes(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Input("not a model file (bad magic)".into()));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::Input(format!("unsupported model file version {version}")));
        }
        let n_layers = rd.u32()? as usize;
        let input_dim = rd.u32()? as usize;
        let input_scale = rd.f32()?;
        let act_scale = rd.f32()?;
        let mut specs = Vec::with_capacity(n_layers);
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            match rd.u8()? {
                0 => {
                    let v = rd.u32s(6)?;
                    let flags = rd.u8()?;
                    let c = ConvSpec {
                        in_channels: v[0],
                        out_channels: v[1],
                        width: v[2],
                        kernel: v[3],
                        stride: v[4],
                        pad: v[5],
                        relu: flags & 1 != 0,
                        residual: flags & 2 != 0,
                    };
                    let scale = rd.f32()?;
                    let weights = rd.i8s(c.out_channels * c.row_len())?;
                    let bias = rd.f32s(c.out_channels)?;
                    let shape = vec![c.out_channels, c.kernel, c.in_channels];
                    specs.push(LayerSpec::Conv1d(c));
                    layers.push(LayerWeights::Conv { weights: QuantizedTensor::new(weights, scale, shape), bias });
                }
                1 => {
                    let v = rd.u32s(2)?;
                    let flags = rd.u8()?;
                    let f = FcSpec {
                        inputs: v[0],
                        outputs: v[1],
                        relu: flags & 1 != 0,
                        residual: flags & 2 != 0,
                    };
                    let scale = rd.f32()?;
                    let weights = rd.i8s(f.inputs * f.outputs)?;
                    let bias = rd.f32s(f.outputs)?;
                    specs.push(LayerSpec::Fc(f));
                    layers.push(LayerWeights::Fc {
                        weights: QuantizedTensor::new(weights, scale, vec![f.outputs, f.inputs]),
                        bias,
                    });
                }
                2 => {
                    let dim = rd.u32()? as usize;
                    let eps = rd.f32()?;
                    let affine = rd.u8()? != 0;
                    let gamma = rd.f32s(dim)?;
                    let beta = rd.f32s(dim)?;
                    specs.push(LayerSpec::LayerNorm(LayerNormSpec { dim, eps, affine }));
                    layers.push(LayerWeights::LayerNorm { gamma, beta });
                }
                k => return Err(Error::Input(format!("layer {i}: unknown layer kind {k}"))),
            }
        }
        let mut extra = [0u8; 1];
        if rd.r.read(&mut extra)? != 0 {
            return Err(Error::Input("trailing bytes after the last layer".into()));
        }
        let descriptor = ModelDescriptor { input_dim, input_scale, act_scale, layers: specs };
        Self::new(descriptor, layers).map_err(|e| match e {
            Error::Config(m) => Error::Input(format!("model file: {m}")),
            e => e,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Loads a binary model file, or a TOML descriptor whose weights are
    /// generated from `seed`.
    pub fn load(path: &Path, seed: u64) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Input(format!("cannot read model {}: {e}", path.display())))?;
        if bytes.starts_with(MAGIC) {
            Self::read_from(&mut bytes.as_slice())
        } else {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::Input(format!("{} is neither a model file nor UTF-8 text", path.display())))?;
            Self::generate(ModelDescriptor::parse(text)?, seed)
        }
    }
}

fn random_int8(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    let mut bytes = vec![0u8; n];
    rng.fill_bytes(&mut bytes);
    bytes.into_iter().map(|b| (b as i8).max(-127)).collect()
}

fn generate_layer(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> LayerWeights {
    // Uniform on ±127 steps has variance 127²/3; this scale makes the real
    // weights' variance 1/fan_in.
    let scale_for = |fan_in: usize| (3.0 / fan_in as f32).sqrt() / 127.0;
    match spec {
        LayerSpec::Conv1d(c) => LayerWeights::Conv {
            weights: QuantizedTensor::new(
                random_int8(rng, c.out_channels * c.row_len()),
                scale_for(c.row_len()),
                vec![c.out_channels, c.kernel, c.in_channels],
            ),
            bias: (0..c.out_channels).map(|_| rng.gen_range(-0.05..0.05)).collect(),
        },
        LayerSpec::Fc(f) => LayerWeights::Fc {
            weights: QuantizedTensor::new(
                random_int8(rng, f.outputs * f.inputs),
                scale_for(f.inputs),
                vec![f.outputs, f.inputs],
            ),
            bias: (0..f.outputs).map(|_| rng.gen_range(-0.05..0.05)).collect(),
        },
        LayerSpec::LayerNorm(l) => LayerWeights::LayerNorm {
            gamma: (0..l.dim).map(|_| 1.0 + rng.gen_range(-0.1..0.1)).collect(),
            beta: (0..l.dim).map(|_| rng.gen_range(-0.1..0.1)).collect(),
        },
    }
}

struct Reader<'a, R: Read> {
    r: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.r
            .read_exact(buf)
            .map_err(|_| Error::Input("model file is truncated".into()))
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.bytes(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32(&mut self) -> Result<f32> {
        let mut b = [0u8; 4];
        self.bytes(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }

    fn i8s(&mut self, n: usize) -> Result<Vec<i8>> {
        let mut b = vec![0u8; n];
        self.bytes(&mut b)?;
        Ok(b.into_iter().map(|v| v as i8).collect())
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut b = vec![0u8; 4 * n];
        self.bytes(&mut b)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelDescriptor {
        ModelDescriptor::parse(
            "input_dim = 6\n\
             [[layer]]\nkind = \"conv1d\"\nin_channels = 2\nout_channels = 2\nwidth = 3\nkernel = 3\nstride = 1\npad = 2\nrelu = true\nresidual = true\n\
             [[layer]]\nkind = \"layernorm\"\ndim = 6\n\
             [[layer]]\nkind = \"fc\"\ninputs = 6\noutputs = 6\nrelu = true\n\
             [[layer]]\nkind = \"fc\"\ninputs = 6\noutputs = 6\nresidual = true\n\
             [[layer]]\nkind = \"fc\"\ninputs = 6\noutputs = 5\n",
        )
        .unwrap()
    }

    #[test]
    fn generation_is_deterministic_per_layer() {
        let a = Model::generate(small(), 7).unwrap();
        assert_eq!(a, Model::generate(small(), 7).unwrap());
        assert_ne!(a, Model::generate(small(), 8).unwrap());
        let mut d = small();
        d.layers[4] = LayerSpec::Fc(FcSpec { inputs: 6, outputs: 9, relu: false, residual: false });
        let b = Model::generate(d, 7).unwrap();
        assert_eq!(a.layers[..4], b.layers[..4]);
    }

    #[test]
    fn binary_round_trip() {
        let m = Model::generate(small(), 3).unwrap();
        let mut bytes = Vec::new();
        m.write_to(&mut bytes).unwrap();
        assert_eq!(Model::read_from(&mut bytes.as_slice()).unwrap(), m);
        assert!(Model::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Model::read_from(&mut extra.as_slice()).is_err());
        bytes[0] = b'X';
        assert!(Model::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let m = Model::generate(small(), 3).unwrap();
        let mut layers: Vec<LayerWeights> = m.layers.iter().map(|l| (**l).clone()).collect();
        layers.swap(0, 1);
        assert!(Model::new(small(), layers).is_err());
    }
}
