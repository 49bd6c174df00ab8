//! Symmetric per-tensor int8 quantization.

use serde::Serialize;

/// Nearest int8 step of `x / scale`, clamped to ±127.
pub fn quantize_value(x: f32, scale: f32) -> i8 {
    (x / scale).round().clamp(-127.0, 127.0) as i8
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantizedTensor {
    #[serde(skip)]
    pub values: Vec<i8>,
    pub scale: f32,
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    /// Wraps int8 values. `-128` is clamped to `-127` to keep the range
    /// symmetric.
    pub fn new(mut values: Vec<i8>, scale: f32, shape: Vec<usize>) -> Self {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        for v in &mut values {
            *v = (*v).max(-127);
        }
        Self { values, scale, shape }
    }

    /// Quantizes with the scale that maps the largest magnitude to 127.
    pub fn quantize(x: &[f32], shape: Vec<usize>) -> Self {
        let max = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        let scale = if max > 0.0 { max / 127.0 } else { 1.0 };
        let values = x.iter().map(|&v| quantize_value(v, scale)).collect();
        Self { values, scale, shape }
    }

    pub fn dequantize(&self) -> Vec<f32> {
        self.values.iter().map(|&v| f32::from(v) * self.scale).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Slice `r` along the first axis.
    pub fn row(&self, r: usize) -> &[i8] {
        let n: usize = self.shape.iter().skip(1).product();
        &self.values[r * n..(r + 1) * n]
    }
}
