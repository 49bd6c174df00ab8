//! MFCC arithmetic for one frame, charged on the PE cost model.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex32;
use rustfft::{Fft, FftPlanner};

use super::FrontendParams;
use crate::cost::{PeContext, SfuOp};
use crate::error::Fault;

/// One triangular filter, stored over the bins where it is non-zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start_bin: usize,
    pub weights: Vec<f32>,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

/// Triangular filters equally spaced on the mel scale between 0 Hz and the
/// Nyquist frequency. Weights are linear in mel within each triangle.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<MelFilter> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let points: Vec<f64> = (0..n_mels + 2)
        .map(|i| top * i as f64 / (n_mels + 1) as f64)
        .collect();
    let bin_mels: Vec<f64> = (0..=n_fft / 2)
        .map(|k| hz_to_mel(k as f64 * sample_rate as f64 / n_fft as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let dense: Vec<f64> = bin_mels
                .iter()
                .map(|&b| {
                    if b > left && b <= center {
                        (b - left) / (center - left)
                    } else if b > center && b < right {
                        (right - b) / (right - center)
                    } else {
                        0.0
                    }
                })
                .collect();
            match dense.iter().position(|&w| w > 0.0) {
                Some(first) => {
                    let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(first);
                    MelFilter {
                        start_bin: first,
                        weights: dense[first..=last].iter().map(|&w| w as f32).collect(),
                    }
                }
                None => MelFilter { start_bin: 0, weights: Vec::new() },
            }
        })
        .collect()
}

pub fn mel_project(power: &[f32], filters: &[MelFilter]) -> Vec<f32> {
    filters
        .iter()
        .map(|f| {
            f.weights
                .iter()
                .zip(&power[f.start_bin..])
                .map(|(w, p)| w * p)
                .sum()
        })
        .collect()
}

/// Row-major orthonormal DCT-II matrix keeping the first `n_out` rows.
fn dct_matrix(n_in: usize, n_out: usize) -> Vec<f32> {
    let n = n_in as f64;
    let mut m = Vec::with_capacity(n_in * n_out);
    for k in 0..n_out {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        for i in 0..n_in {
            let angle = std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n);
            m.push((scale * angle.cos()) as f32);
        }
    }
    m
}

fn apply_dct(matrix: &[f32], x: &[f32]) -> Vec<f32> {
    matrix
        .chunks(x.len())
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Orthonormal DCT-II.
pub fn dct2(x: &[f32]) -> Vec<f32> {
    apply_dct(&dct_matrix(x.len(), x.len()), x)
}

/// Precomputed tables for the per-frame MFCC routine.
#[derive(Clone)]
pub struct MfccExtractor {
    params: FrontendParams,
    window: Vec<f32>,
    filters: Vec<MelFilter>,
    dct: Vec<f32>,
    fft: Arc<dyn Fft<f32>>,
}

impl fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(params: FrontendParams) -> Self {
        let window = params.window.coefficients(params.frame_len());
        let filters = mel_filterbank(params.n_mels, params.n_fft, params.sample_rate);
        let dct = dct_matrix(params.n_mels, params.n_coeffs());
        let fft = FftPlanner::<f32>::new().plan_fft_forward(params.n_fft);
        Self { params, window, filters, dct, fft }
    }

    pub fn params(&self) -> &FrontendParams {
        &self.params
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    /// Computes the coefficients of one frame of `frame_len` samples.
    pub fn frame(&self, samples: &[f32], pe: &mut PeContext<'_>) -> Result<Vec<f32>, Fault> {
        let p = &self.params;
        let w = p.frame_len();
        if samples.len() != w {
            return Err(Fault::Logic(format!(
                "frame of {} samples, expected {w}",
                samples.len()
            )));
        }
        let c = *pe.costs();
        let n_fft = p.n_fft;
        let half = n_fft / 2 + 1;

        // Frame address from the frame index.
        pe.load(2);
        pe.mul(1);
        pe.add(1);

        let mut x = samples.to_vec();
        if p.remove_dc {
            let mean = x.iter().sum::<f32>() / w as f32;
            pe.counted_loop(w as u64, c.load + c.add);
            pe.mul(1);
            for v in &mut x {
                *v -= mean;
            }
        }

        // Pre-emphasis (the first sample uses itself as predecessor),
        // windowing and zero padding into the FFT buffer.
        let a = p.preemphasis;
        let mut buf = vec![Complex32::new(0.0, 0.0); n_fft];
        for i in 0..w {
            let prev = if i == 0 { x[0] } else { x[i - 1] };
            buf[i].re = (x[i] - a * prev) * self.window[i];
        }
        pe.counted_loop(w as u64, 2 * c.load + 2 * c.add + 2 * c.mul + c.store);
        pe.counted_loop((n_fft - w) as u64, c.store);

        // Radix-2 FFT: bit-reversal pass, then log2(n) stages of n/2
        // butterflies (two complex loads, twiddle load, complex multiply,
        // complex add and subtract, two complex stores).
        let mut scratch = vec![Complex32::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        self.fft.process_with_scratch(&mut buf, &mut scratch);
        let stages = n_fft.trailing_zeros() as u64;
        let butterfly = 6 * c.load + 4 * c.mul + 6 * c.add + 4 * c.store;
        pe.counted_loop(n_fft as u64, 2 * c.load + 2 * c.store);
        pe.counted_loop(stages, pe_loop(&c, (n_fft / 2) as u64, butterfly));

        let power: Vec<f32> = buf[..half].iter().map(|z| z.re * z.re + z.im * z.im).collect();
        pe.counted_loop(half as u64, 2 * c.load + 2 * c.mul + c.add + c.store);

        let energies = mel_project(&power, &self.filters);
        pe.loop_init();
        pe.loop_iterations(self.filters.len() as u64);
        for f in &self.filters {
            pe.load(1);
            pe.counted_loop(f.weights.len() as u64, 2 * c.load + c.mul + c.add);
            pe.store(1);
        }

        let mut logs = Vec::with_capacity(energies.len());
        pe.loop_init();
        pe.loop_iterations(energies.len() as u64);
        for &e in &energies {
            pe.load(1);
            pe.compare(1);
            pe.branch(1);
            logs.push(pe.sfu_eval(SfuOp::Log, e.max(p.log_floor))?);
            pe.store(1);
        }

        let coeffs = apply_dct(&self.dct, &logs);
        pe.counted_loop(
            coeffs.len() as u64,
            pe_loop(&c, logs.len() as u64, 2 * c.load + c.mul + c.add) + c.mul + c.store,
        );
        Ok(coeffs)
    }
}

fn pe_loop(c: &crate::cost::CostTable, n: u64, body: u64) -> u64 {
    crate::cost::loop_cost_with(c, n, body)
}
