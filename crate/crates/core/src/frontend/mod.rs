//! Feature extraction: MFCC frames computed by the first acoustic-scoring
//! kernel.

mod kernel;
mod mfcc;

use serde::{Deserialize, Serialize};

pub use kernel::MfccKernel;
pub use mfcc::{dct2, mel_filterbank, mel_project, MelFilter, MfccExtractor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Symmetric window coefficients of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f32> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / denom;
                let w = match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                };
                w as f32
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendParams {
    pub sample_rate: u32,
    pub frame_len_ms: f64,
    pub frame_shift_ms: f64,
    pub n_mels: usize,
    pub n_fft: usize,
    pub preemphasis: f32,
    pub window: WindowKind,
    pub log_floor: f32,
    pub remove_dc: bool,
}

impl Default for FrontendParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_len_ms: 25.0,
            frame_shift_ms: 10.0,
            n_mels: 80,
            n_fft: 512,
            preemphasis: 0.97,
            window: WindowKind::Hamming,
            log_floor: 1e-10,
            remove_dc: true,
        }
    }
}

impl FrontendParams {
    pub fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_len_ms / 1000.0).round() as usize
    }

    pub fn frame_shift(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    /// Number of coefficients per feature frame.
    pub fn n_coeffs(&self) -> usize {
        self.n_mels
    }

    /// Frames that fit in `samples` samples.
    pub fn frames_for(&self, samples: u64) -> u64 {
        let w = self.frame_len() as u64;
        if samples < w {
            0
        } else {
            (samples - w) / self.frame_shift() as u64 + 1
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.sample_rate == 0 {
            return Err("`frontend.sample_rate` must be positive".into());
        }
        if !(self.frame_len_ms > 0.0) || self.frame_len() == 0 {
            return Err("`frontend.frame_len_ms` must cover at least one sample".into());
        }
        if !(self.frame_shift_ms > 0.0) || self.frame_shift() == 0 {
            return Err("`frontend.frame_shift_ms` must cover at least one sample".into());
        }
        if !self.n_fft.is_power_of_two() {
            return Err("`frontend.n_fft` must be a power of two".into());
        }
        if self.n_fft < self.frame_len() {
            return Err(format!(
                "`frontend.n_fft` ({}) is shorter than a frame ({} samples)",
                self.n_fft,
                self.frame_len()
            ));
        }
        if self.n_mels == 0 || self.n_mels > self.n_fft / 2 {
            return Err("`frontend.n_mels` must be in 1..=n_fft/2".into());
        }
        if !(0.0..1.0).contains(&self.preemphasis) {
            return Err("`frontend.preemphasis` must be in [0, 1)".into());
        }
        if !(self.log_floor > 0.0) {
            return Err("`frontend.log_floor` must be positive".into());
        }
        Ok(())
    }
}
