//! Host-side driver: assembles the decoding program, feeds audio in
//! decoding steps and collects reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::command::Accelerator;
use crate::config::Settings;
use crate::ctc::{CtcDecoder, DecodeParams, Lexicon, NGramLm, TokenTable};
use crate::error::{Error, Result};
use crate::exec::StepReport;
use crate::kernel::{KernelClass, PhaseProgram};
use crate::memory::CacheStats;
use crate::model::{build_program, AcousticProgram, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One decoding step per chunk of audio.
    Streaming,
    /// One decoding step with the whole signal.
    Offline,
}

/// 16-bit PCM mono WAV as samples in [-1, 1).
pub fn load_wav(path: &Path, expected_rate: u32) -> Result<Vec<f32>> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Input(format!(
            "{}: {} channels, only mono audio is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Input(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate != expected_rate {
        return Err(Error::Input(format!(
            "{}: sample rate {} Hz, the configuration expects {expected_rate} Hz",
            path.display(),
            spec.sample_rate
        )));
    }
    reader
        .into_samples::<i16>()
        .map(|s| {
            s.map(|v| f32::from(v) / 32768.0)
                .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn save_wav(path: &Path, samples: &[f32], rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| Error::Input(e.to_string()))?;
    for &s in samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(|e| Error::Input(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Input(e.to_string()))
}

/// Summary of one decoding step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSummary {
    pub step_index: usize,
    pub step_cycles: u64,
    pub step_time_seconds: f64,
    /// Kernel whose setup returned zero, when the step stopped early.
    pub early_stop_kernel: Option<usize>,
    pub acoustic_vectors_emitted: u64,
    pub hyp_expansion_repeats: u32,
    pub active_hypotheses_after: usize,
    pub best_partial_transcript: Vec<String>,
    /// Cycles of the step not covered by any kernel's span: setup of the
    /// first kernel, DMA waits and idle PEs between kernels.
    pub gap_cycles: u64,
    pub busy_cycles: u64,
    /// Step start to the end of the last acoustic-scoring thread.
    pub acoustic_cycles: u64,
    pub shared_mem_live_bytes: u64,
    pub shared_mem_peak_bytes: u64,
    pub dma_bytes: u64,
    pub cache: CacheStats,
    pub peak_incoming_hypotheses: usize,
    /// First-thread start to last-thread end of each kernel that ran.
    pub kernel_cycles: BTreeMap<usize, u64>,
}

impl StepSummary {
    pub fn from_step(r: &StepReport, n_acoustic: usize) -> Self {
        let spans: u64 = r.timeline.per_kernel_cycles.values().sum();
        Self {
            step_index: r.step_index,
            step_cycles: r.timeline.step_cycles,
            step_time_seconds: r.step_time_seconds,
            early_stop_kernel: r.timeline.early_stop_kernel,
            acoustic_vectors_emitted: r.acoustic_vectors_emitted,
            hyp_expansion_repeats: r.hyp_expansion_repeats,
            active_hypotheses_after: r.active_hypotheses_after,
            best_partial_transcript: r.best_partial_transcript.clone(),
            gap_cycles: r.timeline.step_cycles - spans,
            busy_cycles: r.timeline.total_busy_cycles(),
            acoustic_cycles: r.timeline.end_cycle_before(n_acoustic),
            shared_mem_live_bytes: r.shared_mem_live_bytes,
            shared_mem_peak_bytes: r.shared_mem_peak_bytes,
            dma_bytes: r.dma_bytes,
            cache: r.cache,
            peak_incoming_hypotheses: r.peak_incoming_hypotheses,
            kernel_cycles: r.timeline.per_kernel_cycles.clone(),
        }
    }
}

/// Totals of one kernel over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelTotals {
    pub kernel_index: usize,
    pub name: String,
    pub class: KernelClass,
    pub group: &'static str,
    pub span_cycles: u64,
    pub busy_cycles: u64,
    pub threads: u64,
    pub time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: Mode,
    pub chunk_ms: f64,
    pub num_pes: usize,
    pub frequency_hz: u64,
    pub steps: Vec<StepSummary>,
    pub kernels: Vec<KernelTotals>,
    /// Span time per reporting group.
    pub group_seconds: BTreeMap<&'static str, f64>,
    pub total_audio_seconds: f64,
    pub total_simulated_seconds: f64,
    /// Audio seconds per simulated second.
    pub real_time_factor: f64,
    pub max_step_seconds: f64,
    pub transcript: Vec<String>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plot-ready per-kernel table.
    pub fn kernel_table(&self) -> String {
        let mut out = String::from("kernel_index\tname\tclass\tgroup\tspan_cycles\tbusy_cycles\tthreads\ttime_ms\n");
        for k in &self.kernels {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
                k.kernel_index,
                k.name,
                k.class.as_str(),
                k.group,
                k.span_cycles,
                k.busy_cycles,
                k.threads,
                k.time_seconds * 1e3
            );
        }
        out
    }

    /// Writes the JSON report to `path` and the kernel table next to it
    /// with a `.tsv` extension.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.to_json())?;
        let table = path.with_extension("tsv");
        std::fs::write(&table, self.kernel_table())?;
        Ok(table)
    }
}

/// The accelerator loaded with an acoustic model and a CTC decoder.
pub struct Pipeline {
    accelerator: Accelerator,
    program: AcousticProgram,
    settings: Settings,
    /// Keep every step's thread outputs.
    capture: bool,
}

impl Pipeline {
    pub fn new(settings: &Settings, model: &Model, lexicon: Lexicon, lm: NGramLm) -> Result<Self> {
        settings.validate()?;
        let program = build_program(model, &settings.frontend, &settings.accelerator)?;
        let params = DecodeParams {
            lm_weight: settings.search.lm_weight,
            word_penalty: settings.search.word_penalty,
            blank: 0,
        };
        let decoder = CtcDecoder::new(lexicon, lm, params, program.scores, program.scores_spec, 0)?;
        let mut accelerator = Accelerator::new(settings.accelerator.clone(), settings.costs)?;
        accelerator.load_program(&PhaseProgram {
            acoustic_scoring: program.kernels.clone(),
            hyp_expansion: Arc::new(decoder),
        })?;
        accelerator.configure_beam_width(settings.search.beam_width)?;
        accelerator.configure_merge_policy(settings.search.merge)?;
        accelerator.clean_decoding();
        Ok(Self { accelerator, program, settings: settings.clone(), capture: false })
    }

    pub fn accelerator(&self) -> &Accelerator {
        &self.accelerator
    }

    pub fn accelerator_mut(&mut self) -> &mut Accelerator {
        &mut self.accelerator
    }

    pub fn program(&self) -> &AcousticProgram {
        &self.program
    }

    pub fn set_capture(&mut self, capture: bool) {
        self.capture = capture;
        self.accelerator.set_capture(capture);
    }

    /// Samples per streaming chunk.
    pub fn chunk_samples(&self, chunk_ms: f64) -> Result<usize> {
        let n = (f64::from(self.settings.frontend.sample_rate) * chunk_ms / 1000.0).round();
        if !(n >= 1.0) {
            return Err(Error::Argument(format!("chunk of {chunk_ms} ms holds no samples")));
        }
        Ok(n as usize)
    }

    /// Decodes one utterance from a clean state and returns the raw step
    /// reports and the final transcript.
    pub fn decode_steps(&mut self, samples: &[f32], mode: Mode, chunk_ms: f64) -> Result<(Vec<StepReport>, Vec<String>)> {
        self.accelerator.clean_decoding();
        let chunks: Vec<&[f32]> = match mode {
            Mode::Offline => vec![samples],
            Mode::Streaming => samples.chunks(self.chunk_samples(chunk_ms)?).collect(),
        };
        let mut reports = Vec::with_capacity(chunks.len());
        for (step, chunk) in chunks.into_iter().enumerate() {
            let r = self
                .accelerator
                .decoding_step(chunk)
                .map_err(|e| Error::Step { step, source: Box::new(e) })?;
            reports.push(r);
        }
        let transcript = self.accelerator.best_transcript()?;
        Ok((reports, transcript))
    }

    pub fn run(&mut self, samples: &[f32], mode: Mode, chunk_ms: f64) -> Result<RunReport> {
        let (steps, transcript) = self.decode_steps(samples, mode, chunk_ms)?;
        self.accelerator.clean_decoding();
        Ok(self.summarize(&steps, transcript, samples.len(), mode, chunk_ms))
    }

    pub fn summarize(&self, steps: &[StepReport], transcript: Vec<String>, n_samples: usize, mode: Mode, chunk_ms: f64) -> RunReport {
        let cfg = &self.settings.accelerator;
        let freq = cfg.frequency_hz as f64;
        let names: Vec<(String, KernelClass)> = self
            .program
            .kernels
            .iter()
            .map(|k| (k.name().to_string(), k.routine.class()))
            .chain(std::iter::once(("ctc-expand".to_string(), KernelClass::HypExpansion)))
            .collect();
        let mut kernels: Vec<KernelTotals> = names
            .into_iter()
            .enumerate()
            .map(|(i, (name, class))| KernelTotals {
                kernel_index: i,
                name,
                class,
                group: class.group(),
                span_cycles: 0,
                busy_cycles: 0,
                threads: 0,
                time_seconds: 0.0,
            })
            .collect();
        for s in steps {
            for (&k, &c) in &s.timeline.per_kernel_cycles {
                kernels[k].span_cycles += c;
            }
            for r in &s.timeline.records {
                let k = &mut kernels[r.kernel_index];
                k.busy_cycles += r.cycles();
                if r.kind == crate::exec::ThreadKind::Kernel {
                    k.threads += 1;
                }
            }
        }
        let mut group_seconds = BTreeMap::new();
        for k in &mut kernels {
            k.time_seconds = k.span_cycles as f64 / freq;
            *group_seconds.entry(k.group).or_insert(0.0) += k.time_seconds;
        }
        let total_audio_seconds = n_samples as f64 / f64::from(self.settings.frontend.sample_rate);
        let total_simulated_seconds: f64 = steps.iter().map(|s| s.step_time_seconds).sum();
        RunReport {
            mode,
            chunk_ms,
            num_pes: cfg.num_pes,
            frequency_hz: cfg.frequency_hz,
            steps: steps.iter().map(|s| StepSummary::from_step(s, self.program.kernels.len())).collect(),
            kernels,
            group_seconds,
            total_audio_seconds,
            total_simulated_seconds,
            real_time_factor: if total_simulated_seconds > 0.0 {
                total_audio_seconds / total_simulated_seconds
            } else {
                f64::INFINITY
            },
            max_step_seconds: steps.iter().map(|s| s.step_time_seconds).fold(0.0, f64::max),
            transcript,
        }
    }
}

/// Everything a run reads from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: Option<PathBuf>,
    pub model: PathBuf,
    pub lexicon: PathBuf,
    pub lm: PathBuf,
    pub tokens: PathBuf,
    pub audio: PathBuf,
    pub chunk_ms: f64,
    pub mode: Mode,
    pub report: Option<PathBuf>,
    pub seed: u64,
    pub beam: Option<f64>,
    pub lm_weight: Option<f64>,
    pub word_penalty: Option<f64>,
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Input(format!("cannot read {what} {}: {e}", path.display())))
}

impl RunManifest {
    pub fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        if let Some(b) = self.beam {
            s.search.beam_width = b;
        }
        if let Some(w) = self.lm_weight {
            s.search.lm_weight = w;
        }
        if let Some(p) = self.word_penalty {
            s.search.word_penalty = p;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn run(&self) -> Result<RunReport> {
        if !(self.chunk_ms > 0.0) {
            return Err(Error::Config(format!("chunk_ms must be positive, got {}", self.chunk_ms)));
        }
        let settings = self.settings()?;
        let tokens = TokenTable::parse(&read_text(&self.tokens, "token table")?)?;
        let lexicon = Lexicon::parse(&read_text(&self.lexicon, "lexicon")?, &tokens)?;
        let lm = NGramLm::parse_arpa(&read_text(&self.lm, "language model")?)?;
        let model = Model::load(&self.model, self.seed)?;
        if model.descriptor.n_tokens() != tokens.len() {
            return Err(Error::Config(format!(
                "model emits {} token scores, the token table has {} tokens",
                model.descriptor.n_tokens(),
                tokens.len()
            )));
        }
        let samples = load_wav(&self.audio, settings.frontend.sample_rate)?;
        let mut pipeline = Pipeline::new(&settings, &model, lexicon, lm)?;
        let report = pipeline.run(&samples, self.mode, self.chunk_ms)?;
        if let Some(path) = &self.report {
            report.write(path)?;
        }
        Ok(report)
    }
}
