//! Oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// MFCC of one frame computed directly in f64: naive DFT, triangle
/// weights evaluated per bin, cosine-sum DCT.
pub fn mfcc_oracle(frame: &[f32], n_fft: usize, n_mels: usize, sample_rate: f64) -> Vec<f64> {
    let n = frame.len();
    let mut x: Vec<f64> = frame.iter().map(|&v| v as f64).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let prev = if i == 0 { x[0] } else { x[i - 1] };
        let w = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        y[i] = (x[i] - 0.97 * prev) * w;
    }
    let bins = n_fft / 2 + 1;
    let power: Vec<f64> = (0..bins)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in y.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n_fft as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let top = mel(sample_rate / 2.0);
    let logs: Vec<f64> = (0..n_mels)
        .map(|m| {
            let l = top * m as f64 / (n_mels + 1) as f64;
            let c = top * (m + 1) as f64 / (n_mels + 1) as f64;
            let r = top * (m + 2) as f64 / (n_mels + 1) as f64;
            let e: f64 = power
                .iter()
                .enumerate()
                .map(|(k, p)| {
                    let b = mel(k as f64 * sample_rate / n_fft as f64);
                    let w = if b > l && b <= c {
                        (b - l) / (c - l)
                    } else if b > c && b < r {
                        (r - b) / (r - c)
                    } else {
                        0.0
                    };
                    w * p
                })
                .sum();
            e.max(1e-10).ln()
        })
        .collect();
    let nm = n_mels as f64;
    (0..n_mels)
        .map(|k| {
            let s: f64 = logs
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nm)).cos())
                .sum();
            s * if k == 0 { (1.0 / nm).sqrt() } else { (2.0 / nm).sqrt() }
        })
        .collect()
}

pub mod replay {
    use asrpu::cost::PeContext;
    use asrpu::kernel::{AcousticKernel, BufferDecl, KernelClass, KernelState, Machine, ThreadOutput};
    use asrpu::memory::{Blob, BufferId, BufferSpec, ElemType};
    use asrpu::Fault;

    /// Acoustic kernel that emits preset score vectors, `per_step` per
    /// decoding step.
    #[derive(Debug, Clone)]
    pub struct ReplayKernel {
        pub rows: Vec<Vec<f32>>,
        pub per_step: usize,
        pub output: BufferId,
    }

    impl ReplayKernel {
        pub fn spec(&self) -> BufferSpec {
            BufferSpec {
                item_len: self.rows[0].len(),
                elem: ElemType::F32,
                capacity_items: 64,
            }
        }
    }

    impl AcousticKernel for ReplayKernel {
        fn name(&self) -> &str {
            "replay"
        }

        fn class(&self) -> KernelClass {
            KernelClass::Fc
        }

        fn buffers(&self) -> Vec<BufferDecl> {
            vec![BufferDecl { id: self.output, spec: self.spec(), readers: Vec::new() }]
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
            pe.load(1);
            let n = (self.rows.len() as u64 - state.produced).min(self.per_step as u64);
            state.launch_base = state.produced;
            state.launch_items = n;
            if n > 0 {
                machine.shared.reserve_output(self.output, n)?;
            }
            Ok(n as u32)
        }

        fn thread(
            &self,
            thread_id: u32,
            _machine: &Machine,
            state: &KernelState,
            pe: &mut PeContext<'_>,
        ) -> Result<ThreadOutput, Fault> {
            let row = &self.rows[(state.launch_base + u64::from(thread_id)) as usize];
            pe.store(row.len() as u64);
            Ok(row.clone())
        }

        fn complete(
            &self,
            machine: &mut Machine,
            state: &mut KernelState,
            outputs: Vec<ThreadOutput>,
        ) -> Result<(), Fault> {
            let buf = machine.shared.get_mut(self.output)?;
            for (i, row) in outputs.iter().enumerate() {
                buf.write_item(state.launch_base + i as u64, row)?;
            }
            machine.shared.commit(self.output, outputs.len() as u64)?;
            state.produced += outputs.len() as u64;
            Ok(())
        }
    }
}

/// Exhaustive reference for lexicon-constrained CTC decoding with a
/// back-off bigram LM.
pub mod ctc_oracle {
    use std::collections::HashMap;

    pub struct Problem {
        /// Raw scores, `T x V`; token 0 is the blank.
        pub logits: Vec<Vec<f32>>,
        /// `(word, spelling)`; a word may appear with several spellings and
        /// a spelling with several words.
        pub lexicon: Vec<(String, Vec<u32>)>,
        /// Unigrams `(word, log10 p, backoff)`.
        pub unigrams: Vec<(String, f64, f64)>,
        /// Bigrams `(w1, w2, log10 p)`.
        pub bigrams: Vec<(String, String, f64)>,
        pub lm_weight: f64,
        pub word_penalty: f64,
    }

    impl Problem {
        fn log_softmax(row: &[f32]) -> Vec<f64> {
            let m = row.iter().map(|&x| x as f64).fold(f64::NEG_INFINITY, f64::max);
            let z = m + row.iter().map(|&x| (x as f64 - m).exp()).sum::<f64>().ln();
            row.iter().map(|&x| x as f64 - z).collect()
        }

        /// log10 P(w | prev) with back-off; unknown words score as `<unk>`,
        /// which defaults to -99 when absent.
        fn lm(&self, prev: &str, w: &str) -> f64 {
            let uni: HashMap<&str, (f64, f64)> =
                self.unigrams.iter().map(|(w, p, b)| (w.as_str(), (*p, *b))).collect();
            let w = if uni.contains_key(w) { w } else { "<unk>" };
            if let Some((_, _, p)) = self.bigrams.iter().find(|(a, b, _)| a == prev && b == w) {
                return *p;
            }
            let backoff = uni.get(prev).map_or(0.0, |u| u.1);
            let p = uni.get(w).map_or(-99.0, |u| u.0);
            // A missing context or an unknown predecessor contributes no
            // back-off weight.
            let has_prev = uni.contains_key(prev);
            if has_prev { backoff + p } else { p }
        }

        fn start(&self) -> &str {
            if self.unigrams.iter().any(|(w, _, _)| w == "<s>") {
                "<s>"
            } else {
                ""
            }
        }

        /// Best score and words of a collapsed labeling: segment it into
        /// words plus a trailing partial spelling that can still be continued.
        fn labeling_score(&self, labels: &[u32], prev: &str) -> (f64, Vec<String>) {
            let mut best = if labels.is_empty() || self.continuable(labels) {
                (0.0, Vec::new())
            } else {
                (f64::NEG_INFINITY, Vec::new())
            };
            for (word, spelling) in &self.lexicon {
                if labels.starts_with(spelling) {
                    let s = self.lm_weight * self.lm(prev, word) + self.word_penalty;
                    let lm_word = if self.unigrams.iter().any(|(u, _, _)| u == word) {
                        word.as_str()
                    } else {
                        "<unk>"
                    };
                    let (rest, mut words) = self.labeling_score(&labels[spelling.len()..], lm_word);
                    if s + rest > best.0 {
                        words.insert(0, word.clone());
                        best = (s + rest, words);
                    }
                }
            }
            best
        }

        /// A prefix is kept as a partial word when it is a proper prefix of
        /// some spelling or is not itself a complete spelling.
        fn continuable(&self, prefix: &[u32]) -> bool {
            let is_prefix = self.lexicon.iter().any(|(_, s)| s.starts_with(prefix));
            let proper = self.lexicon.iter().any(|(_, s)| s.len() > prefix.len() && s.starts_with(prefix));
            let complete = self.lexicon.iter().any(|(_, s)| s == prefix);
            is_prefix && (proper || !complete)
        }

        /// Maximum over every alignment of length T, with its words.
        pub fn best(&self) -> (f64, Vec<String>) {
            let lp: Vec<Vec<f64>> = self.logits.iter().map(|r| Self::log_softmax(r)).collect();
            let v = self.logits[0].len();
            let t = self.logits.len();
            let mut memo: HashMap<Vec<u32>, (f64, Vec<String>)> = HashMap::new();
            let mut best = (f64::NEG_INFINITY, Vec::new());
            let mut path = vec![0u32; t];
            loop {
                let acoustic: f64 = path.iter().enumerate().map(|(i, &k)| lp[i][k as usize]).sum();
                let mut labels = Vec::new();
                let mut last = 0;
                for &k in &path {
                    if k != 0 && k != last {
                        labels.push(k);
                    }
                    last = k;
                }
                let (ls, words) = memo
                    .entry(labels.clone())
                    .or_insert_with(|| self.labeling_score(&labels, self.start()));
                if acoustic + *ls > best.0 {
                    best = (acoustic + *ls, words.clone());
                }
                let mut i = 0;
                while i < t {
                    path[i] += 1;
                    if (path[i] as usize) < v {
                        break;
                    }
                    path[i] = 0;
                    i += 1;
                }
                if i == t {
                    return best;
                }
            }
        }
    }
}

pub mod ctc_run {
    use std::sync::Arc;

    use asrpu::config::MIB;
    use asrpu::cost::CostTable;
    use asrpu::ctc::{CtcDecoder, DecodeParams, Lexicon, NGramLm};
    use asrpu::kernel::KernelDescriptor;
    use asrpu::{Accelerator, AcceleratorConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::ctc_oracle::Problem;
    use super::replay::ReplayKernel;

    /// Random desk-scale instance: T <= 6, at most 5 tokens, at most 4
    /// words, a bigram LM with back-off and possibly an out-of-vocabulary
    /// word.
    pub fn random_problem(seed: u64) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = rng.gen_range(3..=5u32);
        let t = rng.gen_range(1..=6usize);
        let logits = (0..t)
            .map(|_| (0..v).map(|_| rng.gen_range(-3.0f32..3.0)).collect())
            .collect();
        let n_words = rng.gen_range(1..=4usize);
        let mut lexicon: Vec<(String, Vec<u32>)> = Vec::new();
        for i in 0..n_words {
            let spelling = if i > 0 && rng.gen_bool(0.15) {
                lexicon[rng.gen_range(0..i)].1.clone()
            } else {
                let len = rng.gen_range(1..=3);
                (0..len).map(|_| rng.gen_range(1..v)).collect()
            };
            lexicon.push((format!("w{i}"), spelling));
        }
        let oov = if n_words > 1 && rng.gen_bool(0.3) { Some(rng.gen_range(0..n_words)) } else { None };
        let mut lm_words: Vec<String> = (0..n_words)
            .filter(|&i| Some(i) != oov)
            .map(|i| format!("w{i}"))
            .collect();
        if rng.gen_bool(0.5) {
            lm_words.push("<unk>".into());
        }
        let mut unigrams: Vec<(String, f64, f64)> = vec![("<s>".into(), -99.0, rng.gen_range(-1.0..0.0))];
        for w in &lm_words {
            unigrams.push((w.clone(), rng.gen_range(-3.0..-0.1), rng.gen_range(-1.0..0.0)));
        }
        let mut bigrams = Vec::new();
        for (a, _, _) in &unigrams {
            for b in &lm_words {
                if rng.gen_bool(0.4) {
                    bigrams.push((a.clone(), b.clone(), rng.gen_range(-2.0..-0.05)));
                }
            }
        }
        Problem {
            logits,
            lexicon,
            unigrams,
            bigrams,
            lm_weight: rng.gen_range(0.5..2.0),
            word_penalty: if rng.gen_bool(0.5) { 0.7 } else { -0.4 } * rng.gen_range(0.2..1.0),
        }
    }

    pub fn decoder(p: &Problem, trace: bool) -> CtcDecoder {
        let mut lex = Lexicon::new();
        for (w, s) in &p.lexicon {
            lex.add(w, s.clone()).unwrap();
        }
        let mut ngrams: Vec<(Vec<String>, f64, f64)> =
            p.unigrams.iter().map(|(w, pr, b)| (vec![w.clone()], *pr, *b)).collect();
        ngrams.extend(p.bigrams.iter().map(|(a, b, pr)| (vec![a.clone(), b.clone()], *pr, 0.0)));
        let lm = NGramLm::from_ngrams(2, &ngrams).unwrap();
        let replay = replay_kernel(p, 1);
        let params = DecodeParams { lm_weight: p.lm_weight, word_penalty: p.word_penalty, blank: 0 };
        CtcDecoder::new(lex, lm, params, 0, replay.spec(), 0).unwrap().with_trace(trace)
    }

    pub fn replay_kernel(p: &Problem, per_step: usize) -> ReplayKernel {
        ReplayKernel { rows: p.logits.clone(), per_step, output: 0 }
    }

    /// Decodes with beam = infinity and a hypothesis memory large enough
    /// that capacity never prunes.
    pub fn decode(p: &Problem, per_step: usize, trace: bool) -> Accelerator {
        let config = AcceleratorConfig { hyp_mem_bytes: 4 * MIB, ..AcceleratorConfig::default() };
        let mut acc = Accelerator::new(config, CostTable::default()).unwrap();
        acc.configure_acoustic_scoring(0, KernelDescriptor::new(Arc::new(replay_kernel(p, per_step))))
            .unwrap();
        acc.configure_hyp_expansion(Arc::new(decoder(p, trace))).unwrap();
        acc.configure_beam_width(f64::INFINITY).unwrap();
        acc.clean_decoding();
        for _ in 0..p.logits.len().div_ceil(per_step) {
            acc.decoding_step(&[]).unwrap();
        }
        acc
    }
}

/// Layer-by-layer forward pass over a whole utterance, written directly
/// from the layer definitions: int8 operands, 32-bit integer accumulation,
/// causal zero padding.
pub mod model_oracle {
    use asrpu::model::{LayerSpec, LayerWeights, Model};

    fn quantize(x: f32, scale: f32) -> i8 {
        (x / scale).round().clamp(-127.0, 127.0) as i8
    }

    /// A layer's output frames, integer-valued for int8 layers.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Layer {
        pub frames: Vec<Vec<f32>>,
        /// Scale of int8 frames; `None` for real-valued frames.
        pub scale: Option<f32>,
    }

    impl Layer {
        fn real(&self, f: usize, i: usize) -> f32 {
            match self.scale {
                Some(s) => self.frames[f][i] * s,
                None => self.frames[f][i],
            }
        }

        fn ints(&self, f: usize, input_scale: f32) -> (Vec<i32>, f32) {
            match self.scale {
                Some(s) => (self.frames[f].iter().map(|&v| v as i32).collect(), s),
                None => (self.frames[f].iter().map(|&v| i32::from(quantize(v, input_scale))).collect(), input_scale),
            }
        }
    }

    fn finish(mut v: f32, relu: bool, residual: Option<f32>, scale: Option<f32>) -> f32 {
        if relu {
            v = v.max(0.0);
        }
        if let Some(r) = residual {
            v += r;
        }
        match scale {
            Some(s) => f32::from(quantize(v, s)),
            None => v,
        }
    }

    /// Outputs of every layer, `[0]` being the features.
    pub fn forward(model: &Model, features: Vec<Vec<f32>>) -> Vec<Layer> {
        let d = &model.descriptor;
        let mut layers = vec![Layer { frames: features, scale: None }];
        for (i, spec) in d.layers.iter().enumerate() {
            let last = i + 1 == d.layers.len();
            let next_norm = matches!(d.layers.get(i + 1), Some(LayerSpec::LayerNorm(_)));
            let scale = if last || next_norm { None } else { Some(d.act_scale) };
            let input = &layers[i];
            let frames = match (spec, model.layers[i].as_ref()) {
                (LayerSpec::Conv1d(c), LayerWeights::Conv { weights, bias }) => {
                    let n = c.output_count(input.frames.len() as u64) as usize;
                    let w = &weights.values;
                    let mut out = Vec::new();
                    for j in 0..n {
                        let mut row = Vec::new();
                        for x in 0..c.width {
                            for co in 0..c.out_channels {
                                let mut acc = 0i32;
                                for dk in 0..c.kernel {
                                    let logical = j * c.stride + dk;
                                    if logical < c.pad {
                                        continue;
                                    }
                                    let (xs, _) = input.ints(logical - c.pad, d.input_scale);
                                    for ci in 0..c.in_channels {
                                        let wv = i32::from(w[(co * c.kernel + dk) * c.in_channels + ci]);
                                        acc += wv * xs[x * c.in_channels + ci];
                                    }
                                }
                                let in_scale = input.scale.unwrap_or(d.input_scale);
                                let o = x * c.out_channels + co;
                                let residual = c.residual.then(|| input.real(j + c.kernel - 1 - c.pad, o));
                                let v = acc as f32 * (weights.scale * in_scale) + bias[co];
                                row.push(finish(v, c.relu, residual, scale));
                            }
                        }
                        out.push(row);
                    }
                    out
                }
                (LayerSpec::Fc(f), LayerWeights::Fc { weights, bias }) => (0..input.frames.len())
                    .map(|t| {
                        let (xs, in_scale) = input.ints(t, d.input_scale);
                        (0..f.outputs)
                            .map(|n| {
                                let acc: i32 = (0..f.inputs)
                                    .map(|k| i32::from(weights.values[n * f.inputs + k]) * xs[k])
                                    .sum();
                                let residual = f.residual.then(|| layers[i - 1].real(t, n));
                                let v = acc as f32 * (weights.scale * in_scale) + bias[n];
                                finish(v, f.relu, residual, scale)
                            })
                            .collect()
                    })
                    .collect(),
                (LayerSpec::LayerNorm(l), LayerWeights::LayerNorm { gamma, beta }) => (0..input.frames.len())
                    .map(|t| {
                        let x: Vec<f64> = (0..l.dim).map(|k| f64::from(input.real(t, k))).collect();
                        let mean = x.iter().sum::<f64>() / l.dim as f64;
                        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l.dim as f64;
                        let inv = 1.0 / (var + f64::from(l.eps)).sqrt();
                        (0..l.dim)
                            .map(|k| {
                                let mut v = ((x[k] - mean) * inv) as f32;
                                if l.affine {
                                    v = v * gamma[k] + beta[k];
                                }
                                finish(v, false, None, scale)
                            })
                            .collect()
                    })
                    .collect(),
                _ => panic!("layer {i}: weights do not match the descriptor"),
            };
            layers.push(Layer { frames, scale });
        }
        layers
    }
}

/// Runs a model program and reassembles every layer's output frames from
/// captured thread outputs.
pub mod model_run {
    use asrpu::config::{AcceleratorConfig, Settings};
    use asrpu::model::{build_program, AcousticProgram, Model};
    use asrpu::runner::{Mode, Pipeline};
    use asrpu::ctc::{Lexicon, NGramLm, TokenTable, SENTENCE_START, UNK};

    /// A one-word lexicon and unigram LM over `n_tokens` tokens, enough to
    /// drive the decoder.
    pub fn tiny_decoder(n_tokens: usize) -> (TokenTable, Lexicon, NGramLm) {
        let symbols = std::iter::once("<b>".to_string()).chain((1..n_tokens).map(|i| format!("t{i}"))).collect();
        let tokens = TokenTable::new(symbols).unwrap();
        let mut lexicon = Lexicon::new();
        lexicon.add("a", vec![1]).unwrap();
        let ngrams = vec![
            (vec![SENTENCE_START.to_string()], -99.0, 0.0),
            (vec![UNK.to_string()], -5.0, 0.0),
            (vec!["a".to_string()], -1.0, 0.0),
        ];
        let lm = NGramLm::from_ngrams(1, &ngrams).unwrap();
        (tokens, lexicon, lm)
    }

    pub fn settings(config: AcceleratorConfig, n_mels: usize) -> Settings {
        let mut s = Settings { accelerator: config, ..Settings::default() };
        s.frontend.n_mels = n_mels;
        s
    }

    /// Frames of every layer, `[0]` being the features.
    pub fn layer_frames(
        program: &AcousticProgram,
        model: &Model,
        captured: &[(usize, Vec<Vec<f32>>)],
    ) -> Vec<Vec<Vec<f32>>> {
        let n_layers = model.descriptor.layers.len();
        let mut flat: Vec<Vec<f32>> = vec![Vec::new(); program.kernels.len()];
        for (k, outs) in captured {
            for o in outs {
                flat[*k].extend_from_slice(o);
            }
        }
        let mut layers: Vec<Vec<Vec<f32>>> = vec![Vec::new(); n_layers + 1];
        let dims: Vec<usize> = std::iter::once(model.descriptor.input_dim)
            .chain(model.descriptor.layers.iter().map(|l| l.out_dim()))
            .collect();
        for (k, origin) in program.origins.iter().enumerate() {
            let slot = origin.layer.map_or(0, |l| l + 1);
            let width = origin.neurons.as_ref().map_or(dims[slot], |r| r.len());
            let rows: Vec<&[f32]> = flat[k].chunks(width).collect();
            let out = &mut layers[slot];
            if out.len() < rows.len() {
                out.resize(rows.len(), Vec::new());
            }
            for (f, r) in rows.into_iter().enumerate() {
                out[f].extend_from_slice(r);
            }
        }
        layers
    }

    /// Decodes `samples` with capture on; returns layer frames and transcript.
    pub fn run(
        model: &Model,
        settings: &Settings,
        samples: &[f32],
        mode: Mode,
        chunk_ms: f64,
    ) -> (Vec<Vec<Vec<f32>>>, Vec<String>, Vec<asrpu::exec::StepReport>) {
        let (_, lexicon, lm) = tiny_decoder(model.descriptor.n_tokens());
        let mut p = Pipeline::new(settings, model, lexicon, lm).unwrap();
        p.set_capture(true);
        let (steps, transcript) = p.decode_steps(samples, mode, chunk_ms).unwrap();
        let captured: Vec<_> = steps.iter().flat_map(|s| s.captured.iter().cloned()).collect();
        let program = build_program(model, &settings.frontend, &settings.accelerator).unwrap();
        (layer_frames(&program, model, &captured), transcript, steps)
    }
}

use std::sync::Arc;

use asrpu::config::AcceleratorConfig;
use asrpu::cost::{CostTable, PeContext};
use asrpu::hypothesis::MergePolicy;
use asrpu::kernel::{AcousticKernel, KernelState, Machine};
use asrpu::memory::{Blob, BufferSpec, ElemType};
use asrpu::model::{FcKernel, FcSpec, InputBinding, LayerParams, LayerWeights, OutputBinding, QuantizedTensor};

/// Runs thread 0 of an FC kernel on one input frame.
pub fn fc_thread(spec: FcSpec, weights: Vec<i8>, w_scale: f32, bias: Vec<f32>, input: &[i8], out: ElemType) -> (f32, u64) {
    let cfg = AcceleratorConfig::default();
    let costs = CostTable::default();
    let mut machine = Machine::new(&cfg, MergePolicy::Max);
    let in_spec = BufferSpec { item_len: spec.inputs, elem: ElemType::I8 { scale: 1.0 }, capacity_items: 4 };
    let out_spec = BufferSpec { item_len: spec.outputs, elem: out, capacity_items: 4 };
    machine.shared.declare(0, in_spec, &[0]).unwrap();
    machine.shared.declare(1, out_spec, &[]).unwrap();
    machine.shared.reserve_output(0, 1).unwrap();
    let frame: Vec<f32> = input.iter().map(|&v| f32::from(v)).collect();
    machine.shared.get_mut(0).unwrap().write_item(0, &frame).unwrap();
    machine.shared.commit(0, 1).unwrap();
    let bytes = weights.len() as u64 + 4 * bias.len() as u64;
    let blob = Blob { id: 7, bytes };
    machine.model.dma_prefetch(blob, 0).unwrap();
    let w = LayerWeights::Fc {
        weights: QuantizedTensor::new(weights, w_scale, vec![spec.outputs, spec.inputs]),
        bias,
    };
    let params = LayerParams {
        layer: 0,
        input: InputBinding { buffer: 0, reader: 0, spec: in_spec },
        f32_input_scale: 1.0,
        residual: None,
        output: OutputBinding { buffer: 1, spec: out_spec },
        neurons: 0..spec.outputs,
        first_partition: true,
        last_partition: true,
        blob,
    };
    let k = FcKernel::new("fc".into(), spec, Arc::new(w), params);
    let mut state = KernelState::default();
    let mut pe = PeContext::new(&costs, cfg.mac_width);
    assert_eq!(k.setup(&mut machine, &mut state, &mut pe).unwrap(), spec.outputs as u32);
    let mut pe = PeContext::new(&costs, cfg.mac_width);
    let v = k.thread(0, &machine, &state, &mut pe).unwrap();
    (v[0], pe.instruction_count())
}
