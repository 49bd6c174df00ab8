mod common;

use asrpu::config::AcceleratorConfig;
use asrpu::cost::CostTable;
use asrpu::memory::ElemType;
use asrpu::model::{build_program, layer_norm, ConvSpec, FcSpec, Model, ModelDescriptor};
use asrpu::runner::Mode;
use common::model_oracle;
use common::model_run::{run, settings};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SMALL: &str = r#"
input_dim = 16
input_scale = 0.25

[[layer]]
kind = "conv1d"
in_channels = 1
out_channels = 2
width = 16
kernel = 3
stride = 2
pad = 2
relu = true

[[layer]]
kind = "layernorm"
dim = 32

[[layer]]
kind = "conv1d"
in_channels = 2
out_channels = 2
width = 16
kernel = 3
stride = 1
pad = 2
relu = true
residual = true

[[layer]]
kind = "fc"
inputs = 32
outputs = 24
relu = true

[[layer]]
kind = "fc"
inputs = 24
outputs = 32
residual = true

[[layer]]
kind = "layernorm"
dim = 32

[[layer]]
kind = "fc"
inputs = 32
outputs = 7
"#;

fn small_model(seed: u64) -> Model {
    Model::generate(ModelDescriptor::parse(SMALL).unwrap(), seed).unwrap()
}

fn audio(seconds: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (16_000.0 * seconds) as usize;
    (0..n)
        .map(|i| {
            let t = i as f32 / 16_000.0;
            0.4 * (2.0 * std::f32::consts::PI * (200.0 + 300.0 * t) * t).sin() + rng.gen_range(-0.05..0.05)
        })
        .collect()
}

fn config(num_pes: usize, model_mem_bytes: u64) -> AcceleratorConfig {
    AcceleratorConfig { num_pes, model_mem_bytes, ..AcceleratorConfig::default() }
}

#[test]
fn layers_match_integer_oracle_in_every_mode() {
    let model = small_model(3);
    let s = settings(config(8, 1 << 20), 16);
    let samples = audio(1.2, 1);
    let (offline, t_off, _) = run(&model, &s, &samples, Mode::Offline, 80.0);
    let expect = model_oracle::forward(&model, offline[0].clone());
    assert_eq!(expect.len(), offline.len());
    for (i, (got, want)) in offline.iter().zip(&expect).enumerate() {
        assert!(!got.is_empty(), "layer {i} produced nothing");
        assert_eq!(got, &want.frames, "layer {i}");
    }
    for chunk in [80.0, 30.0, 10.0] {
        let (streamed, t, _) = run(&model, &s, &samples, Mode::Streaming, chunk);
        assert_eq!(streamed, offline, "chunk {chunk} ms");
        assert_eq!(t, t_off);
    }
}

#[test]
fn partitioned_layers_are_bit_identical() {
    let model = small_model(5);
    let whole = settings(config(8, 1 << 20), 16);
    let split = settings(config(8, 300), 16);
    let a = build_program(&model, &whole.frontend, &whole.accelerator).unwrap();
    let b = build_program(&model, &split.frontend, &split.accelerator).unwrap();
    assert_eq!(a.kernels.len(), 1 + 7);
    assert!(b.kernels.len() > a.kernels.len() + 3, "{} kernels", b.kernels.len());
    for o in &b.origins {
        assert!(o.model_bytes <= 300, "{o:?}");
    }
    let samples = audio(0.6, 2);
    let (x, tx, _) = run(&model, &whole, &samples, Mode::Streaming, 80.0);
    let (y, ty, _) = run(&model, &split, &samples, Mode::Streaming, 80.0);
    assert_eq!(x, y);
    assert_eq!(tx, ty);
}

#[test]
fn outputs_do_not_depend_on_pe_count() {
    let model = small_model(8);
    let samples = audio(0.5, 4);
    let runs: Vec<_> = [1, 2, 8]
        .iter()
        .map(|&p| run(&model, &settings(config(p, 1 << 20), 16), &samples, Mode::Streaming, 80.0))
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.0, runs[0].0);
        assert_eq!(r.1, runs[0].1);
    }
    let cycles = |r: &(_, _, Vec<asrpu::exec::StepReport>)| -> u64 { r.2.iter().map(|s| s.timeline.step_cycles).sum() };
    assert!(cycles(&runs[0]) > cycles(&runs[1]));
    assert!(cycles(&runs[1]) > cycles(&runs[2]));
}

#[test]
fn six_frames_give_three_vectors_at_stride_two() {
    let model = small_model(1);
    assert_eq!(model.descriptor.subsample_factor(), 2);
    let s = settings(config(8, 1 << 20), 16);
    // 25 ms window, 10 ms shift: 400 + 5 * 160 samples hold six frames.
    let samples = audio(1200.0 / 16_000.0, 3);
    let (layers, _, steps) = run(&model, &s, &samples, Mode::Offline, 80.0);
    assert_eq!(layers[0].len(), 6);
    assert_eq!(steps.len(), 1);
    assert_eq!(steps[0].acoustic_vectors_emitted, 3);
    assert_eq!(steps[0].hyp_expansion_repeats, 3);
}

#[test]
fn conv_window_needs_a_full_kernel_of_frames() {
    let c = ConvSpec {
        in_channels: 1,
        out_channels: 1,
        width: 16,
        kernel: 10,
        stride: 2,
        pad: 0,
        relu: false,
        residual: false,
    };
    // floor((16 - 10) / 2) + 1
    assert_eq!(c.output_count(16), 4);
    assert_eq!(c.output_count(9), 0);
    assert_eq!(c.output_count(10), 1);

    let text = SMALL.replacen("kernel = 3\nstride = 2\npad = 2", "kernel = 10\nstride = 2\npad = 0", 1);
    let model = Model::generate(ModelDescriptor::parse(&text).unwrap(), 2).unwrap();
    let s = settings(config(8, 1 << 20), 16);
    let nine = audio((400.0 + 8.0 * 160.0) / 16_000.0, 5);
    let (_, _, steps) = run(&model, &s, &nine, Mode::Offline, 80.0);
    assert_eq!(steps[0].timeline.early_stop_kernel, Some(1));
    assert_eq!(steps[0].acoustic_vectors_emitted, 0);
    let sixteen = audio((400.0 + 15.0 * 160.0) / 16_000.0, 5);
    let (layers, _, steps) = run(&model, &s, &sixteen, Mode::Offline, 80.0);
    assert_eq!(layers[1].len(), 4);
    assert_eq!(steps[0].acoustic_vectors_emitted, 4);
}

#[test]
fn fc_neuron_examples() {
    let spec = FcSpec { inputs: 1200, outputs: 1, relu: true, residual: false };
    let (v, _) = common::fc_thread(spec, vec![1; 1200], 1.0, vec![0.0], &[1; 1200], ElemType::F32);
    assert_eq!(v, 1200.0);
    let (v, _) = common::fc_thread(spec, vec![-1; 1200], 1.0, vec![0.0], &[1; 1200], ElemType::F32);
    assert_eq!(v, 0.0);
}

#[test]
fn fc_thread_cost_matches_closed_form() {
    let c = CostTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (inputs, relu, out) in [
        (1200, true, ElemType::I8 { scale: 0.5 }),
        (37, false, ElemType::F32),
        (8, true, ElemType::F32),
        (2160, false, ElemType::I8 { scale: 0.1 }),
    ] {
        let spec = FcSpec { inputs, outputs: 1, relu, residual: false };
        let w: Vec<i8> = (0..inputs).map(|_| rng.gen_range(-127..=127)).collect();
        let x: Vec<i8> = (0..inputs).map(|_| rng.gen_range(-127..=127)).collect();
        let (_, got) = common::fc_thread(spec, w, 1e-4, vec![0.0], &x, out);
        // Parameter loads, the MAC loop (two loads, one MAC, loop
        // overhead), scale and bias, activation, requantization, store.
        let iters = inputs.div_ceil(8) as u64;
        let mac_loop = c.add + iters * (2 * c.load + c.mac + c.compare + c.branch + c.add);
        let epilogue = c.load + 2 * c.add + c.mul;
        let act = if relu { c.compare + c.branch } else { 0 };
        let quant = if matches!(out, ElemType::I8 { .. }) { c.mul + c.add + 2 * c.compare } else { 0 };
        let expect = 5 * c.load + mac_loop + epilogue + act + quant + c.store;
        assert_eq!(got, expect, "{inputs} inputs");
    }
}

#[test]
fn layer_norm_examples() {
    let y = layer_norm(&[1.0, 2.0, 3.0, 4.0], 0.0);
    for (a, b) in y.iter().zip([-1.3416, -0.4472, 0.4472, 1.3416]) {
        assert!((a - b).abs() < 1e-4, "{y:?}");
    }
    assert!(layer_norm(&[3.0; 8], 1e-5).iter().all(|&v| v == 0.0));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let x: Vec<f32> = (0..64).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y = layer_norm(&x, 1e-5);
        let mean = y.iter().map(|&v| f64::from(v)).sum::<f64>() / 64.0;
        let var = y.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-3);
    }
}
