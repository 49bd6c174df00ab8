mod common;

use asrpu::cost::{CostTable, PeContext};
use asrpu::frontend::{FrontendParams, MfccExtractor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn extract(ex: &MfccExtractor, frame: &[f32]) -> Vec<f32> {
    let costs = CostTable::default();
    let mut pe = PeContext::new(&costs, 8);
    ex.frame(frame, &mut pe).unwrap()
}

fn max_error(got: &[f32], expect: &[f64]) -> f64 {
    got.iter()
        .zip(expect)
        .map(|(&g, &e)| (g as f64 - e).abs())
        .fold(0.0, f64::max)
}

#[test]
fn random_frames_match_naive_oracle() {
    let ex = MfccExtractor::new(FrontendParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let gain: f32 = [1.0, 0.1, 1e-3][i % 3];
        let frame: Vec<f32> = (0..400).map(|_| rng.gen_range(-1.0..1.0) * gain).collect();
        let err = max_error(&extract(&ex, &frame), &common::mfcc_oracle(&frame, 512, 80, 16_000.0));
        worst = worst.max(err);
    }
    assert!(worst < 1e-4, "worst error {worst}");
}

#[test]
fn pure_tone_matches_naive_oracle() {
    let ex = MfccExtractor::new(FrontendParams::default());
    let frame: Vec<f32> = (0..400)
        .map(|n| (2.0 * std::f32::consts::PI * 1000.0 * n as f32 / 16_000.0).sin() * 0.5)
        .collect();
    let err = max_error(&extract(&ex, &frame), &common::mfcc_oracle(&frame, 512, 80, 16_000.0));
    assert!(err < 1e-4, "error {err}");
}
