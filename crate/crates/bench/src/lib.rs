//! Deterministic inputs shared by the benchmarks.

use copypaste_core::audio::Waveform;
use copypaste_core::seeding::rng_from;
use copypaste_core::FeatureMatrix;
use ndarray::Array2;
use rand::Rng;

/// A harmonic tone with a little noise, `seconds` long at 16 kHz.
pub fn tone(seconds: f64) -> Waveform {
    let sr = 16_000u32;
    let n = (seconds * sr as f64) as usize;
    let mut rng = rng_from(1);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            let voiced: f64 = (1..=8)
                .map(|k| (2.0 * std::f64::consts::PI * 140.0 * k as f64 * t).sin() / k as f64)
                .sum();
            0.1 * voiced + 0.01 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    Waveform::new(samples, sr).expect("non-empty")
}

/// Random `frames x dim` feature matrix.
pub fn features(frames: usize, dim: usize, seed: u64) -> FeatureMatrix {
    let mut rng = rng_from(seed);
    let values = Array2::from_shape_simple_fn((frames, dim), || rng.gen_range(-1.0..1.0));
    FeatureMatrix::from_values(values).expect("finite")
}
