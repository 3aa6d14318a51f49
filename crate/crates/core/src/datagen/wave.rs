use rand_distr::{Distribution, Normal};

use crate::rng::RngStream;

pub const WAVE_LEN: usize = 256;
pub const PATCH_LEN: usize = 16;

/// Cycles per 256-sample window for class `label`.
pub fn frequency(label: usize) -> f64 {
    20.0 + 6.0 * label as f64
}

pub fn waveform(label: usize, noise: f64, rng: &mut RngStream) -> Vec<f64> {
    let phase = rng.uniform() * std::f64::consts::TAU;
    let w = std::f64::consts::TAU * frequency(label) / WAVE_LEN as f64;
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise");
    (0..WAVE_LEN).map(|t| (w * t as f64 + phase).sin() + normal.sample(rng)).collect()
}

pub fn patches(wave: &[f64]) -> Vec<Vec<f64>> {
    wave.chunks_exact(PATCH_LEN).map(<[f64]>::to_vec).collect()
}
