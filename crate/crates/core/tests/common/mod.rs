#![allow(dead_code)]

use droso_core::{preprocess_all, synth, Ensemble32, EnsembleConfig, ImageVector32, RawFrame, SynthConfig};

pub const REFERENCE_SEED: u64 = 1;
pub const QUERY_SEED: u64 = 2;
pub const MASTER_SEED: u64 = 7;
pub const PLACES: usize = 50;

/// The fixed-seed synthetic benchmark: 50 places, queries with noise
/// sigma 0.15, a 10 px circular shift and a +5% brightness offset.
pub fn benchmark_queries_config(noise_sigma: f64) -> SynthConfig {
    SynthConfig {
        seed: QUERY_SEED,
        places: PLACES,
        noise_sigma,
        brightness_shift: 0.05,
        shift_px: 10,
    }
}

pub fn reference_frames() -> Vec<RawFrame> {
    synth::generate_reference(&SynthConfig {
        seed: REFERENCE_SEED,
        places: PLACES,
        ..Default::default()
    })
    .unwrap()
}

pub fn reference_vectors() -> Vec<ImageVector32> {
    preprocess_all(&reference_frames()).unwrap()
}

pub fn query_vectors(noise_sigma: f64) -> Vec<ImageVector32> {
    let q = synth::generate_query(&reference_frames(), &benchmark_queries_config(noise_sigma)).unwrap();
    preprocess_all(&q).unwrap()
}

pub fn train_default(images: &[ImageVector32], models: usize, quantize: bool) -> Ensemble32 {
    let cfg = EnsembleConfig {
        models,
        master_seed: MASTER_SEED,
        quantize,
        ..Default::default()
    };
    Ensemble32::train(images, &cfg).unwrap()
}

/// Uniform values on a 1/255 grid, like real preprocessed frames.
pub fn random_image(rng: &mut impl rand::Rng) -> ImageVector32 {
    let v = (0..droso_core::IMAGE_LEN)
        .map(|_| rng.random_range(0u8..=255) as f32 / 255.0)
        .collect();
    ImageVector32::new(v).unwrap()
}
