//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikesearch::arch::{Architecture, FASHION_INPUT};
use spikesearch::{AnnModel, LabeledImages};

/// Deterministic pseudo-images in `[0, 1)`, without touching the dataset.
pub fn synthetic_images(n: usize, seed: u64) -> LabeledImages {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..n * FASHION_INPUT.len()).map(|_| rng.gen::<f32>()).collect();
    LabeledImages {
        shape: FASHION_INPUT,
        pixels,
        labels: (0..n).map(|i| (i % 10) as u8).collect(),
    }
}

pub fn model(channels: &str, seed: u64) -> AnnModel {
    AnnModel::initialised(Architecture::parse(channels, FASHION_INPUT).expect("valid architecture"), seed)
}
