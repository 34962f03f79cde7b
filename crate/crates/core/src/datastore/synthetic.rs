//! Small generated datasets for tests, benches and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

use super::dataset::{Dataset, Provenance, Sample};

/// Two classes of single-channel `size`×`size` images: a bright 3×3 patch
/// near the top-left corner ("a") or the bottom-right corner ("b") over
/// low-level noise. Labels alternate so both classes are balanced.
pub fn blobs(n: usize, size: usize, seed: u64) -> Dataset {
    assert!(size >= 6, "blobs need at least 6x6 images");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let mut data: Vec<f64> = (0..size * size).map(|_| rng.gen_range(0.0..0.3)).collect();
            let jitter_r = rng.gen_range(0..2);
            let jitter_c = rng.gen_range(0..2);
            let origin = if label == 0 { 0 } else { size - 4 };
            for r in 0..3 {
                for c in 0..3 {
                    data[(origin + jitter_r + r) * size + origin + jitter_c + c] = rng.gen_range(0.7..1.0);
                }
            }
            Sample { image: Tensor::from_vec([1, 1, size, size], data).expect("sized"), label }
        })
        .collect();
    Dataset::new(
        samples,
        vec!["a".into(), "b".into()],
        Provenance { path: format!("synthetic:blobs:{n}:{size}:{seed}"), format: "synthetic".into() },
        None,
    )
    .expect("generated dataset is valid")
}
