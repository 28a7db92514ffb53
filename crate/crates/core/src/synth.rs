//! Seeded synthetic datasets for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::DataMatrix;

/// 2-D Gaussian mixture: points are assigned to components round-robin, so
/// class sizes stay balanced. Returns features and component labels.
pub fn gaussian_mixture_2d(
    n: usize,
    means: &[(f64, f64)],
    sigma: f64,
    seed: u64,
) -> (DataMatrix, Vec<i64>) {
    assert!(!means.is_empty() && n > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % means.len();
        let (mx, my) = means[c];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        rows.push(vec![mx + sigma * dx, my + sigma * dy]);
        labels.push(c as i64);
    }
    (DataMatrix::from_rows(&rows).unwrap(), labels)
}

/// Component means evenly spaced on a circle.
pub fn circular_means(components: usize, radius: f64) -> Vec<(f64, f64)> {
    (0..components)
        .map(|c| {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / components as f64;
            (radius * angle.cos(), radius * angle.sin())
        })
        .collect()
}
