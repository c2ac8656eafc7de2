//! Seeded problem instances shared by the benchmarks.

use dualgan::{FiniteDistribution, RandomSource, SupportPoint};

/// A distribution on `n` random points of `[-1, 1]^dim` with random weights.
pub fn random_distribution(n: usize, dim: usize, rng: &mut RandomSource) -> FiniteDistribution {
    let pts = (0..n)
        .map(|_| SupportPoint::new((0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()))
        .collect();
    let ws = (0..n).map(|_| rng.uniform_range(0.05, 1.0)).collect();
    FiniteDistribution::normalized(pts, ws).expect("random points are distinct")
}

/// Two random distributions sharing one support of `n` points on the line.
pub fn shared_line_pair(n: usize, seed: u64) -> (FiniteDistribution, FiniteDistribution) {
    let mut rng = RandomSource::new(seed);
    let pts: Vec<SupportPoint> = (0..n)
        .map(|_| SupportPoint::scalar(rng.uniform_range(-1.0, 1.0)))
        .collect();
    let mut weights = || {
        (0..n)
            .map(|_| rng.uniform_range(0.05, 1.0))
            .collect::<Vec<f64>>()
    };
    let (a, b) = (weights(), weights());
    (
        FiniteDistribution::normalized(pts.clone(), a).expect("valid weights"),
        FiniteDistribution::normalized(pts, b).expect("valid weights"),
    )
}
