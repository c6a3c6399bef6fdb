//! Fixtures shared by the benchmarks.

use wassdiff_core::target::make_dirac_mixture;
use wassdiff_core::transport::gaussian_sample;
use wassdiff_core::{SampleBatch, TargetDistribution};

/// `m` atoms on a circle of radius 2 in the plane, equal weights.
pub fn ring_target(m: usize) -> TargetDistribution {
    let points: Vec<Vec<f64>> = (0..m)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / m as f64;
            vec![2.0 * a.cos(), 2.0 * a.sin()]
        })
        .collect();
    make_dirac_mixture(&points, &vec![1.0; m], 0.0).expect("valid ring")
}

/// Two independent standard Gaussian clouds of `n` points in dimension `d`.
pub fn cloud_pair(d: usize, n: usize) -> (SampleBatch, SampleBatch) {
    (gaussian_sample(d, 1.0, n, 1), gaussian_sample(d, 1.0, n, 2))
}
