//! Compensated summation and Monte Carlo interval estimates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        if self.sum.is_finite() {
            self.sum + self.comp
        } else {
            self.sum
        }
    }
}

pub fn compensated_sum(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Running first and second moments of a scalar sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub n: u64,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum.merge(&other.sum);
        self.sum_sq.merge(&other.sum_sq);
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        self.sum.value() / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.mean();
        ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn mean_estimate(&self) -> MeanEstimate {
        let se = (self.variance() / self.n.max(1) as f64).sqrt();
        MeanEstimate { mean: self.mean(), half_width: Z95 * se, n: self.n }
    }

    /// Treats the pushed values as squared norms and returns the L2 norm estimate.
    pub fn l2_estimate(&self) -> L2Estimate {
        L2Estimate::from_squares(&self.mean_estimate())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    /// 95% normal-approximation half width.
    pub half_width: f64,
    pub n: u64,
}

impl MeanEstimate {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }
    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

/// Estimate of `sqrt(E|Y|^2)` with a 95% interval obtained by square-rooting
/// the normal interval on the mean of the squared norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Estimate {
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: u64,
}

impl L2Estimate {
    pub fn from_squares(sq: &MeanEstimate) -> Self {
        Self {
            value: sq.mean.max(0.0).sqrt(),
            lower: sq.lower().max(0.0).sqrt(),
            upper: sq.upper().max(0.0).sqrt(),
            n: sq.n,
        }
    }

    pub fn zero(n: u64) -> Self {
        Self { value: 0.0, lower: 0.0, upper: 0.0, n }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// Wilson score interval for a binomial proportion at 95%.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let spread = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (centre - spread).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (centre + spread).min(1.0) };
    (lo, hi)
}

/// Replicates per reduction block. Fixed so that reductions do not depend on
/// the number of worker threads.
pub const BLOCK: usize = 64;

/// Maps `f` over `0..count` in fixed-size blocks (in parallel), folds each
/// block sequentially in index order with `fold`, and merges block results in
/// block order. The result is bit-identical for any thread count.
pub fn block_reduce<A, F, G, M>(count: usize, init: G, fold: F, merge: M) -> A
where
    A: Send,
    G: Fn() -> A + Sync,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, A),
{
    let blocks = count.div_ceil(BLOCK);
    let parts: Vec<A> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for i in b * BLOCK..((b + 1) * BLOCK).min(count) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut out = init();
    for p in parts {
        merge(&mut out, p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut xs = vec![1e16, 1.0, -1e16];
        xs.extend(std::iter::repeat_n(1.0, 10));
        assert_eq!(compensated_sum(xs), 11.0);
    }

    #[test]
    fn wilson_contains_zero_for_no_successes() {
        let (lo, hi) = wilson_interval(0, 1000);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
        let (lo, _) = wilson_interval(5, 1000);
        assert!(lo > 0.0);
    }

    #[test]
    fn block_reduce_is_thread_independent() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    block_reduce(
                        1000,
                        Moments::default,
                        |m, i| m.push((i as f64).sin() * 1e-3 + 1e8),
                        |a, b| a.merge(&b),
                    )
                })
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.mean().to_bits(), b.mean().to_bits());
        assert_eq!(a.variance().to_bits(), b.variance().to_bits());
    }
}
