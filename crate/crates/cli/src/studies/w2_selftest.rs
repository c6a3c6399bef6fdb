//! Self-consistency of the W2 estimators: assignment against sorting,
//! sampled against closed form, and the metric axioms.

use nalgebra::DMatrix;
use rand::Rng;
use serde_json::json;
use wassdiff_core::rng::{self, derive_seed, Purpose};
use wassdiff_core::transport::{gaussian_sample, w2_1d, w2_exact, w2_gaussian, w2_quantile_grid, Law1d, QUANTILE_NODES};
use wassdiff_core::SampleBatch;

use crate::config::{ExperimentConfig, Study};
use crate::error::Result;
use crate::report::{cell, Check, StudyOutput};

/// Assignment and sorting must agree to this absolute tolerance in one dimension.
pub const SORT_TOLERANCE: f64 = 1e-9;
/// Sampled Gaussian W2 must sit within this many noise floors of the closed form.
pub const GAUSSIAN_FLOORS: f64 = 2.0;
pub const METRIC_TRIPLES: usize = 50;
const METRIC_POINTS: usize = 32;
const METRIC_TOLERANCE: f64 = 1e-12;
/// Midpoint-rule tolerance on the quantile-grid W2 of two Gaussians.
pub const QUANTILE_TOLERANCE: f64 = 1e-3;

/// `n` draws of `N(mean, cov)` through the Cholesky factor.
fn gaussian_draws(mean: &[f64], cov: &DMatrix<f64>, n: usize, seed: u64) -> SampleBatch {
    let d = mean.len();
    let l = cov.clone().cholesky().expect("positive definite covariance").l();
    let mut z = gaussian_sample(d, 1.0, n, seed);
    for x in z.data.chunks_exact_mut(d) {
        let g = x.to_vec();
        for (a, out) in x.iter_mut().enumerate() {
            *out = mean[a] + (0..=a).map(|b| l[(a, b)] * g[b]).sum::<f64>();
        }
    }
    z
}

fn random_batch(d: usize, n: usize, seed: u64, k: u64) -> SampleBatch {
    let mut r = rng::stream(seed, Purpose::Auxiliary(7), k);
    let shift: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    let scale: f64 = r.random_range(0.2..2.0);
    let mut b = gaussian_sample(d, scale * scale, n, derive_seed(seed, k));
    for x in b.data.chunks_exact_mut(d) {
        x.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
    }
    b
}

pub fn run(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let n = cfg.samples.unwrap_or(2048);
    let seed = cfg.seed;
    let mut checks = Vec::new();
    let mut rows = Vec::new();

    // Assignment against sorting on one-dimensional data.
    let a = random_batch(1, n, seed, 1);
    let b = random_batch(1, n, seed, 2);
    let exact = w2_exact(&a, &b)?.value;
    let sorted = w2_1d(&a, &b)?.value;
    checks.push(Check::at_most("assignment_vs_sort", (exact - sorted).abs(), SORT_TOLERANCE, format!("n = {n}, W2 = {sorted}")));
    rows.push(format!("assignment_vs_sort,{},{}", cell(exact), cell(sorted)));

    // Sampled Bures distance against the closed form.
    let (m1, m2) = ([0.0, 0.0], [1.0, -0.5]);
    let c1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let c2 = DMatrix::from_row_slice(2, 2, &[2.0, -0.4, -0.4, 1.0]);
    let closed = w2_gaussian(&m1, &c1, &m2, &c2)?.value;
    let x = gaussian_draws(&m1, &c1, n, derive_seed(seed, 3));
    let y = gaussian_draws(&m2, &c2, n, derive_seed(seed, 4));
    let sampled = w2_exact(&x, &y)?.value;
    let f1 = w2_exact(&x, &gaussian_draws(&m1, &c1, n, derive_seed(seed, 5)))?.value;
    let f2 = w2_exact(&y, &gaussian_draws(&m2, &c2, n, derive_seed(seed, 6)))?.value;
    let floor = 0.5 * (f1 + f2);
    checks.push(Check::at_most(
        "gaussian_closed_form",
        (sampled - closed).abs(),
        GAUSSIAN_FLOORS * floor,
        format!("sampled {sampled}, closed form {closed}, noise floor {floor}"),
    ));
    rows.push(format!("gaussian_closed_form,{},{}", cell(sampled), cell(closed)));

    // Quantile grid against the closed form in one dimension.
    let grid = w2_quantile_grid(&Law1d::gaussian(0.0, 1.0)?, &Law1d::gaussian(1.0, 2.0)?, QUANTILE_NODES)?.value;
    let closed_1d = w2_gaussian(&[0.0], &DMatrix::from_element(1, 1, 1.0), &[1.0], &DMatrix::from_element(1, 1, 4.0))?.value;
    checks.push(Check::at_most("quantile_grid_closed_form", (grid - closed_1d).abs(), QUANTILE_TOLERANCE, format!("{QUANTILE_NODES} nodes")));
    rows.push(format!("quantile_grid_closed_form,{},{}", cell(grid), cell(closed_1d)));

    // Metric axioms on random triples of equal-size clouds.
    let (mut identity, mut symmetry, mut triangle) = (0.0_f64, 0.0_f64, f64::NEG_INFINITY);
    for k in 0..METRIC_TRIPLES as u64 {
        let d = 1 + (k % 3) as usize;
        let [p, q, r] = [0, 1, 2].map(|j| random_batch(d, METRIC_POINTS, seed, 100 + 3 * k + j));
        let pq = w2_exact(&p, &q)?.value;
        let qp = w2_exact(&q, &p)?.value;
        let qr = w2_exact(&q, &r)?.value;
        let pr = w2_exact(&p, &r)?.value;
        identity = identity.max(w2_exact(&p, &p)?.value);
        symmetry = symmetry.max((pq - qp).abs() / (1.0 + pq));
        triangle = triangle.max(pr - pq - qr);
    }
    checks.push(Check::at_most("metric_identity", identity, METRIC_TOLERANCE, "max W2(a, a)"));
    checks.push(Check::at_most("metric_symmetry", symmetry, METRIC_TOLERANCE, "max relative |W2(a, b) - W2(b, a)|"));
    checks.push(Check::at_most("metric_triangle", triangle, METRIC_TOLERANCE, "max W2(a, c) - W2(a, b) - W2(b, c)"));

    let results = json!({
        "samples": n,
        "assignment_vs_sort": { "exact": exact, "sorted": sorted },
        "gaussian": { "sampled": sampled, "closed_form": closed, "noise_floor": floor },
        "quantile_grid": { "grid": grid, "closed_form": closed_1d },
        "metric": { "triples": METRIC_TRIPLES, "identity": identity, "symmetry": symmetry, "triangle": triangle },
    });
    Ok(StudyOutput::new(Study::W2Selftest, cfg, checks, results).table("w2_selftest", "check,estimate,reference", rows))
}
