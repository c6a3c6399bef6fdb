//! Empirical and closed-form Wasserstein-2 distances.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Purpose};
use crate::stats::compensated_sum;
use crate::target::{covariance, forward_marginal_sample, SampleBatch, TargetDistribution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum W2Method {
    Quantile1D,
    ExactAssignment,
    GaussianClosedForm,
    QuantileGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
    /// Points per side; 0 for closed forms.
    pub n: usize,
    /// W2 between two independent batches of the same law and size.
    pub noise_floor: Option<f64>,
}

impl W2Estimate {
    fn new(value: f64, method: W2Method, n: usize) -> Self {
        Self { value: value.max(0.0), method, n, noise_floor: None }
    }

    pub fn with_noise_floor(mut self, floor: f64) -> Self {
        self.noise_floor = Some(floor);
        self
    }

    /// Lower edge used against population bounds: the value less its noise floor.
    pub fn lower(&self) -> f64 {
        (self.value - self.noise_floor.unwrap_or(0.0)).max(0.0)
    }
}

fn check_pair(a: &SampleBatch, b: &SampleBatch) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::UnsupportedDimension { expected: a.dim, got: b.dim });
    }
    if a.len() != b.len() {
        return Err(invalid(format!("batch sizes differ: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(invalid("batches are empty"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(invalid("batches contain non-finite values"));
    }
    Ok(())
}

/// Exact empirical W2 in one dimension via the monotone coupling.
pub fn w2_1d(a: &SampleBatch, b: &SampleBatch) -> Result<W2Estimate> {
    check_pair(a, b)?;
    if a.dim != 1 {
        return Err(Error::UnsupportedDimension { expected: 1, got: a.dim });
    }
    let mut x = a.data.clone();
    let mut y = b.data.clone();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let sq = compensated_sum(x.iter().zip(&y).map(|(u, v)| (u - v) * (u - v)));
    Ok(W2Estimate::new((sq / x.len() as f64).sqrt(), W2Method::Quantile1D, x.len()))
}

/// Exact empirical W2 in any dimension by minimum-cost perfect matching.
pub fn w2_exact(a: &SampleBatch, b: &SampleBatch) -> Result<W2Estimate> {
    check_pair(a, b)?;
    let n = a.len();
    if n > assignment::MAX_SIZE {
        return Err(Error::SizeLimit { n, limit: assignment::MAX_SIZE });
    }
    let sol = assignment::solve_points(&a.data, &b.data, a.dim)?;
    Ok(W2Estimate::new((sol.cost / n as f64).sqrt(), W2Method::ExactAssignment, n))
}

/// [`w2_1d`] in one dimension, [`w2_exact`] otherwise.
pub fn w2_empirical(a: &SampleBatch, b: &SampleBatch) -> Result<W2Estimate> {
    if a.dim == 1 {
        w2_1d(a, b)
    } else {
        w2_exact(a, b)
    }
}

fn check_symmetric(m: &DMatrix<f64>, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(invalid(format!("covariance must be {d}x{d}")));
    }
    let scale = 1.0 + m.amax();
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(invalid("covariance is not symmetric"));
            }
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid("covariance is not finite"));
    }
    Ok(())
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Bures–Wasserstein distance between two Gaussians.
pub fn w2_gaussian(mean1: &[f64], cov1: &DMatrix<f64>, mean2: &[f64], cov2: &DMatrix<f64>) -> Result<W2Estimate> {
    let d = mean1.len();
    if mean2.len() != d {
        return Err(Error::UnsupportedDimension { expected: d, got: mean2.len() });
    }
    check_symmetric(cov1, d)?;
    check_symmetric(cov2, d)?;
    let shift: f64 = mean1.iter().zip(mean2).map(|(a, b)| (a - b) * (a - b)).sum();
    let r1 = sqrt_psd(cov1);
    let cross = sqrt_psd(&(&r1 * cov2 * &r1));
    let tr = cov1.trace() + cov2.trace() - 2.0 * cross.trace();
    Ok(W2Estimate::new((shift + tr.max(0.0)).sqrt(), W2Method::GaussianClosedForm, 0))
}

/// Nodes of the midpoint quantile rule.
pub const QUANTILE_NODES: usize = 100_000;

/// A one-dimensional Gaussian mixture with a shared standard deviation
/// (`sd = 0` gives a discrete law).
#[derive(Debug, Clone, PartialEq)]
pub struct Law1d {
    locs: Vec<f64>,
    weights: Vec<f64>,
    cumulative: Vec<f64>,
    sd: f64,
}

impl Law1d {
    pub fn mixture(locs: &[f64], weights: &[f64], sd: f64) -> Result<Self> {
        if locs.is_empty() || locs.len() != weights.len() {
            return Err(invalid("mixture needs matching, non-empty locations and weights"));
        }
        if !(sd >= 0.0) || !sd.is_finite() {
            return Err(invalid("standard deviation must be finite and >= 0"));
        }
        let mut order: Vec<usize> = (0..locs.len()).collect();
        order.sort_by(|&i, &j| locs[i].total_cmp(&locs[j]));
        let total: f64 = weights.iter().sum();
        let locs: Vec<f64> = order.iter().map(|&i| locs[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| weights[i] / total).collect();
        let cumulative = weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self { locs, weights, cumulative, sd })
    }

    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Self::mixture(&[mean], &[1.0], sd)
    }

    /// Law of `X_t` for a one-dimensional target.
    pub fn marginal(target: &TargetDistribution, t: f64) -> Result<Self> {
        if target.dim() != 1 {
            return Err(Error::UnsupportedDimension { expected: 1, got: target.dim() });
        }
        if !(t >= 0.0) {
            return Err(invalid("time must be >= 0"));
        }
        let locs: Vec<f64> = target.points().map(|p| p[0]).collect();
        Self::mixture(&locs, target.weights(), (t + target.tau()).sqrt())
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if self.sd == 0.0 {
            let k = self.locs.partition_point(|&l| l <= x);
            return if k == 0 { 0.0 } else { self.cumulative[k - 1] };
        }
        self.locs.iter().zip(&self.weights).map(|(l, w)| w * std_normal_cdf((x - l) / self.sd)).sum()
    }

    /// Inverse CDF by bisection to `1e-12` relative width.
    pub fn quantile(&self, u: f64) -> f64 {
        if self.sd == 0.0 {
            let k = self.cumulative.partition_point(|&c| c < u).min(self.locs.len() - 1);
            return self.locs[k];
        }
        let mut lo = self.locs[0] - 40.0 * self.sd;
        let mut hi = self.locs[self.locs.len() - 1] + 40.0 * self.sd;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= 1e-12 * mid.abs().max(1.0) {
                break;
            }
            if self.cdf(mid) < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// `W2` between two one-dimensional laws: the midpoint rule on
/// `int_0^1 (F^{-1}(u) - G^{-1}(u))^2 du` with `nodes` nodes.
pub fn w2_quantile_grid(a: &Law1d, b: &Law1d, nodes: usize) -> Result<W2Estimate> {
    if nodes == 0 {
        return Err(invalid("need at least one quantile node"));
    }
    let sq: Vec<f64> = (0..nodes)
        .into_par_iter()
        .map(|k| {
            let u = (k as f64 + 0.5) / nodes as f64;
            let diff = a.quantile(u) - b.quantile(u);
            diff * diff
        })
        .collect();
    let value = (compensated_sum(sq) / nodes as f64).sqrt();
    Ok(W2Estimate::new(value, W2Method::QuantileGrid, 0))
}

/// Self-distance of the law of `X_t`: two independent batches of size `n`.
pub fn noise_floor(target: &TargetDistribution, t: f64, n: usize, seed: u64) -> Result<f64> {
    let a = forward_marginal_sample(target, t, n, rng::derive_seed(seed, 0x6e6f_6973_6530))?;
    let b = forward_marginal_sample(target, t, n, rng::derive_seed(seed, 0x6e6f_6973_6531))?;
    Ok(w2_empirical(&a, &b)?.value)
}

/// `n` draws of `N(0, variance I)` in dimension `d`.
pub fn gaussian_sample(d: usize, variance: f64, n: usize, seed: u64) -> SampleBatch {
    let sd = variance.max(0.0).sqrt();
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d.max(1)).enumerate().for_each(|(i, x)| {
        let mut r = rng::stream(seed, Purpose::Reference, i as u64);
        rng::fill_normal(&mut r, x);
        x.iter_mut().for_each(|v| *v *= sd);
    });
    SampleBatch::new(d, data, seed, f64::NAN)
}

/// Initialization error of the samplers: `X_T` against `N(0, T I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitErrorCheck {
    pub horizon: f64,
    pub empirical: W2Estimate,
    /// Deterministic quantile-grid value (one dimension only).
    pub exact: Option<f64>,
    /// `||Sigma||_F / (2 sqrt(T))`; only for centred targets.
    pub asymptote: Option<f64>,
    /// `||X||_{L2}`, valid for every `T`.
    pub crude: f64,
    /// Best available value (exact, else empirical) over the asymptote.
    pub ratio: Option<f64>,
    pub mean_zero: bool,
}

impl InitErrorCheck {
    /// The asymptotic regime is reached once the value sits below its asymptote.
    pub fn past_threshold(&self) -> bool {
        self.ratio.is_some_and(|r| r <= 1.0)
    }
}

fn is_centred(target: &TargetDistribution) -> bool {
    let tol = 1e-12 * (1.0 + target.radius());
    target.mean().iter().all(|m| m.abs() <= tol)
}

pub fn init_error_check(target: &TargetDistribution, horizon: f64, n: usize, seed: u64) -> Result<InitErrorCheck> {
    if !(horizon > 0.0) {
        return Err(invalid("horizon must be > 0"));
    }
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    let d = target.dim();
    let xs = forward_marginal_sample(target, horizon, n, seed)?;
    let zs = gaussian_sample(d, horizon, n, seed);
    let floor = noise_floor(target, horizon, n, seed)?;
    let empirical = w2_empirical(&xs, &zs)?.with_noise_floor(floor);
    let exact = if d == 1 {
        let law = Law1d::marginal(target, horizon)?;
        Some(w2_quantile_grid(&law, &Law1d::gaussian(0.0, horizon.sqrt())?, QUANTILE_NODES)?.value)
    } else {
        None
    };
    let cov = covariance(target);
    let mean_zero = is_centred(target);
    let asymptote = mean_zero.then(|| cov.frobenius / (2.0 * horizon.sqrt()));
    let crude = (0..d).map(|a| cov.second_moment[a * d + a]).sum::<f64>().sqrt();
    let ratio = asymptote.filter(|a| *a > 0.0).map(|a| exact.unwrap_or(empirical.value) / a);
    Ok(InitErrorCheck { horizon, empirical, exact, asymptote, crude, ratio, mean_zero })
}

/// Smallest `T = 2^k` (k >= 0) whose exact initialization error is at most its
/// asymptote, for a centred one-dimensional target.
pub fn calibrated_init_threshold(target: &TargetDistribution) -> Result<f64> {
    if target.dim() != 1 {
        return Err(Error::UnsupportedDimension { expected: 1, got: target.dim() });
    }
    if !is_centred(target) {
        return Err(invalid("the asymptotic regime needs a centred target"));
    }
    let frob = covariance(target).frobenius;
    if frob == 0.0 {
        return Ok(0.0);
    }
    for k in 0..40 {
        let t = (1u64 << k) as f64;
        let law = Law1d::marginal(target, t)?;
        let w = w2_quantile_grid(&law, &Law1d::gaussian(0.0, t.sqrt())?, 10_000)?.value;
        if w <= frob / (2.0 * t.sqrt()) {
            return Ok(t);
        }
    }
    Err(invalid("no threshold found below 2^40"))
}

/// Smoothed-Wasserstein comparison for `Y = alpha X + beta Z` against `N(0, gamma^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prop4Report {
    /// `(gamma^2 - beta^2) / alpha^2`.
    pub comparison_variance: f64,
    /// `alpha W2(L(X), N(0, c I))`.
    pub coupling_bound: f64,
    /// `alpha^2 / (2 beta) ||Sigma - c I||_F`; only for centred targets.
    pub asymptote: Option<f64>,
    /// `W2(L(Y), N(0, gamma^2 I))` on the quantile grid (one dimension only).
    pub direct: Option<f64>,
}

pub fn prop4_general(alpha: f64, beta: f64, gamma: f64, target: &TargetDistribution, n: usize, seed: u64) -> Result<Prop4Report> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(invalid("alpha and beta must be > 0"));
    }
    if !(gamma >= beta) {
        return Err(invalid(format!("gamma = {gamma} must be >= beta = {beta}")));
    }
    let d = target.dim();
    let c = (gamma * gamma - beta * beta) / (alpha * alpha);
    let cov = covariance(target);
    let w = if c == 0.0 {
        (0..d).map(|a| cov.second_moment[a * d + a]).sum::<f64>().sqrt()
    } else if d == 1 {
        let law = Law1d::marginal(target, 0.0)?;
        w2_quantile_grid(&law, &Law1d::gaussian(0.0, c.sqrt())?, QUANTILE_NODES)?.value
    } else {
        let xs = crate::target::sample_target(target, n, seed)?;
        w2_exact(&xs, &gaussian_sample(d, c, n, seed))?.value
    };
    let asymptote = is_centred(target).then(|| {
        let mut m = cov.second_moment.clone();
        for a in 0..d {
            m[a * d + a] -= c;
        }
        alpha * alpha / (2.0 * beta) * m.iter().map(|v| v * v).sum::<f64>().sqrt()
    });
    let direct = if d == 1 {
        let locs: Vec<f64> = target.points().map(|p| alpha * p[0]).collect();
        let sd = (alpha * alpha * target.tau() + beta * beta).sqrt();
        let y = Law1d::mixture(&locs, target.weights(), sd)?;
        Some(w2_quantile_grid(&y, &Law1d::gaussian(0.0, gamma)?, QUANTILE_NODES)?.value)
    } else {
        None
    };
    Ok(Prop4Report { comparison_variance: c, coupling_bound: alpha * w, asymptote, direct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::sample_target;
    use proptest::prelude::*;

    fn batch1(v: &[f64]) -> SampleBatch {
        SampleBatch::new(1, v.to_vec(), 0, 0.0)
    }

    #[test]
    fn one_dimensional_examples() {
        assert_eq!(w2_1d(&batch1(&[0.0, 0.0]), &batch1(&[1.0, 1.0])).unwrap().value, 1.0);
        assert_eq!(w2_1d(&batch1(&[-1.0, 1.0]), &batch1(&[1.0, -1.0])).unwrap().value, 0.0);
        assert_eq!(w2_1d(&batch1(&[0.0, 2.0]), &batch1(&[1.0, 3.0])).unwrap().value, 1.0);
        assert!(w2_1d(&batch1(&[0.0]), &batch1(&[1.0, 3.0])).is_err());
    }

    #[test]
    fn exact_examples() {
        let a = SampleBatch::new(2, vec![0.0, 0.0, 1.0, 0.0], 0, 0.0);
        let b = SampleBatch::new(2, vec![0.0, 1.0, 1.0, 1.0], 0, 0.0);
        assert!((w2_exact(&a, &b).unwrap().value - 1.0).abs() < 1e-15);
        assert_eq!(w2_exact(&a, &a).unwrap().value, 0.0);
        let big = SampleBatch::new(1, vec![0.0; 4097], 0, 0.0);
        assert!(matches!(w2_exact(&big, &big), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn gaussian_examples() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let four = DMatrix::from_element(1, 1, 4.0);
        assert!((w2_gaussian(&[0.0], &one, &[0.0], &four).unwrap().value - 1.0).abs() < 1e-12);
        assert!(w2_gaussian(&[0.0], &four, &[0.0], &four).unwrap().value < 1e-7);
        let id = DMatrix::identity(2, 2);
        assert!((w2_gaussian(&[0.0, 0.0], &id, &[3.0, 4.0], &id).unwrap().value - 5.0).abs() < 1e-12);
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(w2_gaussian(&[0.0, 0.0], &skew, &[0.0, 0.0], &id).is_err());
    }

    #[test]
    fn assignment_matches_sorting_in_one_dimension() {
        for seed in 0..5 {
            let a = forward_marginal_sample(&TargetDistribution::two_dirac(1.0), 0.3, 300, seed).unwrap();
            let b = forward_marginal_sample(&TargetDistribution::two_dirac(1.0), 0.05, 300, seed + 100).unwrap();
            let x = w2_1d(&a, &b).unwrap().value;
            let y = w2_exact(&a, &b).unwrap().value;
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
    }

    #[test]
    fn scaling_equivariance() {
        let a = gaussian_sample(3, 1.0, 200, 1);
        let b = gaussian_sample(3, 2.0, 200, 2);
        let c = -2.5;
        let scale = |s: &SampleBatch| SampleBatch::new(3, s.data.iter().map(|v| c * v).collect(), 0, 0.0);
        let w = w2_exact(&a, &b).unwrap().value;
        let ws = w2_exact(&scale(&a), &scale(&b)).unwrap().value;
        assert!((ws - c.abs() * w).abs() < 1e-12 * (1.0 + ws));
    }

    #[test]
    fn quantile_grid_oracles() {
        // two independent 1e5-node evaluations of the same integral with different tools
        let tgt = TargetDistribution::two_dirac(1.0);
        for (t, expect) in [(25.0, 0.99031), (100.0, 0.99751), (400.0, 0.99937)] {
            let c = init_error_check(&tgt, t, 500, 1).unwrap();
            assert!((c.ratio.unwrap() - expect).abs() < 2e-5, "T={t}: {:?}", c.ratio);
        }
        let law = Law1d::gaussian(0.0, 1.0).unwrap();
        assert!(w2_quantile_grid(&law, &law, 1000).unwrap().value == 0.0);
        let wide = Law1d::gaussian(0.0, 2.0).unwrap();
        let w = w2_quantile_grid(&law, &wide, QUANTILE_NODES).unwrap().value;
        assert!((w - 1.0).abs() < 1e-3);
    }

    #[test]
    fn discrete_quantiles() {
        let law = Law1d::mixture(&[1.0, -1.0], &[0.5, 0.5], 0.0).unwrap();
        assert_eq!(law.quantile(0.25), -1.0);
        assert_eq!(law.quantile(0.75), 1.0);
        assert_eq!(law.cdf(0.0), 0.5);
    }

    #[test]
    fn init_check_on_centred_point_mass() {
        let c = init_error_check(&TargetDistribution::dirac(&[0.0], 0.0), 9.0, 200, 3).unwrap();
        assert_eq!(c.exact, Some(0.0));
        assert_eq!(c.asymptote, Some(0.0));
        assert_eq!(c.crude, 0.0);
    }

    #[test]
    fn init_check_reports_only_crude_for_offset_target() {
        let tgt = TargetDistribution::dirac(&[2.0], 0.0);
        let c = init_error_check(&tgt, 9.0, 200, 3).unwrap();
        assert!(c.asymptote.is_none() && c.ratio.is_none());
        assert!((c.crude - 2.0).abs() < 1e-12);
        assert!((c.exact.unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn threshold_for_two_dirac() {
        let t = calibrated_init_threshold(&TargetDistribution::two_dirac(1.0)).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn general_init_comparison_reductions() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let t: f64 = 100.0;
        let p = prop4_general(1.0, t.sqrt(), t.sqrt(), &tgt, 100, 1).unwrap();
        let c = init_error_check(&tgt, t, 100, 1).unwrap();
        assert_eq!(p.coupling_bound, c.crude);
        assert!((p.direct.unwrap() - c.exact.unwrap()).abs() < 1e-12);
        assert!((p.asymptote.unwrap() - c.asymptote.unwrap()).abs() < 1e-15);

        let q = prop4_general(1.0, 10.0, 101f64.sqrt(), &tgt, 100, 1).unwrap();
        assert!(q.asymptote.unwrap().abs() < 1e-12);
        let exact = w2_quantile_grid(
            &Law1d::marginal(&tgt, 0.0).unwrap(),
            &Law1d::gaussian(0.0, 1.0).unwrap(),
            QUANTILE_NODES,
        )
        .unwrap()
        .value;
        assert_eq!(q.coupling_bound, exact);
        assert!(q.direct.unwrap() <= q.coupling_bound);

        let gauss = TargetDistribution::dirac(&[0.0], 0.7);
        let r = prop4_general(2.0, 5.0, (25.0 + 4.0 * 0.7f64).sqrt(), &gauss, 100, 1).unwrap();
        assert!(r.asymptote.unwrap().abs() < 1e-12);
        assert!(prop4_general(1.0, 2.0, 1.0, &tgt, 10, 1).is_err());
    }

    #[test]
    fn calibration_against_gaussian_closed_form() {
        let n = 2048;
        let a = gaussian_sample(2, 1.0, n, 5);
        let mut b = gaussian_sample(2, 1.0, n, 6);
        b.data.chunks_mut(2).for_each(|p| p[0] += 1.0);
        let floor = w2_exact(&gaussian_sample(2, 1.0, n, 7), &gaussian_sample(2, 1.0, n, 8)).unwrap().value;
        let w = w2_exact(&a, &b).unwrap().value;
        assert!(w >= 1.0 - floor && w <= 1.1, "w {w} floor {floor}");
        let small = w2_exact(&gaussian_sample(2, 1.0, 256, 7), &gaussian_sample(2, 1.0, 256, 8)).unwrap().value;
        assert!(floor < small);
    }

    #[test]
    fn noise_floor_shrinks_with_n() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let a = noise_floor(&tgt, 0.1, 1000, 1).unwrap();
        let b = noise_floor(&tgt, 0.1, 100_000, 1).unwrap();
        assert!(b < a);
        let _ = sample_target(&tgt, 1, 0).unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn metric_axioms(seed in any::<u64>(), n in 2usize..40, d in 1usize..4) {
            let a = gaussian_sample(d, 1.0, n, seed);
            let b = gaussian_sample(d, 2.0, n, seed ^ 1);
            let c = gaussian_sample(d, 0.5, n, seed ^ 2);
            let ab = w2_exact(&a, &b).unwrap().value;
            let ba = w2_exact(&b, &a).unwrap().value;
            let bc = w2_exact(&b, &c).unwrap().value;
            let ac = w2_exact(&a, &c).unwrap().value;
            prop_assert_eq!(w2_exact(&a, &a).unwrap().value, 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
        }
    }
}
