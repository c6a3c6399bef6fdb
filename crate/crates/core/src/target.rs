//! Bounded-support targets, the heat-equation forward process and the
//! exact posterior moments that drive every closed-form score.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Purpose};

/// Weighted Dirac mixture in R^d, optionally convolved with `N(0, tau I)`.
///
/// Points are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDistribution {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    cumulative: Vec<f64>,
    radius: f64,
    tau: f64,
}

/// JSON form of a target: `{"points": [[...]], "weights": [...], "tau": 0.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub tau: f64,
}

impl TargetSpec {
    pub fn build(&self) -> Result<TargetDistribution> {
        let weights = match &self.weights {
            Some(w) => w.clone(),
            None => vec![1.0; self.points.len()],
        };
        make_dirac_mixture(&self.points, &weights, self.tau)
    }
}

/// Builds a Dirac mixture; weights are renormalized and the radius is the
/// largest point norm.
pub fn make_dirac_mixture(points: &[Vec<f64>], weights: &[f64], tau: f64) -> Result<TargetDistribution> {
    if points.is_empty() {
        return Err(invalid("target needs at least one point"));
    }
    if points.len() != weights.len() {
        return Err(invalid(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(invalid("points must have dimension >= 1"));
    }
    if points.iter().any(|p| p.len() != dim) {
        return Err(invalid("all points must share one dimension"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("point coordinates must be finite"));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(invalid(format!("smoothing tau must be >= 0, got {tau}")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(invalid("weights must not all be zero"));
    }
    let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let log_weights = weights.iter().map(|w| w.ln()).collect();
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let radius = points.iter().map(|p| norm(p)).fold(0.0, f64::max);
    Ok(TargetDistribution {
        dim,
        points: points.iter().flatten().copied().collect(),
        weights,
        log_weights,
        cumulative,
        radius,
        tau,
    })
}

impl TargetDistribution {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let spec: TargetSpec = serde_json::from_str(s).map_err(|e| Error::Parse(format!("target: {e}")))?;
        spec.build()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn spec(&self) -> TargetSpec {
        TargetSpec {
            points: self.points.chunks_exact(self.dim).map(|p| p.to_vec()).collect(),
            weights: Some(self.weights.clone()),
            tau: self.tau,
        }
    }

    /// The symmetric two-point target `(delta_{-r} + delta_{+r}) / 2` in d = 1.
    pub fn two_dirac(r: f64) -> Self {
        make_dirac_mixture(&[vec![-r], vec![r]], &[0.5, 0.5], 0.0).expect("valid two-point target")
    }

    /// A single Dirac at `p` with smoothing `tau`.
    pub fn dirac(p: &[f64], tau: f64) -> Self {
        make_dirac_mixture(&[p.to_vec()], &[1.0], tau).expect("valid Dirac target")
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        let spec = TargetSpec { tau, ..self.spec() };
        spec.build()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Forward time seen by the un-smoothed mixture: `t + tau`.
    pub fn effective_time(&self, t: f64) -> Result<f64> {
        let s = t + self.tau;
        if s > 0.0 && s.is_finite() {
            Ok(s)
        } else {
            Err(Error::SingularTime(s))
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (p, w) in self.points().zip(&self.weights) {
            for (mi, pi) in m.iter_mut().zip(p) {
                *mi += w * pi;
            }
        }
        m
    }

    pub(crate) fn draw_component(&self, rng: &mut ChaCha8Rng) -> usize {
        if self.weights.len() == 1 {
            return 0;
        }
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u).min(self.weights.len() - 1)
    }

    /// Posterior mean `E[X | X_s = x]` of the un-smoothed mixture at effective
    /// time `s`, computed with a single-pass streaming log-sum-exp.
    pub(crate) fn posterior_mean_into(&self, s: f64, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        if self.weights.len() == 1 {
            out.copy_from_slice(&self.points[..d]);
            return;
        }
        let inv2s = 0.5 / s;
        let mut max = f64::NEG_INFINITY;
        let mut z = 0.0;
        out.fill(0.0);
        for (p, &lw) in self.points.chunks_exact(d).zip(&self.log_weights) {
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let l = lw - sq_dist(p, x) * inv2s;
            if l > max {
                let f = (max - l).exp();
                z *= f;
                for o in out.iter_mut() {
                    *o *= f;
                }
                max = l;
            }
            let w = (l - max).exp();
            z += w;
            for (o, pi) in out.iter_mut().zip(p) {
                *o += w * pi;
            }
        }
        for o in out.iter_mut() {
            *o /= z;
        }
    }

    /// Posterior weights gamma_i, via max-subtracted log-sum-exp.
    pub(crate) fn posterior_weights(&self, s: f64, x: &[f64]) -> Vec<f64> {
        let inv2s = 0.5 / s;
        let logits: Vec<f64> = self
            .points()
            .zip(&self.log_weights)
            .map(|(p, lw)| lw - sq_dist(p, x) * inv2s)
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut gamma: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = gamma.iter().sum();
        for g in &mut gamma {
            *g /= z;
        }
        gamma
    }

    /// Conditional mean and (centred) covariance of `X | X_s = x`.
    pub(crate) fn posterior_mean_cov(&self, s: f64, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let gamma = self.posterior_weights(s, x);
        let mut mean = vec![0.0; d];
        for (p, g) in self.points().zip(&gamma) {
            for (m, pi) in mean.iter_mut().zip(p) {
                *m += g * pi;
            }
        }
        let mut cov = vec![0.0; d * d];
        for (p, g) in self.points().zip(&gamma) {
            for a in 0..d {
                let da = p[a] - mean[a];
                for b in 0..d {
                    cov[a * d + b] += g * da * (p[b] - mean[b]);
                }
            }
        }
        (mean, cov)
    }
}

/// Discretization of `[0, T - epsilon]` into `N` equal reverse-time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub epsilon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, epsilon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon T must be > 0, got {horizon}")));
        }
        if !(epsilon.is_finite() && epsilon >= 0.0 && epsilon < horizon) {
            return Err(invalid(format!("need 0 <= epsilon < T, got epsilon = {epsilon}")));
        }
        if steps == 0 {
            return Err(invalid("step count N must be >= 1"));
        }
        Ok(Self { horizon, epsilon, steps })
    }

    pub fn step(&self) -> f64 {
        (self.horizon - self.epsilon) / self.steps as f64
    }

    /// Reverse-time node `t_n = n (T - epsilon) / N`.
    pub fn node(&self, n: usize) -> f64 {
        if n == self.steps {
            return self.horizon - self.epsilon;
        }
        n as f64 * (self.horizon - self.epsilon) / self.steps as f64
    }

    /// Forward time at which the score is queried on reverse node `n`.
    pub fn forward_time(&self, n: usize) -> f64 {
        if n == self.steps {
            return self.epsilon;
        }
        self.horizon - self.node(n)
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self { steps: self.steps * factor, ..*self }
    }
}

/// `n` points in R^d plus the stream metadata that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub dim: usize,
    pub data: Vec<f64>,
    pub seed: u64,
    pub time_label: f64,
    /// Only the explosion module produces batches with blow-up sentinels.
    #[serde(default)]
    pub has_sentinels: bool,
}

impl SampleBatch {
    pub fn new(dim: usize, data: Vec<f64>, seed: u64, time_label: f64) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { dim, data, seed, time_label, has_sentinels: false }
    }

    pub fn from_points(points: &[Vec<f64>], seed: u64, time_label: f64) -> Self {
        let dim = points.first().map_or(1, |p| p.len());
        Self::new(dim, points.iter().flatten().copied().collect(), seed, time_label)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn truncated(&self, n: usize) -> Self {
        Self { data: self.data[..n.min(self.len()) * self.dim].to_vec(), ..self.clone() }
    }

    /// Per-coordinate sample mean and unbiased variance.
    pub fn mean_var(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let mut ms = vec![crate::stats::Moments::default(); d];
        for p in self.points() {
            for (m, v) in ms.iter_mut().zip(p) {
                m.push(*v);
            }
        }
        (ms.iter().map(|m| m.mean()).collect(), ms.iter().map(|m| m.variance()).collect())
    }
}

/// I.i.d. draws of the target: draw `i` uses stream `(seed, target-draw, i)`.
pub fn sample_target(target: &TargetDistribution, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(invalid("sample count must be >= 1"));
    }
    let sd = target.tau.sqrt();
    Ok(draw_batch(target, n, seed, Purpose::TargetDraw, sd, 0.0))
}

/// Draws of `X_t = X + B_t`; smoothing folds into the Gaussian, so each draw
/// is a mixture atom plus `sqrt(tau + t) G`.
pub fn forward_marginal_sample(target: &TargetDistribution, t: f64, n: usize, seed: u64) -> Result<SampleBatch> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(invalid(format!("forward time must be >= 0, got {t}")));
    }
    if n == 0 {
        return Err(invalid("sample count must be >= 1"));
    }
    let sd = (target.tau + t).sqrt();
    Ok(draw_batch(target, n, seed, Purpose::ForwardDraw, sd, t))
}

fn draw_batch(target: &TargetDistribution, n: usize, seed: u64, purpose: Purpose, sd: f64, label: f64) -> SampleBatch {
    use rayon::prelude::*;
    let d = target.dim;
    let mut data = vec![0.0; n * d];
    data.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let mut rng = rng::stream(seed, purpose, i as u64);
        let k = target.draw_component(&mut rng);
        out.copy_from_slice(target.point(k));
        if sd > 0.0 {
            for o in out.iter_mut() {
                *o += sd * rng::normal(&mut rng);
            }
        }
    });
    SampleBatch::new(d, data, seed, label)
}

/// Posterior weights and raw moments `E[X^{(x) j} | X_t = x]`, `j = 0..=max_order`.
///
/// Moment `j` is a flattened tensor with `d^j` entries (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub weights: Vec<f64>,
    pub moments: Vec<Vec<f64>>,
}

impl ConditionalMoments {
    pub fn mean(&self) -> &[f64] {
        &self.moments[1]
    }
}

pub fn conditional_moments(
    target: &TargetDistribution,
    t: f64,
    x: &[f64],
    max_order: usize,
) -> Result<ConditionalMoments> {
    let s = target.effective_time(t)?;
    check_point(target, x)?;
    let d = target.dim;
    if max_order >= 3 && d != 1 {
        return Err(Error::UnsupportedDimension { expected: 1, got: d });
    }
    let weights = target.posterior_weights(s, x);
    let mut moments = Vec::with_capacity(max_order + 1);
    moments.push(vec![1.0]);
    if max_order >= 1 {
        let mut m1 = vec![0.0; d];
        for (p, g) in target.points().zip(&weights) {
            for (m, pi) in m1.iter_mut().zip(p) {
                *m += g * pi;
            }
        }
        moments.push(m1);
    }
    if max_order >= 2 {
        let mut m2 = vec![0.0; d * d];
        for (p, g) in target.points().zip(&weights) {
            for a in 0..d {
                for b in 0..d {
                    m2[a * d + b] += g * p[a] * p[b];
                }
            }
        }
        moments.push(m2);
    }
    for j in 3..=max_order {
        let mj = target.points().zip(&weights).map(|(p, g)| g * p[0].powi(j as i32)).sum();
        moments.push(vec![mj]);
    }
    Ok(ConditionalMoments { weights, moments })
}

/// Second-moment matrix of the target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Covariance {
    pub mean: Vec<f64>,
    /// `E[X X^T]` row-major, including the smoothing `tau I`.
    pub second_moment: Vec<f64>,
    pub frobenius: f64,
}

impl Covariance {
    /// `||X||_{L2} = sqrt(tr E[X X^T])`.
    pub fn l2_norm(&self) -> f64 {
        let d = self.mean.len();
        (0..d).map(|i| self.second_moment[i * d + i]).sum::<f64>().sqrt()
    }
}

pub fn covariance(target: &TargetDistribution) -> Covariance {
    let d = target.dim;
    let mut sigma = vec![0.0; d * d];
    for (p, w) in target.points().zip(&target.weights) {
        for a in 0..d {
            for b in 0..d {
                sigma[a * d + b] += w * p[a] * p[b];
            }
        }
    }
    for a in 0..d {
        sigma[a * d + a] += target.tau;
    }
    let frobenius = sigma.iter().map(|v| v * v).sum::<f64>().sqrt();
    Covariance { mean: target.mean(), second_moment: sigma, frobenius }
}

/// `log p_t(x)` for the smoothed mixture, by log-sum-exp over components.
pub fn log_density(target: &TargetDistribution, t: f64, x: &[f64]) -> Result<f64> {
    let s = target.effective_time(t)?;
    check_point(target, x)?;
    let inv2s = 0.5 / s;
    let logits: Vec<f64> = target
        .points()
        .zip(&target.log_weights)
        .map(|(p, lw)| lw - sq_dist(p, x) * inv2s)
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let d = target.dim as f64;
    Ok(lse - 0.5 * d * (2.0 * std::f64::consts::PI * s).ln())
}

pub(crate) fn check_point(target: &TargetDistribution, x: &[f64]) -> Result<()> {
    if x.len() != target.dim {
        return Err(invalid(format!("point has dimension {}, target has {}", x.len(), target.dim)));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("point coordinates must be finite"));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
