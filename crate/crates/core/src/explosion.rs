//! Finite-time blow-up of the probability-flow ODE under the quadratic score
//! perturbation `alpha ||x|| x`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::rng::{self, Purpose};
use crate::score::ScoreField;
use crate::stats::{block_reduce, wilson_interval};
use crate::target::{norm, TargetDistribution, TimeGrid};

pub const DEFAULT_THRESHOLD: f64 = 1e8;
pub const DEFAULT_MAX_REFINE: u32 = 30;
/// Steps whose relative norm growth exceeds this are retried at half size.
pub const MAX_GROWTH: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExplosionOutcome {
    pub exploded: bool,
    /// End of the accepted step on which the norm crossed the threshold.
    pub tau_hat: Option<f64>,
    pub final_norm: f64,
    pub x0_norm: f64,
}

/// Comparison blow-up time `4 / (alpha sqrt(y0))` of `z' = (alpha / 2) z^{3/2}`;
/// infinite when `alpha` or `y0` is zero.
pub fn blowup_time_bound(alpha: f64, y0: f64) -> f64 {
    if alpha <= 0.0 || y0 <= 0.0 {
        return f64::INFINITY;
    }
    4.0 / (alpha * y0.sqrt())
}

/// Smallest `y` with `alpha y^{3/2} - y / eps - R sqrt(y) / eps >= (alpha / 2) y^{3/2}`,
/// found by bisection. Past it the squared norm grows at least like the comparison ODE.
pub fn comparison_constant(alpha: f64, eps: f64, radius: f64) -> Result<f64> {
    if !(alpha > 0.0 && eps > 0.0 && radius >= 0.0) {
        return Err(invalid("need alpha > 0, eps > 0, R >= 0"));
    }
    let gap = |y: f64| 0.5 * alpha * y.powf(1.5) - y / eps - radius * y.sqrt() / eps;
    let mut hi = 1.0;
    while gap(hi) < 0.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-14 * hi {
            break;
        }
        if gap(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

fn rk4<F: FnMut(f64, &[f64], &mut [f64])>(f: &mut F, t: f64, h: f64, x: &[f64], out: &mut [f64], k: &mut [Vec<f64>; 5]) {
    let d = x.len();
    let [k1, k2, k3, k4, y] = k;
    f(t, x, k1);
    for i in 0..d {
        y[i] = x[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, y, k2);
    for i in 0..d {
        y[i] = x[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, y, k3);
    for i in 0..d {
        y[i] = x[i] + h * k3[i];
    }
    f(t + h, y, k4);
    for i in 0..d {
        out[i] = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// RK4 on `[0, t_end]` with base step `h`, halving locally (down to
/// `h / 2^max_refine`) while a step grows the norm by more than [`MAX_GROWTH`].
pub fn integrate_until_blowup<F>(mut f: F, x0: &[f64], t_end: f64, h: f64, threshold: f64, max_refine: u32) -> ExplosionOutcome
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let d = x0.len();
    let x0_norm = norm(x0);
    let mut x = x0.to_vec();
    let mut trial = vec![0.0; d];
    let mut k: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; d]);
    let h_min = h / 2f64.powi(max_refine as i32);
    let mut hs = h;
    let mut t = 0.0;
    let mut n0 = x0_norm;
    while t < t_end {
        let last = hs >= t_end - t;
        let step = if last { t_end - t } else { hs };
        rk4(&mut f, t, step, &x, &mut trial, &mut k);
        let n1 = norm(&trial);
        // relative to 1 near the origin, where growth is harmless
        let growth = (n1 - n0) / n0.max(1.0);
        let ok = growth <= MAX_GROWTH;
        if !ok && step > h_min {
            hs = 0.5 * step;
            continue;
        }
        t = if last { t_end } else { t + step };
        std::mem::swap(&mut x, &mut trial);
        n0 = n1;
        if !(n1 < threshold) {
            return ExplosionOutcome { exploded: true, tau_hat: Some(t), final_norm: n1, x0_norm };
        }
        if growth < 0.25 * MAX_GROWTH && hs < h {
            hs = (2.0 * hs).min(h);
        }
    }
    ExplosionOutcome { exploded: false, tau_hat: None, final_norm: n0, x0_norm }
}

/// Reverse ODE `dx/dt = s(T - t, x) / 2` with `s = exact + alpha ||x|| x`, on `[0, T - eps]`.
pub fn simulate_perturbed_ode(
    target: &TargetDistribution,
    alpha: f64,
    grid: &TimeGrid,
    x0: &[f64],
    threshold: f64,
    max_refine: u32,
) -> Result<ExplosionOutcome> {
    if !(threshold >= 1e6) {
        return Err(invalid("threshold must be >= 1e6"));
    }
    if x0.len() != target.dim() {
        return Err(invalid("x0 does not match the target dimension"));
    }
    let field = ScoreField::quadratic(target.clone(), alpha)?;
    Ok(run_field(&field, grid, x0, threshold, max_refine))
}

fn run_field(field: &ScoreField, grid: &TimeGrid, x0: &[f64], threshold: f64, max_refine: u32) -> ExplosionOutcome {
    let horizon = grid.horizon;
    let tau = field.base().tau();
    let f = |t: f64, x: &[f64], out: &mut [f64]| {
        let u = (horizon - t).max(grid.epsilon);
        field.eval(u, u + tau, x, out);
        out.iter_mut().for_each(|v| *v *= 0.5);
    };
    integrate_until_blowup(f, x0, horizon - grid.epsilon, grid.step(), threshold, max_refine)
}

/// The scalar comparison ODE `z' = (alpha / 2) z^{3/2}` from `z0`.
pub fn comparison_ode(alpha: f64, z0: f64, t_end: f64, h: f64, threshold: f64, max_refine: u32) -> ExplosionOutcome {
    let f = |_: f64, z: &[f64], out: &mut [f64]| out[0] = 0.5 * alpha * z[0].max(0.0).powf(1.5);
    integrate_until_blowup(f, &[z0], t_end, h, threshold, max_refine)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    /// `None` for explosion anywhere in `(0, T - eps]`.
    pub delta: Option<f64>,
    pub count: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl ProbabilityEstimate {
    fn new(delta: Option<f64>, count: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(count, trials);
        Self { delta, count, trials, p_hat: count as f64 / trials as f64, ci_low, ci_high }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExplosionStudy {
    pub alpha: f64,
    pub by_delta: Vec<ProbabilityEstimate>,
    pub anywhere: ProbabilityEstimate,
    #[serde(skip)]
    pub outcomes: Vec<ExplosionOutcome>,
}

impl ExplosionStudy {
    pub const CSV_HEADER: &'static str = "replicate,x0_norm,exploded,tau_hat,bound_tau";

    /// One CSV row per replicate.
    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.outcomes.iter().enumerate().map(move |(i, o)| {
            let tau = o.tau_hat.map_or(String::new(), |t| format!("{t:.17e}"));
            let bound = blowup_time_bound(self.alpha, o.x0_norm * o.x0_norm);
            format!("{i},{:.17e},{},{tau},{bound:.17e}", o.x0_norm, o.exploded)
        })
    }
}

/// Monte Carlo estimate of `P(tau <= delta)` for each delta, with `X_0` drawn
/// from the law of `X_T` on stream `(seed, explosion, replicate)`.
pub fn explosion_probability(
    target: &TargetDistribution,
    alpha: f64,
    grid: &TimeGrid,
    deltas: &[f64],
    replicates: usize,
    seed: u64,
) -> Result<ExplosionStudy> {
    explosion_probability_with(target, alpha, grid, deltas, replicates, seed, DEFAULT_THRESHOLD, DEFAULT_MAX_REFINE)
}

#[allow(clippy::too_many_arguments)]
pub fn explosion_probability_with(
    target: &TargetDistribution,
    alpha: f64,
    grid: &TimeGrid,
    deltas: &[f64],
    replicates: usize,
    seed: u64,
    threshold: f64,
    max_refine: u32,
) -> Result<ExplosionStudy> {
    if replicates < 100 {
        return Err(invalid("need at least 100 replicates"));
    }
    if !(threshold >= 1e6) {
        return Err(invalid("threshold must be >= 1e6"));
    }
    if deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(invalid("deltas must be > 0"));
    }
    let field = ScoreField::quadratic(target.clone(), alpha)?;
    let d = target.dim();
    let sd = (grid.horizon + target.tau()).sqrt();
    let outcomes: Vec<ExplosionOutcome> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, Purpose::Explosion, i as u64);
            let k = target.draw_component(&mut r);
            let mut x0 = target.point(k).to_vec();
            for v in x0.iter_mut().take(d) {
                *v += sd * rng::normal(&mut r);
            }
            run_field(&field, grid, &x0, threshold, max_refine)
        })
        .collect();
    let count = |pred: &(dyn Fn(&ExplosionOutcome) -> bool + Sync)| -> u64 {
        block_reduce(outcomes.len(), || 0u64, |acc, i| *acc += pred(&outcomes[i]) as u64, |a, b| *a += b)
    };
    let n = replicates as u64;
    let by_delta = deltas
        .iter()
        .map(|&delta| ProbabilityEstimate::new(Some(delta), count(&|o| o.tau_hat.is_some_and(|t| t <= delta)), n))
        .collect();
    let anywhere = ProbabilityEstimate::new(None, count(&|o| o.exploded), n);
    Ok(ExplosionStudy { alpha, by_delta, anywhere, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_examples() {
        assert_eq!(blowup_time_bound(1.0, 16.0), 1.0);
        assert_eq!(blowup_time_bound(4.0, 16.0), 0.25);
        assert_eq!(blowup_time_bound(0.0, 16.0), f64::INFINITY);
        assert_eq!(blowup_time_bound(1.0, 0.0), f64::INFINITY);
        assert!(blowup_time_bound(1.0, 1e300) < 1e-140);
    }

    #[test]
    fn comparison_ode_blows_up_at_closed_form_time() {
        // z^{-1/2}(t) = z0^{-1/2} - alpha t / 4 crosses 1e8 at t = 1 - 4e-4
        let o = comparison_ode(1.0, 16.0, 2.0, 0.01, 1e8, DEFAULT_MAX_REFINE);
        let t = o.tau_hat.unwrap();
        assert!((0.95..=1.0).contains(&t), "{t}");
        assert!((t - (1.0 - 4e-4)).abs() < 1e-3, "{t}");
    }

    #[test]
    fn comparison_constant_matches_quadratic_root() {
        for (alpha, eps, r) in [(1.0, 0.1, 1.0), (0.5, 1.0, 2.0), (3.0, 0.01, 0.0)] {
            let c = comparison_constant(alpha, eps, r).unwrap();
            let s = (1.0 / eps + (1.0 / (eps * eps) + 2.0 * alpha * r / eps).sqrt()) / alpha;
            assert!((c - s * s).abs() < 1e-10 * s * s, "{c} vs {}", s * s);
        }
    }

    #[test]
    fn unperturbed_field_never_explodes() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 200).unwrap();
        let s = explosion_probability(&tgt, 0.0, &grid, &[9.9], 1000, 1).unwrap();
        assert_eq!(s.anywhere.count, 0);
        assert_eq!(s.anywhere.ci_low, 0.0);
        assert!(s.outcomes.iter().all(|o| o.final_norm.is_finite()));
    }

    #[test]
    fn large_start_explodes_before_slackened_bound() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 1000).unwrap();
        let o = simulate_perturbed_ode(&tgt, 1.0, &grid, &[100.0], 1e8, DEFAULT_MAX_REFINE).unwrap();
        assert!(o.exploded);
        assert!(o.tau_hat.unwrap() <= 0.08, "{:?}", o);
    }

    #[test]
    fn threshold_insensitivity() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 1000).unwrap();
        for x0 in [3.0, -5.0, 20.0] {
            let a = simulate_perturbed_ode(&tgt, 1.0, &grid, &[x0], 1e6, DEFAULT_MAX_REFINE).unwrap();
            let b = simulate_perturbed_ode(&tgt, 1.0, &grid, &[x0], 1e10, DEFAULT_MAX_REFINE).unwrap();
            let (ta, tb) = (a.tau_hat.unwrap(), b.tau_hat.unwrap());
            assert!((ta - tb).abs() < 0.01 * tb, "{ta} vs {tb}");
        }
    }

    #[test]
    fn dominance_past_comparison_constant() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 1000).unwrap();
        let alpha = 1.0;
        let c = comparison_constant(alpha, grid.epsilon, 1.0).unwrap();
        for scale in [1.0, 2.0, 10.0, 100.0] {
            for sign in [1.0, -1.0] {
                let y0 = c * scale;
                let o = simulate_perturbed_ode(&tgt, alpha, &grid, &[sign * y0.sqrt()], 1e8, DEFAULT_MAX_REFINE).unwrap();
                assert!(o.tau_hat.unwrap() <= 2.0 * blowup_time_bound(alpha, y0));
            }
        }
    }

    #[test]
    fn probability_monotone_in_alpha() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 200).unwrap();
        let mut prev = 0;
        for alpha in [0.1, 0.25, 0.5, 1.0, 2.0] {
            let s = explosion_probability(&tgt, alpha, &grid, &[9.9], 500, 3).unwrap();
            assert!(s.by_delta[0].count >= prev);
            prev = s.by_delta[0].count;
        }
        assert!(prev > 0);
    }

    #[test]
    fn csv_rows_follow_outcomes() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.1, 100).unwrap();
        let s = explosion_probability(&tgt, 1.0, &grid, &[1.0], 100, 2).unwrap();
        let rows: Vec<String> = s.csv_rows().collect();
        assert_eq!(rows.len(), 100);
        assert_eq!(rows[0].split(',').count(), 5);
    }
}
