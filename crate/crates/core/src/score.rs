//! Closed-form scores of noised Dirac mixtures, their derivatives, and the
//! perturbed and corrupted fields used to stress the samplers.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::{self, Purpose};
use crate::stats::{block_reduce, L2Estimate, Moments};
use crate::target::{check_point, forward_marginal_sample, norm, TargetDistribution, TimeGrid};

/// Smallest admissible corruption frequency.
pub const OMEGA_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FieldKind {
    Exact,
    /// Adds `alpha |x| x`.
    QuadraticPerturbed { alpha: f64 },
    /// Adds `c sin(omega <u_n, x> + phi_n) v_n` with per-node unit vectors.
    Corrupted { magnitude: f64, frequency: f64 },
}

#[derive(Debug)]
struct Corruption {
    grid: TimeGrid,
    dim: usize,
    /// Per node: `u` (d values), `v` (d values), `phi`.
    params: Vec<f64>,
}

impl Corruption {
    fn new(grid: TimeGrid, dim: usize, seed: u64) -> Self {
        let stride = 2 * dim + 1;
        let mut params = vec![0.0; (grid.steps + 1) * stride];
        for (n, node) in params.chunks_exact_mut(stride).enumerate() {
            let mut rng = rng::stream(seed, Purpose::Corruption, n as u64);
            let (u, rest) = node.split_at_mut(dim);
            for unit in [u, &mut rest[..dim]] {
                loop {
                    rng::fill_normal(&mut rng, unit);
                    let r = norm(unit);
                    if r > 1e-12 {
                        unit.iter_mut().for_each(|v| *v /= r);
                        break;
                    }
                }
            }
            rest[dim] = std::f64::consts::TAU * rand::Rng::random::<f64>(&mut rng);
        }
        Self { grid, dim, params }
    }

    /// Parameters of the grid node nearest to forward time `t`.
    fn node(&self, t: f64) -> &[f64] {
        let g = &self.grid;
        let n = ((g.horizon - t) / g.step()).round().clamp(0.0, g.steps as f64) as usize;
        let stride = 2 * self.dim + 1;
        &self.params[n * stride..(n + 1) * stride]
    }
}

/// A vector field `(t, x) -> R^d` built on the exact score of `base`.
///
/// Immutable after construction; cheap to clone.
#[derive(Debug, Clone)]
pub struct ScoreField {
    base: TargetDistribution,
    kind: FieldKind,
    corruption: Option<Arc<Corruption>>,
}

impl PartialEq for ScoreField {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.kind == other.kind
    }
}

impl ScoreField {
    pub fn exact(base: TargetDistribution) -> Self {
        Self { base, kind: FieldKind::Exact, corruption: None }
    }

    pub fn quadratic(base: TargetDistribution, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(invalid(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { base, kind: FieldKind::QuadraticPerturbed { alpha }, corruption: None })
    }

    pub fn base(&self) -> &TargetDistribution {
        &self.base
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn is_exact(&self) -> bool {
        match self.kind {
            FieldKind::Exact => true,
            FieldKind::QuadraticPerturbed { alpha } => alpha == 0.0,
            FieldKind::Corrupted { magnitude, .. } => magnitude == 0.0,
        }
    }

    pub fn score(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.score_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn score_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_point(&self.base, x)?;
        let s = self.base.effective_time(t)?;
        self.eval(t, s, x, out);
        Ok(())
    }

    /// Unchecked evaluation; `s` must equal `t + tau > 0`.
    pub(crate) fn eval(&self, t: f64, s: f64, x: &[f64], out: &mut [f64]) {
        self.base.posterior_mean_into(s, x, out);
        let inv = 1.0 / s;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (*o - xi) * inv;
        }
        self.add_perturbation(t, x, out);
    }

    /// Adds the non-exact part of the field at forward time `t`.
    pub(crate) fn add_perturbation(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self.kind {
            FieldKind::Exact => {}
            FieldKind::QuadraticPerturbed { alpha } => {
                let a = alpha * norm(x);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += a * xi;
                }
            }
            FieldKind::Corrupted { magnitude, frequency } => {
                if magnitude == 0.0 {
                    return;
                }
                let c = self.corruption.as_ref().expect("corrupted field carries parameters");
                let d = c.dim;
                let p = c.node(t);
                let (u, v, phi) = (&p[..d], &p[d..2 * d], p[2 * d]);
                let proj: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
                let a = magnitude * (frequency * proj + phi).sin();
                for (o, vi) in out.iter_mut().zip(v) {
                    *o += a * vi;
                }
            }
        }
    }

    /// The addend alone, `field(t, x) - exact(t, x)`.
    pub fn perturbation(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        check_point(&self.base, x)?;
        let mut out = vec![0.0; x.len()];
        self.add_perturbation(t, x, &mut out);
        Ok(out)
    }
}

/// Corrupted field whose addend has pointwise norm `<= budget` and Lipschitz
/// constant `<= lipschitz_budget` in `x`.
pub fn make_corrupted_field(
    target: &TargetDistribution,
    budget: f64,
    lipschitz_budget: f64,
    grid: &TimeGrid,
    seed: u64,
) -> Result<ScoreField> {
    if !(budget.is_finite() && budget >= 0.0) || !(lipschitz_budget.is_finite() && lipschitz_budget >= 0.0) {
        return Err(invalid("corruption budgets must be finite and >= 0"));
    }
    let frequency = if budget == 0.0 {
        OMEGA_FLOOR
    } else {
        let omega = lipschitz_budget / budget;
        if omega < OMEGA_FLOOR {
            return Err(Error::InfeasibleBudget(format!(
                "magnitude {budget} needs Lipschitz budget >= {}, got {lipschitz_budget}",
                budget * OMEGA_FLOOR
            )));
        }
        omega
    };
    Ok(ScoreField {
        base: target.clone(),
        kind: FieldKind::Corrupted { magnitude: budget, frequency },
        corruption: Some(Arc::new(Corruption::new(*grid, target.dim(), seed))),
    })
}

/// `-I/s + cov(X | X_s = x)/s^2` at effective time `s = t + tau`.
pub fn hessian(target: &TargetDistribution, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    check_point(target, x)?;
    let s = target.effective_time(t)?;
    let d = target.dim();
    let (_, cov) = target.posterior_mean_cov(s, x);
    let mut h = DMatrix::from_row_slice(d, d, &cov) / (s * s);
    for i in 0..d {
        h[(i, i)] -= 1.0 / s;
    }
    // exact symmetry
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = m;
            h[(j, i)] = m;
        }
    }
    Ok(h)
}

/// `d^k/dx^k log p_t(x)` in one dimension, `k` in 3..=5.
///
/// These are the conditional cumulants of `X | X_s = x` divided by `s^k`;
/// central moments are used so that nothing cancels catastrophically.
pub fn spatial_derivatives_1d(target: &TargetDistribution, t: f64, x: f64, order: usize) -> Result<f64> {
    if target.dim() != 1 {
        return Err(Error::UnsupportedDimension { expected: 1, got: target.dim() });
    }
    if !(3..=5).contains(&order) {
        return Err(invalid(format!("derivative order must be 3, 4 or 5, got {order}")));
    }
    check_point(target, &[x])?;
    let s = target.effective_time(t)?;
    let gamma = target.posterior_weights(s, &[x]);
    let mean: f64 = target.points().zip(&gamma).map(|(p, g)| g * p[0]).sum();
    let mut mu = [0.0; 6];
    for (p, g) in target.points().zip(&gamma) {
        let c = p[0] - mean;
        let mut pow = c * c;
        for m in mu.iter_mut().skip(2) {
            *m += g * pow;
            pow *= c;
        }
    }
    let kappa = match order {
        3 => mu[3],
        4 => mu[4] - 3.0 * mu[2] * mu[2],
        _ => mu[5] - 10.0 * mu[3] * mu[2],
    };
    Ok(kappa / s.powi(order as i32))
}

/// Spectral envelope of the Hessian and the Lipschitz constant of
/// `x -> x + h grad log p_t(x)` for a target supported in `B(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityEnvelope {
    pub t: f64,
    pub h: f64,
    pub radius: f64,
    pub lower_eig: f64,
    pub upper_eig: f64,
    pub c_t: f64,
    pub l_th: f64,
}

pub fn regularity_envelope(radius: f64, t: f64, h: f64) -> Result<RegularityEnvelope> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::SingularTime(t));
    }
    if !(h >= 0.0 && radius >= 0.0) {
        return Err(invalid("need h >= 0 and R >= 0"));
    }
    let r2 = radius * radius;
    let lower_eig = -1.0 / t;
    let upper_eig = -1.0 / t + r2 / (t * t);
    Ok(RegularityEnvelope {
        t,
        h,
        radius,
        lower_eig,
        upper_eig,
        c_t: (1.0 / t).max(upper_eig.abs()),
        l_th: lipschitz_step(radius, t, h),
    })
}

/// `L_{t,h} = 1 + h (R^2/t^2 - 1/t)`.
#[inline]
pub fn lipschitz_step(radius: f64, t: f64, h: f64) -> f64 {
    1.0 + h * (radius * radius / (t * t) - 1.0 / t)
}

/// Monte Carlo estimate of `|| field(t, X_t) - grad log p_t(X_t) ||_{L2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoreError {
    pub t: f64,
    pub estimate: L2Estimate,
    /// Set when the field produced non-finite values; the estimate is then infinite.
    pub blew_up: bool,
}

pub fn measure_score_error(field: &ScoreField, t: f64, n: usize, seed: u64) -> Result<ScoreError> {
    if n < 100 {
        return Err(invalid(format!("need at least 100 draws, got {n}")));
    }
    let target = field.base();
    target.effective_time(t)?;
    if field.is_exact() {
        return Ok(ScoreError { t, estimate: L2Estimate::zero(n as u64), blew_up: false });
    }
    let batch = forward_marginal_sample(target, t, n, seed)?;
    let d = target.dim();
    let moments = block_reduce(
        n,
        || (Moments::default(), false, vec![0.0; d]),
        |(m, bad, buf), i| {
            buf.fill(0.0);
            field.add_perturbation(t, batch.point(i), buf);
            let sq: f64 = buf.iter().map(|v| v * v).sum();
            if sq.is_finite() {
                m.push(sq);
            } else {
                *bad = true;
            }
        },
        |acc, (m, bad, _)| {
            acc.0.merge(&m);
            acc.1 |= bad;
        },
    );
    let (m, bad, _) = moments;
    if bad {
        let inf = L2Estimate { value: f64::INFINITY, lower: f64::INFINITY, upper: f64::INFINITY, n: n as u64 };
        return Ok(ScoreError { t, estimate: inf, blew_up: true });
    }
    Ok(ScoreError { t, estimate: m.l2_estimate(), blew_up: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::{log_density, make_dirac_mixture};
    use rand::Rng;

    fn fd_gradient(target: &TargetDistribution, t: f64, x: &[f64]) -> Vec<f64> {
        let step = 1e-5 * (1.0 + norm(x));
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += step;
                xm[i] -= step;
                (log_density(target, t, &xp).unwrap() - log_density(target, t, &xm).unwrap()) / (2.0 * step)
            })
            .collect()
    }

    #[test]
    fn score_examples() {
        let f = ScoreField::exact(TargetDistribution::dirac(&[0.0, 0.0], 0.0));
        let s = f.score(2.0, &[1.0, -4.0]).unwrap();
        assert_eq!(s, vec![-0.5, 2.0]);

        let r = 1.3;
        let f = ScoreField::exact(TargetDistribution::two_dirac(r));
        assert_eq!(f.score(0.7, &[0.0]).unwrap()[0], 0.0);
        for &(t, x) in &[(0.3, 0.4), (2.0, -3.0)] {
            let expect = (r * (x * r / t).tanh() - x) / t;
            assert!((f.score(t, &[x]).unwrap()[0] - expect).abs() < 1e-13);
        }

        let tgt = TargetDistribution::dirac(&[0.0], 1.0);
        let f = ScoreField::exact(tgt.clone());
        assert_eq!(f.score(1.0, &[2.0]).unwrap()[0], -1.0);
        let fd = fd_gradient(&tgt, 1.0, &[2.0])[0];
        assert!((fd + 1.0).abs() < 1e-6);
    }

    #[test]
    fn score_errors() {
        let f = ScoreField::exact(TargetDistribution::two_dirac(1.0));
        assert_eq!(f.score(0.0, &[1.0]).unwrap_err(), Error::SingularTime(0.0));
        assert!(matches!(f.score(1.0, &[f64::NAN]), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn score_matches_log_density_gradient() {
        let mut rng = rng::stream(5, Purpose::Auxiliary(0), 0);
        for _ in 0..100 {
            let d = rng.random_range(1..=3);
            let m = rng.random_range(1..=5);
            let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let ws: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let tau = if rng.random::<bool>() { rng.random_range(0.0..0.5) } else { 0.0 };
            let tgt = make_dirac_mixture(&pts, &ws, tau).unwrap();
            let t = rng.random_range(0.05..5.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let s = ScoreField::exact(tgt.clone()).score(t, &x).unwrap();
            let fd = fd_gradient(&tgt, t, &x);
            let err = s.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err <= 1e-6 * norm(&s).max(1.0), "err {err}");
        }
    }

    #[test]
    fn hessian_examples() {
        let r = 1.0;
        let tgt = TargetDistribution::two_dirac(r);
        let h = hessian(&tgt, 1.0, &[0.0]).unwrap();
        assert!((h[(0, 0)] - 0.0).abs() < 1e-15);
        let h = hessian(&tgt, 1.0, &[10.0]).unwrap()[(0, 0)];
        let sech2 = 1.0 / 10f64.cosh().powi(2);
        assert!((h - (-1.0 + sech2)).abs() < 1e-12);
        assert!((h + 0.999_999_991_755).abs() < 1e-11);

        let tgt = TargetDistribution::dirac(&[1.0, 2.0], 0.0);
        let h = hessian(&tgt, 4.0, &[0.0, 0.0]).unwrap();
        assert_eq!(h, DMatrix::identity(2, 2) * -0.25);
    }

    #[test]
    fn hessian_matches_score_differences() {
        let tgt = make_dirac_mixture(&[vec![1.0, 0.2], vec![-0.5, 0.7], vec![0.0, -1.0]], &[0.3, 0.3, 0.4], 0.1).unwrap();
        let f = ScoreField::exact(tgt.clone());
        let (t, x) = (0.6, [0.3, -0.2]);
        let h = hessian(&tgt, t, &x).unwrap();
        let step = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += step;
            xm[j] -= step;
            let (sp, sm) = (f.score(t, &xp).unwrap(), f.score(t, &xm).unwrap());
            for i in 0..2 {
                let fd = (sp[i] - sm[i]) / (2.0 * step);
                assert!((fd - h[(i, j)]).abs() < 1e-5 * h[(i, j)].abs().max(1.0));
            }
        }
    }

    #[test]
    fn higher_derivatives() {
        let dirac = TargetDistribution::dirac(&[0.0], 0.0);
        for k in 3..=5 {
            assert_eq!(spatial_derivatives_1d(&dirac, 1.0, 0.7, k).unwrap(), 0.0);
        }
        let tgt = TargetDistribution::two_dirac(1.0);
        assert_eq!(spatial_derivatives_1d(&tgt, 1.0, 0.0, 3).unwrap(), 0.0);

        // five-point central differences of the next-lower derivative
        let lower = |k: usize, x: f64| -> f64 {
            if k == 2 {
                hessian(&tgt, 1.0, &[x]).unwrap()[(0, 0)]
            } else {
                spatial_derivatives_1d(&tgt, 1.0, x, k).unwrap()
            }
        };
        let x = 0.5;
        let step = 1e-3;
        for k in 3..=5 {
            let fd = (-lower(k - 1, x + 2.0 * step) + 8.0 * lower(k - 1, x + step) - 8.0 * lower(k - 1, x - step)
                + lower(k - 1, x - 2.0 * step))
                / (12.0 * step);
            let exact = spatial_derivatives_1d(&tgt, 1.0, x, k).unwrap();
            assert!((fd - exact).abs() < 1e-5 * exact.abs(), "k={k}: fd {fd} exact {exact}");
        }

        let t2 = TargetDistribution::dirac(&[0.0, 0.0], 0.0);
        assert!(matches!(spatial_derivatives_1d(&t2, 1.0, 0.0, 3), Err(Error::UnsupportedDimension { .. })));
    }

    #[test]
    fn envelope_examples() {
        let e = regularity_envelope(1.0, 1.0, 0.1).unwrap();
        assert_eq!(e.l_th, 1.0);
        let e = regularity_envelope(1.0, 2.0, 0.1).unwrap();
        assert!((e.l_th - 0.975).abs() < 1e-15);
        let e = regularity_envelope(1.0, 0.5, 0.1).unwrap();
        assert_eq!(e.c_t, 2.0);
        assert!(regularity_envelope(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn two_dirac_step_map_respects_lipschitz_constant() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let f = ScoreField::exact(tgt);
        let (t, h) = (2.0, 0.1);
        let l = regularity_envelope(1.0, t, h).unwrap().l_th;
        let map = |x: f64| x + h * f.score(t, &[x]).unwrap()[0];
        let mut rng = rng::stream(1, Purpose::Auxiliary(1), 0);
        for _ in 0..10_000 {
            let (x, y): (f64, f64) = (rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0));
            if (x - y).abs() < 1e-9 {
                continue;
            }
            assert!((map(x) - map(y)).abs() / (x - y).abs() <= l + 1e-9);
        }
    }

    #[test]
    fn corrupted_field_budgets() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.5, 50).unwrap();
        let f0 = make_corrupted_field(&tgt, 0.0, 0.0, &grid, 1).unwrap();
        let ex = ScoreField::exact(tgt.clone());
        assert_eq!(f0.score(3.0, &[0.4]).unwrap(), ex.score(3.0, &[0.4]).unwrap());

        let f = make_corrupted_field(&tgt, 0.1, 0.01, &grid, 2).unwrap();
        for n in 0..=grid.steps {
            let e = measure_score_error(&f, grid.forward_time(n), 10_000, 3).unwrap();
            assert!(e.estimate.value <= 0.1);
        }
        let mut rng = rng::stream(4, Purpose::Auxiliary(2), 0);
        for _ in 0..10_000 {
            let t = grid.forward_time(rng.random_range(0..=grid.steps));
            let (x, y): (f64, f64) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
            let dx = f.perturbation(t, &[x]).unwrap()[0] - f.perturbation(t, &[y]).unwrap()[0];
            assert!(dx.abs() <= 0.01 * (x - y).abs() + 1e-9);
        }
        assert!(matches!(make_corrupted_field(&tgt, 0.1, 1e-5, &grid, 2), Err(Error::InfeasibleBudget(_))));
    }

    #[test]
    fn corrupted_field_in_higher_dimension_has_unit_directions() {
        let tgt = make_dirac_mixture(&[vec![0.0, 1.0, 0.0]], &[1.0], 0.0).unwrap();
        let grid = TimeGrid::new(5.0, 0.1, 10).unwrap();
        let f = make_corrupted_field(&tgt, 0.05, 1.0, &grid, 8).unwrap();
        let e = measure_score_error(&f, 1.0, 2000, 1).unwrap();
        assert!(e.estimate.value <= 0.05 && e.estimate.value > 0.0);
    }

    #[test]
    fn score_error_examples() {
        let tgt = TargetDistribution::dirac(&[0.0], 1.0);
        let e = measure_score_error(&ScoreField::exact(tgt.clone()), 0.5, 1000, 1).unwrap();
        assert_eq!(e.estimate.value, 0.0);

        let f = ScoreField::quadratic(tgt, 0.01).unwrap();
        let e = measure_score_error(&f, 0.0, 200_000, 2).unwrap();
        let expect = 0.01 * 3f64.sqrt();
        assert!((e.estimate.value - expect).abs() < 0.05 * expect, "{e:?}");
    }
}
