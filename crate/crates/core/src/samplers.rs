//! Euler–Maruyama, Euler and Heun samplers, a tolerance-controlled reference
//! solver for the probability-flow ODE, and coupled strong-error diagnostics.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::discretization_bounds;
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Purpose};
use crate::score::ScoreField;
use crate::stats::{block_reduce, L2Estimate, Moments};
use crate::target::{SampleBatch, TargetDistribution, TimeGrid};

/// Coordinates beyond this magnitude abort a trajectory.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    EulerMaruyama,
    EulerOde,
    Heun,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::EulerMaruyama, Algorithm::EulerOde, Algorithm::Heun];

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::EulerMaruyama => "euler_maruyama",
            Algorithm::EulerOde => "euler_ode",
            Algorithm::Heun => "heun",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Algorithm::EulerMaruyama
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler_maruyama" | "em" => Ok(Algorithm::EulerMaruyama),
            "euler_ode" | "euler" => Ok(Algorithm::EulerOde),
            "heun" => Ok(Algorithm::Heun),
            _ => Err(invalid(format!("unknown algorithm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub algorithm: Algorithm,
    pub field: ScoreField,
    pub grid: TimeGrid,
}

impl SamplerSpec {
    pub fn new(algorithm: Algorithm, field: ScoreField, grid: TimeGrid) -> Result<Self> {
        // every node must have positive effective time
        field.base().effective_time(grid.epsilon)?;
        Ok(Self { algorithm, field, grid })
    }

    /// Standard deviation of `X_0`: the effective horizon is `T + tau`.
    pub fn init_sd(&self) -> f64 {
        (self.grid.horizon + self.field.base().tau()).sqrt()
    }
}

/// Forward times and effective times at the grid nodes.
struct Nodes {
    t: Vec<f64>,
    s: Vec<f64>,
    h: f64,
}

impl Nodes {
    fn new(grid: &TimeGrid, tau: f64) -> Self {
        let t: Vec<f64> = (0..=grid.steps).map(|n| grid.forward_time(n)).collect();
        let s = t.iter().map(|u| u + tau).collect();
        Self { t, s, h: grid.step() }
    }
}

/// Scratch space for one trajectory.
struct Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    y: Vec<f64>,
}

impl Work {
    fn new(d: usize) -> Self {
        Self { k1: vec![0.0; d], k2: vec![0.0; d], y: vec![0.0; d] }
    }
}

/// One update from node `n` to `n + 1`. `dw` is the Brownian increment (EM only).
fn step(alg: Algorithm, field: &ScoreField, nodes: &Nodes, n: usize, x: &mut [f64], dw: Option<&[f64]>, w: &mut Work) {
    let h = nodes.h;
    field.eval(nodes.t[n], nodes.s[n], x, &mut w.k1);
    match alg {
        Algorithm::EulerMaruyama => {
            let dw = dw.expect("Euler–Maruyama needs a Brownian increment");
            for ((xi, k), z) in x.iter_mut().zip(&w.k1).zip(dw) {
                *xi += h * k + z;
            }
        }
        Algorithm::EulerOde => {
            for (xi, k) in x.iter_mut().zip(&w.k1) {
                *xi += 0.5 * h * k;
            }
        }
        Algorithm::Heun => {
            for ((y, xi), k) in w.y.iter_mut().zip(x.iter()).zip(&w.k1) {
                *y = xi + 0.5 * h * k;
            }
            field.eval(nodes.t[n + 1], nodes.s[n + 1], &w.y, &mut w.k2);
            for ((xi, a), b) in x.iter_mut().zip(&w.k1).zip(&w.k2) {
                *xi += 0.25 * h * (a + b);
            }
        }
    }
}

#[inline]
fn diverged(x: &[f64]) -> bool {
    x.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT))
}

fn first_error(results: Vec<Result<()>>) -> Result<()> {
    results.into_iter().collect()
}

/// Runs the sampler on `n` replicates. Replicate `i` draws `X_0` from stream
/// `(seed, init, i)` and its step noise, in step order, from `(seed, step-noise, i)`.
pub fn run_sampler(spec: &SamplerSpec, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(invalid("sample count must be >= 1"));
    }
    let d = spec.field.dim();
    let nodes = Nodes::new(&spec.grid, spec.field.base().tau());
    let sd = spec.init_sd();
    let sqrt_h = nodes.h.sqrt();
    let mut data = vec![0.0; n * d];
    let results: Vec<Result<()>> = data
        .par_chunks_mut(d)
        .enumerate()
        .map(|(i, x)| {
            let mut init = rng::stream(seed, Purpose::Init, i as u64);
            rng::fill_normal(&mut init, x);
            x.iter_mut().for_each(|v| *v *= sd);
            let mut noise = spec.algorithm.is_stochastic().then(|| rng::stream(seed, Purpose::StepNoise, i as u64));
            let mut dw = vec![0.0; d];
            let mut w = Work::new(d);
            for k in 0..spec.grid.steps {
                if let Some(r) = noise.as_mut() {
                    rng::fill_normal(r, &mut dw);
                    dw.iter_mut().for_each(|v| *v *= sqrt_h);
                }
                step(spec.algorithm, &spec.field, &nodes, k, x, noise.as_ref().map(|_| dw.as_slice()), &mut w);
                if diverged(x) {
                    return Err(Error::Divergence { step: k + 1, replicate: i });
                }
            }
            Ok(())
        })
        .collect();
    first_error(results)?;
    Ok(SampleBatch::new(d, data, seed, spec.grid.epsilon))
}

/// Refinement limit of the reference solver (RK4 substeps per interval `2^depth`).
pub const REFERENCE_MAX_DEPTH: usize = 14;

/// Integrates the probability-flow ODE `dx/dt = s(T - t, x) / 2` with the exact
/// score from `x0`, returning the state at every node of `grid` (row-major,
/// `(N + 1) x d`).
///
/// Each interval is covered by `m` classical RK4 substeps. The whole path is
/// recomputed with `m` doubled until the sup-norm error estimate of the finer
/// pass drops below `tolerance`; the Richardson extrapolation of the last two
/// passes is returned.
pub fn reference_path(target: &TargetDistribution, grid: &TimeGrid, x0: &[f64], tolerance: f64) -> Result<Vec<f64>> {
    if !(tolerance > 0.0) {
        return Err(invalid("tolerance must be > 0"));
    }
    let field = ScoreField::exact(target.clone());
    field.base().effective_time(grid.epsilon)?;
    let d = x0.len();
    let mut w = Work::new(d);
    // |fine - coarse| / 15 estimates the error of `fine`; the extrapolation is more accurate still.
    let mut coarse = rk4_path(&field, grid, x0, 1, &mut w);
    for depth in 1..=REFERENCE_MAX_DEPTH {
        let fine = rk4_path(&field, grid, x0, 1 << depth, &mut w);
        let est = coarse.iter().zip(&fine).map(|(c, f)| (f - c).abs()).fold(0.0, f64::max) / 15.0;
        if est < tolerance {
            return Ok(richardson(&coarse, &fine));
        }
        if !est.is_finite() {
            break;
        }
        coarse = fine;
    }
    Err(Error::ToleranceNotMet { tolerance, depth: REFERENCE_MAX_DEPTH })
}

fn richardson(coarse: &[f64], fine: &[f64]) -> Vec<f64> {
    coarse.iter().zip(fine).map(|(c, f)| f + (f - c) / 15.0).collect()
}

fn rk4_path(field: &ScoreField, grid: &TimeGrid, x0: &[f64], m: usize, w: &mut Work) -> Vec<f64> {
    let d = x0.len();
    let tau = field.base().tau();
    let mut out = Vec::with_capacity((grid.steps + 1) * d);
    out.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let f = |u: f64, x: &[f64], out: &mut [f64]| {
        field.eval(u, u + tau, x, out);
        out.iter_mut().for_each(|v| *v *= 0.5);
    };
    for n in 0..grid.steps {
        let (u0, u1) = (grid.forward_time(n), grid.forward_time(n + 1));
        let du = (u0 - u1) / m as f64;
        for j in 0..m {
            let u = u0 - du * j as f64;
            let um = u - 0.5 * du;
            let ue = if j + 1 == m { u1 } else { u - du };
            f(u, &x, &mut w.k1);
            for i in 0..d {
                w.y[i] = x[i] + 0.5 * du * w.k1[i];
            }
            f(um, &w.y, &mut w.k2);
            for i in 0..d {
                w.y[i] = x[i] + 0.5 * du * w.k2[i];
            }
            f(um, &w.y, &mut k3);
            for i in 0..d {
                w.y[i] = x[i] + du * k3[i];
            }
            f(ue, &w.y, &mut k4);
            for i in 0..d {
                x[i] += du / 6.0 * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        out.extend_from_slice(&x);
    }
    out
}

/// Reference endpoints for every point of `inits`.
pub fn reference_reverse_ode(
    target: &TargetDistribution,
    grid: &TimeGrid,
    inits: &SampleBatch,
    tolerance: f64,
) -> Result<SampleBatch> {
    let d = target.dim();
    if inits.dim != d {
        return Err(invalid("initial points do not match the target dimension"));
    }
    let ends: Vec<Result<Vec<f64>>> = inits
        .data
        .par_chunks(d)
        .map(|x0| reference_path(target, grid, x0, tolerance).map(|p| p[grid.steps * d..].to_vec()))
        .collect();
    let mut data = Vec::with_capacity(inits.data.len());
    for e in ends {
        data.extend(e?);
    }
    Ok(SampleBatch::new(d, data, inits.seed, grid.epsilon))
}

/// Strong-error diagnostics for one refinement level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledRun {
    pub algorithm: Algorithm,
    pub level: usize,
    pub steps: usize,
    pub h: f64,
    /// `|| Xbar_0 - Xhat_0 ||_{L2}` under the shared-Gaussian initial coupling.
    pub init_error: L2Estimate,
    /// `|| Xbar_{t_n} - Xhat_n ||_{L2}` for `n = 0..=N`, with `step_errors[0] == init_error`.
    pub step_errors: Vec<L2Estimate>,
    /// End-time error when sampler and reference start from the same point:
    /// the discretization part of the error, used for rate fits.
    pub end_error: L2Estimate,
    /// One-step defects along the reference path, `n = 0..N`.
    pub defects: Vec<L2Estimate>,
    pub defect_max: f64,
    pub defect_bound: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl CoupledRun {
    pub const CSV_HEADER: &'static str = "algorithm,h,level,end_error_L2,ci_halfwidth,defect_max,defect_bound";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.algorithm,
            self.h,
            self.level,
            self.end_error.value,
            self.end_error.half_width(),
            self.defect_max,
            self.defect_bound
        )
    }
}

/// Level layout shared by the coupled diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    /// Number of levels; level `l` uses `N * 2^l` steps.
    pub levels: usize,
    /// The SDE reference is `2^reference_log2` times finer than the finest level.
    pub reference_log2: u32,
}

#[derive(Default, Clone)]
struct LevelAcc {
    init: Moments,
    steps: Vec<Moments>,
    end: Moments,
    defects: Vec<Moments>,
}

impl LevelAcc {
    fn new(n: usize) -> Self {
        Self { steps: vec![Moments::default(); n + 1], defects: vec![Moments::default(); n], ..Default::default() }
    }

    fn merge(&mut self, o: &LevelAcc) {
        self.init.merge(&o.init);
        self.end.merge(&o.end);
        for (a, b) in self.steps.iter_mut().zip(&o.steps) {
            a.merge(b);
        }
        for (a, b) in self.defects.iter_mut().zip(&o.defects) {
            a.merge(b);
        }
    }
}

fn level_grids(grid: &TimeGrid, levels: usize) -> Result<Vec<TimeGrid>> {
    if levels == 0 {
        return Err(invalid("need at least one refinement level"));
    }
    Ok((0..levels).map(|l| grid.refined(1 << l)).collect())
}

fn sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draws `(Xbar_0, Xhat_0)`: a mixture atom plus `sqrt(T + tau) G`, and `sqrt(T + tau) G`.
fn coupled_init(target: &TargetDistribution, sd: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let d = target.dim();
    let k = target.draw_component(rng);
    let mut g = vec![0.0; d];
    rng::fill_normal(rng, &mut g);
    let hat: Vec<f64> = g.iter().map(|v| sd * v).collect();
    let bar = hat.iter().zip(target.point(k)).map(|(a, p)| a + p).collect();
    (bar, hat)
}

fn finish(
    algorithm: Algorithm,
    grids: &[TimeGrid],
    accs: Vec<LevelAcc>,
    bound: impl Fn(f64) -> f64,
    replicates: usize,
    seed: u64,
) -> Vec<CoupledRun> {
    grids
        .iter()
        .zip(accs)
        .enumerate()
        .map(|(level, (g, acc))| {
            let defects: Vec<L2Estimate> = acc.defects.iter().map(|m| m.l2_estimate()).collect();
            let defect_max = defects.iter().map(|e| e.value).fold(0.0, f64::max);
            CoupledRun {
                algorithm,
                level,
                steps: g.steps,
                h: g.step(),
                init_error: acc.init.l2_estimate(),
                step_errors: acc.steps.iter().map(|m| m.l2_estimate()).collect(),
                end_error: acc.end.l2_estimate(),
                defects,
                defect_max,
                defect_bound: bound(g.step()),
                replicates,
                seed,
            }
        })
        .collect()
}

/// Euler–Maruyama with the exact score against a finer Euler–Maruyama
/// reference driven by the same Brownian path.
///
/// The Brownian path is drawn once per replicate at the reference resolution
/// (stream `(seed, brownian, i)`); every level sums the fine increments over
/// its own steps. Per-step errors use the shared-Gaussian initial coupling;
/// `end_error` restarts the level from the reference's initial point.
pub fn coupled_strong_error_sde(
    target: &TargetDistribution,
    grid: &TimeGrid,
    refinement: Refinement,
    replicates: usize,
    seed: u64,
) -> Result<Vec<CoupledRun>> {
    if replicates < 2 {
        return Err(invalid("need at least 2 replicates"));
    }
    let grids = level_grids(grid, refinement.levels)?;
    let finest = *grids.last().expect("non-empty");
    let ref_grid = finest.refined(1 << refinement.reference_log2);
    let field = ScoreField::exact(target.clone());
    let spec = SamplerSpec::new(Algorithm::EulerMaruyama, field.clone(), ref_grid)?;
    let sd = spec.init_sd();
    let tau = target.tau();
    let d = target.dim();
    let ref_nodes = Nodes::new(&ref_grid, tau);
    let level_nodes: Vec<Nodes> = grids.iter().map(|g| Nodes::new(g, tau)).collect();
    let ratios: Vec<usize> = grids.iter().map(|g| ref_grid.steps / g.steps).collect();
    let sqrt_href = ref_nodes.h.sqrt();

    let run = |i: usize| -> Result<Vec<LevelAcc>> {
        let mut accs: Vec<LevelAcc> = grids.iter().map(|g| LevelAcc::new(g.steps)).collect();
        let mut init_rng = rng::stream(seed, Purpose::Init, i as u64);
        let (bar0, hat0) = coupled_init(target, sd, &mut init_rng);
        let mut bm = rng::stream(seed, Purpose::Brownian, i as u64);
        let mut xbar = bar0.clone();
        let mut coupled: Vec<Vec<f64>> = vec![hat0.clone(); grids.len()];
        let mut same: Vec<Vec<f64>> = vec![bar0.clone(); grids.len()];
        let mut pending: Vec<Vec<f64>> = vec![vec![0.0; d]; grids.len()];
        let mut integral: Vec<Vec<f64>> = vec![vec![0.0; d]; grids.len()];
        let mut start_score: Vec<Vec<f64>> = vec![vec![0.0; d]; grids.len()];
        let mut dw = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut w = Work::new(d);
        let e0 = sq_diff(&bar0, &hat0);
        for acc in accs.iter_mut() {
            acc.init.push(e0);
            acc.steps[0].push(e0);
        }
        for j in 0..ref_grid.steps {
            rng::fill_normal(&mut bm, &mut dw);
            dw.iter_mut().for_each(|v| *v *= sqrt_href);
            field.eval(ref_nodes.t[j], ref_nodes.s[j], &xbar, &mut s);
            for (l, &q) in ratios.iter().enumerate() {
                if j % q == 0 {
                    start_score[l].copy_from_slice(&s);
                    integral[l].fill(0.0);
                }
                for ((p, a), (z, si)) in pending[l].iter_mut().zip(integral[l].iter_mut()).zip(dw.iter().zip(&s)) {
                    *p += z;
                    *a += ref_nodes.h * si;
                }
            }
            for ((xi, si), z) in xbar.iter_mut().zip(&s).zip(&dw) {
                *xi += ref_nodes.h * si + z;
            }
            if diverged(&xbar) {
                return Err(Error::Divergence { step: j + 1, replicate: i });
            }
            for (l, &q) in ratios.iter().enumerate() {
                if (j + 1) % q != 0 {
                    continue;
                }
                let n = j / q;
                let nodes = &level_nodes[l];
                step(Algorithm::EulerMaruyama, &field, nodes, n, &mut coupled[l], Some(&pending[l]), &mut w);
                step(Algorithm::EulerMaruyama, &field, nodes, n, &mut same[l], Some(&pending[l]), &mut w);
                pending[l].fill(0.0);
                if diverged(&coupled[l]) || diverged(&same[l]) {
                    return Err(Error::Divergence { step: n + 1, replicate: i });
                }
                let acc = &mut accs[l];
                acc.steps[n + 1].push(sq_diff(&xbar, &coupled[l]));
                let h = nodes.h;
                let defect: f64 = integral[l].iter().zip(&start_score[l]).map(|(a, b)| (a - h * b).powi(2)).sum();
                acc.defects[n].push(defect);
            }
        }
        for (acc, x) in accs.iter_mut().zip(&same) {
            acc.end.push(sq_diff(&xbar, x));
        }
        Ok(accs)
    };

    let (accs, err) = reduce_levels(&grids, replicates, run);
    if let Some(e) = err {
        return Err(e);
    }
    let radius = target.radius();
    let eps = grid.epsilon + tau;
    Ok(finish(Algorithm::EulerMaruyama, &grids, accs, |h| discretization_bounds(d, radius, eps, h).sde, replicates, seed))
}

/// Deterministic block reduction of per-replicate level accumulators; the
/// first error in replicate order wins.
fn reduce_levels<F>(grids: &[TimeGrid], replicates: usize, run: F) -> (Vec<LevelAcc>, Option<Error>)
where
    F: Fn(usize) -> Result<Vec<LevelAcc>> + Sync,
{
    let fresh = || -> (Vec<LevelAcc>, Option<Error>) { (grids.iter().map(|g| LevelAcc::new(g.steps)).collect(), None) };
    block_reduce(
        replicates,
        fresh,
        |acc, i| {
            if acc.1.is_some() {
                return;
            }
            match run(i) {
                Ok(levels) => {
                    for (a, b) in acc.0.iter_mut().zip(&levels) {
                        a.merge(b);
                    }
                }
                Err(e) => acc.1 = Some(e),
            }
        },
        |acc, part| {
            if acc.1.is_some() {
                return;
            }
            if part.1.is_some() {
                acc.1 = part.1;
                return;
            }
            for (a, b) in acc.0.iter_mut().zip(&part.0) {
                a.merge(b);
            }
        },
    )
}

/// Euler or Heun with the exact score against the reference ODE solution
/// from the same initial point (drawn from the law of `X_T`).
pub fn coupled_strong_error_ode(
    target: &TargetDistribution,
    grid: &TimeGrid,
    algorithm: Algorithm,
    levels: usize,
    replicates: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<CoupledRun>> {
    let mut runs = coupled_strong_error_odes(target, grid, &[algorithm], levels, replicates, seed, tolerance)?;
    Ok(runs.pop().expect("one algorithm"))
}

/// [`coupled_strong_error_ode`] for several deterministic algorithms at once.
/// Replicate `i` uses the same initial point and reference path for every
/// algorithm, so the reference is solved once.
pub fn coupled_strong_error_odes(
    target: &TargetDistribution,
    grid: &TimeGrid,
    algorithms: &[Algorithm],
    levels: usize,
    replicates: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<Vec<CoupledRun>>> {
    if algorithms.is_empty() || algorithms.iter().any(|a| a.is_stochastic()) {
        return Err(invalid("coupled ODE diagnostics need euler_ode or heun"));
    }
    if replicates < 2 {
        return Err(invalid("need at least 2 replicates"));
    }
    let grids = level_grids(grid, levels)?;
    let finest = *grids.last().expect("non-empty");
    let field = ScoreField::exact(target.clone());
    let sd = SamplerSpec::new(algorithms[0], field.clone(), finest)?.init_sd();
    let tau = target.tau();
    let d = target.dim();
    let level_nodes: Vec<Nodes> = grids.iter().map(|g| Nodes::new(g, tau)).collect();
    let ratios: Vec<usize> = grids.iter().map(|g| finest.steps / g.steps).collect();
    // accumulators are indexed by algorithm, then level
    let acc_grids: Vec<TimeGrid> = algorithms.iter().flat_map(|_| grids.iter().copied()).collect();

    let run = |i: usize| -> Result<Vec<LevelAcc>> {
        let mut accs: Vec<LevelAcc> = acc_grids.iter().map(|g| LevelAcc::new(g.steps)).collect();
        let mut init_rng = rng::stream(seed, Purpose::Init, i as u64);
        let (x0, _) = coupled_init(target, sd, &mut init_rng);
        let path = reference_path(target, &finest, &x0, tolerance)?;
        let mut w = Work::new(d);
        let mut s0 = vec![0.0; d];
        let mut s1 = vec![0.0; d];
        for (a, &algorithm) in algorithms.iter().enumerate() {
            for (l, &q) in ratios.iter().enumerate() {
                let nodes = &level_nodes[l];
                let acc = &mut accs[a * grids.len() + l];
                acc.init.push(0.0);
                acc.steps[0].push(0.0);
                let mut x = x0.clone();
                for n in 0..grids[l].steps {
                    let p = &path[n * q * d..(n * q + 1) * d];
                    let b = &path[(n + 1) * q * d..((n + 1) * q + 1) * d];
                    field.eval(nodes.t[n], nodes.s[n], p, &mut s0);
                    let h = nodes.h;
                    let defect: f64 = match algorithm {
                        Algorithm::Heun => {
                            field.eval(nodes.t[n + 1], nodes.s[n + 1], b, &mut s1);
                            (0..d).map(|k| (2.0 * (b[k] - p[k]) - 0.5 * h * (s0[k] + s1[k])).powi(2)).sum()
                        }
                        _ => (0..d).map(|k| (2.0 * (b[k] - p[k]) - h * s0[k]).powi(2)).sum(),
                    };
                    acc.defects[n].push(defect);
                    step(algorithm, &field, nodes, n, &mut x, None, &mut w);
                    if diverged(&x) {
                        return Err(Error::Divergence { step: n + 1, replicate: i });
                    }
                    acc.steps[n + 1].push(sq_diff(b, &x));
                }
                acc.end.push(sq_diff(&path[finest.steps * d..], &x));
            }
        }
        Ok(accs)
    };

    let (accs, err) = reduce_levels(&acc_grids, replicates, run);
    if let Some(e) = err {
        return Err(e);
    }
    let radius = target.radius();
    let eps = grid.epsilon + tau;
    let mut accs = accs.into_iter();
    Ok(algorithms
        .iter()
        .map(|&algorithm| {
            let bound = move |h: f64| {
                let b = discretization_bounds(d, radius, eps, h);
                if algorithm == Algorithm::Heun {
                    b.heun
                } else {
                    b.ode
                }
            };
            finish(algorithm, &grids, accs.by_ref().take(grids.len()).collect(), bound, replicates, seed)
        })
        .collect())
}

/// Monte Carlo estimate of a single one-step defect and its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefectEstimate {
    pub algorithm: Algorithm,
    /// Forward time at the end of the step (the start is `end_time + h`).
    pub end_time: f64,
    pub h: f64,
    pub estimate: L2Estimate,
    pub bound: f64,
    pub precondition_ok: bool,
}

/// Fine Euler–Maruyama substeps used to resolve the SDE defect integral.
pub const SDE_DEFECT_SUBSTEPS: usize = 1 << 10;

/// Estimates the defect of one step of `algorithm` over the forward-time
/// window `[end_time + h, end_time]`, started from the exact marginal.
///
/// ODE: `2 (x_{t+h} - x_t) - h s(x_t)` (or the trapezoid) along the reference
/// solution. SDE: `int s(Xbar_u) du - h s(Xbar_t)` along a fine
/// Euler–Maruyama path of the reverse SDE.
pub fn one_step_defect(
    target: &TargetDistribution,
    algorithm: Algorithm,
    end_time: f64,
    h: f64,
    replicates: usize,
    seed: u64,
) -> Result<DefectEstimate> {
    if !(h > 0.0 && end_time > 0.0) {
        return Err(invalid("need h > 0 and end_time > 0"));
    }
    if replicates < 2 {
        return Err(invalid("need at least 2 replicates"));
    }
    let d = target.dim();
    let start = end_time + h;
    let field = ScoreField::exact(target.clone());
    let tau = target.tau();
    let sd = (start + tau).sqrt();
    let one = TimeGrid::new(start, end_time, 1)?;
    let fine = TimeGrid::new(start, end_time, SDE_DEFECT_SUBSTEPS)?;
    let fine_nodes = Nodes::new(&fine, tau);
    let tolerance = 1e-12 * (1.0 + target.radius() + sd);

    let acc = block_reduce(
        replicates,
        || (Moments::default(), None::<Error>),
        |acc, i| {
            if acc.1.is_some() {
                return;
            }
            let mut r = rng::stream(seed, Purpose::ForwardDraw, i as u64);
            let k = target.draw_component(&mut r);
            let mut x: Vec<f64> = target.point(k).to_vec();
            for v in x.iter_mut() {
                *v += sd * rng::normal(&mut r);
            }
            let mut s0 = vec![0.0; d];
            field.eval(start, start + tau, &x, &mut s0);
            let sq = match algorithm {
                Algorithm::EulerMaruyama => {
                    let mut bm = rng::stream(seed, Purpose::Brownian, i as u64);
                    let mut s = s0.clone();
                    let mut integral = vec![0.0; d];
                    let hf = fine_nodes.h;
                    let sqrt_hf = hf.sqrt();
                    for j in 0..fine.steps {
                        if j > 0 {
                            field.eval(fine_nodes.t[j], fine_nodes.s[j], &x, &mut s);
                        }
                        for ((xi, si), a) in x.iter_mut().zip(&s).zip(integral.iter_mut()) {
                            *a += hf * si;
                            *xi += hf * si + sqrt_hf * rng::normal(&mut bm);
                        }
                    }
                    integral.iter().zip(&s0).map(|(a, b)| (a - h * b).powi(2)).sum()
                }
                _ => match reference_path(target, &one, &x, tolerance) {
                    Ok(path) => {
                        let b = &path[d..];
                        if algorithm == Algorithm::Heun {
                            let mut s1 = vec![0.0; d];
                            field.eval(end_time, end_time + tau, b, &mut s1);
                            (0..d).map(|k| (2.0 * (b[k] - x[k]) - 0.5 * h * (s0[k] + s1[k])).powi(2)).sum()
                        } else {
                            (0..d).map(|k| (2.0 * (b[k] - x[k]) - h * s0[k]).powi(2)).sum()
                        }
                    }
                    Err(e) => {
                        acc.1 = Some(e);
                        return;
                    }
                },
            };
            acc.0.push(sq);
        },
        |acc, part| {
            if acc.1.is_none() {
                acc.1 = part.1;
            }
            acc.0.merge(&part.0);
        },
    );
    if let Some(e) = acc.1 {
        return Err(e);
    }
    let eps = end_time + tau;
    let b = discretization_bounds(d, target.radius(), eps, h);
    let bound = match algorithm {
        Algorithm::EulerMaruyama => b.sde,
        Algorithm::EulerOde => b.ode,
        Algorithm::Heun => b.heun,
    };
    Ok(DefectEstimate { algorithm, end_time, h, estimate: acc.0.l2_estimate(), bound, precondition_ok: b.precondition_ok })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{bound_em, BoundInputs};
    use crate::target::{forward_marginal_sample, sample_target};

    fn gaussian_target() -> TargetDistribution {
        TargetDistribution::dirac(&[0.0], 1.0)
    }

    #[test]
    fn euler_ode_recovers_gaussian_target() {
        let grid = TimeGrid::new(10.0, 0.0, 4096).unwrap();
        let spec = SamplerSpec::new(Algorithm::EulerOde, ScoreField::exact(gaussian_target()), grid).unwrap();
        let out = run_sampler(&spec, 100_000, 1).unwrap();
        let (_, v) = out.mean_var();
        assert!((v[0] - 1.0).abs() < 0.03, "variance {}", v[0]);
    }

    #[test]
    fn single_step_matches_hand_rolled_update() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(4.0, 0.5, 1).unwrap();
        let field = ScoreField::exact(tgt);
        let spec = SamplerSpec::new(Algorithm::EulerOde, field.clone(), grid).unwrap();
        let out = run_sampler(&spec, 8, 3).unwrap();
        for i in 0..8 {
            let mut r = rng::stream(3, Purpose::Init, i as u64);
            let x0 = 2.0 * rng::normal(&mut r);
            let expect = x0 + 0.5 * 3.5 * field.score(4.0, &[x0]).unwrap()[0];
            assert_eq!(out.data[i], expect);
        }
    }

    #[test]
    fn negated_field_single_step_is_exact_inverse() {
        let field = ScoreField::exact(TargetDistribution::two_dirac(1.0));
        let grid = TimeGrid::new(2.0, 0.5, 1).unwrap();
        let nodes = Nodes::new(&grid, 0.0);
        let mut w = Work::new(1);
        let x = [0.37];
        let mut y = x;
        step(Algorithm::EulerOde, &field, &nodes, 0, &mut y, None, &mut w);
        let mut s = [0.0];
        field.eval(2.0, 2.0, &x, &mut s);
        // one step with -s from y, with -s evaluated at the same state x
        let back = y[0] - 0.5 * nodes.h * s[0];
        assert_eq!(back, x[0]);
    }

    #[test]
    fn em_reproduces_gaussian_marginals_at_every_node() {
        // linear score: X_t ~ N(0, 1 + T - t) along the reverse SDE
        let t_end = 5.0;
        let grid = TimeGrid::new(t_end, 0.0, 4096).unwrap();
        let spec = SamplerSpec::new(Algorithm::EulerMaruyama, ScoreField::exact(gaussian_target()), grid).unwrap();
        for &n_steps in &[1024usize, 2048, 4096] {
            let sub = TimeGrid::new(t_end, t_end - grid.node(n_steps), n_steps).unwrap();
            let spec_n = SamplerSpec { grid: sub, ..spec.clone() };
            let out = run_sampler(&spec_n, 100_000, 5).unwrap();
            let (m, v) = out.mean_var();
            let expect = 1.0 + sub.epsilon;
            assert!((v[0] - expect).abs() < 0.01 * expect + 0.01, "{} vs {expect}", v[0]);
            assert!(m[0].abs() < 0.03);
        }
    }

    #[test]
    fn sampler_is_thread_count_independent() {
        let grid = TimeGrid::new(5.0, 0.2, 64).unwrap();
        let spec = SamplerSpec::new(Algorithm::EulerMaruyama, ScoreField::exact(TargetDistribution::two_dirac(1.0)), grid).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_sampler(&spec, 500, 9).unwrap())
        };
        assert_eq!(run(1).data, run(3).data);
    }

    #[test]
    fn reference_ode_matches_linear_closed_form() {
        let tgt = gaussian_target();
        let grid = TimeGrid::new(10.0, 0.3, 20).unwrap();
        let path = reference_path(&tgt, &grid, &[2.0], 1e-12).unwrap();
        let expect = 2.0 * ((1.0 + 0.3) / (1.0 + 10.0f64)).sqrt();
        assert!((path[20] - expect).abs() < 1e-11);
        let loose = reference_path(&tgt, &grid, &[2.0], 1e-6).unwrap();
        assert!((loose[20] - path[20]).abs() < 1e-6);
    }

    #[test]
    fn reference_ode_preserves_marginals() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(5.0, 0.1, 10).unwrap();
        let n = 2000;
        let inits = forward_marginal_sample(&tgt, 5.0, n, 1).unwrap();
        let ends = reference_reverse_ode(&tgt, &grid, &inits, 1e-8).unwrap();
        let exact = forward_marginal_sample(&tgt, 0.1, n, 2).unwrap();
        let exact2 = forward_marginal_sample(&tgt, 0.1, n, 3).unwrap();
        let w = crate::transport::w2_1d(&ends, &exact).unwrap().value;
        let floor = crate::transport::w2_1d(&exact2, &exact).unwrap().value;
        assert!(w < 2.0 * floor.max(0.02), "w2 {w} floor {floor}");
    }

    #[test]
    fn zero_refinement_gives_zero_discretization_error() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(4.0, 0.2, 32).unwrap();
        let runs = coupled_strong_error_sde(&tgt, &grid, Refinement { levels: 1, reference_log2: 0 }, 200, 4).unwrap();
        assert_eq!(runs[0].end_error.value, 0.0);
        // full coupling starts at ||X||_{L2} = 1 and contracts
        assert!((runs[0].init_error.value - 1.0).abs() < 1e-12);
        assert_eq!(runs[0].step_errors[0], runs[0].init_error);
        assert!(runs[0].step_errors.last().unwrap().value < 1.0);
    }

    #[test]
    fn joint_ode_runs_match_separate_runs() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(2.0, 0.5, 6).unwrap();
        let joint = coupled_strong_error_odes(&tgt, &grid, &[Algorithm::EulerOde, Algorithm::Heun], 3, 64, 9, 1e-10).unwrap();
        for (alg, runs) in [Algorithm::EulerOde, Algorithm::Heun].into_iter().zip(&joint) {
            assert_eq!(&coupled_strong_error_ode(&tgt, &grid, alg, 3, 64, 9, 1e-10).unwrap(), runs);
        }
        assert!(joint[1][2].end_error.value < joint[0][2].end_error.value);
        assert!(coupled_strong_error_odes(&tgt, &grid, &[Algorithm::EulerMaruyama], 3, 64, 9, 1e-10).is_err());
    }

    #[test]
    fn em_end_to_end_below_bound() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let grid = TimeGrid::new(10.0, 0.05, 2000).unwrap();
        let spec = SamplerSpec::new(Algorithm::EulerMaruyama, ScoreField::exact(tgt.clone()), grid).unwrap();
        let out = run_sampler(&spec, 4000, 11).unwrap();
        let exact = forward_marginal_sample(&tgt, 0.05, 4000, 12).unwrap();
        let w = crate::transport::w2_1d(&out, &exact).unwrap().value;
        let b = bound_em(&BoundInputs::new(1, 1.0, 10.0, 0.05, 2000)).unwrap();
        assert!(w <= b.total, "{w} > {}", b.total);
        let _ = sample_target(&tgt, 1, 0).unwrap();
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let tgt = TargetDistribution::two_dirac(1.0);
        let field = ScoreField::quadratic(tgt, 50.0).unwrap();
        let grid = TimeGrid::new(10.0, 0.1, 100).unwrap();
        let spec = SamplerSpec::new(Algorithm::EulerOde, field, grid).unwrap();
        match run_sampler(&spec, 16, 1) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1 && step <= 100),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn one_step_defects_respect_bounds() {
        let tgt = TargetDistribution::two_dirac(1.0);
        for alg in Algorithm::ALL {
            let e = one_step_defect(&tgt, alg, 0.5, 0.05, 2000, 7).unwrap();
            assert!(e.estimate.upper <= e.bound, "{alg}: {e:?}");
            assert!(e.estimate.value > 0.0);
        }
        let e = one_step_defect(&tgt, Algorithm::EulerOde, 0.5, 0.05, 10, 7).unwrap();
        assert!((e.bound - 0.02).abs() < 1e-12);
    }
}
