//! Strong convergence rates of the three samplers with the exact score, plus
//! the corrupted-score Euler–Maruyama curve against its bound.

use std::path::Path;

use serde::Serialize;
use serde_json::json;
use wassdiff_core::bounds::{bound, fit_rate, RateFit};
use wassdiff_core::rng::derive_seed;
use wassdiff_core::samplers::{coupled_strong_error_odes, coupled_strong_error_sde, run_sampler, Refinement};
use wassdiff_core::score::make_corrupted_field;
use wassdiff_core::{Algorithm, CoupledRun, EpsScore, SamplerSpec, TimeGrid};

use super::{bound_inputs, bound_kind, steps_for, w2_to_target};
use crate::config::{ExperimentConfig, Study};
use crate::error::Result;
use crate::plot::{Labels, PlotKind, Series};
use crate::report::{cell, Check, StudyOutput};

/// Accepted strong-order slopes per algorithm.
pub fn slope_window(algorithm: Algorithm) -> (f64, f64) {
    match algorithm {
        Algorithm::EulerMaruyama => (0.75, 1.25),
        Algorithm::EulerOde => (0.8, 1.2),
        Algorithm::Heun => (1.7, 2.3),
    }
}

/// Accepted slope of the bound's discretization term for corrupted Euler–Maruyama.
pub const BOUND_SLOPE_WINDOW: (f64, f64) = (0.3, 0.7);

#[derive(Debug, Serialize)]
struct AlgorithmRates {
    algorithm: Algorithm,
    h: Vec<f64>,
    end_error: Vec<f64>,
    ci_halfwidth: Vec<f64>,
    defect_max: Vec<f64>,
    defect_bound: Vec<f64>,
    fit: RateFit,
}

#[derive(Debug, Serialize)]
struct CorruptedPoint {
    h: f64,
    steps: usize,
    w2: f64,
    noise_floor: f64,
    w2_lower: f64,
    bound_total: f64,
    bound_discretization: f64,
    precondition_ok: bool,
}

pub fn run(cfg: &ExperimentConfig, origin: &Path) -> Result<StudyOutput> {
    let target = cfg.target.load()?;
    let base = cfg.grid(origin)?;
    let sweep = cfg.sweep(origin)?;
    let replicates = cfg.replicates.unwrap_or(1000);
    let coarse = TimeGrid::new(base.horizon, base.epsilon, steps_for(&base, sweep.h0, origin)?)?;

    let mut checks = Vec::new();
    let mut rates = Vec::new();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    // The deterministic samplers share one reference solve per replicate.
    let odes: Vec<Algorithm> = cfg.algorithms.iter().copied().filter(|a| !a.is_stochastic()).collect();
    let mut ode_runs = if odes.is_empty() {
        Vec::new()
    } else {
        coupled_strong_error_odes(&target, &coarse, &odes, sweep.count, replicates, derive_seed(cfg.seed, 1), cfg.tolerance)?
    }
    .into_iter();
    for &alg in &cfg.algorithms {
        let mut runs: Vec<CoupledRun> = match alg {
            Algorithm::EulerMaruyama => {
                let refinement = Refinement { levels: sweep.count, reference_log2: cfg.reference_log2 };
                coupled_strong_error_sde(&target, &coarse, refinement, replicates, derive_seed(cfg.seed, 0))?
            }
            _ => ode_runs.next().expect("one run per deterministic algorithm"),
        };
        runs.sort_by_key(|r| r.level);
        rows.extend(runs.iter().map(CoupledRun::csv_row));
        let h: Vec<f64> = runs.iter().map(|r| r.h).collect();
        let err: Vec<f64> = runs.iter().map(|r| r.end_error.value).collect();
        let fit = fit_rate(&h, &err)?;
        let (lo, hi) = slope_window(alg);
        checks.push(Check::within(format!("slope/{alg}"), fit.slope, lo, hi));
        series.push(Series::new(alg.label(), h.clone(), err.clone()));
        rates.push(AlgorithmRates {
            algorithm: alg,
            h,
            end_error: err,
            ci_halfwidth: runs.iter().map(|r| r.end_error.half_width()).collect(),
            defect_max: runs.iter().map(|r| r.defect_max).collect(),
            defect_bound: runs.iter().map(|r| r.defect_bound).collect(),
            fit,
        });
    }

    let mut out_json = json!({ "algorithms": rates });
    let mut output_tables = vec![("rates", CoupledRun::CSV_HEADER.to_string(), rows)];
    let mut overlay = None;
    if let (Some(c), true) = (cfg.corruption, cfg.algorithms.contains(&Algorithm::EulerMaruyama)) {
        let n = cfg.samples.unwrap_or(replicates);
        let mut points = Vec::new();
        for (k, h) in sweep.steps().into_iter().enumerate() {
            let grid = TimeGrid::new(base.horizon, base.epsilon, steps_for(&base, h, origin)?)?;
            let seed = derive_seed(cfg.seed, 0x100 + k as u64);
            let field = make_corrupted_field(&target, c.budget, c.lipschitz, &grid, seed)?;
            let batch = run_sampler(&SamplerSpec::new(Algorithm::EulerMaruyama, field, grid)?, n, seed)?;
            let w2 = w2_to_target(&target, &batch, seed)?;
            let (inputs, _) = bound_inputs(&target, &grid)?;
            let rep = bound(bound_kind(Algorithm::EulerMaruyama, true), &inputs.with_eps_score(EpsScore::Uniform(c.budget)))?;
            points.push(CorruptedPoint {
                h,
                steps: grid.steps,
                w2: w2.value,
                noise_floor: w2.noise_floor.unwrap_or(0.0),
                w2_lower: w2.lower(),
                bound_total: rep.total,
                bound_discretization: rep.terms.discretization_propagated,
                precondition_ok: rep.precondition_ok,
            });
        }
        let hs: Vec<f64> = points.iter().map(|p| p.h).collect();
        let disc: Vec<f64> = points.iter().map(|p| p.bound_discretization).collect();
        let bound_fit = fit_rate(&hs, &disc)?;
        checks.push(Check::within("bound_slope/euler_maruyama_corrupted", bound_fit.slope, BOUND_SLOPE_WINDOW.0, BOUND_SLOPE_WINDOW.1));
        for p in &points {
            checks.push(Check::at_most(
                format!("bound_dominance/euler_maruyama_corrupted/h={}", super::short(p.h)),
                p.w2_lower,
                p.bound_total,
                format!("n = {n}, precondition_ok = {}", p.precondition_ok),
            ));
        }
        let rows = points
            .iter()
            .map(|p| {
                format!(
                    "{},{},{},{},{},{},{},{}",
                    cell(p.h),
                    p.steps,
                    cell(p.w2),
                    cell(p.noise_floor),
                    cell(p.w2_lower),
                    cell(p.bound_total),
                    cell(p.bound_discretization),
                    p.precondition_ok
                )
            })
            .collect();
        output_tables.push((
            "corrupted_em",
            "h,N,w2,noise_floor,w2_lower,bound_total,bound_discretization,precondition_ok".into(),
            rows,
        ));
        overlay = Some(vec![
            Series::new("bound total", hs.clone(), points.iter().map(|p| p.bound_total).collect()),
            Series::new("bound discretization term", hs.clone(), disc),
            Series::new("empirical W2", hs, points.iter().map(|p| p.w2).collect()),
        ]);
        out_json["corrupted_em"] = json!({ "budget": c.budget, "lipschitz": c.lipschitz, "samples": n, "bound_fit": bound_fit, "points": points });
    }

    let mut output = StudyOutput::new(Study::Rates, cfg, checks, out_json);
    for (name, header, rows) in output_tables {
        output = output.table(name, &header, rows);
    }
    output = output.figure(
        "rates",
        PlotKind::LogLog,
        Labels { title: "Strong error at the final time", x: "step size h", y: "L2 error" },
        series,
    );
    if let Some(s) = overlay {
        output = output.figure(
            "corrupted_em",
            PlotKind::LogLog,
            Labels { title: "Corrupted-score Euler-Maruyama: W2 against bound", x: "step size h", y: "W2" },
            s,
        );
    }
    Ok(output)
}
