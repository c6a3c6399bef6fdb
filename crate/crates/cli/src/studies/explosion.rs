//! Finite-time blow-up of the reverse ODE under the quadratic score perturbation.

use std::path::Path;

use serde::Serialize;
use serde_json::json;
use wassdiff_core::explosion::{
    blowup_time_bound, comparison_constant, comparison_ode, explosion_probability_with, ExplosionStudy, ProbabilityEstimate,
};
use wassdiff_core::rng::derive_seed;
use wassdiff_core::ExplosionOutcome;

use crate::config::{ExperimentConfig, Study};
use crate::error::Result;
use crate::plot::{Labels, PlotKind, Series};
use crate::report::{Check, StudyOutput};

/// Slack on the comparison blow-up time for runs started past `C(alpha, eps, R)`.
pub const BOUND_SLACK: f64 = 2.0;
/// Accepted blow-up time window of the toy comparison ODE with `alpha = 1`, `z0 = 16`.
pub const TOY_WINDOW: (f64, f64) = (0.99, 1.01);
const TOY_STEP: f64 = 0.01;

#[derive(Debug, Serialize)]
struct AlphaSummary {
    alpha: f64,
    by_delta: Vec<ProbabilityEstimate>,
    anywhere: ProbabilityEstimate,
    comparison_constant: Option<f64>,
    /// Runs started with `|x0|^2 >= C` whose blow-up time the bound covers.
    dominance_runs: usize,
    dominance_violations: usize,
}

fn dominance(outcomes: &[ExplosionOutcome], alpha: f64, c: f64, span: f64) -> (usize, usize) {
    let mut runs = 0;
    let mut bad = 0;
    for o in outcomes {
        let y0 = o.x0_norm * o.x0_norm;
        let limit = BOUND_SLACK * blowup_time_bound(alpha, y0);
        if y0 < c || limit > span {
            continue;
        }
        runs += 1;
        if !o.tau_hat.is_some_and(|t| t <= limit) {
            bad += 1;
        }
    }
    (runs, bad)
}

pub fn run(cfg: &ExperimentConfig, origin: &Path) -> Result<StudyOutput> {
    let target = cfg.target.load()?;
    let grid = cfg.grid(origin)?;
    let m = cfg.replicates.unwrap_or(10_000);
    let span = grid.horizon - grid.epsilon;
    let mut alphas = cfg.alphas.clone();
    alphas.sort_by(f64::total_cmp);
    let mut deltas = cfg.deltas.clone();
    deltas.sort_by(f64::total_cmp);

    let mut checks = Vec::new();
    let mut summaries = Vec::new();
    let mut studies: Vec<ExplosionStudy> = Vec::new();
    for &alpha in &alphas {
        // One seed for all alphas: the runs share their initial points.
        let st = explosion_probability_with(&target, alpha, &grid, &deltas, m, derive_seed(cfg.seed, 0), cfg.threshold, cfg.max_refine)?;
        let a = super::short(alpha);
        let (cst, runs, bad) = if alpha > 0.0 {
            let c = comparison_constant(alpha, grid.epsilon + target.tau(), target.radius())?;
            let (runs, bad) = dominance(&st.outcomes, alpha, c, span);
            checks.push(Check::at_most(
                format!("comparison_dominance/alpha={a}"),
                bad as f64,
                0.0,
                format!("{runs} runs started past C = {c}"),
            ));
            for p in &st.by_delta {
                let delta = super::short(p.delta.unwrap_or(f64::NAN));
                checks.push(Check::above(
                    format!("positive_probability/alpha={a}/delta={delta}"),
                    p.ci_low,
                    0.0,
                    format!("{} of {} runs exploded by delta", p.count, p.trials),
                ));
            }
            (Some(c), runs, bad)
        } else {
            checks.push(Check::at_most(
                format!("no_explosion/alpha={a}"),
                st.anywhere.count as f64,
                0.0,
                format!("{} runs", st.anywhere.trials),
            ));
            (None, 0, 0)
        };
        summaries.push(AlphaSummary {
            alpha,
            by_delta: st.by_delta.clone(),
            anywhere: st.anywhere,
            comparison_constant: cst,
            dominance_runs: runs,
            dominance_violations: bad,
        });
        studies.push(st);
    }
    for w in summaries.windows(2) {
        let drops = w[0]
            .by_delta
            .iter()
            .chain(std::iter::once(&w[0].anywhere))
            .zip(w[1].by_delta.iter().chain(std::iter::once(&w[1].anywhere)))
            .map(|(a, b)| a.p_hat - b.p_hat)
            .fold(0.0, f64::max);
        checks.push(Check::at_most(
            format!("monotone_in_alpha/{}->{}", super::short(w[0].alpha), super::short(w[1].alpha)),
            drops,
            0.0,
            "largest decrease of p_hat when alpha grows, same initial points",
        ));
    }

    let toy = comparison_ode(1.0, 16.0, 2.0, TOY_STEP, cfg.threshold, cfg.max_refine);
    checks.push(Check::within("toy_blowup_time", toy.tau_hat.unwrap_or(f64::INFINITY), TOY_WINDOW.0, TOY_WINDOW.1));

    let mut out_tables = Vec::new();
    let mut series = Vec::new();
    for st in &studies {
        let name = format!("explosion_alpha_{}", super::short(st.alpha));
        out_tables.push((name, st.csv_rows().collect::<Vec<_>>()));
        series.push(Series::new(
            format!("alpha = {}", super::short(st.alpha)),
            st.by_delta.iter().map(|p| p.delta.unwrap_or(f64::NAN)).collect(),
            st.by_delta.iter().map(|p| p.p_hat).collect(),
        ));
    }
    let mut summary_rows = Vec::new();
    for s in &summaries {
        for p in s.by_delta.iter().chain(std::iter::once(&s.anywhere)) {
            let delta = p.delta.map_or("anywhere".to_string(), |d| format!("{d:.17e}"));
            summary_rows.push(format!(
                "{:.17e},{delta},{},{},{:.17e},{:.17e},{:.17e}",
                s.alpha, p.count, p.trials, p.p_hat, p.ci_low, p.ci_high
            ));
        }
    }

    let results = json!({ "replicates": m, "alphas": summaries, "toy": toy });
    let mut out = StudyOutput::new(Study::Explosion, cfg, checks, results).table(
        "explosion_summary",
        "alpha,delta,count,trials,p_hat,ci_low,ci_high",
        summary_rows,
    );
    for (name, rows) in out_tables {
        out = out.table(&name, ExplosionStudy::CSV_HEADER, rows);
    }
    Ok(out.figure(
        "explosion",
        PlotKind::Linear,
        Labels { title: "Estimated probability of blow-up by time delta", x: "delta", y: "P(tau <= delta)" },
        series,
    ))
}
