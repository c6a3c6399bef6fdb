//! Initialization error `W2(L(X_T), N(0, T I))` against its large-T asymptote.

use serde_json::json;
use wassdiff_core::rng::derive_seed;
use wassdiff_core::transport::{init_error_check, InitErrorCheck};

use crate::config::{ExperimentConfig, Study};
use crate::error::Result;
use crate::plot::{Labels, PlotKind, Series};
use crate::report::{cell, opt_cell, Check, StudyOutput};

/// Accepted ratio to the asymptote at the largest horizon.
pub const RATIO_WINDOW: (f64, f64) = (0.8, 1.2);

pub fn run(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let target = cfg.target.load()?;
    let n = cfg.samples.unwrap_or(4096);
    let mut horizons = cfg.horizons.clone();
    horizons.sort_by(f64::total_cmp);

    let rows: Vec<InitErrorCheck> = horizons
        .iter()
        .enumerate()
        .map(|(k, &t)| init_error_check(&target, t, n, derive_seed(cfg.seed, k as u64)))
        .collect::<wassdiff_core::Result<_>>()?;

    let mut checks = Vec::new();
    let ratios: Vec<Option<f64>> = rows.iter().map(|r| r.ratio).collect();
    match ratios.last().copied().flatten() {
        Some(r) => checks.push(Check::within(format!("ratio/T={}", super::short(horizons[horizons.len() - 1])), r, RATIO_WINDOW.0, RATIO_WINDOW.1)),
        None => checks.push(Check::flag("ratio", false, "target is not centred, no asymptote")),
    }
    if ratios.len() >= 2 {
        let gaps: Option<Vec<f64>> = ratios.iter().map(|r| r.map(|v| (v - 1.0).abs())).collect();
        if let Some(g) = gaps {
            let worst = g.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            checks.push(Check::at_most("monotone_approach", worst, 0.0, "largest increase of |ratio - 1| between consecutive horizons"));
        }
    }

    let csv = rows
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                cell(r.horizon),
                opt_cell(r.exact),
                cell(r.empirical.value),
                opt_cell(r.empirical.noise_floor),
                opt_cell(r.asymptote),
                cell(r.crude),
                opt_cell(r.ratio)
            )
        })
        .collect();

    let mut series = Vec::new();
    let value: Vec<f64> = rows.iter().map(|r| r.exact.unwrap_or(r.empirical.value)).collect();
    series.push(Series::new("W2(X_T, N(0, T))", horizons.clone(), value));
    if let Some(a) = rows.iter().map(|r| r.asymptote).collect::<Option<Vec<f64>>>() {
        if a.iter().all(|v| *v > 0.0) {
            series.push(Series::new("asymptote", horizons.clone(), a));
        }
    }

    let results = json!({ "samples": n, "rows": rows });
    Ok(StudyOutput::new(Study::InitAsymptotics, cfg, checks, results)
        .table("init", "T,exact,empirical,noise_floor,asymptote,crude,ratio", csv)
        .figure("init", PlotKind::LogLog, Labels { title: "Initialization error", x: "horizon T", y: "W2" }, series))
}
