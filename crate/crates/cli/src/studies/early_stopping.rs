//! Early-stopping error `W2(L(X), L(X_eps))` against `sqrt(d eps)`.

use serde::Serialize;
use serde_json::json;
use wassdiff_core::bounds::early_stopping_bound;
use wassdiff_core::rng::derive_seed;
use wassdiff_core::target::{forward_marginal_sample, sample_target};
use wassdiff_core::transport::{noise_floor, w2_empirical};
use wassdiff_core::W2Method;

use crate::config::{ExperimentConfig, Study};
use crate::error::Result;
use crate::plot::{Labels, PlotKind, Series};
use crate::report::{cell, Check, StudyOutput};

#[derive(Debug, Serialize)]
struct Row {
    target: usize,
    d: usize,
    epsilon: f64,
    w2: f64,
    method: W2Method,
    noise_floor: f64,
    bound: f64,
}

pub fn run(cfg: &ExperimentConfig) -> Result<StudyOutput> {
    let n = cfg.samples.unwrap_or(4096);
    let mut epsilons = cfg.epsilons.clone();
    epsilons.sort_by(f64::total_cmp);

    let mut rows = Vec::new();
    for (i, source) in std::iter::once(&cfg.target).chain(&cfg.targets).enumerate() {
        let target = source.load()?;
        for (k, &eps) in epsilons.iter().enumerate() {
            let seed = derive_seed(cfg.seed, ((i as u64) << 16) | k as u64);
            let x = sample_target(&target, n, derive_seed(seed, 1))?;
            let xe = forward_marginal_sample(&target, eps, n, derive_seed(seed, 2))?;
            let w = w2_empirical(&x, &xe)?;
            let floor = noise_floor(&target, eps, n, derive_seed(seed, 3))?;
            rows.push(Row {
                target: i,
                d: target.dim(),
                epsilon: eps,
                w2: w.value,
                method: w.method,
                noise_floor: floor,
                bound: early_stopping_bound(target.dim(), eps),
            });
        }
    }

    let checks = rows
        .iter()
        .map(|r| {
            Check::at_most(
                format!("early_stopping/target{}/d={}/eps={}", r.target, r.d, super::short(r.epsilon)),
                r.w2,
                r.bound + r.noise_floor,
                format!("sqrt(d eps) = {} plus noise floor {}", r.bound, r.noise_floor),
            )
        })
        .collect();

    let csv = rows
        .iter()
        .map(|r| format!("{},{},{},{},{},{}", r.target, r.d, cell(r.epsilon), cell(r.w2), cell(r.noise_floor), cell(r.bound)))
        .collect();

    let mut series = Vec::new();
    let targets = rows.iter().map(|r| r.target).max().map_or(0, |m| m + 1);
    for i in 0..targets {
        let sel: Vec<&Row> = rows.iter().filter(|r| r.target == i && r.epsilon > 0.0).collect();
        if sel.is_empty() {
            continue;
        }
        let eps: Vec<f64> = sel.iter().map(|r| r.epsilon).collect();
        let d = sel[0].d;
        let (ep, wp): (Vec<f64>, Vec<f64>) = sel.iter().filter(|r| r.w2 > 0.0).map(|r| (r.epsilon, r.w2)).unzip();
        if !ep.is_empty() {
            series.push(Series::new(format!("target {i} (d = {d}) empirical"), ep, wp));
        }
        series.push(Series::new(format!("target {i} (d = {d}) sqrt(d eps)"), eps, sel.iter().map(|r| r.bound).collect()));
    }

    let results = json!({ "samples": n, "rows": rows });
    let mut out = StudyOutput::new(Study::EarlyStopping, cfg, checks, results).table("early_stopping", "target,d,epsilon,w2,noise_floor,bound", csv);
    if !series.is_empty() {
        out = out.figure(
            "early_stopping",
            PlotKind::LogLog,
            Labels { title: "Early-stopping error", x: "epsilon", y: "W2(X, X_eps)" },
            series,
        );
    }
    Ok(out)
}
