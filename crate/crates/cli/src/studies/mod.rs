//! One module per study. Each returns a [`StudyOutput`]; nothing is written here.

use std::path::Path;

use wassdiff_core::bounds::BoundKind;
use wassdiff_core::rng::derive_seed;
use wassdiff_core::target::sample_target;
use wassdiff_core::transport::{calibrated_init_threshold, noise_floor, w2_exact};
use wassdiff_core::{Algorithm, BoundInputs, InitVariant, SampleBatch, TargetDistribution, TimeGrid, W2Estimate};

use crate::config::{ExperimentConfig, Study};
use crate::error::{CliError, Result};
use crate::report::StudyOutput;

pub mod bounds_check;
pub mod early_stopping;
pub mod explosion;
pub mod init_asymptotics;
pub mod rates;
pub mod w2_selftest;

/// Runs `study`; `origin` is the config path, used in error messages.
pub fn run_study(study: Study, cfg: &ExperimentConfig, origin: &Path) -> Result<StudyOutput> {
    cfg.validate(study, origin)?;
    match study {
        Study::Rates => rates::run(cfg, origin),
        Study::BoundsCheck => bounds_check::run(cfg, origin),
        Study::InitAsymptotics => init_asymptotics::run(cfg),
        Study::EarlyStopping => early_stopping::run(cfg),
        Study::Explosion => explosion::run(cfg, origin),
        Study::W2Selftest => w2_selftest::run(cfg),
    }
}

/// Step count `N` with `(T - epsilon) / N == h`, if `h` divides the interval.
pub(crate) fn steps_for(grid: &TimeGrid, h: f64, origin: &Path) -> Result<usize> {
    let span = grid.horizon - grid.epsilon;
    let n = (span / h).round();
    if n < 1.0 || ((span / n) - h).abs() > 1e-9 * h {
        return Err(CliError::config(origin, format!("step {h} does not divide T - epsilon = {span}")));
    }
    Ok(n as usize)
}

/// Bound inputs for sampling `target` on `grid`. A smoothing variance `tau`
/// shifts the problem onto the unsmoothed atoms with horizon `T + tau` and
/// early stop `epsilon + tau`.
pub(crate) fn bound_inputs(target: &TargetDistribution, grid: &TimeGrid) -> Result<(BoundInputs, Option<f64>)> {
    let tau = target.tau();
    let horizon = grid.horizon + tau;
    let threshold = init_threshold(target)?;
    let init = match threshold {
        Some(t) if horizon >= t => InitVariant::Asymptotic,
        _ => InitVariant::Crude,
    };
    let inputs = BoundInputs::new(target.dim(), target.radius(), horizon, grid.epsilon + tau, grid.steps).with_init(init);
    Ok((inputs, threshold))
}

/// Calibrated large-T threshold, when the target supports one (centred, one-dimensional).
pub(crate) fn init_threshold(target: &TargetDistribution) -> Result<Option<f64>> {
    let atoms = target.with_tau(0.0)?;
    if atoms.dim() != 1 || atoms.mean().iter().any(|m| m.abs() > 1e-12 * (1.0 + atoms.radius())) {
        return Ok(None);
    }
    Ok(Some(calibrated_init_threshold(&atoms)?))
}

pub(crate) fn bound_kind(algorithm: Algorithm, corrupted: bool) -> BoundKind {
    match (algorithm, corrupted) {
        (Algorithm::EulerOde, _) => BoundKind::EulerOde,
        (Algorithm::Heun, _) => BoundKind::Heun,
        (Algorithm::EulerMaruyama, true) => BoundKind::EulerMaruyama,
        (Algorithm::EulerMaruyama, false) => BoundKind::EulerMaruyamaTrueScore,
    }
}

/// Exact-assignment W2 between `batch` and a fresh target sample, with the
/// target's own noise floor attached.
pub(crate) fn w2_to_target(target: &TargetDistribution, batch: &SampleBatch, seed: u64) -> Result<W2Estimate> {
    let n = batch.len();
    let reference = sample_target(target, n, derive_seed(seed, 0x7461_7267))?;
    let floor = noise_floor(target, 0.0, n, derive_seed(seed, 0x666c_6f6f))?;
    Ok(w2_exact(batch, &reference)?.with_noise_floor(floor))
}

/// Formats a float compactly for labels and check names.
pub(crate) fn short(v: f64) -> String {
    format!("{v}")
}
